use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::contrastive::nt_xent_queue_rows;
use super::{
    arcface, barlow_twins, byol, dclw, dino, fastsiam, nt_xent, supcon, triplet,
    triplet_hinge_values, BarlowConfig, ContrastiveConfig, DinoConfig, LossProblem,
    SupervisedConfig,
};
use crate::error::Error;
use crate::matrix::Matrix;

/// ArcFace scale used for random gradient-check instances.
pub const GRADCHECK_ARCFACE_SCALE: f64 = 8.0;

/// Training objectives, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SimclrDclw,
    Ntxent,
    Moco,
    Barlow,
    Byol,
    Fastsiam,
    Dino,
    Arcface,
    Triplet,
    Supcon,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::SimclrDclw,
        Method::Ntxent,
        Method::Moco,
        Method::Barlow,
        Method::Byol,
        Method::Fastsiam,
        Method::Dino,
        Method::Arcface,
        Method::Triplet,
        Method::Supcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SimclrDclw => "simclr_dclw",
            Method::Ntxent => "ntxent",
            Method::Moco => "moco",
            Method::Barlow => "barlow",
            Method::Byol => "byol",
            Method::Fastsiam => "fastsiam",
            Method::Dino => "dino",
            Method::Arcface => "arcface",
            Method::Triplet => "triplet",
            Method::Supcon => "supcon",
        }
    }

    /// Uses identity labels during training.
    pub fn is_supervised(self) -> bool {
        matches!(self, Method::Arcface | Method::Triplet | Method::Supcon)
    }

    pub fn uses_predictor(self) -> bool {
        matches!(self, Method::Byol | Method::Fastsiam)
    }

    /// Keeps an EMA copy of the encoder as target/teacher.
    pub fn uses_momentum_encoder(self) -> bool {
        matches!(self, Method::Moco | Method::Byol | Method::Dino)
    }

    /// A random double-precision instance of this method's loss, for
    /// gradient verification.
    pub fn random_problem<R: Rng>(self, rng: &mut R) -> LossProblem {
        let mut gauss = |n: usize, d: usize| Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        let name = self.name();
        match self {
            Method::SimclrDclw => {
                let cfg = ContrastiveConfig::default();
                LossProblem::new(name, vec![gauss(4, 8), gauss(4, 8)], vec![false; 2], move |x| {
                    dclw(&x[0], &x[1], &cfg)
                })
            }
            Method::Ntxent => {
                let cfg = ContrastiveConfig::default();
                LossProblem::new(name, vec![gauss(4, 8), gauss(4, 8)], vec![false; 2], move |x| {
                    nt_xent(&x[0], &x[1], &cfg)
                })
            }
            Method::Moco => {
                let cfg = ContrastiveConfig::default();
                LossProblem::new(
                    name,
                    vec![gauss(4, 8), gauss(4, 8), gauss(6, 8)],
                    vec![false, true, true],
                    move |x| nt_xent_queue_rows(&x[0], &x[1], &x[2], &cfg),
                )
            }
            Method::Barlow => {
                let cfg = BarlowConfig::default();
                LossProblem::new(name, vec![gauss(6, 4), gauss(6, 4)], vec![false; 2], move |x| {
                    barlow_twins(&x[0], &x[1], &cfg)
                })
            }
            Method::Byol => LossProblem::new(
                name,
                (0..4).map(|_| gauss(4, 8)).collect(),
                vec![false, true, false, true],
                |x| byol(&x[0], &x[1], &x[2], &x[3]),
            ),
            Method::Fastsiam => LossProblem::new(
                name,
                (0..4).map(|_| gauss(4, 8)).collect(),
                vec![false, true, true, true],
                |x| fastsiam(&x[0], &x[1..]),
            ),
            Method::Dino => {
                // logits at the scale of a freshly initialized head, so the
                // tempered softmaxes are not saturated
                let mut cfg = DinoConfig::with_dim(6);
                cfg.center = gauss(1, 6).scaled(0.02).into_vec();
                LossProblem::new(
                    name,
                    (0..6).map(|_| gauss(4, 6).scaled(0.2)).collect(),
                    vec![false, false, false, false, true, true],
                    move |x| Ok(dino(&x[..4], &x[4..], &cfg)?.loss),
                )
            }
            Method::Arcface => {
                // at s = 64 the loss is O(60) and one ulp of it exceeds what the
                // finite difference must resolve on small coordinates
                let cfg = SupervisedConfig {
                    arcface_scale: GRADCHECK_ARCFACE_SCALE,
                    ..Default::default()
                };
                let labels: Vec<usize> = (0..6).map(|i| i % 4).collect();
                LossProblem::new(name, vec![gauss(6, 8), gauss(4, 8)], vec![false; 2], move |x| {
                    arcface(&x[0], &labels, &x[1], &cfg)
                })
            }
            Method::Triplet => {
                let cfg = SupervisedConfig::default();
                let margin = cfg.triplet_margin;
                LossProblem::new(name, (0..3).map(|_| gauss(4, 8)).collect(), vec![false; 3], move |x| {
                    triplet(&x[0], &x[1], &x[2], &cfg)
                })
                .with_skip(move |x, _, k| {
                    let row = k / x[0].cols();
                    triplet_hinge_values(&x[0], &x[1], &x[2], margin)
                        .map(|h| h[row].abs() < 1e-6)
                        .unwrap_or(false)
                })
            }
            Method::Supcon => {
                let cfg = ContrastiveConfig::default();
                let mut labels = vec![0, 0, 1, 1, 2, 2];
                let z = gauss(6, 8);
                labels.shuffle(rng);
                LossProblem::new(name, vec![z], vec![false], move |x| {
                    supcon(&x[0], &labels, &cfg)
                })
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

//! Synthetic identities observed under noisy, drifting views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub views_per_identity: usize,
    pub input_dim: usize,
    pub view_noise_sigma: f64,
    /// Extra noise between the two views of a pair (consecutive frames).
    pub drift_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 32,
            views_per_identity: 20,
            input_dim: 256,
            view_noise_sigma: 0.1,
            drift_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0 || self.views_per_identity == 0 {
            return Err(Error::Config("identity and view counts must be positive".into()));
        }
        if self.input_dim < 2 {
            return Err(Error::Config("input_dim must be at least 2".into()));
        }
        for (name, s) in [("view_noise_sigma", self.view_noise_sigma), ("drift_sigma", self.drift_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative real, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Temporal,
    /// Two augmentations of one view. Sometimes called self-distillation
    /// pairing.
    Augmented,
    Combined,
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(PairMode::Temporal),
            "augmented" => Ok(PairMode::Augmented),
            "combined" => Ok(PairMode::Combined),
            _ => Err(Error::Config(format!("unknown pair mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for PairMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairMode::Temporal => "temporal",
            PairMode::Augmented => "augmented",
            PairMode::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Vec<f64>,
    pub view_b: Vec<f64>,
    pub identity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<ViewPair>,
    pub source_mode: PairMode,
}

impl PairDataset {
    pub fn new(pairs: Vec<ViewPair>, source_mode: PairMode) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::Precondition("pair dataset is empty".into()));
        };
        let dim = first.view_a.len();
        if dim == 0 {
            return Err(Error::Shape("zero-dimensional views".into()));
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.view_a.len() != dim || p.view_b.len() != dim {
                return Err(Error::Shape(format!("pair {i} does not have dimension {dim}")));
            }
        }
        Ok(Self { pairs, source_mode })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.pairs[0].view_a.len()
    }

    pub fn num_identities(&self) -> usize {
        self.pairs.iter().map(|p| p.identity + 1).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.identity).collect()
    }

    /// `(view_a rows, view_b rows, identities)` for the given pair indices.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Matrix, Vec<usize>) {
        let d = self.input_dim();
        let mut a = Vec::with_capacity(idx.len() * d);
        let mut b = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let p = &self.pairs[i];
            a.extend_from_slice(&p.view_a);
            b.extend_from_slice(&p.view_b);
            labels.push(p.identity);
        }
        (
            Matrix::new(idx.len(), d, a).expect("consistent view dims"),
            Matrix::new(idx.len(), d, b).expect("consistent view dims"),
            labels,
        )
    }
}

/// Generated data plus the prototypes it was drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub pairs: PairDataset,
    pub labels: Vec<usize>,
    pub prototypes: Matrix,
    pub config: SynthConfig,
}

impl SynthData {
    /// Fresh single views (`prototype + noise`) of every identity, drawn from
    /// an independent stream so they never coincide with training views.
    pub fn sample_views(&self, per_identity: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, seed ^ 0x5eed_0f_e7a1));
        let d = self.config.input_dim;
        let mut rows = Vec::with_capacity(self.config.num_identities * per_identity * d);
        let mut labels = Vec::new();
        for id in 0..self.config.num_identities {
            for _ in 0..per_identity {
                rows.extend(
                    self.prototypes
                        .row(id)
                        .iter()
                        .map(|&p| p + gaussian(&mut rng, self.config.view_noise_sigma)),
                );
                labels.push(id);
            }
        }
        (Matrix::new(labels.len(), d, rows).expect("sized above"), labels)
    }
}

pub(super) fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(super) fn unit_prototypes<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    let mut prototypes = Matrix::zeros(n, d);
    for i in 0..n {
        loop {
            let row = prototypes.row_mut(i);
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let n = norm(row);
            if n > 1e-8 {
                row.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    prototypes
}

/// Identity prototypes on the unit sphere; per identity, `views_per_identity`
/// temporal pairs with `view_b = view_a + drift`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = unit_prototypes(&mut rng, cfg.num_identities, cfg.input_dim);
    let mut pairs = Vec::with_capacity(cfg.num_identities * cfg.views_per_identity);
    for id in 0..cfg.num_identities {
        for _ in 0..cfg.views_per_identity {
            let view_a: Vec<f64> = prototypes
                .row(id)
                .iter()
                .map(|&p| p + gaussian(&mut rng, cfg.view_noise_sigma))
                .collect();
            let view_b = view_a
                .iter()
                .map(|&v| v + gaussian(&mut rng, cfg.drift_sigma))
                .collect();
            pairs.push(ViewPair {
                view_a,
                view_b,
                identity: id,
            });
        }
    }
    let pairs = PairDataset::new(pairs, PairMode::Temporal)?;
    Ok(SynthData {
        labels: pairs.labels(),
        pairs,
        prototypes,
        config: *cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub sigma: f64,
    pub dropout_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl AugmentConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            dropout_prob: 0.1,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("augmentation sigma {} must be nonnegative", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::Config("dropout probability must lie in [0, 1]".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::Config("scale range must be positive and ordered".into()));
        }
        Ok(())
    }
}

/// Gaussian noise, then coordinate dropout with probability 0.1, then a
/// random scale in [0.8, 1.25].
pub fn augment_view(x: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    augment_view_with(x, &AugmentConfig::with_sigma(sigma), seed)
}

pub fn augment_view_with(x: &[f64], cfg: &AugmentConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = x.iter().map(|&v| v + gaussian(&mut rng, cfg.sigma)).collect();
    if cfg.dropout_prob > 0.0 {
        for v in out.iter_mut() {
            if rng.gen::<f64>() < cfg.dropout_prob {
                *v = 0.0;
            }
        }
    }
    let scale = if cfg.scale_min == cfg.scale_max {
        cfg.scale_min
    } else {
        rng.gen_range(cfg.scale_min..=cfg.scale_max)
    };
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Augments every row of `x`, row `i` with seed `derive_seed(seed, i)`.
pub fn augment_rows(x: &Matrix, cfg: &AugmentConfig, seed: u64) -> Result<Matrix> {
    let mut out = Vec::with_capacity(x.rows() * x.cols());
    for i in 0..x.rows() {
        out.extend(augment_view_with(x.row(i), cfg, derive_seed(seed, i as u64))?);
    }
    Matrix::new(x.rows(), x.cols(), out)
}

pub fn build_pairs(base: &PairDataset, mode: PairMode, aug_sigma: f64, seed: u64) -> Result<PairDataset> {
    if base.source_mode != PairMode::Temporal {
        return Err(Error::Precondition(format!(
            "pairs can only be built from a temporal dataset, got {}",
            base.source_mode
        )));
    }
    let augmented = |pairs: &[ViewPair]| -> Result<Vec<ViewPair>> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let i = i as u64;
                Ok(ViewPair {
                    view_a: augment_view(&p.view_a, aug_sigma, derive_seed(seed, 2 * i))?,
                    view_b: augment_view(&p.view_a, aug_sigma, derive_seed(seed, 2 * i + 1))?,
                    identity: p.identity,
                })
            })
            .collect()
    };
    match mode {
        PairMode::Temporal => Ok(base.clone()),
        PairMode::Augmented => PairDataset::new(augmented(&base.pairs)?, mode),
        PairMode::Combined => {
            let mut all = base.pairs.clone();
            all.extend(augmented(&base.pairs)?);
            PairDataset::new(all, mode)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;

    fn small(sigma: f64, drift: f64) -> SynthConfig {
        SynthConfig {
            num_identities: 16,
            views_per_identity: 8,
            input_dim: 32,
            view_noise_sigma: sigma,
            drift_sigma: drift,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_views_equal_prototype() {
        let data = synth_dataset(&small(0.0, 0.0)).unwrap();
        for p in &data.pairs.pairs {
            assert_eq!(p.view_a, p.view_b);
            assert_eq!(p.view_a.as_slice(), data.prototypes.row(p.identity));
        }
        for r in data.prototypes.row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_dataset(&small(0.1, 0.05)).unwrap();
        let b = synth_dataset(&small(0.1, 0.05)).unwrap();
        assert_eq!(a, b);
        let mut other = small(0.1, 0.05);
        other.seed = 8;
        assert_ne!(a.pairs, synth_dataset(&other).unwrap().pairs);
    }

    #[test]
    fn within_identity_cosine_dominates() {
        let data = synth_dataset(&small(0.1, 0.05)).unwrap();
        let views: Vec<&[f64]> = data.pairs.pairs.iter().map(|p| p.view_a.as_slice()).collect();
        let cos = |a: &[f64], b: &[f64]| dot(a, b) / (norm(a) * norm(b));
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..views.len() {
            for j in i + 1..views.len() {
                let c = cos(views[i], views[j]);
                if data.labels[i] == data.labels[j] {
                    within += c;
                    nw += 1;
                } else {
                    across += c;
                    na += 1;
                }
            }
        }
        assert!(within / nw as f64 > across / na as f64);
    }

    #[test]
    fn invalid_config() {
        let mut c = small(0.1, 0.0);
        c.input_dim = 1;
        assert!(synth_dataset(&c).is_err());
        let mut c = small(-0.1, 0.0);
        assert!(synth_dataset(&c).is_err());
        c.view_noise_sigma = 0.1;
        c.num_identities = 0;
        assert!(synth_dataset(&c).is_err());
    }

    #[test]
    fn plain_augmentation_is_identity() {
        let x = [0.3, -1.0, 2.5];
        let cfg = AugmentConfig {
            sigma: 0.0,
            dropout_prob: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
        };
        assert_eq!(augment_view_with(&x, &cfg, 99).unwrap(), x.to_vec());
    }

    #[test]
    fn augmentation_is_seeded() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(augment_view(&x, 0.3, 5).unwrap(), augment_view(&x, 0.3, 5).unwrap());
        assert_ne!(augment_view(&x, 0.3, 5).unwrap(), augment_view(&x, 0.3, 6).unwrap());
        assert!(augment_view(&x, -1.0, 5).is_err());
    }

    #[test]
    fn distortion_grows_with_sigma() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.2 - 0.4).collect();
        let mean_sq = |sigma: f64| {
            (0..1000u64)
                .map(|s| {
                    let y = augment_view(&x, sigma, s).unwrap();
                    x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / 1000.0
        };
        let d = [0.0, 0.1, 0.3, 1.0].map(mean_sq);
        assert!(d.windows(2).all(|w| w[0] < w[1]), "{d:?}");
    }

    #[test]
    fn pair_modes() {
        let data = synth_dataset(&small(0.1, 0.05)).unwrap();
        let base = &data.pairs;
        assert_eq!(&build_pairs(base, PairMode::Temporal, 0.1, 1).unwrap(), base);
        let combined = build_pairs(base, PairMode::Combined, 0.1, 1).unwrap();
        assert_eq!(combined.len(), 2 * base.len());
        assert_eq!(&combined.pairs[..base.len()], &base.pairs[..]);
        assert!(build_pairs(&combined, PairMode::Augmented, 0.1, 1).is_err());
    }

    #[test]
    fn augmented_mode_ignores_view_b() {
        let data = synth_dataset(&small(0.1, 0.05)).unwrap();
        let mut poisoned = data.pairs.clone();
        for p in &mut poisoned.pairs {
            p.view_b.iter_mut().for_each(|v| *v = f64::NAN);
        }
        let clean = build_pairs(&data.pairs, PairMode::Augmented, 0.2, 3).unwrap();
        let dirty = build_pairs(&poisoned, PairMode::Augmented, 0.2, 3).unwrap();
        assert_eq!(clean, dirty);
        assert!(clean.pairs.iter().all(|p| p.view_b.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn held_out_views_differ_from_training_views() {
        let data = synth_dataset(&small(0.1, 0.05)).unwrap();
        let (x, labels) = data.sample_views(3, 1);
        assert_eq!(x.rows(), 48);
        assert_eq!(labels[3], 1);
        assert!(data.pairs.pairs.iter().all(|p| p.view_a.as_slice() != x.row(0)));
        assert_eq!(data.sample_views(3, 1).0, x);
    }
}

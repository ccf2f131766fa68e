use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gallery::Gallery;
use crate::error::{Error, Result};
use crate::matrix::{softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("probe learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("probe needs at least one epoch".into()));
        }
        Ok(())
    }
}

/// Softmax regression on frozen embeddings, trained by full-batch gradient
/// descent from a `0.01`-scaled gaussian start. Returns test top-1 accuracy.
pub fn linear_probe(train: &Gallery, test: &Gallery, cfg: &ProbeConfig) -> Result<f64> {
    cfg.validate()?;
    train.check_dims(test)?;
    let mut classes: Vec<i64> = train.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Precondition("linear probe needs at least two classes".into()));
    }
    let class_of = |l: i64| classes.binary_search(&l).ok();
    let y: Vec<usize> = train.labels().iter().map(|&l| class_of(l).unwrap()).collect();
    let truth = test
        .labels()
        .iter()
        .map(|&l| class_of(l).ok_or_else(|| Error::Precondition(format!("test label {l} unseen in training"))))
        .collect::<Result<Vec<_>>>()?;

    let (n, d) = train.embeddings().shape();
    let c = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Matrix::from_fn(c, d, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
    let mut b = vec![0.0; c];
    let x = train.embeddings();
    for _ in 0..cfg.epochs {
        let logits = x.matmul_t(&w)?;
        let mut g = Matrix::zeros(n, c);
        for i in 0..n {
            let row: Vec<f64> = logits.row(i).iter().zip(&b).map(|(l, bb)| l + bb).collect();
            let p = softmax(&row);
            let gi = g.row_mut(i);
            for k in 0..c {
                gi[k] = (p[k] - if k == y[i] { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        w.add_assign(&g.t_matmul(x)?.scaled(-cfg.learning_rate));
        for row in g.row_iter() {
            b.iter_mut().zip(row).for_each(|(bb, gk)| *bb -= cfg.learning_rate * gk);
        }
    }
    let logits = test.embeddings().matmul_t(&w)?;
    let correct = (0..test.len())
        .filter(|&i| {
            let row = logits.row(i);
            let mut best = 0;
            for k in 1..c {
                if row[k] + b[k] > row[best] + b[best] {
                    best = k;
                }
            }
            best == truth[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

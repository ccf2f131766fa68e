use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gallery::{ranking, Gallery};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 200,
            temperature: 0.07,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub predictions: Vec<i64>,
    pub accuracy: f64,
    pub effective_k: usize,
}

/// Votes `exp(cos / τ)` over the `k` most similar rows; ties go to the
/// smaller label. Scores are taken relative to the best neighbor so large
/// `1/τ` cannot overflow.
fn vote(neighbors: &[(usize, f64)], labels: &[i64], tau: f64) -> i64 {
    let top = neighbors[0].1;
    let mut scores: BTreeMap<i64, f64> = BTreeMap::new();
    for &(j, s) in neighbors {
        *scores.entry(labels[j]).or_default() += ((s - top) / tau).exp();
    }
    let mut best = (i64::MIN, f64::NEG_INFINITY);
    for (label, score) in scores {
        if score > best.1 {
            best = (label, score);
        }
    }
    best.0
}

fn knn(train: &Gallery, test: &Gallery, cfg: &KnnConfig, leave_one_out: bool) -> Result<KnnResult> {
    cfg.validate()?;
    train.check_dims(test)?;
    let pool = if leave_one_out { train.len() - 1 } else { train.len() };
    if pool == 0 {
        return Err(Error::Precondition("no training rows to vote".into()));
    }
    let k = cfg.k.min(pool);
    let predictions = par::map_range(test.len(), |i| {
        let skip = leave_one_out.then_some(i);
        let ranked = ranking(test.embeddings().row(i), train, skip);
        vote(&ranked[..k], train.labels(), cfg.temperature)
    });
    let correct = predictions
        .iter()
        .zip(test.labels())
        .filter(|(p, t)| p == t)
        .count();
    Ok(KnnResult {
        accuracy: correct as f64 / test.len() as f64,
        predictions,
        effective_k: k,
    })
}

/// Weighted kNN with `k` clamped to the training set size.
pub fn weighted_knn(train: &Gallery, test: &Gallery, cfg: &KnnConfig) -> Result<KnnResult> {
    knn(train, test, cfg, false)
}

/// Every row is classified by the others, so `k` is clamped to `N - 1`.
pub fn leave_one_out_knn(gallery: &Gallery, cfg: &KnnConfig) -> Result<KnnResult> {
    knn(gallery, gallery, cfg, true)
}

//! Train-then-evaluate runs on the synthetic identity task.
//!
//! Embeddings are scored by leave-one-out retrieval mAP on fresh views of
//! the training identities, drawn independently of the training pairs.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingBatch;
use crate::error::Result;
use crate::evalkit::{leave_one_out_map, Gallery};
use crate::losszoo::Method;
use crate::microtrain::{
    build_pairs, derive_seed, embed, init_params, synth_dataset, train, EncoderParams, PairMode,
    SynthConfig, SynthData, TrainConfig, TrainReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub pair_mode: PairMode,
    /// Noise of augmented pairs.
    pub aug_sigma: f64,
    pub eval_views_per_identity: usize,
}

impl ExperimentConfig {
    /// The 32-identity task, for one method and seed.
    pub fn standard(method: Method, seed: u64) -> Self {
        Self {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::for_method(method)
            },
            pair_mode: PairMode::Temporal,
            aug_sigma: 0.1,
            eval_views_per_identity: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub seed: u64,
    pub pair_mode: PairMode,
    pub trained_map: f64,
    pub random_map: f64,
    pub first_loss: f64,
    pub last_loss: f64,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

/// Normalized, labeled embeddings of fresh views of `data`'s identities.
pub fn heldout_embeddings(data: &SynthData, params: &EncoderParams, views: usize, seed: u64) -> Result<EmbeddingBatch> {
    let (x, labels) = data.sample_views(views, seed);
    embed(params, &x, Some(labels.into_iter().map(|l| l as i64).collect()))
}

/// mAP of `params` on held-out views of `data`'s identities.
pub fn heldout_map(data: &SynthData, params: &EncoderParams, views: usize, seed: u64) -> Result<f64> {
    let e = heldout_embeddings(data, params, views, seed)?;
    Ok(leave_one_out_map(&Gallery::from_batch(&e)?)?.map)
}

/// Seed of the held-out evaluation views.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.synth.seed, 11)
}

/// Builds the configured pairs from `data` and trains on them.
pub fn train_on(data: &SynthData, cfg: &ExperimentConfig) -> Result<TrainReport> {
    let pairs = build_pairs(&data.pairs, cfg.pair_mode, cfg.aug_sigma, derive_seed(cfg.synth.seed, 7))?;
    train(&pairs, &cfg.train)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResult, TrainReport)> {
    let data = synth_dataset(&cfg.synth)?;
    let report = train_on(&data, cfg)?;
    let eval_seed = eval_seed(cfg);
    let random = init_params(data.pairs.input_dim(), &cfg.train)?;
    let random_map = heldout_map(&data, &random, cfg.eval_views_per_identity, eval_seed)?;
    let trained_map = heldout_map(&data, &report.params, cfg.eval_views_per_identity, eval_seed)?;
    let window = (report.loss_trace.len() / 10).max(1);
    let (first_loss, last_loss) = report.first_last_means(window);
    Ok((
        ExperimentResult {
            method: cfg.train.method,
            seed: cfg.synth.seed,
            pair_mode: cfg.pair_mode,
            trained_map,
            random_map,
            first_loss,
            last_loss,
            elapsed_seconds: report.elapsed_seconds,
        },
        report,
    ))
}

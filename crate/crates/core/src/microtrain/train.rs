use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoder::EncoderParams;
use super::objective::{step_loss, StepBatch, StepContext};
use super::synth::{augment_rows, derive_seed, AugmentConfig, PairDataset};
use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losszoo::{
    ema_update, l2_normalize_rows, BarlowConfig, ContrastiveConfig, Method, MomentumState,
    SupervisedConfig,
};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub hidden_dim: usize,
    /// Also the number of DINO logits.
    pub embed_dim: usize,
    pub contrastive: ContrastiveConfig,
    pub barlow: BarlowConfig,
    pub supervised: SupervisedConfig,
    /// EMA coefficient of the target/teacher encoder.
    pub momentum: f64,
    pub queue_size: usize,
    pub dino_student_temp: f64,
    pub dino_teacher_temp: f64,
    pub dino_center_momentum: f64,
    /// Noise of the two extra FastSiam views.
    pub view_sigma: f64,
    /// Noise of DINO local views.
    pub local_sigma: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 0.5 for the contrastive objectives and BYOL, 0.1 for the rest.
    pub fn default_learning_rate(method: Method) -> f64 {
        match method {
            Method::SimclrDclw | Method::Ntxent | Method::Moco | Method::Supcon | Method::Byol => 0.5,
            _ => 0.1,
        }
    }

    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            learning_rate: Self::default_learning_rate(method),
            batch_size: 64,
            steps: 500,
            hidden_dim: 128,
            embed_dim: 32,
            contrastive: ContrastiveConfig::default(),
            barlow: BarlowConfig::default(),
            supervised: SupervisedConfig::default(),
            momentum: 0.99,
            queue_size: 256,
            dino_student_temp: 0.1,
            dino_teacher_temp: 0.04,
            dino_center_momentum: 0.9,
            view_sigma: 0.1,
            local_sigma: 0.2,
            seed: 0,
        }
    }

    /// A zero learning rate is accepted so that a run can be replayed without
    /// moving the weights.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a nonnegative real, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        self.contrastive.validate()?;
        self.supervised.validate()?;
        if !(0.0..=1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.dino_center_momentum) {
            return Err(Error::Config("momentum coefficients must lie in [0, 1]".into()));
        }
        if self.method == Method::Moco && self.queue_size == 0 {
            return Err(Error::Config("moco needs a positive queue size".into()));
        }
        if !(self.dino_student_temp > 0.0 && self.dino_teacher_temp > 0.0) {
            return Err(Error::Config("dino temperatures must be positive".into()));
        }
        AugmentConfig::with_sigma(self.view_sigma).validate()?;
        AugmentConfig::with_sigma(self.local_sigma).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub loss_trace: Vec<f64>,
    pub params: EncoderParams,
    /// Wall time of the run; left out of the JSON so reports stay
    /// byte-reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl TrainReport {
    /// Mean loss over the first and the last `window` steps.
    pub fn first_last_means(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.loss_trace.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (
            mean(&self.loss_trace[..w]),
            mean(&self.loss_trace[self.loss_trace.len() - w..]),
        )
    }
}

/// Deterministic encoder initialization for a dataset and config.
pub fn init_params(input_dim: usize, cfg: &TrainConfig) -> Result<EncoderParams> {
    EncoderParams::init(
        input_dim,
        cfg.hidden_dim,
        cfg.embed_dim,
        cfg.method.uses_predictor(),
        derive_seed(cfg.seed, 1),
    )
}

fn extra_views(cfg: &TrainConfig, xa: &Matrix, xb: &Matrix, step: u64) -> Result<Vec<Matrix>> {
    let sigma = match cfg.method {
        Method::Fastsiam => cfg.view_sigma,
        Method::Dino => cfg.local_sigma,
        _ => return Ok(Vec::new()),
    };
    let aug = AugmentConfig::with_sigma(sigma);
    let base = derive_seed(cfg.seed, 0x100 + step);
    Ok(vec![
        augment_rows(xa, &aug, derive_seed(base, 0))?,
        augment_rows(xb, &aug, derive_seed(base, 1))?,
    ])
}

/// Minibatch SGD over seeded reshuffles of the dataset; a partial final
/// batch of each pass is dropped.
pub fn train(data: &PairDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.batch_size > data.len() {
        return Err(Error::Precondition(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let start = Instant::now();
    let method = cfg.method;
    let mut online = init_params(data.input_dim(), cfg)?;
    let mut target = method.uses_momentum_encoder().then(|| online.clone());
    let mut queue = (method == Method::Moco).then(|| MomentumState::new(cfg.momentum, cfg.queue_size, cfg.embed_dim));
    let mut center = (method == Method::Dino).then(|| vec![0.0; cfg.embed_dim]);
    let mut class_centers = (method == Method::Arcface).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
        Matrix::from_fn(data.num_identities(), cfg.embed_dim, |_, _| rng.sample(StandardNormal))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;
        let (xa, xb, labels) = data.batch(idx);
        let mut views = extra_views(cfg, &xa, &xb, step as u64)?;
        views.splice(0..0, [xa, xb]);
        let batch = StepBatch { views, labels };

        let snapshot;
        let frozen = match &target {
            Some(t) => t,
            None => {
                snapshot = online.clone();
                &snapshot
            }
        };
        let ctx = StepContext {
            config: cfg,
            frozen,
            queue: queue.as_ref(),
            dino_center: center.as_deref(),
            class_centers: class_centers.as_ref(),
        };
        let out = match step_loss(&online, &ctx, &batch) {
            Ok(o) => o,
            Err(Error::NonFinite(_) | Error::ZeroNorm { .. }) => {
                return Err(Error::Divergence { step, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        if !out.loss.is_finite() {
            return Err(Error::Divergence { step, loss: out.loss });
        }

        online.add_scaled(&out.grad, -cfg.learning_rate);
        if let (Some(c), Some(g)) = (class_centers.as_mut(), &out.center_grad) {
            c.add_assign(&g.scaled(-cfg.learning_rate));
        }
        if !online.is_finite() {
            return Err(Error::Divergence { step, loss: out.loss });
        }
        if let Some(t) = target.as_mut() {
            let next = ema_update(&t.to_flat(), &online.to_flat(), cfg.momentum)?;
            t.set_flat(&next)?;
        }
        if let (Some(q), Some(k)) = (queue.as_mut(), &out.keys) {
            *q = q.queue_push(k)?;
        }
        if let Some(c) = out.next_dino_center {
            center = Some(c);
        }
        trace.push(out.loss);
    }
    Ok(TrainReport {
        method,
        loss_trace: trace,
        params: online,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// L2-normalized projections `g(f(x))`; rows are embedded in parallel.
pub fn embed(params: &EncoderParams, x: &Matrix, labels: Option<Vec<i64>>) -> Result<EmbeddingBatch> {
    const CHUNK: usize = 256;
    let chunks = x.rows().div_ceil(CHUNK);
    let parts = crate::par::map_range(chunks, |c| {
        let part = x.slice_rows(c * CHUNK, ((c + 1) * CHUNK).min(x.rows()));
        params.forward(&part).map(|f| f.z)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let z = Matrix::vstack(&parts.iter().collect::<Vec<_>>())?;
    let unit = l2_normalize_rows(&z)?;
    EmbeddingBatch::new(unit, labels)
}

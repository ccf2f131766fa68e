//! One training step's loss and parameter gradients for each method.

use super::encoder::{EncoderParams, ForwardCache};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::losszoo::{
    arcface, barlow_twins, byol, dclw, dino, fastsiam, nt_xent, nt_xent_queue, supcon, triplet,
    l2_normalize_rows, DinoConfig, LossOutput, Method, MomentumState,
};
use crate::matrix::Matrix;

/// Input rows of one minibatch. `views[0]` and `views[1]` are the two sides of
/// each pair; further views (FastSiam extras, DINO local crops) follow.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub views: Vec<Matrix>,
    pub labels: Vec<usize>,
}

/// Everything a step reads besides the online parameters. `frozen` feeds the
/// stop-gradient branches: the EMA target for momentum methods, a snapshot of
/// the online weights otherwise.
pub struct StepContext<'a> {
    pub config: &'a TrainConfig,
    pub frozen: &'a EncoderParams,
    pub queue: Option<&'a MomentumState>,
    pub dino_center: Option<&'a [f64]>,
    pub class_centers: Option<&'a Matrix>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad: EncoderParams,
    pub center_grad: Option<Matrix>,
    /// Momentum-encoder keys to enqueue after the step.
    pub keys: Option<Matrix>,
    pub next_dino_center: Option<Vec<f64>>,
}

/// For each anchor, the most cosine-similar candidate row carrying a
/// different label (ties to the lower index).
pub fn hardest_negatives(anchors: &Matrix, candidates: &Matrix, labels: &[usize]) -> Result<Vec<usize>> {
    let a = l2_normalize_rows(anchors)?;
    let c = l2_normalize_rows(candidates)?;
    let sims = a.matmul_t(&c)?;
    (0..labels.len())
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for j in (0..labels.len()).filter(|&j| labels[j] != labels[i]) {
                if best.map_or(true, |(_, s)| sims[(i, j)] > s) {
                    best = Some((j, sims[(i, j)]));
                }
            }
            best.map(|b| b.0)
                .ok_or_else(|| Error::Precondition("triplet batch holds a single identity".into()))
        })
        .collect()
}

fn scatter_add(target: &mut Matrix, rows: &[usize], src: &Matrix) {
    for (r, &t) in rows.iter().enumerate() {
        target.row_mut(t).iter_mut().zip(src.row(r)).for_each(|(a, b)| *a += b);
    }
}

fn view<'a>(batch: &'a StepBatch, i: usize, method: Method) -> Result<&'a Matrix> {
    batch
        .views
        .get(i)
        .ok_or_else(|| Error::Precondition(format!("{method} expects at least {} views", i + 1)))
}

pub fn step_loss(online: &EncoderParams, ctx: &StepContext<'_>, batch: &StepBatch) -> Result<StepOutcome> {
    let cfg = ctx.config;
    let method = cfg.method;
    let mut grad = online.zeros_like();
    let outcome = |loss: f64, grad: EncoderParams| StepOutcome {
        loss,
        grad,
        center_grad: None,
        keys: None,
        next_dino_center: None,
    };
    let xa = view(batch, 0, method)?;
    let xb = view(batch, 1, method)?;
    let two_sided = |loss: fn(&Matrix, &Matrix, &TrainConfig) -> Result<LossOutput>,
                     grad: &mut EncoderParams|
     -> Result<f64> {
        let ca = online.forward(xa)?;
        let cb = online.forward(xb)?;
        let out = loss(&ca.z, &cb.z, cfg)?;
        online.backward(&ca, Some(&out.grads[0]), None, grad)?;
        online.backward(&cb, Some(&out.grads[1]), None, grad)?;
        Ok(out.value)
    };

    match method {
        Method::SimclrDclw => {
            let v = two_sided(|a, b, c| dclw(a, b, &c.contrastive), &mut grad)?;
            Ok(outcome(v, grad))
        }
        Method::Ntxent => {
            let v = two_sided(|a, b, c| nt_xent(a, b, &c.contrastive), &mut grad)?;
            Ok(outcome(v, grad))
        }
        Method::Barlow => {
            let v = two_sided(|a, b, c| barlow_twins(a, b, &c.barlow), &mut grad)?;
            Ok(outcome(v, grad))
        }
        Method::Moco => {
            let queue = ctx
                .queue
                .ok_or_else(|| Error::Precondition("moco step without a queue".into()))?;
            let cq = online.forward(xa)?;
            let keys = ctx.frozen.forward(xb)?.z;
            let out = nt_xent_queue(&cq.z, &keys, queue, &cfg.contrastive)?;
            online.backward(&cq, Some(&out.grads[0]), None, &mut grad)?;
            let mut o = outcome(out.value, grad);
            o.keys = Some(keys);
            Ok(o)
        }
        Method::Byol => {
            let ca = online.forward(xa)?;
            let cb = online.forward(xb)?;
            let ta = ctx.frozen.forward(xa)?.z;
            let tb = ctx.frozen.forward(xb)?.z;
            let (pa, pb) = (predictions(&ca)?, predictions(&cb)?);
            let out = byol(pa, &tb, pb, &ta)?;
            online.backward(&ca, None, Some(&out.grads[0]), &mut grad)?;
            online.backward(&cb, None, Some(&out.grads[2]), &mut grad)?;
            Ok(outcome(out.value, grad))
        }
        Method::Fastsiam => {
            let nv = batch.views.len();
            if nv < 3 {
                return Err(Error::Precondition("fastsiam needs at least 3 views".into()));
            }
            let caches = batch
                .views
                .iter()
                .map(|x| online.forward(x))
                .collect::<Result<Vec<_>>>()?;
            let targets = batch
                .views
                .iter()
                .map(|x| Ok(ctx.frozen.forward(x)?.z))
                .collect::<Result<Vec<_>>>()?;
            let mut value = 0.0;
            for (v, c) in caches.iter().enumerate() {
                let others: Vec<Matrix> = (0..nv).filter(|&u| u != v).map(|u| targets[u].clone()).collect();
                let out = fastsiam(predictions(c)?, &others)?;
                value += out.value / nv as f64;
                online.backward(c, None, Some(&out.grads[0].scaled(1.0 / nv as f64)), &mut grad)?;
            }
            Ok(outcome(value, grad))
        }
        Method::Dino => {
            let center = ctx
                .dino_center
                .ok_or_else(|| Error::Precondition("dino step without a center".into()))?;
            let caches = batch
                .views
                .iter()
                .map(|x| online.forward(x))
                .collect::<Result<Vec<_>>>()?;
            let students: Vec<Matrix> = caches.iter().map(|c| c.z.clone()).collect();
            let teachers = vec![ctx.frozen.forward(xa)?.z, ctx.frozen.forward(xb)?.z];
            let dcfg = DinoConfig {
                student_temp: cfg.dino_student_temp,
                teacher_temp: cfg.dino_teacher_temp,
                center: center.to_vec(),
                center_momentum: cfg.dino_center_momentum,
            };
            let out = dino(&students, &teachers, &dcfg)?;
            for (c, g) in caches.iter().zip(&out.loss.grads) {
                online.backward(c, Some(g), None, &mut grad)?;
            }
            let mut o = outcome(out.loss.value, grad);
            o.next_dino_center = Some(out.center);
            Ok(o)
        }
        Method::Arcface => {
            let centers = ctx
                .class_centers
                .ok_or_else(|| Error::Precondition("arcface step without class centers".into()))?;
            let ca = online.forward(xa)?;
            let cb = online.forward(xb)?;
            let z = Matrix::vstack(&[&ca.z, &cb.z])?;
            let labels: Vec<usize> = batch.labels.iter().chain(&batch.labels).copied().collect();
            let out = arcface(&z, &labels, centers, &cfg.supervised)?;
            let n = xa.rows();
            online.backward(&ca, Some(&out.grads[0].slice_rows(0, n)), None, &mut grad)?;
            online.backward(&cb, Some(&out.grads[0].slice_rows(n, 2 * n)), None, &mut grad)?;
            let mut o = outcome(out.value, grad);
            o.center_grad = Some(out.grads[1].clone());
            Ok(o)
        }
        Method::Triplet => {
            let ca = online.forward(xa)?;
            let cb = online.forward(xb)?;
            let partners = hardest_negatives(&ca.z, &cb.z, &batch.labels)?;
            let negatives = cb.z.select_rows(&partners);
            let out = triplet(&ca.z, &cb.z, &negatives, &cfg.supervised)?;
            let mut gb = out.grads[1].clone();
            scatter_add(&mut gb, &partners, &out.grads[2]);
            online.backward(&ca, Some(&out.grads[0]), None, &mut grad)?;
            online.backward(&cb, Some(&gb), None, &mut grad)?;
            Ok(outcome(out.value, grad))
        }
        Method::Supcon => {
            let ca = online.forward(xa)?;
            let cb = online.forward(xb)?;
            let z = Matrix::vstack(&[&ca.z, &cb.z])?;
            let labels: Vec<usize> = batch.labels.iter().chain(&batch.labels).copied().collect();
            let out = supcon(&z, &labels, &cfg.contrastive)?;
            let n = xa.rows();
            online.backward(&ca, Some(&out.grads[0].slice_rows(0, n)), None, &mut grad)?;
            online.backward(&cb, Some(&out.grads[0].slice_rows(n, 2 * n)), None, &mut grad)?;
            Ok(outcome(out.value, grad))
        }
    }
}

fn predictions(c: &ForwardCache) -> Result<&Matrix> {
    c.p.as_ref()
        .ok_or_else(|| Error::Precondition("method needs a predictor head".into()))
}

//! Predictor/target objectives built on negative cosine similarity.

use super::{check_batch, check_same_shape, LossOutput, Normalized};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Mean over rows of `-cos(p_i, z_i)`. `z_target` is stop-gradient.
pub fn negative_cosine(p: &Matrix, z_target: &Matrix) -> Result<LossOutput> {
    check_batch(p, "p")?;
    check_same_shape(p, z_target, "prediction/target")?;
    let np = Normalized::new(p)?;
    let uz = Normalized::new(z_target)?.unit;
    let n = p.rows() as f64;
    let value = -(0..p.rows()).map(|i| dot(np.unit.row(i), uz.row(i))).sum::<f64>() / n;
    let grad_u = uz.scaled(-1.0 / n);
    LossOutput {
        value,
        grads: vec![np.backward(&grad_u), Matrix::zeros(p.rows(), p.cols())],
    }
    .check_finite()
}

/// Symmetrized BYOL objective; the two targets are stop-gradient.
/// Gradients are returned as `[pA, zB_target, pB, zA_target]`.
pub fn byol(
    p_a: &Matrix,
    z_b_target: &Matrix,
    p_b: &Matrix,
    z_a_target: &Matrix,
) -> Result<LossOutput> {
    let ab = negative_cosine(p_a, z_b_target)?;
    let ba = negative_cosine(p_b, z_a_target)?;
    let mut ab_grads = ab.grads.into_iter();
    let mut ba_grads = ba.grads.into_iter();
    let grads = vec![
        ab_grads.next().expect("prediction grad"),
        ab_grads.next().expect("target grad"),
        ba_grads.next().expect("prediction grad"),
        ba_grads.next().expect("target grad"),
    ];
    Ok(LossOutput {
        value: ab.value + ba.value,
        grads,
    })
}

/// Negative cosine against the mean of the L2-normalized target views.
/// Gradients are `[p, targets...]`, the targets being all zero.
pub fn fastsiam(p: &Matrix, targets: &[Matrix]) -> Result<LossOutput> {
    if targets.is_empty() {
        return Err(Error::Precondition("fastsiam needs at least one target view".into()));
    }
    check_batch(p, "p")?;
    let mut mean = Matrix::zeros(p.rows(), p.cols());
    for t in targets {
        check_same_shape(p, t, "fastsiam target")?;
        mean.add_assign(&Normalized::new(t)?.unit);
    }
    mean.scale(1.0 / targets.len() as f64);
    let mut out = negative_cosine(p, &mean)?;
    out.grads.truncate(1);
    out.grads
        .extend(targets.iter().map(|t| Matrix::zeros(t.rows(), t.cols())));
    Ok(out)
}

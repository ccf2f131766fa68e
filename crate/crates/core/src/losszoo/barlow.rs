use super::{check_batch, check_same_shape, BarlowConfig, LossOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Added to the batch variance before the square root.
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Column-wise batch standardization `(x - mean) / sqrt(var + eps)` with the
/// biased variance. Keeps the scale factors for the backward pass.
struct Standardized {
    out: Matrix,
    inv_std: Vec<f64>,
}

impl Standardized {
    fn new(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(d);
        for j in 0..d {
            let mean = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + STANDARDIZE_EPS).sqrt();
            for i in 0..n {
                out[(i, j)] = (x[(i, j)] - mean) * s;
            }
            inv_std.push(s);
        }
        Self { out, inv_std }
    }

    /// `dx = (g - mean(g) - x̂ · mean(g ⊙ x̂)) / sqrt(var + eps)` per column.
    fn backward(&self, g: &Matrix) -> Matrix {
        let (n, d) = g.shape();
        let mut dx = Matrix::zeros(n, d);
        for j in 0..d {
            let s = self.inv_std[j];
            let g_mean = (0..n).map(|i| g[(i, j)]).sum::<f64>() / n as f64;
            let gx_mean = (0..n).map(|i| g[(i, j)] * self.out[(i, j)]).sum::<f64>() / n as f64;
            for i in 0..n {
                dx[(i, j)] = s * (g[(i, j)] - g_mean - self.out[(i, j)] * gx_mean);
            }
        }
        dx
    }
}

/// Barlow Twins redundancy-reduction loss on the cross-correlation of the
/// batch-standardized views: `Σ_j (1 - C_jj)² + λ Σ_{j≠k} C_jk²`.
///
/// Rows are not L2-normalized; the column standardization already removes
/// scale. A constant column standardizes to zero through the eps term.
pub fn barlow_twins(za: &Matrix, zb: &Matrix, cfg: &BarlowConfig) -> Result<LossOutput> {
    check_batch(za, "zA")?;
    check_same_shape(za, zb, "barlow views")?;
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Config("barlow lambda must be nonnegative".into()));
    }
    let (n, d) = za.shape();
    if n < 2 {
        return Err(Error::Precondition("barlow twins needs at least 2 rows".into()));
    }
    let sa = Standardized::new(za);
    let sb = Standardized::new(zb);
    let mut c = sa.out.t_matmul(&sb.out)?;
    c.scale(1.0 / n as f64);

    let mut value = 0.0;
    let mut dc = Matrix::zeros(d, d);
    for j in 0..d {
        for k in 0..d {
            let cjk = c[(j, k)];
            if j == k {
                value += (1.0 - cjk).powi(2);
                dc[(j, k)] = -2.0 * (1.0 - cjk);
            } else {
                value += cfg.lambda * cjk * cjk;
                dc[(j, k)] = 2.0 * cfg.lambda * cjk;
            }
        }
    }
    // C = Aᵀ B / N  =>  dA = B dCᵀ / N,  dB = A dC / N
    let mut ga = sb.out.matmul_t(&dc)?;
    ga.scale(1.0 / n as f64);
    let mut gb = sa.out.matmul(&dc)?;
    gb.scale(1.0 / n as f64);
    LossOutput {
        value,
        grads: vec![sa.backward(&ga), sb.backward(&gb)],
    }
    .check_finite()
}

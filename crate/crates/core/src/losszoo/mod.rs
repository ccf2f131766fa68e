//! Self-supervised and supervised objectives with hand-derived gradients.
//!
//! Every loss takes embedding batches as [`Matrix`] rows, L2-normalizes them
//! where the loss is similarity based, and returns a [`LossOutput`] holding
//! the value and one gradient per input (same shape, same order). Inputs
//! under stop-gradient get an all-zero gradient.

mod barlow;
mod contrastive;
mod dino;
mod gradcheck;
mod method;
mod momentum;
mod siamese;
mod supervised;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

pub use barlow::barlow_twins;
pub use contrastive::{dclw, nt_xent, nt_xent_queue, supcon};
pub use dino::{dino, DinoOutput};
pub use gradcheck::{grad_check, GradCheckReport, LossProblem};
pub use method::{Method, GRADCHECK_ARCFACE_SCALE};
pub use momentum::{ema_update, MomentumState};
pub use siamese::{byol, fastsiam, negative_cosine};
pub use supervised::{arcface, triplet, triplet_hinge_values, ARCCOS_CLIP};

/// Rows with a smaller norm are rejected rather than clamped.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

impl LossOutput {
    fn check_finite(self) -> Result<Self> {
        if !self.value.is_finite() || !self.grads.iter().all(Matrix::is_finite) {
            return Err(Error::NonFinite(format!("loss value {}", self.value)));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Concentration of the von Mises-Fisher positive weighting (DCLW).
    pub vmf_sigma: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            vmf_sigma: 0.5,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        positive("temperature", self.temperature)?;
        positive("vmf_sigma", self.vmf_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarlowConfig {
    /// Weight on the off-diagonal redundancy terms.
    pub lambda: f64,
}

impl Default for BarlowConfig {
    fn default() -> Self {
        Self { lambda: 5e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinoConfig {
    pub student_temp: f64,
    pub teacher_temp: f64,
    pub center: Vec<f64>,
    pub center_momentum: f64,
}

impl DinoConfig {
    pub fn with_dim(k: usize) -> Self {
        Self {
            student_temp: 0.1,
            teacher_temp: 0.04,
            center: vec![0.0; k],
            center_momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub arcface_scale: f64,
    /// Additive angular margin in radians.
    pub arcface_margin: f64,
    pub triplet_margin: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            arcface_scale: 64.0,
            arcface_margin: 0.5,
            triplet_margin: 0.2,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        positive("arcface_scale", self.arcface_scale)?;
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.arcface_margin) {
            return Err(Error::Config(format!(
                "arcface margin {} must lie in [0, pi/2)",
                self.arcface_margin
            )));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::Config("triplet margin must be nonnegative".into()));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn check_batch(z: &Matrix, name: &str) -> Result<()> {
    if z.rows() == 0 || z.cols() == 0 {
        return Err(Error::Shape(format!("{name} is empty")));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Unit-normalized rows plus what is needed to push gradients back through
/// the normalization.
pub(crate) struct Normalized {
    pub unit: Matrix,
    norms: Vec<f64>,
}

impl Normalized {
    pub fn new(z: &Matrix) -> Result<Self> {
        let mut unit = z.clone();
        let mut norms = Vec::with_capacity(z.rows());
        for i in 0..z.rows() {
            let n = norm(z.row(i));
            if n < NORM_FLOOR {
                return Err(Error::ZeroNorm { row: i });
            }
            unit.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(Self { unit, norms })
    }

    /// Maps `dL/du` to `dL/dz` for `u = z / |z|`: `(g - u (u·g)) / |z|`.
    pub fn backward(&self, grad_unit: &Matrix) -> Matrix {
        let mut out = grad_unit.clone();
        for (i, &n) in self.norms.iter().enumerate() {
            let u = self.unit.row(i);
            let proj = dot(u, grad_unit.row(i));
            for (o, &ui) in out.row_mut(i).iter_mut().zip(u) {
                *o = (*o - ui * proj) / n;
            }
        }
        out
    }
}

/// L2-normalizes every row, rejecting rows below [`NORM_FLOOR`].
pub fn l2_normalize_rows(z: &Matrix) -> Result<Matrix> {
    Ok(Normalized::new(z)?.unit)
}

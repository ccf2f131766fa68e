//! Central finite-difference verification of analytic loss gradients.

use super::LossOutput;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

type EvalFn = dyn Fn(&[Matrix]) -> Result<LossOutput> + Send + Sync;
type SkipFn = dyn Fn(&[Matrix], usize, usize) -> bool + Send + Sync;

/// A loss bound to concrete inputs, with the stop-gradient mask of its
/// inputs and an optional predicate for coordinates sitting on a kink.
pub struct LossProblem {
    pub name: String,
    pub inputs: Vec<Matrix>,
    pub stop_gradient: Vec<bool>,
    eval: Box<EvalFn>,
    skip: Option<Box<SkipFn>>,
}

impl LossProblem {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Matrix>,
        stop_gradient: Vec<bool>,
        eval: impl Fn(&[Matrix]) -> Result<LossOutput> + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(inputs.len(), stop_gradient.len(), "one stop-gradient flag per input");
        Self {
            name: name.into(),
            inputs,
            stop_gradient,
            eval: Box::new(eval),
            skip: None,
        }
    }

    /// Coordinates for which `skip(inputs, input_index, flat_index)` holds are
    /// not compared against finite differences.
    pub fn with_skip(
        mut self,
        skip: impl Fn(&[Matrix], usize, usize) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.skip = Some(Box::new(skip));
        self
    }

    pub fn evaluate(&self, inputs: &[Matrix]) -> Result<LossOutput> {
        (self.eval)(inputs)
    }
}

impl std::fmt::Debug for LossProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossProblem")
            .field("name", &self.name)
            .field("inputs", &self.inputs.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
    /// Every stop-gradient input reported an exactly zero gradient.
    pub stop_gradient_exact: bool,
    pub passed: bool,
}

/// Compares analytic gradients with `(f(x+ε) - f(x-ε)) / 2ε` coordinate by
/// coordinate. The relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator.
pub fn grad_check(problem: &LossProblem, eps: f64, tolerance: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-4]")));
    }
    let base = problem.evaluate(&problem.inputs)?;
    if base.grads.len() != problem.inputs.len() {
        return Err(Error::Shape(format!(
            "{} returned {} gradients for {} inputs",
            problem.name,
            base.grads.len(),
            problem.inputs.len()
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        stop_gradient_exact: true,
        passed: false,
    };
    let mut inputs = problem.inputs.clone();
    for (idx, grad) in base.grads.iter().enumerate() {
        if grad.shape() != problem.inputs[idx].shape() {
            return Err(Error::Shape(format!("gradient {idx} has the wrong shape")));
        }
        if problem.stop_gradient[idx] {
            if grad.as_slice().iter().any(|&g| g != 0.0) {
                report.stop_gradient_exact = false;
            }
            continue;
        }
        for k in 0..grad.as_slice().len() {
            if let Some(skip) = &problem.skip {
                if skip(&problem.inputs, idx, k) {
                    report.skipped += 1;
                    continue;
                }
            }
            let orig = inputs[idx].as_slice()[k];
            inputs[idx].as_mut_slice()[k] = orig + eps;
            let plus = problem.evaluate(&inputs)?.value;
            inputs[idx].as_mut_slice()[k] = orig - eps;
            let minus = problem.evaluate(&inputs)?.value;
            inputs[idx].as_mut_slice()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} at perturbed input {idx} coordinate {k}",
                    problem.name
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grad.as_slice()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((idx, k));
            }
        }
    }
    report.passed = report.stop_gradient_exact && report.max_rel_error <= tolerance;
    Ok(report)
}

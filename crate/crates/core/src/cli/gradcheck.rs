use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CmdResult, Failure, SEED_ENV};
use crate::error::{Error, Result};
use crate::losszoo::{grad_check, Method};
use crate::microtrain::derive_seed;
use crate::par;

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    /// Comma-separated loss methods; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Worst case over the trials of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCheck {
    pub method: Method,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(trial, input, coordinate)` of the largest error.
    pub worst: Option<(usize, usize, usize)>,
    /// First trial whose stop-gradient inputs got a nonzero gradient.
    pub stop_gradient_leak: Option<usize>,
}

impl MethodCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.stop_gradient_leak.is_none() && self.max_rel_error <= tolerance
    }
}

/// Checks `trials` random instances of every method. Trial instances are
/// drawn from a per-method stream of `seed`, so results do not depend on
/// which other methods are checked.
pub fn gradcheck_suite(methods: &[Method], trials: usize, eps: f64, seed: u64) -> Result<Vec<MethodCheck>> {
    let results = par::map_slice(methods, |&m| -> Result<MethodCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, m as u64));
        let mut check = MethodCheck {
            method: m,
            trials,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: None,
            stop_gradient_leak: None,
        };
        for t in 0..trials {
            let problem = m.random_problem(&mut rng);
            // the tolerance is applied by the caller
            let r = grad_check(&problem, eps, f64::INFINITY)?;
            check.checked += r.checked;
            check.skipped += r.skipped;
            if !r.stop_gradient_exact && check.stop_gradient_leak.is_none() {
                check.stop_gradient_leak = Some(t);
            }
            if let Some((i, k)) = r.worst {
                if check.worst.is_none() || r.max_rel_error > check.max_rel_error {
                    check.max_rel_error = r.max_rel_error;
                    check.worst = Some((t, i, k));
                }
            }
        }
        Ok(check)
    });
    results.into_iter().collect()
}

pub(super) fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    if args.trials == 0 {
        return Err(Failure::Usage("trials must be at least 1".into()));
    }
    if !(args.tolerance >= 0.0) {
        return Err(Failure::Usage(format!("tolerance {} must be nonnegative", args.tolerance)));
    }
    if !(1e-7..=1e-4).contains(&args.eps) {
        return Err(Failure::Usage(format!("eps {} outside [1e-7, 1e-4]", args.eps)));
    }
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.clone()
    };
    let checks = gradcheck_suite(&methods, args.trials, args.eps, args.seed)?;
    writeln!(
        out,
        "{:<12} {:>6} {:>8} {:>7} {:>13}  {}",
        "method", "trials", "checked", "skipped", "max_rel_error", "status"
    )?;
    for c in &checks {
        let status = if c.passed(args.tolerance) { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<12} {:>6} {:>8} {:>7} {:>13.3e}  {status}",
            c.method.name(),
            c.trials,
            c.checked,
            c.skipped,
            c.max_rel_error
        )?;
    }
    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed(args.tolerance))
        .map(|c| match (c.stop_gradient_leak, c.worst) {
            (Some(t), _) => format!("{} trial {t}: stop-gradient input has a nonzero gradient", c.method),
            (None, Some((t, i, k))) => format!(
                "{} trial {t}: relative error {:.3e} at input {i} coordinate {k} exceeds {:e}",
                c.method, c.max_rel_error, args.tolerance
            ),
            (None, None) => format!("{}: nothing checked", c.method),
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::GradCheck(failures.join("; "))))
    }
}

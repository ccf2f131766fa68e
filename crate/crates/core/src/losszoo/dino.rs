use super::{check_batch, check_same_shape, DinoConfig, LossOutput};
use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, softmax, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DinoOutput {
    pub loss: LossOutput,
    /// Center after the momentum update with this batch's teacher rows.
    pub center: Vec<f64>,
}

/// Student/teacher cross-entropy on raw logits.
///
/// Teacher view `t` corresponds to student view `t` (the global views come
/// first); every pair with differing view index contributes
/// `CE(softmax((teacher - center)/τ_t), softmax(student/τ_s))`, and the loss is
/// the mean over pairs and rows. Gradients are one per student view followed
/// by one (all-zero) per teacher view.
pub fn dino(student_views: &[Matrix], teacher_views: &[Matrix], cfg: &DinoConfig) -> Result<DinoOutput> {
    if student_views.len() < 2 {
        return Err(Error::Precondition("dino needs at least 2 views".into()));
    }
    if teacher_views.is_empty() || teacher_views.len() > student_views.len() {
        return Err(Error::Precondition(format!(
            "{} teacher views for {} student views",
            teacher_views.len(),
            student_views.len()
        )));
    }
    if !(cfg.student_temp > 0.0 && cfg.teacher_temp > 0.0) {
        return Err(Error::Config("dino temperatures must be positive".into()));
    }
    let first = &student_views[0];
    check_batch(first, "student view 0")?;
    for v in student_views.iter().chain(teacher_views) {
        check_same_shape(first, v, "dino view")?;
        check_batch(v, "dino view")?;
    }
    let (n, k) = first.shape();
    if cfg.center.len() != k {
        return Err(Error::Shape(format!(
            "center has {} entries, logits have {k}",
            cfg.center.len()
        )));
    }
    if !cfg.center.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("dino center".into()));
    }

    let teacher_probs: Vec<Vec<Vec<f64>>> = teacher_views
        .iter()
        .map(|t| {
            t.row_iter()
                .map(|r| {
                    let logits: Vec<f64> = r
                        .iter()
                        .zip(&cfg.center)
                        .map(|(x, c)| (x - c) / cfg.teacher_temp)
                        .collect();
                    softmax(&logits)
                })
                .collect()
        })
        .collect();

    let pairs = teacher_views.len() * (student_views.len() - 1);
    let scale = 1.0 / (pairs * n) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student_views.len() + teacher_views.len());
    for (si, s) in student_views.iter().enumerate() {
        let mut g = Matrix::zeros(n, k);
        for r in 0..n {
            let logits: Vec<f64> = s.row(r).iter().map(|x| x / cfg.student_temp).collect();
            let lse = log_sum_exp(logits.iter().copied());
            let p = softmax(&logits);
            for (ti, probs) in teacher_probs.iter().enumerate() {
                if ti == si {
                    continue;
                }
                let q = &probs[r];
                value -= scale * q.iter().zip(&logits).map(|(qj, lj)| qj * (lj - lse)).sum::<f64>();
                for ((gj, pj), qj) in g.row_mut(r).iter_mut().zip(&p).zip(q) {
                    *gj += scale * (pj - qj) / cfg.student_temp;
                }
            }
        }
        grads.push(g);
    }
    grads.extend(teacher_views.iter().map(|t| Matrix::zeros(t.rows(), t.cols())));

    let total_rows = (teacher_views.len() * n) as f64;
    let m = cfg.center_momentum;
    let center = (0..k)
        .map(|j| {
            let mean = teacher_views.iter().flat_map(|t| t.row_iter().map(move |r| r[j])).sum::<f64>() / total_rows;
            m * cfg.center[j] + (1.0 - m) * mean
        })
        .collect();

    Ok(DinoOutput {
        loss: LossOutput { value, grads }.check_finite()?,
        center,
    })
}

//! Softmax-over-similarity objectives: NT-Xent (in-batch and queue
//! negatives), decoupled contrastive with vMF positive weighting, and
//! supervised contrastive.

use std::collections::BTreeSet;

use super::{check_batch, check_same_shape, ContrastiveConfig, LossOutput, MomentumState, Normalized};
use crate::error::{Error, Result};
use crate::matrix::{dot, log_sum_exp, softmax, Matrix};

/// For each anchor `i` adds `scale * (LSE_{j in cand(i)} s_ij/τ - Σ_j t_ij s_ij/τ)`
/// to the value and the matching derivative into `dsim`.
fn softmax_contrast(
    sim: &Matrix,
    tau: f64,
    scale: f64,
    dsim: &mut Matrix,
    cand: impl Fn(usize, usize) -> bool,
    target: impl Fn(usize, usize) -> f64,
) -> f64 {
    let m = sim.rows();
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(m);
    let mut logits = Vec::with_capacity(m);
    for i in 0..m {
        idx.clear();
        logits.clear();
        for j in 0..m {
            if cand(i, j) {
                idx.push(j);
                logits.push(sim[(i, j)] / tau);
            }
        }
        let mut row = 0.0;
        for &j in &idx {
            let t = target(i, j);
            if t != 0.0 {
                row -= t * sim[(i, j)] / tau;
                dsim[(i, j)] -= scale * t / tau;
            }
        }
        if !idx.is_empty() {
            row += log_sum_exp(logits.iter().copied());
            for (&j, p) in idx.iter().zip(softmax(&logits)) {
                dsim[(i, j)] += scale * p / tau;
            }
        }
        total += scale * row;
    }
    total
}

/// `dL/dU` for `sim = U Uᵀ`: `(G + Gᵀ) U`.
fn gram_backward(unit: &Matrix, dsim: &Matrix) -> Matrix {
    let m = unit.rows();
    let sym = Matrix::from_fn(m, m, |i, j| dsim[(i, j)] + dsim[(j, i)]);
    sym.matmul(unit).expect("square gram shape")
}

fn split_grad(grad: &Matrix, n: usize, na: &Normalized, nb: &Normalized) -> Vec<Matrix> {
    let ga = grad.slice_rows(0, n);
    let gb = grad.slice_rows(n, 2 * n);
    vec![na.backward(&ga), nb.backward(&gb)]
}

/// NT-Xent over the `2N` stacked rows of both views: each row's positive is
/// its counterpart in the other view, every other row is a negative.
pub fn nt_xent(za: &Matrix, zb: &Matrix, cfg: &ContrastiveConfig) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(za, "zA")?;
    check_same_shape(za, zb, "nt_xent views")?;
    let n = za.rows();
    let na = Normalized::new(za)?;
    let nb = Normalized::new(zb)?;
    let u = Matrix::vstack(&[&na.unit, &nb.unit])?;
    let m = 2 * n;
    let sim = u.matmul_t(&u)?;
    let pos = |i: usize| (i + n) % m;
    let mut dsim = Matrix::zeros(m, m);
    let value = softmax_contrast(
        &sim,
        cfg.temperature,
        1.0 / m as f64,
        &mut dsim,
        |i, j| i != j,
        |i, j| if j == pos(i) { 1.0 } else { 0.0 },
    );
    let grad_u = gram_backward(&u, &dsim);
    LossOutput {
        value,
        grads: split_grad(&grad_u, n, &na, &nb),
    }
    .check_finite()
}

/// NT-Xent with negatives drawn from a momentum queue. `k_pos` and the queue
/// are stop-gradient; only `q` receives a gradient.
pub fn nt_xent_queue(
    q: &Matrix,
    k_pos: &Matrix,
    state: &MomentumState,
    cfg: &ContrastiveConfig,
) -> Result<LossOutput> {
    let queue = state.to_matrix();
    let mut out = nt_xent_queue_rows(q, k_pos, &queue, cfg)?;
    out.grads.truncate(2);
    Ok(out)
}

/// Same as [`nt_xent_queue`] with the queue given as a matrix; the returned
/// gradients are `[q, k_pos, queue]`.
pub(crate) fn nt_xent_queue_rows(
    q: &Matrix,
    k_pos: &Matrix,
    queue: &Matrix,
    cfg: &ContrastiveConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(q, "q")?;
    check_same_shape(q, k_pos, "query/key")?;
    if queue.rows() > 0 && queue.cols() != q.cols() {
        return Err(Error::Shape(format!(
            "queue rows have dimension {}, queries {}",
            queue.cols(),
            q.cols()
        )));
    }
    let tau = cfg.temperature;
    let nq = Normalized::new(q)?;
    let uk = Normalized::new(k_pos)?.unit;
    let un = if queue.rows() > 0 {
        Normalized::new(queue)?.unit
    } else {
        Matrix::zeros(0, q.cols())
    };
    let n = q.rows();
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_u = Matrix::zeros(n, q.cols());
    let mut logits = Vec::with_capacity(1 + un.rows());
    for i in 0..n {
        let ui = nq.unit.row(i);
        logits.clear();
        logits.push(dot(ui, uk.row(i)) / tau);
        logits.extend(un.row_iter().map(|r| dot(ui, r) / tau));
        value += scale * (log_sum_exp(logits.iter().copied()) - logits[0]);
        let p = softmax(&logits);
        let g = grad_u.row_mut(i);
        for (gk, &kk) in g.iter_mut().zip(uk.row(i)) {
            *gk += scale * (p[0] - 1.0) / tau * kk;
        }
        for (pn, r) in p[1..].iter().zip(un.row_iter()) {
            for (gk, &nk) in g.iter_mut().zip(r) {
                *gk += scale * pn / tau * nk;
            }
        }
    }
    LossOutput {
        value,
        grads: vec![
            nq.backward(&grad_u),
            Matrix::zeros(k_pos.rows(), k_pos.cols()),
            Matrix::zeros(queue.rows(), queue.cols()),
        ],
    }
    .check_finite()
}

/// Decoupled contrastive loss with von Mises-Fisher weighting.
///
/// The positive is removed from each anchor's denominator, and the positive
/// term of pair `k` is scaled by `w_k = 2 - N * softmax_k(c / σ)`, where `c`
/// holds the cosine similarity of each positive pair. Gradients flow through
/// the weights.
pub fn dclw(za: &Matrix, zb: &Matrix, cfg: &ContrastiveConfig) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(za, "zA")?;
    check_same_shape(za, zb, "dclw views")?;
    let n = za.rows();
    if n < 2 {
        return Err(Error::Precondition("dclw needs at least 2 pairs".into()));
    }
    let tau = cfg.temperature;
    let sigma = cfg.vmf_sigma;
    let na = Normalized::new(za)?;
    let nb = Normalized::new(zb)?;
    let u = Matrix::vstack(&[&na.unit, &nb.unit])?;
    let m = 2 * n;
    let sim = u.matmul_t(&u)?;
    let pos = |i: usize| (i + n) % m;

    let mut dsim = Matrix::zeros(m, m);
    let negatives = softmax_contrast(
        &sim,
        tau,
        1.0 / m as f64,
        &mut dsim,
        |i, j| i != j && j != pos(i),
        |_, _| 0.0,
    );
    let mut grad_u = gram_backward(&u, &dsim);

    let c: Vec<f64> = (0..n).map(|k| sim[(k, k + n)]).collect();
    let scaled: Vec<f64> = c.iter().map(|ck| ck / sigma).collect();
    let p = softmax(&scaled);
    let w: Vec<f64> = p.iter().map(|pk| 2.0 - n as f64 * pk).collect();
    // both views of pair k contribute -w_k c_k / τ, averaged over 2N anchors
    let positives: f64 = -(1.0 / (n as f64 * tau)) * w.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    let c_bar: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
    for k in 0..n {
        let dc = -(1.0 / (n as f64 * tau)) * (w[k] - (n as f64 / sigma) * p[k] * (c[k] - c_bar));
        let (uk, ukn) = (u.row(k).to_vec(), u.row(k + n).to_vec());
        for (g, v) in grad_u.row_mut(k).iter_mut().zip(&ukn) {
            *g += dc * v;
        }
        for (g, v) in grad_u.row_mut(k + n).iter_mut().zip(&uk) {
            *g += dc * v;
        }
    }

    LossOutput {
        value: negatives + positives,
        grads: split_grad(&grad_u, n, &na, &nb),
    }
    .check_finite()
}

/// Supervised contrastive loss: every other row sharing an anchor's label is
/// a positive; each anchor averages its positives' log-likelihoods.
pub fn supcon(z: &Matrix, labels: &[usize], cfg: &ContrastiveConfig) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(z, "z")?;
    let n = z.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if n < 2 {
        return Err(Error::Precondition("supcon needs at least 2 rows".into()));
    }
    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    let lonely: BTreeSet<usize> = (0..n).filter(|&i| positives[i] == 0).map(|i| labels[i]).collect();
    if !lonely.is_empty() {
        return Err(Error::MissingPositive {
            labels: lonely.into_iter().collect(),
        });
    }
    let nz = Normalized::new(z)?;
    let u = &nz.unit;
    let sim = u.matmul_t(u)?;
    let mut dsim = Matrix::zeros(n, n);
    let value = softmax_contrast(
        &sim,
        cfg.temperature,
        1.0 / n as f64,
        &mut dsim,
        |i, j| i != j,
        |i, j| {
            if labels[i] == labels[j] {
                1.0 / positives[i] as f64
            } else {
                0.0
            }
        },
    );
    let grad_u = gram_backward(u, &dsim);
    LossOutput {
        value,
        grads: vec![nz.backward(&grad_u)],
    }
    .check_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(tau: f64) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: tau,
            ..Default::default()
        }
    }

    fn rows(v: &[&[f64]]) -> Matrix {
        Matrix::from_rows(v).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let (a, b) = (unit(a), unit(b));
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    }

    /// Direct evaluation of the decoupled loss, with optional vMF weights.
    fn dcl_oracle(za: &Matrix, zb: &Matrix, tau: f64, sigma: Option<f64>) -> f64 {
        let n = za.rows();
        let all: Vec<Vec<f64>> = za.row_iter().chain(zb.row_iter()).map(|r| r.to_vec()).collect();
        let c: Vec<f64> = (0..n).map(|k| cos(za.row(k), zb.row(k))).collect();
        let w: Vec<f64> = match sigma {
            None => vec![1.0; n],
            Some(s) => {
                let e: Vec<f64> = c.iter().map(|x| (x / s).exp()).collect();
                let tot: f64 = e.iter().sum();
                e.iter().map(|x| 2.0 - n as f64 * x / tot).collect()
            }
        };
        let mut total = 0.0;
        for i in 0..2 * n {
            let p = (i + n) % (2 * n);
            let mut denom = 0.0;
            for j in 0..2 * n {
                if j != i && j != p {
                    denom += (cos(&all[i], &all[j]) / tau).exp();
                }
            }
            total += -w[i % n] * cos(&all[i], &all[p]) / tau + denom.ln();
        }
        total / (2 * n) as f64
    }

    #[test]
    fn nt_xent_single_pair_is_zero() {
        let out = nt_xent(&rows(&[&[1.0, 2.0]]), &rows(&[&[-0.5, 0.3]]), &cfg(0.1)).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn nt_xent_uniform_batch() {
        let z = rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let out = nt_xent(&z, &z, &cfg(0.1)).unwrap();
        assert!((out.value - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn nt_xent_orthogonal_pairs() {
        let z = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = nt_xent(&z, &z, &cfg(1.0)).unwrap();
        // frozen from direct evaluation: -ln(e / (e + 2))
        assert!((out.value - 0.551_444_713_932_051_4).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_rejects_mismatch_and_zero_rows() {
        let a = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = rows(&[&[1.0, 0.0]]);
        assert!(matches!(nt_xent(&a, &b, &cfg(0.1)), Err(Error::Shape(_))));
        let z = rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(nt_xent(&a, &z, &cfg(0.1)), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn queue_cases() {
        let e1 = rows(&[&[1.0, 0.0]]);
        let e2 = rows(&[&[0.0, 1.0]]);
        let empty = MomentumState::new(0.99, 4, 2);
        let out = nt_xent_queue(&e1, &e1, &empty, &cfg(1.0)).unwrap();
        assert!(out.value.abs() < 1e-12);

        let state = empty.queue_push(&e2).unwrap();
        let out = nt_xent_queue(&e1, &e1, &state, &cfg(1.0)).unwrap();
        // -ln(e / (e + 1))
        assert!((out.value - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!(out.grads[1].as_slice().iter().all(|&g| g == 0.0));

        let wrong = MomentumState::new(0.99, 4, 3).queue_push(&rows(&[&[1.0, 0.0, 0.0]])).unwrap();
        assert!(nt_xent_queue(&e1, &e1, &wrong, &cfg(1.0)).is_err());
    }

    #[test]
    fn dclw_equal_positive_similarities_have_unit_weights() {
        // every positive pair has cosine 1, so the weighting is uniform
        let za = rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let got = dclw(&za, &za, &cfg(0.5)).unwrap().value;
        let want = dcl_oracle(&za, &za, 0.5, None);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn dclw_large_sigma_reduces_to_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let za = random(&mut rng, 5, 4);
        let zb = random(&mut rng, 5, 4);
        let c = ContrastiveConfig {
            temperature: 0.2,
            vmf_sigma: 1e9,
        };
        let got = dclw(&za, &zb, &c).unwrap().value;
        assert!((got - dcl_oracle(&za, &zb, 0.2, None)).abs() < 1e-6);
    }

    #[test]
    fn dclw_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let za = random(&mut rng, 2, 3);
            let zb = random(&mut rng, 2, 3);
            let c = ContrastiveConfig::default();
            let got = dclw(&za, &zb, &c).unwrap().value;
            let want = dcl_oracle(&za, &zb, c.temperature, Some(c.vmf_sigma));
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let one = rows(&[&[1.0, 0.0]]);
        assert!(matches!(dclw(&one, &one, &cfg(0.1)), Err(Error::Precondition(_))));
    }

    #[test]
    fn supcon_cases() {
        let z = rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let out = supcon(&z, &[0, 0, 0], &cfg(0.1)).unwrap();
        assert!((out.value - 2f64.ln()).abs() < 1e-9);

        let z = rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let out = supcon(&z, &[0, 0, 1, 1], &cfg(1.0)).unwrap();
        assert!((out.value - 0.551_444_713_932_051_4).abs() < 1e-12);

        match supcon(&z, &[0, 0, 1, 2], &cfg(1.0)) {
            Err(Error::MissingPositive { labels }) => assert_eq!(labels, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }
}

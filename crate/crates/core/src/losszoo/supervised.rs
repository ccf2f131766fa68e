//! Supervised metric-learning baselines: additive angular margin (ArcFace)
//! and triplet margin loss.

use super::{check_batch, check_same_shape, LossOutput, Normalized, SupervisedConfig};
use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, softmax, Matrix};

/// Cosines are clipped to `[-1 + ARCCOS_CLIP, 1 - ARCCOS_CLIP]` before `acos`.
pub const ARCCOS_CLIP: f64 = 1e-7;

/// Softmax cross-entropy over `s·cos θ_j` logits, with the target logit
/// replaced by `s·cos(θ_y + margin)`. Gradients are `[z, centers]`.
pub fn arcface(
    z: &Matrix,
    labels: &[usize],
    centers: &Matrix,
    cfg: &SupervisedConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(z, "z")?;
    check_batch(centers, "class centers")?;
    if labels.len() != z.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), z.rows())));
    }
    if centers.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "centers have dimension {}, embeddings {}",
            centers.cols(),
            z.cols()
        )));
    }
    let classes = centers.rows();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }

    let nz = Normalized::new(z)?;
    let nc = Normalized::new(centers)?;
    let cos = nz.unit.matmul_t(&nc.unit)?;
    let (s, margin) = (cfg.arcface_scale, cfg.arcface_margin);
    let n = z.rows();
    let scale = 1.0 / n as f64;

    let mut value = 0.0;
    let mut dcos = Matrix::zeros(n, classes);
    let lo = -1.0 + ARCCOS_CLIP;
    let hi = 1.0 - ARCCOS_CLIP;
    for (i, &y) in labels.iter().enumerate() {
        let raw = cos[(i, y)];
        let theta = raw.clamp(lo, hi).acos();
        let mut logits: Vec<f64> = cos.row(i).iter().map(|c| s * c).collect();
        logits[y] = s * (theta + margin).cos();
        value += scale * (log_sum_exp(logits.iter().copied()) - logits[y]);
        let p = softmax(&logits);
        for (j, pj) in p.iter().enumerate() {
            let dlogit = scale * (pj - if j == y { 1.0 } else { 0.0 });
            let dlogit_dcos = if j != y {
                s
            } else if raw > lo && raw < hi {
                s * (theta + margin).sin() / theta.sin()
            } else {
                0.0
            };
            dcos[(i, j)] = dlogit * dlogit_dcos;
        }
    }
    let grad_uz = dcos.matmul(&nc.unit)?;
    let grad_uc = dcos.t_matmul(&nz.unit)?;
    LossOutput {
        value,
        grads: vec![nz.backward(&grad_uz), nc.backward(&grad_uc)],
    }
    .check_finite()
}

/// Per-row hinge argument `|â - p̂| - |â - n̂| + margin` on normalized rows.
pub fn triplet_hinge_values(
    anchor: &Matrix,
    positive: &Matrix,
    negative: &Matrix,
    margin: f64,
) -> Result<Vec<f64>> {
    let a = Normalized::new(anchor)?.unit;
    let p = Normalized::new(positive)?.unit;
    let n = Normalized::new(negative)?.unit;
    Ok((0..a.rows())
        .map(|i| dist(a.row(i), p.row(i)) - dist(a.row(i), n.row(i)) + margin)
        .collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean hinge `max(0, |â - p̂| - |â - n̂| + margin)`. The subgradient at the
/// kink (and at coincident points) is zero. Gradients are `[a, p, n]`.
pub fn triplet(
    anchor: &Matrix,
    positive: &Matrix,
    negative: &Matrix,
    cfg: &SupervisedConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_batch(anchor, "anchor")?;
    check_same_shape(anchor, positive, "anchor/positive")?;
    check_same_shape(anchor, negative, "anchor/negative")?;
    let na = Normalized::new(anchor)?;
    let np = Normalized::new(positive)?;
    let nn = Normalized::new(negative)?;
    let (rows, d) = anchor.shape();
    let scale = 1.0 / rows as f64;
    let mut ga = Matrix::zeros(rows, d);
    let mut gp = Matrix::zeros(rows, d);
    let mut gn = Matrix::zeros(rows, d);
    let mut value = 0.0;
    for i in 0..rows {
        let (a, p, n) = (na.unit.row(i), np.unit.row(i), nn.unit.row(i));
        let dp = dist(a, p);
        let dn = dist(a, n);
        let h = dp - dn + cfg.triplet_margin;
        if h <= 0.0 {
            continue;
        }
        value += scale * h;
        for k in 0..d {
            let tp = if dp > 0.0 { (a[k] - p[k]) / dp } else { 0.0 };
            let tn = if dn > 0.0 { (a[k] - n[k]) / dn } else { 0.0 };
            ga[(i, k)] = scale * (tp - tn);
            gp[(i, k)] = -scale * tp;
            gn[(i, k)] = scale * tn;
        }
    }
    LossOutput {
        value,
        grads: vec![na.backward(&ga), np.backward(&gp), nn.backward(&gn)],
    }
    .check_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(v: &[&[f64]]) -> Matrix {
        Matrix::from_rows(v).unwrap()
    }

    fn cfg(s: f64, m: f64) -> SupervisedConfig {
        SupervisedConfig {
            arcface_scale: s,
            arcface_margin: m,
            triplet_margin: 0.2,
        }
    }

    #[test]
    fn single_class_is_zero() {
        let z = rows(&[&[0.3, 0.4], &[-1.0, 0.2]]);
        let c = rows(&[&[1.0, 1.0]]);
        let out = arcface(&z, &[0, 0], &c, &SupervisedConfig::default()).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn aligned_two_class_case() {
        let z = rows(&[&[1.0, 0.0]]);
        let c = rows(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let out = arcface(&z, &[0], &c, &cfg(2.0, 0.0)).unwrap();
        // -ln(e² / (e² + 1)); the arccos clip shifts the target logit by ~2e-7
        assert!((out.value - 0.126_928_011_042_972_38).abs() < 1e-6);
    }

    #[test]
    fn zero_margin_is_scaled_cosine_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Matrix::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
        let c = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let labels = [0, 2, 1, 1, 0];
        let got = arcface(&z, &labels, &c, &cfg(8.0, 0.0)).unwrap().value;
        let mut want = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let zi: Vec<f64> = z.row(i).to_vec();
            let logits: Vec<f64> = (0..3)
                .map(|j| {
                    let cj = c.row(j);
                    8.0 * dot(&zi, cj) / (dot(&zi, &zi).sqrt() * dot(cj, cj).sqrt())
                })
                .collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            want -= (logits[y].exp() / denom).ln();
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn default_scale_gradient_matches_finite_difference() {
        // absolute comparison against the largest gradient entry, since at
        // s = 64 small coordinates sit below the finite-difference resolution
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = SupervisedConfig::default();
        let labels = [0, 1, 2, 0];
        for _ in 0..10 {
            let z = Matrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0));
            let c = Matrix::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
            let out = arcface(&z, &labels, &c, &cfg).unwrap();
            let scale = out.grads.iter().flat_map(|g| g.as_slice()).fold(0.0f64, |m, v| m.max(v.abs()));
            let eps = 1e-6;
            for (which, base) in [&z, &c].into_iter().enumerate() {
                for k in 0..base.as_slice().len() {
                    let mut plus = [z.clone(), c.clone()];
                    let mut minus = [z.clone(), c.clone()];
                    plus[which].as_mut_slice()[k] += eps;
                    minus[which].as_mut_slice()[k] -= eps;
                    let fp = arcface(&plus[0], &labels, &plus[1], &cfg).unwrap().value;
                    let fm = arcface(&minus[0], &labels, &minus[1], &cfg).unwrap().value;
                    let numeric = (fp - fm) / (2.0 * eps);
                    let analytic = out.grads[which].as_slice()[k];
                    assert!((numeric - analytic).abs() <= 1e-6 * scale.max(1.0), "{numeric} vs {analytic}");
                }
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        let z = rows(&[&[1.0, 0.0]]);
        let c = rows(&[&[1.0, 0.0]]);
        assert!(matches!(
            arcface(&z, &[1], &c, &SupervisedConfig::default()),
            Err(Error::LabelOutOfRange { label: 1, classes: 1 })
        ));
    }

    #[test]
    fn triplet_cases() {
        let c = SupervisedConfig::default();
        let a = rows(&[&[1.0, 0.0]]);
        let anti = rows(&[&[-1.0, 0.0]]);
        assert_eq!(triplet(&a, &a, &anti, &c).unwrap().value, 0.0);

        let e2 = rows(&[&[0.0, 1.0]]);
        let out = triplet(&a, &e2, &e2, &c).unwrap();
        assert!((out.value - 0.2).abs() < 1e-12);

        let out = triplet(&a, &e2, &anti, &c).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0)));
    }
}

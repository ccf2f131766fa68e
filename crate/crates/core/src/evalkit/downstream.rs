//! Attribute, pose and segmentation metrics over predictions.

use crate::error::{Error, Result};

/// Mean over attributes of the fraction of rows predicted correctly.
pub fn multilabel_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predicted rows for {} true rows", pred.len(), truth.len())));
    }
    let attrs = truth[0].len();
    if attrs == 0 || pred.iter().chain(truth).any(|r| r.len() != attrs) {
        return Err(Error::Shape("attribute rows must share a nonzero length".into()));
    }
    let n = pred.len() as f64;
    let per_attr = (0..attrs).map(|a| pred.iter().zip(truth).filter(|(p, t)| p[a] == t[a]).count() as f64 / n);
    Ok(per_attr.sum::<f64>() / attrs as f64)
}

/// Fraction of visible keypoints within Euclidean distance `delta`.
pub fn pck(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>], visible: &[Vec<bool>], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("pck threshold {delta} must be positive")));
    }
    if pred.len() != truth.len() || pred.len() != visible.len() {
        return Err(Error::Shape("keypoint arrays differ in length".into()));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for ((p, t), v) in pred.iter().zip(truth).zip(visible) {
        if p.len() != t.len() || p.len() != v.len() {
            return Err(Error::Shape("keypoint rows differ in length".into()));
        }
        for ((a, b), &vis) in p.iter().zip(t).zip(v) {
            if vis {
                total += 1;
                if (a[0] - b[0]).hypot(a[1] - b[1]) <= delta {
                    hit += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Precondition("no visible keypoints".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Mean IoU over the classes present in either map, via the confusion
/// matrix.
pub fn miou(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("label maps of length {} and {}", pred.len(), truth.len())));
    }
    if let Some(&l) = pred.iter().chain(truth).find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: l,
            classes: num_classes,
        });
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes {
        let inter = confusion[c][c];
        let row: usize = confusion[c].iter().sum();
        let col: usize = confusion.iter().map(|r| r[c]).sum();
        let union = row + col - inter;
        if union > 0 {
            sum += inter as f64 / union as f64;
            present += 1;
        }
    }
    Ok(sum / present as f64)
}

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `m * target + (1 - m) * online`, elementwise.
pub fn ema_update(target: &[f64], online: &[f64], m: f64) -> Result<Vec<f64>> {
    if target.len() != online.len() {
        return Err(Error::Shape(format!(
            "ema over {} target and {} online parameters",
            target.len(),
            online.len()
        )));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("momentum {m} outside [0, 1]")));
    }
    Ok(target
        .iter()
        .zip(online)
        .map(|(t, o)| m * t + (1.0 - m) * o)
        .collect())
}

/// Momentum coefficient plus a bounded FIFO of negative keys.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub momentum: f64,
    pub capacity: usize,
    dim: usize,
    queue: VecDeque<Vec<f64>>,
}

impl MomentumState {
    pub fn new(momentum: f64, capacity: usize, dim: usize) -> Self {
        Self {
            momentum,
            capacity,
            dim,
            queue: VecDeque::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Queue contents, oldest first.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.queue.iter().flatten().copied().collect();
        Matrix::new(self.queue.len(), self.dim, data).expect("queue rows share a dimension")
    }

    /// Returns a new state with `batch` appended and the oldest rows evicted
    /// beyond capacity.
    pub fn queue_push(&self, batch: &Matrix) -> Result<Self> {
        if batch.cols() != self.dim {
            return Err(Error::Shape(format!(
                "pushing {}-dimensional rows into a {}-dimensional queue",
                batch.cols(),
                self.dim
            )));
        }
        let mut next = self.clone();
        next.queue.extend(batch.row_iter().map(<[f64]>::to_vec));
        while next.queue.len() > next.capacity {
            next.queue.pop_front();
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_cases() {
        let t = [0.0, 2.0];
        let o = [1.0, -4.0];
        assert_eq!(ema_update(&t, &o, 1.0).unwrap(), t.to_vec());
        assert_eq!(ema_update(&t, &o, 0.0).unwrap(), o.to_vec());
        let v = ema_update(&[0.0], &[1.0], 0.99).unwrap();
        assert!((v[0] - 0.01).abs() < 1e-15);
        assert!(ema_update(&t, &[1.0], 0.5).is_err());
    }

    fn batch(start: usize, n: usize) -> Matrix {
        Matrix::from_fn(n, 2, |i, j| (start + i) as f64 + j as f64 * 0.5)
    }

    #[test]
    fn fifo_eviction() {
        let s = MomentumState::new(0.99, 4, 2);
        assert_eq!(s.queue_push(&batch(0, 2)).unwrap().len(), 2);

        let s2 = s.queue_push(&batch(0, 3)).unwrap().queue_push(&batch(3, 3)).unwrap();
        assert_eq!(s2.len(), 4);
        assert_eq!(s2.to_matrix(), batch(2, 4));

        let s3 = s.queue_push(&batch(0, 5)).unwrap();
        assert_eq!(s3.to_matrix(), batch(1, 4));
        assert!(s.is_empty());
        assert!(s.queue_push(&Matrix::zeros(1, 3)).is_err());
    }
}

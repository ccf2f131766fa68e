use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losszoo::l2_normalize_rows;
use crate::matrix::{norm, Matrix};

/// Tolerance on the unit norm of gallery rows.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Labeled, L2-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    embeddings: Matrix,
    labels: Vec<i64>,
}

impl Gallery {
    pub fn new(embeddings: Matrix, labels: Vec<i64>) -> Result<Self> {
        if embeddings.rows() == 0 || embeddings.cols() == 0 {
            return Err(Error::Shape("gallery is empty".into()));
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.rows()
            )));
        }
        for (i, r) in embeddings.row_iter().enumerate() {
            let n = norm(r);
            if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(Error::Precondition(format!("gallery row {i} has norm {n}")));
            }
        }
        Ok(Self { embeddings, labels })
    }

    /// Normalizes the rows first.
    pub fn normalized(embeddings: &Matrix, labels: Vec<i64>) -> Result<Self> {
        Self::new(l2_normalize_rows(embeddings)?, labels)
    }

    pub fn from_batch(batch: &EmbeddingBatch) -> Result<Self> {
        let labels = batch
            .labels
            .clone()
            .ok_or_else(|| Error::Precondition("evaluation needs labeled embeddings".into()))?;
        Self::new(batch.data.clone(), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub(crate) fn check_dims(&self, other: &Gallery) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "embedding dimensions {} and {} differ",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Gallery indices ordered by decreasing similarity to `query`, ties by
/// ascending index. `skip` drops one index (the query itself).
pub(crate) fn ranking(query: &[f64], gallery: &Gallery, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = gallery
        .embeddings
        .row_iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .map(|(j, r)| (j, crate::matrix::dot(query, r)))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims
}

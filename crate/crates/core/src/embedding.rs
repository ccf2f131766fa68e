//! Embedding batches and their CSV encoding (`id,label,e0,...,e{d-1}`,
//! nine significant digits).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub data: Matrix,
    pub labels: Option<Vec<i64>>,
}

impl EmbeddingBatch {
    pub fn new(data: Matrix, labels: Option<Vec<i64>>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Shape("embedding batch must be at least 1x1".into()));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("embedding batch".into()));
        }
        if let Some(l) = &labels {
            if l.len() != data.rows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} embeddings",
                    l.len(),
                    data.rows()
                )));
            }
        }
        Ok(Self { data, labels })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Formats with nine significant digits in scientific notation, which
/// re-parses to the same nine digits.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes rows as `id,label,e0,...`; unlabeled rows get an empty label field.
pub fn write_embeddings_csv<W: Write>(batch: &EmbeddingBatch, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..batch.dim()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for i in 0..batch.len() {
        let mut rec = Vec::with_capacity(batch.dim() + 2);
        rec.push(i.to_string());
        rec.push(
            batch
                .labels
                .as_ref()
                .map(|l| l[i].to_string())
                .unwrap_or_default(),
        );
        rec.extend(batch.data.row(i).iter().map(|&v| format_sig9(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv<R: Read>(input: R) -> Result<EmbeddingBatch> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            column: 0,
            message: "expected header `id,label,e0,...`".into(),
        });
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("e{j}") {
            return Err(Error::Parse {
                line: 1,
                column: j + 2,
                message: format!("column `{name}` should be `e{j}`"),
            });
        }
    }
    let dim = header.len() - 2;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = false;
    let mut any_missing = false;
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let bad = |column: usize, message: String| Error::Parse {
            line,
            column,
            message,
        };
        if rec.len() != dim + 2 {
            return Err(bad(0, format!("expected {} fields, found {}", dim + 2, rec.len())));
        }
        let label = rec[1].trim();
        if label.is_empty() {
            any_missing = true;
            labels.push(0);
        } else {
            any_label = true;
            labels.push(
                label
                    .parse::<i64>()
                    .map_err(|e| bad(1, format!("label `{label}`: {e}")))?,
            );
        }
        for j in 0..dim {
            let v: f64 = rec[j + 2]
                .trim()
                .parse()
                .map_err(|e| bad(j + 2, format!("value `{}`: {e}", &rec[j + 2])))?;
            values.push(v);
        }
    }
    if any_label && any_missing {
        return Err(Error::Parse {
            line: 0,
            column: 1,
            message: "labels must be present on every row or on none".into(),
        });
    }
    let rows = labels.len();
    EmbeddingBatch::new(
        Matrix::new(rows, dim, values)?,
        if any_label { Some(labels) } else { None },
    )
}

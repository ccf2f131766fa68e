use serde::{Deserialize, Serialize};

use super::gallery::{ranking, Gallery};
use crate::error::{Error, Result};
use crate::par;

/// Mean over relevant ranks `r` of the precision of the top `r`.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::Precondition("empty ranking".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Precondition("ranking has no relevant item".into()));
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapProtocol {
    /// Every item queries all others.
    LeaveOneOut,
    /// Separate query and gallery sets.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub queries: usize,
    /// Queries without any relevant gallery item.
    pub excluded: usize,
}

fn mean_ap(aps: Vec<Option<f64>>) -> Result<MapResult> {
    let excluded = aps.iter().filter(|a| a.is_none()).count();
    let used: Vec<f64> = aps.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Precondition("no query has a relevant gallery item".into()));
    }
    Ok(MapResult {
        map: used.iter().sum::<f64>() / used.len() as f64,
        queries: used.len(),
        excluded,
    })
}

fn query_ap(gallery: &Gallery, query: &[f64], label: i64, skip: Option<usize>) -> Option<f64> {
    let rel: Vec<bool> = ranking(query, gallery, skip)
        .into_iter()
        .map(|(j, _)| gallery.labels()[j] == label)
        .collect();
    average_precision(&rel).ok()
}

/// Ranks `gallery` by cosine similarity for every query.
pub fn retrieval_map(queries: &Gallery, gallery: &Gallery) -> Result<MapResult> {
    queries.check_dims(gallery)?;
    if let Some(l) = queries.labels().iter().find(|l| !gallery.labels().contains(l)) {
        return Err(Error::Precondition(format!("query label {l} does not occur in the gallery")));
    }
    let aps = par::map_range(queries.len(), |i| {
        query_ap(gallery, queries.embeddings().row(i), queries.labels()[i], None)
    });
    mean_ap(aps)
}

/// Each item queries the rest; items whose label occurs only once are
/// excluded and counted.
pub fn leave_one_out_map(gallery: &Gallery) -> Result<MapResult> {
    let aps = par::map_range(gallery.len(), |i| {
        query_ap(gallery, gallery.embeddings().row(i), gallery.labels()[i], Some(i))
    });
    mean_ap(aps)
}

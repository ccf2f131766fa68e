//! Retrieval, classification and downstream-task metrics over embeddings.
//! Every metric lies in [0, 1].

mod downstream;
mod gallery;
mod knn;
mod probe;
mod report;
mod retrieval;

pub use downstream::{miou, multilabel_accuracy, pck};
pub use gallery::{Gallery, UNIT_TOLERANCE};
pub use knn::{leave_one_out_knn, weighted_knn, KnnConfig, KnnResult};
pub use probe::{linear_probe, ProbeConfig};
pub use report::{metric_range, EvalReport};
pub use retrieval::{average_precision, leave_one_out_map, retrieval_map, MapProtocol, MapResult};

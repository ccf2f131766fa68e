//! Camera-trap detection logs and temporal positive-pair mining.
//!
//! Detections from consecutive frames of the same camera are associated by
//! box overlap: a detection at time `t` pairs with every detection in a later
//! frame (within the time window) whose IoU strictly exceeds the threshold.

mod bbox;
mod log;
mod manifest;
mod mine;

pub use bbox::{iou, BBox, EDGE_TOLERANCE};
pub use log::{parse_detections, serialize_detections, Detection, Frame, FrameSequence};
pub use manifest::{digest_bytes, manifest_to_string, read_manifest, write_manifest};
pub use mine::{
    filter_confident, mine_all, mine_pairs, sweep_all, sweep_thresholds, CameraStats,
    DetectionKey, MiningConfig, PairManifest, TemporalPair,
};

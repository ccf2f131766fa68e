//! Detection-log documents: `{"images": [{file, camera_id, timestamp, detections}]}`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::bbox::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub timestamp: i64,
    pub camera_id: String,
    pub bbox: BBox,
    pub confidence: f64,
    pub det_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub timestamp: i64,
    pub detections: Vec<Detection>,
}

/// Frames from one camera ordered by `(timestamp, frame_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub camera_id: String,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(camera_id: impl Into<String>, mut frames: Vec<Frame>) -> Self {
        frames.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.frame_id.cmp(&b.frame_id))
        });
        Self {
            camera_id: camera_id.into(),
            frames,
        }
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLog {
    images: Vec<RawImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawImage {
    file: String,
    camera_id: String,
    timestamp: i64,
    detections: Vec<RawDetection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDetection {
    conf: f64,
    bbox: [f64; 4],
}

/// Parses a detection log into one time-sorted sequence per camera,
/// ordered by camera id. No confidence filtering happens here.
pub fn parse_detections(bytes: &[u8]) -> Result<Vec<FrameSequence>> {
    let raw: RawLog = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut seen = HashSet::new();
    let mut by_camera: BTreeMap<String, Vec<Frame>> = BTreeMap::new();
    for image in raw.images {
        if !seen.insert(image.file.clone()) {
            return Err(Error::Validation {
                frame_id: image.file,
                message: "duplicate frame id".into(),
            });
        }
        let mut detections = Vec::with_capacity(image.detections.len());
        for (det_index, d) in image.detections.iter().enumerate() {
            let [x, y, w, h] = d.bbox;
            let bbox = BBox::new(x, y, w, h).map_err(|message| Error::Validation {
                frame_id: image.file.clone(),
                message: format!("detection {det_index}: {message}"),
            })?;
            if !(0.0..=1.0).contains(&d.conf) {
                return Err(Error::Validation {
                    frame_id: image.file.clone(),
                    message: format!("detection {det_index}: confidence {} outside [0, 1]", d.conf),
                });
            }
            detections.push(Detection {
                frame_id: image.file.clone(),
                timestamp: image.timestamp,
                camera_id: image.camera_id.clone(),
                bbox,
                confidence: d.conf,
                det_index,
            });
        }
        by_camera.entry(image.camera_id).or_default().push(Frame {
            frame_id: image.file,
            timestamp: image.timestamp,
            detections,
        });
    }

    Ok(by_camera
        .into_iter()
        .map(|(camera_id, frames)| FrameSequence::new(camera_id, frames))
        .collect())
}

/// Writes sequences back to the detection-log format.
///
/// Detections are emitted in `det_index` order; a sequence that went through
/// [`filter_confident`](super::filter_confident) loses its original indices.
pub fn serialize_detections(seqs: &[FrameSequence]) -> Result<Vec<u8>> {
    let images = seqs
        .iter()
        .flat_map(|seq| {
            seq.frames.iter().map(move |f| RawImage {
                file: f.frame_id.clone(),
                camera_id: seq.camera_id.clone(),
                timestamp: f.timestamp,
                detections: f
                    .detections
                    .iter()
                    .map(|d| RawDetection {
                        conf: d.confidence,
                        bbox: d.bbox.as_array(),
                    })
                    .collect(),
            })
        })
        .collect();
    Ok(serde_json::to_vec_pretty(&RawLog { images })?)
}

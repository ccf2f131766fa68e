use serde::{Deserialize, Serialize};

use super::bbox::iou;
use super::log::{Detection, FrameSequence};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Pairs need IoU strictly above this.
    pub iou_threshold: f64,
    /// Largest allowed time gap between anchor and partner frames.
    pub max_gap_seconds: i64,
    /// Detections need confidence strictly above this.
    pub min_confidence: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.2,
            max_gap_seconds: 120,
            min_confidence: 0.5,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "iou threshold {} must lie in [0, 1)",
                self.iou_threshold
            )));
        }
        if self.max_gap_seconds <= 0 {
            return Err(Error::Config(format!(
                "max gap {} must be positive",
                self.max_gap_seconds
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(format!(
                "min confidence {} must lie in [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }

    pub fn with_threshold(self, iou_threshold: f64) -> Self {
        Self {
            iou_threshold,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionKey {
    pub frame_id: String,
    pub det_index: usize,
}

impl From<&Detection> for DetectionKey {
    fn from(d: &Detection) -> Self {
        Self {
            frame_id: d.frame_id.clone(),
            det_index: d.det_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPair {
    pub anchor: DetectionKey,
    pub partner: DetectionKey,
    pub iou: f64,
    pub gap_seconds: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub config: MiningConfig,
    pub pairs: Vec<TemporalPair>,
    pub source_digest: String,
}

/// Keeps detections whose confidence is strictly greater than `min_confidence`.
/// Frames left without detections stay in the sequence.
pub fn filter_confident(seq: &FrameSequence, min_confidence: f64) -> FrameSequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            f.detections.retain(|d| d.confidence > min_confidence);
            f
        })
        .collect();
    FrameSequence {
        camera_id: seq.camera_id.clone(),
        frames,
    }
}

/// Visits every (anchor, partner) candidate in a sequence that satisfies
/// the confidence and time-window rules, in manifest order.
fn for_each_candidate(
    seq: &FrameSequence,
    cfg: &MiningConfig,
    mut visit: impl FnMut(&Detection, &Detection, f64, i64),
) {
    let frames = &seq.frames;
    for (i, anchor_frame) in frames.iter().enumerate() {
        for anchor in anchor_frame
            .detections
            .iter()
            .filter(|d| d.confidence > cfg.min_confidence)
        {
            for partner_frame in &frames[i + 1..] {
                let gap = partner_frame.timestamp - anchor_frame.timestamp;
                if gap > cfg.max_gap_seconds {
                    break;
                }
                if gap <= 0 {
                    continue;
                }
                for partner in partner_frame
                    .detections
                    .iter()
                    .filter(|d| d.confidence > cfg.min_confidence)
                {
                    visit(anchor, partner, iou(&anchor.bbox, &partner.bbox), gap);
                }
            }
        }
    }
}

/// Emits every later-frame detection within the time window whose IoU with
/// an anchor strictly exceeds the threshold. No one-to-one assignment is
/// made, so one anchor can pair with several partners.
pub fn mine_pairs(seq: &FrameSequence, cfg: &MiningConfig) -> PairManifest {
    let mut pairs = Vec::new();
    for_each_candidate(seq, cfg, |a, p, overlap, gap| {
        if overlap > cfg.iou_threshold {
            pairs.push(TemporalPair {
                anchor: a.into(),
                partner: p.into(),
                iou: overlap,
                gap_seconds: gap,
            });
        }
    });
    PairManifest {
        config: *cfg,
        pairs,
        source_digest: String::new(),
    }
}

/// Per-camera result of [`mine_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct CameraStats {
    pub camera_id: String,
    pub frames: usize,
    pub detections: usize,
    pub pairs: usize,
}

/// Mines every sequence (in parallel when enabled) and concatenates the
/// results in sequence order.
pub fn mine_all(seqs: &[FrameSequence], cfg: &MiningConfig) -> (PairManifest, Vec<CameraStats>) {
    let per_camera = par::map_slice(seqs, |seq| mine_pairs(seq, cfg));
    let mut pairs = Vec::new();
    let mut stats = Vec::with_capacity(seqs.len());
    for (seq, manifest) in seqs.iter().zip(per_camera) {
        stats.push(CameraStats {
            camera_id: seq.camera_id.clone(),
            frames: seq.frames.len(),
            detections: seq.detection_count(),
            pairs: manifest.pairs.len(),
        });
        pairs.extend(manifest.pairs);
    }
    (
        PairManifest {
            config: *cfg,
            pairs,
            source_digest: String::new(),
        },
        stats,
    )
}

fn check_sorted(thresholds: &[f64]) -> Result<()> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("thresholds must be sorted ascending".into()));
    }
    if thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
        return Err(Error::Config("thresholds must lie in [0, 1)".into()));
    }
    Ok(())
}

/// Pair counts for each threshold. The candidate IoUs are computed once and
/// counted per threshold, which is equivalent to re-mining at each value.
pub fn sweep_thresholds(
    seq: &FrameSequence,
    cfg: &MiningConfig,
    thresholds: &[f64],
) -> Result<Vec<(f64, usize)>> {
    sweep_all(std::slice::from_ref(seq), cfg, thresholds)
}

pub fn sweep_all(
    seqs: &[FrameSequence],
    cfg: &MiningConfig,
    thresholds: &[f64],
) -> Result<Vec<(f64, usize)>> {
    check_sorted(thresholds)?;
    let ious: Vec<Vec<f64>> = par::map_slice(seqs, |seq| {
        let mut v = Vec::new();
        for_each_candidate(seq, cfg, |_, _, overlap, _| v.push(overlap));
        v
    });
    Ok(thresholds
        .iter()
        .map(|&t| {
            let count = ious.iter().flatten().filter(|&&o| o > t).count();
            (t, count)
        })
        .collect())
}

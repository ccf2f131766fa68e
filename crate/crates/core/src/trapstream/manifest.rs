//! JSON Lines encoding of a [`PairManifest`]: one header line carrying the
//! mining config and source digest, then one line per pair.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mine::{DetectionKey, MiningConfig, PairManifest, TemporalPair};
use crate::error::{Error, Result};

/// `sha256:<hex>` digest of raw input bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut s = String::with_capacity(7 + 64);
    s.push_str("sha256:");
    for b in hash {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: MiningConfig,
    source_digest: String,
}

#[derive(Deserialize)]
struct KeyLine {
    file: String,
    det: usize,
}

#[derive(Deserialize)]
struct PairLine {
    anchor: KeyLine,
    partner: KeyLine,
    iou: f64,
    gap_s: i64,
}

fn key_json(k: &DetectionKey) -> Result<String> {
    Ok(format!(
        "{{\"file\":{},\"det\":{}}}",
        serde_json::to_string(&k.frame_id)?,
        k.det_index
    ))
}

/// Writes the manifest; IoU values are printed with six decimal places.
pub fn write_manifest<W: Write>(manifest: &PairManifest, mut out: W) -> Result<()> {
    let header = Header {
        config: manifest.config,
        source_digest: manifest.source_digest.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for p in &manifest.pairs {
        writeln!(
            out,
            "{{\"anchor\":{},\"partner\":{},\"iou\":{:.6},\"gap_s\":{}}}",
            key_json(&p.anchor)?,
            key_json(&p.partner)?,
            p.iou,
            p.gap_seconds
        )?;
    }
    Ok(())
}

pub fn manifest_to_string(manifest: &PairManifest) -> Result<String> {
    let mut buf = Vec::new();
    write_manifest(manifest, &mut buf)?;
    Ok(String::from_utf8(buf).expect("manifest output is UTF-8"))
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<PairManifest> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        line: line + 1,
        column: e.column(),
        message: e.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        column: 0,
        message: "empty manifest".into(),
    })?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(0, e))?;
    let mut pairs = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(&line).map_err(|e| parse_err(n, e))?;
        pairs.push(TemporalPair {
            anchor: DetectionKey {
                frame_id: p.anchor.file,
                det_index: p.anchor.det,
            },
            partner: DetectionKey {
                frame_id: p.partner.file,
                det_index: p.partner.det,
            },
            iou: p.iou,
            gap_seconds: p.gap_s,
        });
    }
    Ok(PairManifest {
        config: header.config,
        pairs,
        source_digest: header.source_digest,
    })
}

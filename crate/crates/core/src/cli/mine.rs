use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use super::{create_output, read_input, usage, CmdResult, Failure};
use crate::trapstream::{digest_bytes, mine_all, parse_detections, sweep_all, write_manifest, MiningConfig};

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct MineArgs {
    /// Detection log (JSON).
    #[arg(long)]
    pub input: PathBuf,
    /// Manifest to write (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = MiningConfig::default().iou_threshold)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = MiningConfig::default().max_gap_seconds)]
    pub max_gap_seconds: i64,
    #[arg(long, default_value_t = MiningConfig::default().min_confidence)]
    pub min_confidence: f64,
    /// JSON file of flag values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// CSV to write, with columns `alpha,pair_count`.
    #[arg(long)]
    pub out: PathBuf,
    /// Ascending IoU thresholds in (0, 1).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = MiningConfig::default().max_gap_seconds)]
    pub max_gap_seconds: i64,
    #[arg(long, default_value_t = MiningConfig::default().min_confidence)]
    pub min_confidence: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub(super) fn cmd_mine(args: &MineArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = MiningConfig {
        iou_threshold: args.iou_threshold,
        max_gap_seconds: args.max_gap_seconds,
        min_confidence: args.min_confidence,
    };
    usage(cfg.validate())?;
    let bytes = read_input(&args.input)?;
    let seqs = parse_detections(&bytes)?;
    let (mut manifest, stats) = mine_all(&seqs, &cfg);
    manifest.source_digest = digest_bytes(&bytes);
    let mut file = create_output(&args.out)?;
    write_manifest(&manifest, &mut file)?;
    file.flush()?;
    writeln!(out, "pairs {}", manifest.pairs.len())?;
    for s in &stats {
        writeln!(
            out,
            "camera {} frames {} detections {} pairs {}",
            s.camera_id, s.frames, s.detections, s.pairs
        )?;
    }
    Ok(())
}

pub(super) fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let t = &args.thresholds;
    if t.is_empty() {
        return Err(Failure::Usage("no thresholds given".into()));
    }
    if let Some(bad) = t.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
        return Err(Failure::Usage(format!("threshold {bad} outside (0, 1)")));
    }
    if t.windows(2).any(|w| w[0] > w[1]) {
        return Err(Failure::Usage("thresholds must be in ascending order".into()));
    }
    let cfg = MiningConfig {
        max_gap_seconds: args.max_gap_seconds,
        min_confidence: args.min_confidence,
        ..Default::default()
    };
    usage(cfg.validate())?;
    let bytes = read_input(&args.input)?;
    let seqs = parse_detections(&bytes)?;
    let counts = sweep_all(&seqs, &cfg, t)?;
    let mut file = create_output(&args.out)?;
    writeln!(file, "alpha,pair_count")?;
    for (alpha, n) in &counts {
        writeln!(file, "{alpha},{n}")?;
        writeln!(out, "alpha {alpha} pairs {n}")?;
    }
    file.flush()?;
    Ok(())
}

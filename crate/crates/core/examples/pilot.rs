//! Calibration runs on the synthetic task: trained versus random-init mAP
//! per method and seed.
//!
//! cargo run --release --example pilot -- --methods simclr_dclw,byol --input-dim 256

use clap::Parser;
use trapforge::experiment::{run_experiment, ExperimentConfig};
use trapforge::losszoo::Method;
use trapforge::microtrain::PairMode;

#[derive(Parser)]
struct Args {
    #[arg(long, value_delimiter = ',', default_value = "simclr_dclw,ntxent,byol,barlow")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    view_noise_sigma: Option<f64>,
    #[arg(long, default_value = "temporal")]
    pair_mode: PairMode,
    /// Print the per-seed results as a JSON array instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> trapforge::Result<()> {
    let args = Args::parse();
    let mut all = Vec::new();
    for &method in &args.methods {
        let (mut trained, mut random) = (0.0, 0.0);
        for &seed in &args.seeds {
            let mut cfg = ExperimentConfig::standard(method, seed);
            cfg.pair_mode = args.pair_mode;
            if let Some(v) = args.input_dim {
                cfg.synth.input_dim = v;
            }
            if let Some(v) = args.view_noise_sigma {
                cfg.synth.view_noise_sigma = v;
            }
            if let Some(v) = args.hidden_dim {
                cfg.train.hidden_dim = v;
            }
            if let Some(v) = args.steps {
                cfg.train.steps = v;
            }
            if let Some(v) = args.batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = args.momentum {
                cfg.train.momentum = v;
            }
            if let Some(v) = args.learning_rate {
                cfg.train.learning_rate = v;
            }
            let (r, _) = run_experiment(&cfg)?;
            trained += r.trained_map;
            random += r.random_map;
            if args.json {
                all.push(r);
                continue;
            }
            println!(
                "{method} seed {seed}: trained {:.4} random {:.4} loss {:.4} -> {:.4} ({:.2}s)",
                r.trained_map, r.random_map, r.first_loss, r.last_loss, r.elapsed_seconds
            );
        }
        if args.json {
            continue;
        }
        let n = args.seeds.len() as f64;
        println!("{method} mean: trained {:.4} random {:.4} ratio {:.2}", trained / n, random / n, trained / random);
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&all)?);
    }
    Ok(())
}

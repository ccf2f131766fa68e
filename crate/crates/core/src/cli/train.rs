use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::Args;

use super::{create_output, read_input, usage, CmdResult, SEED_ENV};
use crate::embedding::write_embeddings_csv;
use crate::evalkit::{leave_one_out_map, Gallery};
use crate::experiment::{eval_seed, heldout_embeddings, train_on, ExperimentConfig};
use crate::losszoo::{BarlowConfig, ContrastiveConfig, Method, SupervisedConfig};
use crate::microtrain::{replay_manifest, synth_dataset, AugmentConfig, PairMode, SynthConfig, TrainConfig};
use crate::trapstream::read_manifest;

fn td() -> TrainConfig {
    TrainConfig::for_method(Method::SimclrDclw)
}

fn sd() -> SynthConfig {
    SynthConfig::default()
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long, default_value_t = Method::SimclrDclw)]
    pub method: Method,
    /// Defaults to a per-method rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = td().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = td().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = td().hidden_dim)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = td().embed_dim)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = ContrastiveConfig::default().temperature)]
    pub temperature: f64,
    #[arg(long, default_value_t = ContrastiveConfig::default().vmf_sigma)]
    pub vmf_sigma: f64,
    /// Barlow Twins off-diagonal weight.
    #[arg(long, default_value_t = BarlowConfig::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = SupervisedConfig::default().arcface_scale)]
    pub arcface_scale: f64,
    #[arg(long, default_value_t = SupervisedConfig::default().arcface_margin)]
    pub arcface_margin: f64,
    #[arg(long, default_value_t = SupervisedConfig::default().triplet_margin)]
    pub triplet_margin: f64,
    #[arg(long, default_value_t = td().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = td().queue_size)]
    pub queue_size: usize,
    #[arg(long, default_value_t = td().dino_student_temp)]
    pub dino_student_temp: f64,
    #[arg(long, default_value_t = td().dino_teacher_temp)]
    pub dino_teacher_temp: f64,
    #[arg(long, default_value_t = td().dino_center_momentum)]
    pub dino_center_momentum: f64,
    #[arg(long, default_value_t = td().view_sigma)]
    pub view_sigma: f64,
    #[arg(long, default_value_t = td().local_sigma)]
    pub local_sigma: f64,
    #[arg(long, default_value_t = sd().num_identities)]
    pub num_identities: usize,
    #[arg(long, default_value_t = sd().views_per_identity)]
    pub views_per_identity: usize,
    #[arg(long, default_value_t = sd().input_dim)]
    pub input_dim: usize,
    #[arg(long, default_value_t = sd().view_noise_sigma)]
    pub view_noise_sigma: f64,
    #[arg(long, default_value_t = sd().drift_sigma)]
    pub drift_sigma: f64,
    #[arg(long, default_value_t = PairMode::Temporal)]
    pub pair_mode: PairMode,
    /// Noise of augmented pairs.
    #[arg(long, default_value_t = 0.1)]
    pub aug_sigma: f64,
    /// Held-out views per identity in the written embeddings.
    #[arg(long, default_value_t = 10)]
    pub eval_views_per_identity: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Pair manifest to replay instead of generating temporal pairs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Embeddings of held-out views (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainArgs {
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            synth: SynthConfig {
                num_identities: self.num_identities,
                views_per_identity: self.views_per_identity,
                input_dim: self.input_dim,
                view_noise_sigma: self.view_noise_sigma,
                drift_sigma: self.drift_sigma,
                seed: self.seed,
            },
            train: TrainConfig {
                method: self.method,
                learning_rate: self
                    .learning_rate
                    .unwrap_or_else(|| TrainConfig::default_learning_rate(self.method)),
                batch_size: self.batch_size,
                steps: self.steps,
                hidden_dim: self.hidden_dim,
                embed_dim: self.embed_dim,
                contrastive: ContrastiveConfig {
                    temperature: self.temperature,
                    vmf_sigma: self.vmf_sigma,
                },
                barlow: BarlowConfig { lambda: self.lambda },
                supervised: SupervisedConfig {
                    arcface_scale: self.arcface_scale,
                    arcface_margin: self.arcface_margin,
                    triplet_margin: self.triplet_margin,
                },
                momentum: self.momentum,
                queue_size: self.queue_size,
                dino_student_temp: self.dino_student_temp,
                dino_teacher_temp: self.dino_teacher_temp,
                dino_center_momentum: self.dino_center_momentum,
                view_sigma: self.view_sigma,
                local_sigma: self.local_sigma,
                seed: self.seed,
            },
            pair_mode: self.pair_mode,
            aug_sigma: self.aug_sigma,
            eval_views_per_identity: self.eval_views_per_identity,
        }
    }
}

pub(super) fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = args.experiment_config();
    usage(cfg.synth.validate())?;
    usage(cfg.train.validate())?;
    usage(AugmentConfig::with_sigma(cfg.aug_sigma).validate())?;
    if cfg.eval_views_per_identity < 2 {
        return Err(super::Failure::Usage(
            "eval views per identity must be at least 2".into(),
        ));
    }
    let data = match &args.manifest {
        Some(path) => {
            let bytes = read_input(path)?;
            replay_manifest(&read_manifest(BufReader::new(bytes.as_slice()))?, &cfg.synth)?
        }
        None => synth_dataset(&cfg.synth)?,
    };
    let report = train_on(&data, &cfg)?;
    let emb = heldout_embeddings(&data, &report.params, cfg.eval_views_per_identity, eval_seed(&cfg))?;
    let mut file = create_output(&args.out)?;
    write_embeddings_csv(&emb, &mut file)?;
    file.flush()?;
    if let Some(path) = &args.report {
        let mut file = create_output(path)?;
        serde_json::to_writer(&mut file, &report).map_err(crate::Error::from)?;
        writeln!(file)?;
        file.flush()?;
    }
    let heldout = leave_one_out_map(&Gallery::from_batch(&emb)?)?;
    let window = (report.loss_trace.len() / 10).max(1);
    let (first, last) = report.first_last_means(window);
    writeln!(
        out,
        "trained {} on {} pairs of {} identities for {} steps in {:.2} s",
        cfg.train.method,
        data.pairs.len(),
        data.config.num_identities,
        cfg.train.steps,
        report.elapsed_seconds
    )?;
    writeln!(out, "loss first {first:.6} last {last:.6}")?;
    writeln!(out, "heldout map {:.6}", heldout.map)?;
    Ok(())
}

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use super::{read_input, usage, CmdResult, Failure};
use crate::embedding::read_embeddings_csv;
use crate::evalkit::{
    leave_one_out_knn, leave_one_out_map, linear_probe, miou, multilabel_accuracy, pck, retrieval_map,
    weighted_knn, EvalReport, Gallery, KnnConfig, MapProtocol, ProbeConfig,
};
use crate::trapstream::digest_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Retrieval mAP (leave-one-out, or queries against the gallery).
    Map,
    /// Weighted kNN top-1 accuracy.
    Knn,
    /// Linear probe top-1 accuracy; needs `--queries` as the test set.
    Probe,
    /// Keypoint PCK from `--pck-file`.
    Pck,
    /// Segmentation mIoU from `--miou-file`.
    Miou,
    /// Attribute accuracy from `--multilabel-file`.
    Multilabel,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// Comma-separated metrics.
    #[arg(long, value_delimiter = ',', required = true)]
    pub metric: Vec<Metric>,
    /// Labeled embeddings (CSV): the gallery, or the training set of kNN and
    /// the probe.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Labeled query / test embeddings (CSV). Without it, map and knn run
    /// leave-one-out on `--embeddings`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = KnnConfig::default().k)]
    pub k: usize,
    #[arg(long, default_value_t = KnnConfig::default().temperature)]
    pub temperature: f64,
    #[arg(long, default_value_t = ProbeConfig::default().learning_rate)]
    pub probe_learning_rate: f64,
    #[arg(long, default_value_t = ProbeConfig::default().epochs)]
    pub probe_epochs: usize,
    #[arg(long, env = super::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// JSON object with `pred` and `truth` keypoint lists and `visible` flags.
    #[arg(long)]
    pub pck_file: Option<PathBuf>,
    /// Distance within which a keypoint counts as correct.
    #[arg(long)]
    pub pck_threshold: Option<f64>,
    /// JSON object with `pred` and `truth` label maps and `num_classes`.
    #[arg(long)]
    pub miou_file: Option<PathBuf>,
    /// JSON object with `pred` and `truth` boolean attribute rows.
    #[arg(long)]
    pub multilabel_file: Option<PathBuf>,
    /// Report to write (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PckFile {
    pred: Vec<Vec<[f64; 2]>>,
    truth: Vec<Vec<[f64; 2]>>,
    visible: Vec<Vec<bool>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MiouFile {
    pred: Vec<usize>,
    truth: Vec<usize>,
    num_classes: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MultilabelFile {
    pred: Vec<Vec<bool>>,
    truth: Vec<Vec<bool>>,
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::Usage(format!("metric {metric} needs --{flag}")))
}

struct Inputs {
    report: EvalReport,
}

impl Inputs {
    fn read(&mut self, name: &str, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = read_input(path)?;
        self.report.digests.insert(name.into(), digest_bytes(&bytes));
        Ok(bytes)
    }

    fn gallery(&mut self, name: &str, path: &Path) -> Result<Gallery, Failure> {
        let bytes = self.read(name, path)?;
        let batch = read_embeddings_csv(bytes.as_slice())?;
        Ok(Gallery::normalized(&batch.data, batch.labels.ok_or_else(|| {
            crate::Error::Precondition(format!("{} has no labels", path.display()))
        })?)?)
    }

    fn json<T: DeserializeOwned>(&mut self, name: &str, path: &Path) -> Result<T, Failure> {
        let bytes = self.read(name, path)?;
        Ok(serde_json::from_slice(&bytes).map_err(crate::Error::from)?)
    }
}

pub(super) fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let knn_cfg = KnnConfig {
        k: args.k,
        temperature: args.temperature,
    };
    let probe_cfg = ProbeConfig {
        learning_rate: args.probe_learning_rate,
        epochs: args.probe_epochs,
        seed: args.seed,
    };
    let mut metrics = args.metric.clone();
    metrics.dedup();
    for m in &metrics {
        match m {
            Metric::Map => {
                require(&args.embeddings, "embeddings", "map")?;
            }
            Metric::Knn => {
                require(&args.embeddings, "embeddings", "knn")?;
                usage(knn_cfg.validate())?;
            }
            Metric::Probe => {
                require(&args.embeddings, "embeddings", "probe")?;
                require(&args.queries, "queries", "probe")?;
                usage(probe_cfg.validate())?;
            }
            Metric::Pck => {
                require(&args.pck_file, "pck-file", "pck")?;
                match args.pck_threshold {
                    Some(d) if d > 0.0 => {}
                    _ => return Err(Failure::Usage("metric pck needs a positive --pck-threshold".into())),
                }
            }
            Metric::Miou => {
                require(&args.miou_file, "miou-file", "miou")?;
            }
            Metric::Multilabel => {
                require(&args.multilabel_file, "multilabel-file", "multilabel")?;
            }
        }
    }

    let mut inputs = Inputs {
        report: EvalReport::default(),
    };
    let needs_embeddings = metrics.iter().any(|m| matches!(m, Metric::Map | Metric::Knn | Metric::Probe));
    let gallery = match (&args.embeddings, needs_embeddings) {
        (Some(p), true) => Some(inputs.gallery("embeddings", p)?),
        _ => None,
    };
    let queries = match (&args.queries, needs_embeddings) {
        (Some(p), true) => Some(inputs.gallery("queries", p)?),
        _ => None,
    };
    let names: Vec<String> = metrics
        .iter()
        .map(|m| m.to_possible_value().expect("no skipped variants").get_name().to_string())
        .collect();
    inputs.report.insert_config("metrics", &names)?;

    for m in &metrics {
        let r = &mut inputs.report;
        match m {
            Metric::Map => {
                let g = gallery.as_ref().expect("checked above");
                let (res, protocol) = match &queries {
                    Some(q) => (retrieval_map(q, g)?, MapProtocol::Split),
                    None => (leave_one_out_map(g)?, MapProtocol::LeaveOneOut),
                };
                r.insert_metric("map", res.map);
                r.insert_config(
                    "map",
                    json!({"protocol": protocol, "queries": res.queries, "excluded": res.excluded}),
                )?;
            }
            Metric::Knn => {
                let g = gallery.as_ref().expect("checked above");
                let (res, protocol) = match &queries {
                    Some(q) => (weighted_knn(g, q, &knn_cfg)?, MapProtocol::Split),
                    None => (leave_one_out_knn(g, &knn_cfg)?, MapProtocol::LeaveOneOut),
                };
                r.insert_metric("knn_accuracy", res.accuracy);
                r.insert_config(
                    "knn",
                    json!({
                        "k": knn_cfg.k,
                        "effective_k": res.effective_k,
                        "temperature": knn_cfg.temperature,
                        "protocol": protocol,
                    }),
                )?;
            }
            Metric::Probe => {
                let g = gallery.as_ref().expect("checked above");
                let q = queries.as_ref().expect("checked above");
                r.insert_metric("probe_accuracy", linear_probe(g, q, &probe_cfg)?);
                r.insert_config("probe", probe_cfg)?;
            }
            Metric::Pck => {
                let path = args.pck_file.as_deref().expect("checked above");
                let delta = args.pck_threshold.expect("checked above");
                let f: PckFile = inputs.json("pck_file", path)?;
                let v = pck(&f.pred, &f.truth, &f.visible, delta)?;
                inputs.report.insert_metric("pck", v);
                inputs.report.insert_config("pck", json!({"threshold": delta}))?;
            }
            Metric::Miou => {
                let path = args.miou_file.as_deref().expect("checked above");
                let f: MiouFile = inputs.json("miou_file", path)?;
                let v = miou(&f.pred, &f.truth, f.num_classes)?;
                inputs.report.insert_metric("miou", v);
                inputs.report.insert_config("miou", json!({"num_classes": f.num_classes}))?;
            }
            Metric::Multilabel => {
                let path = args.multilabel_file.as_deref().expect("checked above");
                let f: MultilabelFile = inputs.json("multilabel_file", path)?;
                inputs.report.insert_metric("multilabel_accuracy", multilabel_accuracy(&f.pred, &f.truth)?);
            }
        }
    }

    let report = inputs.report;
    let text = report.to_json()?;
    if let Some(path) = &args.out {
        std::fs::write(path, &text).map_err(|e| Failure::Runtime(crate::Error::Io(super::with_path(e, path))))?;
    }
    for (name, v) in &report.metrics {
        writeln!(out, "{name} {v:.6}")?;
    }
    Ok(())
}

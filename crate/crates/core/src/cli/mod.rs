//! The `trapforge` command line.
//!
//! Exit codes: 0 on success, 1 when reading data or running fails, 2 for
//! usage errors (bad flags, invalid configuration, unreadable config file).
//!
//! Every subcommand accepts `--config FILE`, a JSON object whose keys are
//! flag names (`snake_case` or `kebab-case`). Nested objects are flattened,
//! so a serialized training config can be passed directly. Flags given on
//! the command line override the file.

mod eval;
mod gradcheck;
mod mine;
mod train;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;

pub use eval::{EvalArgs, Metric};
pub use gradcheck::{gradcheck_suite, GradcheckArgs, MethodCheck};
pub use mine::{MineArgs, SweepArgs};
pub use train::TrainArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable read when `--seed` is not given.
pub const SEED_ENV: &str = "TRAPFORGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "trapforge", version, about = "Temporal pair mining, embedding losses and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine temporal pairs from a detection log into a JSONL manifest.
    Mine(MineArgs),
    /// Count mined pairs over a list of IoU thresholds.
    Sweep(SweepArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the encoder on synthetic identities and write embeddings.
    Train(TrainArgs),
    /// Score embeddings or prediction files and write a report.
    Eval(EvalArgs),
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

/// Maps configuration errors found before any work starts to exit code 2.
fn usage<T>(r: crate::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Runtime(Error::Io(with_path(e, path))))
}

fn create_output(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Failure> {
    let f = std::fs::File::create(path).map_err(|e| Failure::Runtime(Error::Io(with_path(e, path))))?;
    Ok(std::io::BufWriter::new(f))
}

fn with_path(e: std::io::Error, path: &Path) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

fn json_tokens(prefix: Option<&str>, value: &serde_json::Value, out: &mut Vec<OsString>) -> Result<(), String> {
    use serde_json::Value;
    let obj = value.as_object().ok_or("config file must hold a JSON object")?;
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Object(_) => json_tokens(Some(key), v, out)?,
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) => {}
            Value::Null => {
                let at = prefix.map(|p| format!("{p}.")).unwrap_or_default();
                return Err(format!("config key `{at}{key}` is null"));
            }
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(scalar_text).collect::<Result<_, _>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            _ => {
                out.push(flag.into());
                out.push(scalar_text(v)?.into());
            }
        }
    }
    Ok(())
}

fn scalar_text(v: &serde_json::Value) -> Result<String, String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        _ => Err(format!("config value {v} is not a scalar")),
    }
}

/// Splices the flags of a `--config` file in right after the subcommand, so
/// later command-line flags take precedence.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path: Option<PathBuf> = None;
    for i in 2..args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            break;
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.display()))?;
    let mut tokens = Vec::new();
    json_tokens(None, &value, &mut tokens)?;
    args.splice(2..2, tokens);
    Ok(args)
}

/// Runs the command line with the given output streams and returns the
/// exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Mine(a) => mine::cmd_mine(a, out),
        Command::Sweep(a) => mine::cmd_sweep(a, out),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(a, out),
        Command::Train(a) => train::cmd_train(a, out),
        Command::Eval(a) => eval::cmd_eval(a, out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Runs the command line on the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

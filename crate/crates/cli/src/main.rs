//! `tsdl`: inspect the model zoo and run the forecasting, classification and
//! anomaly pipelines.
//!
//! Exit codes: 0 ok, 1 internal error, 2 usage, 3 diverged training,
//! 4 data error, 5 weights that do not fit the model.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsdl::zoo::{self, Hyper};

use config::RunConfig;
use pipeline::Failure;

#[derive(Parser)]
#[command(name = "tsdl", version, about = "Time-series deep learning model zoo and task pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List every registered architecture, one per line
    List,
    /// Print an architecture's contract, shapes and parameter counts
    Describe {
        name: String,
        /// Hyperparameter override, e.g. `units=32`; repeatable
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a model on a task and write weights, history, metrics and manifest
    Train(RunArgs),
    /// Recompute the test metric of saved weights without training
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Weights file; defaults to `<out>/weights.bin`
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// forecast, classify or anomaly
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Series file; exclusive with --synth
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Synthetic source: sine, segments or traffic
    #[arg(long)]
    synth: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Early-stopping patience; the task preset applies when omitted
    #[arg(long)]
    patience: Option<usize>,
    /// Early-stopping minimum improvement
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Flat `key = value` settings file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any setting or hyperparameter as KEY=VALUE; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn apply_pairs(c: &mut RunConfig, pairs: &[String]) -> Result<(), Failure> {
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected KEY=VALUE, got '{p}'")))?;
        c.set(k, v).map_err(Failure::Usage)?;
    }
    Ok(())
}

impl RunArgs {
    fn resolve(&self) -> Result<config::Resolved, Failure> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(Failure::Usage)?,
            None => RunConfig::default(),
        };
        let mut flags = RunConfig::default();
        apply_pairs(&mut flags, &self.set)?;
        let mut set = |k: &str, v: Option<String>| match v {
            Some(v) => flags.set(k, &v).map_err(Failure::Usage),
            None => Ok(()),
        };
        set("task", self.task.clone())?;
        set("model", self.model.clone())?;
        set("csv", self.csv.as_ref().map(|p| p.display().to_string()))?;
        set("synth", self.synth.clone())?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("patience", self.patience.map(|v| v.to_string()))?;
        set("delta", self.delta.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        base.overlay(flags).resolve().map_err(Failure::Usage)
    }
}

/// Prints to stdout; a closed pipe (as with `| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Internal(e.to_string())),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))
}

fn train(args: &RunArgs) -> Result<(), Failure> {
    let r = args.resolve()?;
    let prepared = pipeline::prepare(&r)?;
    let mut model = pipeline::build(&r, &prepared)?;
    let report = pipeline::fit(&r, &prepared, &mut model)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Internal(format!("{}: {e}", args.out.display())))?;
    let weights = args.out.join("weights.bin");
    model
        .save_weights(&weights)
        .map_err(|e| Failure::Internal(format!("{}: {e}", weights.display())))?;
    write(&args.out.join("history.txt"), &report.to_string())?;
    write(&args.out.join("manifest.txt"), &r.manifest(prepared.input, prepared.synth_length))?;

    // score what was written, so eval on the same file reproduces it exactly
    let mut reloaded = pipeline::build(&r, &prepared)?;
    reloaded
        .load_weights(&weights)
        .map_err(|e| Failure::Weights(e.to_string()))?;
    let metrics = pipeline::metrics_record(&pipeline::evaluate(&r, &prepared, &reloaded)?);
    write(&args.out.join("metrics.txt"), &metrics)?;
    eprintln!(
        "trained {} for {} epochs (best epoch {}, val loss {})",
        r.model,
        report.history.len(),
        report.best_epoch,
        report.best_val_loss
    );
    emit(&metrics)
}

fn eval(args: &RunArgs, weights: Option<&Path>) -> Result<(), Failure> {
    let r = args.resolve()?;
    let prepared = pipeline::prepare(&r)?;
    let mut model = pipeline::build(&r, &prepared)?;
    let path = weights.map_or_else(|| args.out.join("weights.bin"), Path::to_path_buf);
    model
        .load_weights(&path)
        .map_err(|e| Failure::Weights(format!("{}: {e}", path.display())))?;
    emit(&pipeline::metrics_record(&pipeline::evaluate(&r, &prepared, &model)?))
}

fn describe(name: &str, set: &[String]) -> Result<(), Failure> {
    let mut hyper = Hyper::for_model(name).map_err(|e| Failure::Usage(e.to_string()))?;
    for p in set {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected KEY=VALUE, got '{p}'")))?;
        hyper.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let d = zoo::describe_with(name, &hyper).map_err(|e| Failure::Usage(e.to_string()))?;
    emit(&d.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::List => emit(&zoo::list_models().into_iter().map(|d| zoo::list_line(d) + "\n").collect::<String>()),
        Command::Describe { name, set } => describe(name, set),
        Command::Train(args) => train(args),
        Command::Eval { run, weights } => eval(run, weights.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tsdl: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}

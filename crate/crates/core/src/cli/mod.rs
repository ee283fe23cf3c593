//! Command-line front end. Each subcommand resolves its options as
//! `defaults < --config file < flags`, writes its artifacts under `--out`
//! and records the effective options in `config.json` next to them.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{
    ArithOptions, DgpOptions, EvalOptions, InterveneOptions, ReportOptions, SweepOptions, TrainOptions,
};
pub use config::{load_file, merge};
pub use report::{collect_reports, render_table, TABLE_ROWS};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "isodict", version, about = "Aligned sparse dictionaries for paired embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Root seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (1 gives byte-identical reruns on any machine).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with option values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic pairs with known dictionaries.
    Dgp(DgpFlags),
    /// Train one SAE.
    Train(TrainFlags),
    /// Train across alignment weights and pick one.
    SweepBeta(SweepFlags),
    /// Score a model on a dataset.
    Eval(EvalFlags),
    /// Apply a modality-gap intervention.
    Intervene(InterveneFlags),
    /// Query arithmetic with and without concept filtering.
    Arith(ArithFlags),
    /// Plain vs. aligned SAE on synthetic data.
    Experiment(ExperimentFlags),
    /// Gather eval reports into one table.
    Report(ReportFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dgp(_) => "dgp",
            Command::Train(_) => "train",
            Command::SweepBeta(_) => "sweep-beta",
            Command::Eval(_) => "eval",
            Command::Intervene(_) => "intervene",
            Command::Arith(_) => "arith",
            Command::Experiment(_) => "experiment",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DgpFlags {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub block_dim: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// relu, jumprelu, topk, batchtopk or mp.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub expansion: Option<f64>,
    /// Atom count; overrides --expansion.
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long)]
    pub l0: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l1_weight: Option<f64>,
    /// Anneal the learning rate along a half cosine.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cosine_decay: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    /// Comma-separated β values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `all` or a comma-separated subset of reconstruction, modality,
    /// structure, ccurves.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Column name in reports; defaults to the model file stem.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InterveneFlags {
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset the method is fitted on; defaults to --data.
    #[arg(long)]
    pub ref_data: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Dictionary file whose atoms `project_span` removes.
    #[arg(long)]
    pub directions: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ArithFlags {
    /// Dataset whose domain-a rows are the sources.
    #[arg(long)]
    pub src: Option<PathBuf>,
    /// Dataset whose domain-b rows are the edits.
    #[arg(long)]
    pub delta: Option<PathBuf>,
    /// Dataset whose domain-a rows are the targets.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Paired dataset for the bimodal mask; defaults to --targets.
    #[arg(long)]
    pub mask_data: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentFlags {
    /// exp1 or exp2.
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "arch")]
    #[serde(rename = "kind")]
    pub arch: Option<String>,
    /// separated, shared or combined.
    #[arg(long)]
    pub ground_truth: Option<String>,
    #[arg(long)]
    pub n_atoms: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(rename = "learning_rate")]
    pub lr: Option<f64>,
    /// Anneal the learning rate along a half cosine.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cosine_decay: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportFlags {
    /// Directory searched recursively for eval `report.json` files.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Why a command failed.
#[derive(Debug)]
pub enum Failure {
    /// Missing or contradictory arguments (exit code 2).
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

/// Runs a parsed command on a pool of `--threads` workers.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Failure::Run(Error::Config(e.to_string())))?;
    pool.install(|| commands::dispatch(&cli))
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f @ Failure::Usage(_)) => {
            eprintln!("error: {f}");
            ExitCode::from(2)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(1)
        }
    }
}

//! Command-line front end of the harness. Every subcommand reads one JSON
//! experiment config, writes its artifacts under the output directory and
//! records a `manifest.json` carrying the config hash.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status when the experiment itself fails.
pub const EXIT_EXPERIMENT: i32 = 1;
/// Exit status for invalid configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("output directory {0} is locked by another run (remove .lock if stale)")]
    Locked(PathBuf),
    #[error("{0}")]
    Experiment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_EXPERIMENT,
        }
    }
}

macro_rules! from_experiment {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Experiment(e.to_string())
            }
        }
    )*};
}

from_experiment!(
    std::io::Error,
    llmrec::corpus::CorpusError,
    llmrec::baselines::BaselineError,
    llmrec::interest::InterestError,
    llmrec::llmio::LlmError,
    llmrec::evaluator::EvalError,
    llmrec::ctr::CtrError
);

#[derive(Debug, Parser)]
#[command(name = "llmrec", version, about = "Evaluate LLMs as recommenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config field, e.g. `--set interest.form=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Validate and print the plan without running anything.
    #[arg(long)]
    pub dry_run: bool,
    /// Shortcut for `--set sample.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shortcut for `--set output.dir=DIR`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pipeline stage named by a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    PrepareCorpus,
    FitBaseline,
    BuildMemory,
    EvalRank,
    ProbeBias,
    EvalCtr,
    ExportFt,
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::PrepareCorpus => "prepare-corpus",
            Step::FitBaseline => "fit-baseline",
            Step::BuildMemory => "build-memory",
            Step::EvalRank => "eval-rank",
            Step::ProbeBias => "probe-bias",
            Step::EvalCtr => "eval-ctr",
            Step::ExportFt => "export-ft",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, filter and normalize the raw dataset.
    PrepareCorpus(CommonArgs),
    /// Fit the configured baseline on leave-one-out training data.
    FitBaseline(CommonArgs),
    /// Build the global and personalized interest memories.
    BuildMemory(CommonArgs),
    /// Run the ranking evaluation.
    EvalRank(CommonArgs),
    /// Measure candidate position bias.
    ProbeBias(CommonArgs),
    /// Evaluate yes/no CTR prediction.
    EvalCtr(CommonArgs),
    /// Export CTR fine-tuning data.
    ExportFt(CommonArgs),
}

impl Command {
    pub fn split(&self) -> (Step, &CommonArgs) {
        match self {
            Command::PrepareCorpus(a) => (Step::PrepareCorpus, a),
            Command::FitBaseline(a) => (Step::FitBaseline, a),
            Command::BuildMemory(a) => (Step::BuildMemory, a),
            Command::EvalRank(a) => (Step::EvalRank, a),
            Command::ProbeBias(a) => (Step::ProbeBias, a),
            Command::EvalCtr(a) => (Step::EvalCtr, a),
            Command::ExportFt(a) => (Step::ExportFt, a),
        }
    }
}

/// Load the config named by `args`, applying `--set`, `--seed` and `--out`.
pub fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("sample.seed={s}"));
    }
    let mut cfg = ExperimentConfig::load(&args.config, &overrides)?;
    if let Some(o) = &args.out {
        // relative to the working directory, not the config file
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

/// Run with explicit arguments (first element is the program name) and
/// return the process exit code. Output lines go to `out`.
pub fn run_with<I, T>(argv: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (step, args) = cli.command.split();
    let result = load_config(args).and_then(|cfg| {
        if args.dry_run {
            let plan = commands::plan(step, &cfg)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&plan).expect("plan serializes"))?;
            Ok(())
        } else {
            let summary = commands::run_step(step, &cfg)?;
            writeln!(out, "{summary}")?;
            Ok(())
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

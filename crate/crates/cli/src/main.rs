//! `sslt`: generate long-tailed tasks, train with alternate learning,
//! evaluate checkpoints and collect reports.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O
//! error, 4 numeric divergence, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sslt_core::evalreport::ReportFormat;
use sslt_core::trainer::Variant;

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "sslt", version, about = "Semi-supervised long-tailed recognition by alternate learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $SSLT_OUT_ROOT/<command>-<config hash>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory written by `gen-data`, used instead of generating the task.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report layout: rows (tab separated) or structured (JSON).
    #[arg(long, default_value = "rows")]
    format: ReportFormat,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or ingest) a dataset and write it with a manifest.
    GenData(RunArgs),
    /// Decoupled initialization followed by alternate learning.
    Train(TrainArgs),
    /// Pseudo-Label baseline with the same embedding budget.
    Baseline(TrainArgs),
    /// Alternate learning with a different sampling/labeling scheme.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
        /// r+c, r+r, c+r, c+c, classifier-on-union or no-unsup-embed.
        #[arg(long)]
        variant: Variant,
    },
    /// Evaluate a checkpoint on the test set of its configuration.
    Eval {
        checkpoint: PathBuf,
        /// Defaults to config.toml beside the checkpoint or one level up.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "rows")]
        format: ReportFormat,
    },
    /// Merge the reports of finished runs.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "rows")]
        format: ReportFormat,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(sslt_core::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<sslt_core::Error> for CliError {
    fn from(e: sslt_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use sslt_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::Data(_) | E::Format { .. } | E::Shape { .. } | E::Io { .. } | E::Serde(_)) => 3,
            CliError::Core(E::Numeric(_)) => 4,
            CliError::Core(_) => 1,
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SSLT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| ConfigError(vec![format!("SSLT_THREADS must be a positive integer, got {v:?}")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| sslt_core::Error::Config(e.to_string()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a.config, a.out, a.seed),
        Command::Train(a) => commands::train(commands::RunKind::Alternate, a.into()),
        Command::Baseline(a) => commands::train(commands::RunKind::Baseline, a.into()),
        Command::Ablate { train, variant } => commands::train(commands::RunKind::Ablation(variant), train.into()),
        Command::Eval {
            checkpoint,
            config,
            data,
            out,
            format,
        } => commands::eval(&checkpoint, config, data, out, format),
        Command::Report { run_dirs, out, format } => commands::report(&run_dirs, out, format),
    }
}

impl From<TrainArgs> for commands::TrainOptions {
    fn from(a: TrainArgs) -> Self {
        Self {
            config: a.run.config,
            out: a.run.out,
            seed: a.run.seed,
            data: a.data,
            format: a.format,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

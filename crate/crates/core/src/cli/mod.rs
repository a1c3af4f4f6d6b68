//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 training divergence. On failure an `error.json` with the code,
//! kind and message is written to the run directory (or the output root when
//! no run directory is known yet).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::error;
use serde::Serialize;

pub use commands::*;
pub use config::*;

use crate::error::Error;
use crate::training::Variant;

#[derive(Debug, Parser)]
#[command(name = "dadf", version, about = "Distribution-aware multiplicative debiasing for watch-time regression")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to `<output root>/<run_name>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// full, no_dist, no_factor, no_aux or global_correction.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Parent directory for run directories.
    #[arg(long, global = true, env = OUT_ROOT_ENV)]
    pub out_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate or ingest data and write the train/val/test split.
    GenData,
    /// Train the first stage (or instantiate the oracle) and write its signals.
    TrainFirstStage,
    /// Train the correction model for the selected variant.
    TrainDadf,
    /// Evaluate the selected variant on the test split.
    Evaluate,
    /// Train and evaluate across bucket counts.
    SweepK,
    /// Run the long-tail and oracle-risk validators.
    CheckAppendix,
    /// gen-data, train-first-stage, train-dadf and evaluate in one run.
    RunAll,
    /// Print the resolved configuration.
    PrintConfig,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::MissingArtifact(_)
        | Error::Csv(_)
        | Error::NegativeFactor(_)
        | Error::Domain { .. }
        | Error::GroupOutOfRange { .. } => EXIT_DATA,
        Error::Divergence(_) | Error::NonFiniteGradient(_) => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::NonScalarOutput(_) => "non_scalar_output",
        Error::NonFiniteGradient(_) => "non_finite_gradient",
        Error::NegativeFactor(_) => "negative_factor",
        Error::Domain { .. } => "domain",
        Error::GroupOutOfRange { .. } => "group_out_of_range",
        Error::Config(_) => "config",
        Error::Data(_) => "data",
        Error::Divergence(_) => "divergence",
        Error::Metric(_) => "metric",
        Error::MissingArtifact(_) => "missing_artifact",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    }
}

#[derive(Serialize)]
struct ErrorFile<'a> {
    code: i32,
    kind: &'a str,
    message: String,
}

/// What a successful command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub artifact: PathBuf,
}

fn output_root(args: &Args, cfg: &RunConfig) -> PathBuf {
    args.out_root.clone().unwrap_or_else(|| cfg.output.root.clone())
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut run_dir: Option<PathBuf> = None;
    match execute(&args, &mut run_dir) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            error!("{e}");
            eprintln!("error: {e}");
            let dir = run_dir
                .or_else(|| args.out.clone())
                .or_else(|| args.out_root.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let body = ErrorFile {
                code,
                kind: error_kind(&e),
                message: e.to_string(),
            };
            if std::fs::create_dir_all(&dir).is_ok() {
                if let Ok(text) = serde_json::to_string_pretty(&body) {
                    let _ = std::fs::write(dir.join("error.json"), text);
                }
            }
            code
        }
    }
}

/// Runs a parsed command. `run_dir` is filled in as soon as it is known.
pub fn execute(args: &Args, run_dir: &mut Option<PathBuf>) -> crate::Result<Outcome> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let variant = args.variant.as_deref().map(str::parse::<Variant>).transpose()?;
    let cfg = cfg.resolve(args.seed, variant)?;
    if args.command == Command::PrintConfig {
        print!("{}", cfg.to_toml()?);
        return Ok(Outcome {
            run_dir: PathBuf::new(),
            artifact: PathBuf::new(),
        });
    }
    let target = args.out.clone().unwrap_or_else(|| output_root(args, &cfg).join(&cfg.run_name));
    let creates = matches!(args.command, Command::GenData | Command::RunAll | Command::CheckAppendix);
    let dir = if creates {
        if matches!(args.command, Command::CheckAppendix) && target.exists() {
            target
        } else {
            fresh_dir(&target)?
        }
    } else if target.exists() {
        target
    } else {
        return Err(Error::MissingArtifact(target));
    };
    *run_dir = Some(dir.clone());
    let artifact = match args.command {
        Command::GenData => cmd_gen_data(&cfg, &dir)?,
        Command::TrainFirstStage => cmd_train_first_stage(&cfg, &dir)?,
        Command::TrainDadf => cmd_train_dadf(&cfg, &dir)?,
        Command::Evaluate => cmd_evaluate(&cfg, &dir)?.0,
        Command::SweepK => cmd_sweep_k(&cfg, &dir)?,
        Command::CheckAppendix => cmd_check_appendix(&cfg, &dir)?,
        Command::RunAll => cmd_run_all(&cfg, &dir)?.0,
        Command::PrintConfig => unreachable!(),
    };
    Ok(Outcome {
        run_dir: dir,
        artifact,
    })
}

/// Convenience for tests and examples: runs `dadf <args>` in-process.
pub fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("dadf").chain(args.iter().copied()))
}

/// Reads the `error.json` written by a failed command.
pub fn read_error_file(dir: &Path) -> crate::Result<serde_json::Value> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("error.json"))?)?)
}

//! `excirec`: dataset generation, training, evaluation, prediction,
//! local-field simulation and optimizer baselines driven by JSON configs.

pub mod baseline;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod localfield;
pub mod output;
pub mod predict;
pub mod train;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use excirec_core::Error;

use crate::config::ConfigError;

/// Some optimizer run missed its target. Maps to exit code 4.
#[derive(Debug)]
pub struct NonConvergence(pub String);

impl fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not converged: {}", self.0)
    }
}

impl std::error::Error for NonConvergence {}

#[derive(Parser)]
#[command(name = "excirec", version, about = "Exciton wavefunction reconstruction from near-field spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a disorder ensemble and its manifest.
    Generate(Common),
    /// Train a network on a generated dataset.
    Train(Common),
    /// Loss statistics of a checkpoint on datasets.
    Evaluate(Common),
    /// Coefficients for one spectrum.
    Predict(Common),
    /// Local-field maps, peak slices and their reconstruction.
    Localfield(Common),
    /// Direct spectrum fitting with classical optimizers.
    Baseline(Common),
}

type Runner = fn(&Path, Option<&Path>) -> anyhow::Result<()>;

/// Process exit code for an error: 2 config, 3 numerical, 4 non-convergence.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<NonConvergence>() {
            return 4;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Format { .. } | Error::Io(_) | Error::Json(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

/// Parses the command line, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (run, common): (Runner, Common) = match cli.command {
        Command::Generate(c) => (generate::run, c),
        Command::Train(c) => (train::run, c),
        Command::Evaluate(c) => (evaluate::run, c),
        Command::Predict(c) => (predict::run, c),
        Command::Localfield(c) => (localfield::run, c),
        Command::Baseline(c) => (baseline::run, c),
    };
    if let Some(k) = common.threads {
        if k == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&common.config, common.out.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

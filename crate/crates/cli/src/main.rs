//! `nystrom-fit`: generate reference data, fit integrator parameters,
//! simulate with them and compare the results.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or
//! arguments, 3 a simulation diverged.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nystrom_fit::integrators::NystromParams;

use commands::{ModeArg, ThetaSource};
use config::{ExperimentConfig, Overrides};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nystrom-fit", version, about = "Fit and test two-stage Nystrom integrators on FPU and linear models")]
struct Cli {
    /// TOML experiment file; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in experiment: fpu-det, fpu-langevin or linear.
    #[arg(long, global = true, default_value = "fpu-det")]
    preset: String,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a config value, e.g. `--set data.gap=50` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fine-step reference trajectories, stored on the coarse grid.
    Generate,
    /// Fit (b1, beta1) to a stored ensemble.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        mode: ModeArg,
        /// Keep every k-th coarse state before fitting.
        #[arg(long, default_value_t = 1)]
        subsample: usize,
    },
    /// Run a coarse scheme from fresh test initial states.
    Simulate {
        /// Nystrom parameters as `b1,beta1`.
        #[arg(long, conflicts_with = "fit", value_parser = parse_theta)]
        theta: Option<NystromParams>,
        /// `fit.json` written by `infer`.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Compare test ensembles against a reference ensemble.
    Analyze {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long = "test", required = true, num_args = 1..)]
        tests: Vec<PathBuf>,
    },
    /// Optimal parameters and stability for the linear oscillator.
    Linear,
}

fn parse_theta(s: &str) -> Result<NystromParams, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [b1, beta1] = parts.as_slice() else {
        return Err("expected b1,beta1".into());
    };
    let b1: f64 = b1.parse().map_err(|e| format!("b1: {e}"))?;
    let beta1: f64 = beta1.parse().map_err(|e| format!("beta1: {e}"))?;
    NystromParams::new(b1, beta1).map_err(|e| e.to_string())
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    Overrides {
        seed: cli.seed,
        set: cli.set.clone(),
    }
    .apply(&base)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    let (name, outputs) = match &cli.command {
        Command::Generate => ("generate", commands::generate(&cfg, out)?),
        Command::Infer { data, mode, subsample } => {
            if *subsample == 0 {
                return Err(CliError::Config("--subsample must be at least 1".into()));
            }
            ("infer", commands::infer(&cfg, data, *mode, *subsample, out)?)
        }
        Command::Simulate { theta, fit } => {
            let src = match (theta, fit) {
                (Some(p), _) => ThetaSource::Given(*p),
                (None, Some(f)) => ThetaSource::FitFile(f.clone()),
                (None, None) => ThetaSource::Config,
            };
            ("simulate", commands::simulate(&cfg, &src, out)?)
        }
        Command::Analyze { reference, tests } => ("analyze", commands::analyze(&cfg, reference, tests, out)?),
        Command::Linear => ("linear", commands::linear(&cfg, out)?),
    };
    commands::write_run_record(&cfg, name, outputs, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

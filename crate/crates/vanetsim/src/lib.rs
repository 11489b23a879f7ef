//! Batch front-end over `vanet-core`: reads a scenario file, runs one
//! command, and emits a [`report::RunReport`].
//!
//! Exit codes: 0 success, 1 simulation disagrees with analysis (`compare`
//! only), 2 input error, 3 internal numerical error.

pub mod commands;
pub mod report;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use report::{Format, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<vanet_core::Error> for CliError {
    fn from(e: vanet_core::Error) -> Self {
        match e {
            vanet_core::Error::InvalidParameter(_) | vanet_core::Error::NoProgress { .. } => {
                CliError::Input(e.to_string())
            }
            vanet_core::Error::Numerical(_) | vanet_core::Error::Inconsistency(_) => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vanetsim",
    version,
    about = "Highway VANET throughput: closed-form analysis, Monte Carlo simulation, optimal speed mix"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format. CSV is a long table with columns row,field,value.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form expectations. Rows: label, class, v, p, t, rho,
    /// expected_encounters, expected_packets, expected_throughput.
    Analyze { path: PathBuf },
    /// Monte Carlo throughput estimates. Rows: label, observer_v, class,
    /// trials, mean_throughput, se_throughput, mean_encounters,
    /// se_encounters, mean_packets, se_packets.
    Simulate {
        path: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Observer speed (m/s); defaults to every class, or three probe
        /// speeds across the support for continuous traffic.
        #[arg(long = "observer-v")]
        observer_v: Option<f64>,
    },
    /// Analysis against simulation. Rows: label, kind, analytic, simulated,
    /// std_error, z. Exits 1 when any |z| > 4.
    Compare {
        path: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Multiplies every analytic value; for exercising the mismatch path.
        #[arg(long = "perturb-analytic", hide = true, default_value_t = 1.0)]
        perturb_analytic: f64,
    },
    /// Throughput-maximizing PMF for fixed speeds. Rows: label, input_index,
    /// v, sorted_rank, p.
    #[command(name = "optimize-pmf")]
    OptimizePmf {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        speeds: Vec<f64>,
    },
    /// Projected and simulated file download time. Summary only.
    #[command(name = "download-time")]
    DownloadTime {
        path: PathBuf,
        #[command(flatten)]
        dl: DownloadArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    /// Defaults to the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Uniform,
    Lt,
}

#[derive(Debug, Clone, Args)]
pub struct DownloadArgs {
    /// Number of file blocks.
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    pub scheme: SchemeArg,
    #[arg(long = "lt-c", default_value_t = 0.1)]
    pub lt_c: f64,
    #[arg(long = "lt-delta", default_value_t = 0.5)]
    pub lt_delta: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed observer speed; by default each trial draws one from the scenario.
    #[arg(long = "observer-v")]
    pub observer_v: Option<f64>,
    /// Bits per block.
    #[arg(long = "block-bits", default_value_t = 64)]
    pub block_bits: usize,
    #[arg(long = "max-segments", default_value_t = 10_000)]
    pub max_segments: usize,
}

/// A finished command: the report and whether `compare` found a mismatch.
pub struct Outcome {
    pub report: RunReport,
    pub mismatch: bool,
}

pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (builder, mismatch) = match command {
        Command::Analyze { path } => (commands::analyze(path)?, false),
        Command::Simulate { path, sim, observer_v } => (commands::simulate(path, sim, *observer_v)?, false),
        Command::Compare {
            path,
            sim,
            perturb_analytic,
        } => commands::compare(path, sim, *perturb_analytic)?,
        Command::OptimizePmf { speeds } => (commands::optimize_pmf(speeds)?, false),
        Command::DownloadTime { path, dl } => (commands::download_time(path, dl)?, false),
    };
    Ok(Outcome {
        report: builder.finish(start.elapsed().as_secs_f64())?,
        mismatch,
    })
}

/// Runs a parsed command line and returns the process exit code. Nothing is
/// written to the output on failure.
pub fn run(cli: &Cli) -> i32 {
    run_with(cli, &mut std::io::stdout().lock())
}

/// [`run`] with the report sent to `stdout` unless `--output` is given.
pub fn run_with(cli: &Cli, stdout: &mut dyn Write) -> i32 {
    let outcome = match execute(&cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("vanetsim: {e}");
            return e.exit_code();
        }
    };
    let mut buf = Vec::new();
    if let Err(e) = outcome.report.write(cli.format, &mut buf) {
        eprintln!("vanetsim: {e}");
        return e.exit_code();
    }
    let written = match &cli.output {
        Some(path) => std::fs::write(path, &buf),
        None => stdout.write_all(&buf),
    };
    if let Err(e) = written {
        eprintln!("vanetsim: cannot write report: {e}");
        return 2;
    }
    if outcome.mismatch {
        1
    } else {
        0
    }
}

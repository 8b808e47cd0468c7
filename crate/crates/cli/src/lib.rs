//! Command-line surface for the compression pipeline.
//!
//! Every command that writes a primary output also writes
//! `<output>.run.json` recording the resolved parameters, the seed and the
//! sha256 of every input.

pub mod commands;
pub mod record;

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use qubopress::search::{CommandOracle, OracleError, SurrogateOracle};
use qubopress::solver::{AnnealConfig, Ladder};
use qubopress::{AccuracyOracle, CompressionPlan, Granularity};
use serde::Serialize;

pub use record::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_SOLUTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NoSolution(String),
    #[error("{0}")]
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NoSolution(_) => EXIT_NO_SOLUTION,
            CliError::Oracle(_) => EXIT_ORACLE,
        }
    }
}

impl From<qubopress::Error> for CliError {
    fn from(e: qubopress::Error) -> Self {
        match e {
            qubopress::Error::Oracle(_) => CliError::Oracle(e.to_string()),
            qubopress::Error::NoThresholdCrossing { .. } => CliError::NoSolution(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qubopress",
    version,
    about = "Joint pruning and quantization as a QUBO"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a model manifest and report its group structure.
    Ingest(IngestArgs),
    /// Write the QUBO matrix and its variable index for one (beta, gamma).
    Build(BuildArgs),
    /// Minimize a QUBO file.
    Solve(SolveArgs),
    /// Run the automated beta/gamma search.
    Search(SearchArgs),
    /// Evaluate a beta x gamma grid into CSV.
    Sweep(SweepArgs),
    /// Self-check the formulation and solver on a model.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    pub manifest: PathBuf,
    /// Pruning granularity; defaults to the manifest's own, else filter.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Override the manifest's original bit-width.
    #[arg(long)]
    pub b_max: Option<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnnealArgs {
    #[arg(long, default_value_t = 32)]
    pub replicas: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sweeps: u64,
    /// Temperature rungs per replica.
    #[arg(long, default_value_t = 16)]
    pub rungs: usize,
    #[arg(long)]
    pub t_hot: Option<f64>,
    #[arg(long)]
    pub t_cold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub exchange_interval: u64,
}

impl AnnealArgs {
    pub fn config(&self, seed: u64) -> AnnealConfig {
        AnnealConfig {
            replicas: self.replicas,
            sweeps: self.sweeps,
            ladder: Ladder {
                t_hot: self.t_hot,
                t_cold: self.t_cold,
                rungs: self.rungs,
            },
            exchange_interval: self.exchange_interval,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write the descriptor as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub gamma: f64,
    /// QUBO text file; the index goes to `<out>.index.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    /// QUBO text file. `<qubo>.index.json` is used when present.
    pub qubo: PathBuf,
    #[command(flatten)]
    pub anneal: AnnealArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exhaustive enumeration instead of annealing.
    #[arg(long)]
    pub exact: bool,
    /// JSON lines, one solution per line, best first.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the best solution's compression plan (needs the index).
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct OracleArgs {
    /// External accuracy command, invoked as `<cmd> <plan-path>`.
    #[arg(long)]
    pub oracle_cmd: Option<String>,
    /// Built-in deterministic stand-in.
    #[arg(long)]
    pub surrogate: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub acc_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub n_bin: u32,
    #[arg(long, default_value_t = 5)]
    pub n_iter: u32,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Seconds before an external oracle call is abandoned.
    #[arg(long, default_value_t = 3600)]
    pub oracle_timeout: u64,
    /// Starting gamma; drawn log-uniformly from [gamma-min, gamma-max] if unset.
    #[arg(long)]
    pub gamma_init: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_max: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub anneal: AnnealArgs,
    /// Search state with the full trace (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the best plan.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma list `a,b,c` or range `lo:hi:n` (append `:log` for geometric).
    #[arg(long)]
    pub betas: Grid,
    #[arg(long)]
    pub gammas: Grid,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long, default_value_t = 3600)]
    pub oracle_timeout: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub anneal: AnnealArgs,
    /// CSV with columns beta,gamma,energy,R,accuracy.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random assignments per hyperparameter point.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Random (beta, gamma) points.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    /// Largest independent block compared against enumeration.
    #[arg(long, default_value_t = 22)]
    pub max_block: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub anneal: AnnealArgs,
}

/// Grid of hyperparameter values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad grid value `{t}`"))
        };
        let values = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            let (lo, hi, n, log) = match parts[..] {
                [lo, hi, n] => (num(lo)?, num(hi)?, n, false),
                [lo, hi, n, "log"] => (num(lo)?, num(hi)?, n, true),
                _ => return Err(format!("expected `lo:hi:n[:log]`, found `{s}`")),
            };
            let n: usize = n
                .trim()
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| format!("bad grid count `{n}`"))?;
            if log && !(lo > 0.0 && hi > 0.0) {
                return Err("geometric grid needs positive bounds".into());
            }
            (0..n)
                .map(|i| {
                    let t = if n == 1 {
                        0.0
                    } else {
                        i as f64 / (n - 1) as f64
                    };
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else if log {
                        (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                    } else {
                        lo + t * (hi - lo)
                    }
                })
                .collect()
        } else {
            s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err("grid is empty".into());
        }
        Ok(Grid(values))
    }
}

/// Resolved accuracy oracle.
#[derive(Debug, Clone)]
pub enum Oracle {
    Surrogate(SurrogateOracle),
    Command(CommandOracle),
}

impl AccuracyOracle for Oracle {
    fn accuracy(&mut self, plan: &CompressionPlan) -> Result<f64, OracleError> {
        match self {
            Oracle::Surrogate(o) => o.accuracy(plan),
            Oracle::Command(o) => o.accuracy(plan),
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a, out),
        Command::Build(a) => commands::build(&a, out),
        Command::Solve(a) => commands::solve(&a, out),
        Command::Search(a) => commands::search(&a, out),
        Command::Sweep(a) => commands::sweep(&a, out),
        Command::Verify(a) => commands::verify(&a, out),
    }
}

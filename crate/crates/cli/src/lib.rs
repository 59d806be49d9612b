//! `binprobe`: utilization estimates, hit-probability curves, spacing
//! selection, traffic simulation, Bayesian refinement and independence
//! diagnostics from the command line.
//!
//! Exit codes: 0 success, 2 bad arguments or config, 3 numeric failure
//! (no convergence, no spacing meets the tolerance, model mismatch).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Format, RunConfig};

#[derive(Debug)]
pub(crate) struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<binprobe_core::Error> for CliError {
    fn from(e: binprobe_core::Error) -> Self {
        Self {
            code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "binprobe",
    version,
    about = "Channel utilization from sparse binary probes"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON settings file (model, seed, grids); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Utilization estimate, variances and exact confidence interval from counts.
    Estimate {
        #[arg(long)]
        y: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Busy-time estimate and variances over a horizon.
    BusyTime {
        #[arg(long)]
        y: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        horizon: f64,
    },
    /// Packet arrival rate from counts and the mean packet length.
    Rate {
        #[arg(long)]
        y: u64,
        #[arg(long)]
        n: u64,
        /// Defaults to the configured model's mean length.
        #[arg(long)]
        mean_packet: Option<f64>,
    },
    /// Stationary utilization of the configured model.
    IdealU,
    /// Hit-probability curves over a spacing grid.
    Curves {
        /// `start:stop:step` or `a,b,c`.
        #[arg(long)]
        h: Option<String>,
        /// Monte Carlo trials per point for simulated columns (0 = none).
        #[arg(long, default_value_t = 0)]
        sim_trials: u64,
    },
    /// Smallest spacing whose hit probability is within k of the utilization.
    SolveSpacing {
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        h_grid: Option<String>,
        #[arg(long, value_enum, default_value_t = RuleArg::Settled)]
        rule: RuleArg,
    },
    /// Generate or load a trace and probe it.
    Simulate(commands::SimulateArgs),
    /// Bayesian parameter refinement with adaptive spacing.
    Bayes(commands::BayesArgs),
    /// Lag-1 independence diagnostics of a bit sequence.
    Diagnose {
        /// Bits such as "1 1 0 0 1" (0 = packet seen, 1 = no packet).
        #[arg(long, conflicts_with = "input")]
        bits: Option<String>,
        /// File with bits, or a samples CSV from `simulate`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0.02)]
        slack: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Settled,
    FirstCrossing,
}

pub(crate) struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn gamma(&self, flag: Option<f64>) -> Option<f64> {
        flag.or(self.config.gamma)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BINPROBE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("BINPROBE_THREADS must be a count, got '{raw}'")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let config = RunConfig::load(cli.common.config.as_deref())?;
    let default_format = match cli.command {
        Command::Curves { .. } => Format::Csv,
        _ => Format::Json,
    };
    let ctx = Context {
        seed: cli.common.seed.or(config.seed).unwrap_or(0),
        format: cli
            .common
            .format
            .or(config.format)
            .unwrap_or(default_format),
        out: cli.common.out,
        config,
    };
    match cli.command {
        Command::Estimate { y, n, gamma } => commands::estimate(&ctx, y, n, gamma),
        Command::BusyTime { y, n, horizon } => commands::busy_time(&ctx, y, n, horizon),
        Command::Rate { y, n, mean_packet } => commands::rate(&ctx, y, n, mean_packet),
        Command::IdealU => commands::ideal_u(&ctx),
        Command::Curves { h, sim_trials } => commands::curves(&ctx, h.as_deref(), sim_trials),
        Command::SolveSpacing { k, h_grid, rule } => {
            let rule = match rule {
                RuleArg::Settled => binprobe_core::hit::SpacingRule::Settled,
                RuleArg::FirstCrossing => binprobe_core::hit::SpacingRule::FirstCrossing,
            };
            commands::solve_spacing(&ctx, k, h_grid.as_deref(), rule)
        }
        Command::Simulate(args) => commands::simulate(&ctx, &args),
        Command::Bayes(args) => commands::bayes(&ctx, &args),
        Command::Diagnose {
            bits,
            input,
            gamma,
            slack,
        } => commands::diagnose(&ctx, bits.as_deref(), input.as_deref(), gamma, slack),
    }
}

/// Runs one command line (program name first) and returns the exit code.
/// Reasons for failure go to stderr as a single `error: ...` line.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

//! `sfts`: estimation, recovery and benchmarking for sparse functional time series.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sparse_fts::simulate::ProcessName;
use sparse_fts::{Error, Parallelism};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sfts", version, about = "Second-order analysis of sparsely observed functional time series")]
pub struct Cli {
    /// Directory for all outputs.
    #[arg(long, global = true, env = "SFTS_OUT_DIR", default_value = "sfts-out")]
    pub out_dir: PathBuf,

    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "SFTS_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a benchmark process and sample it sparsely with noise.
    Simulate(SimulateArgs),
    /// Cross-validate the smoothing bandwidths.
    Tune(TuneArgs),
    /// Estimate mean, noise variance, spectral density and autocovariances.
    Estimate(EstimateArgs),
    /// Trace of the spectral density for a large span (periodicity chart).
    Periodogram(PeriodogramArgs),
    /// Recover latent curves with confidence bands.
    Recover(RecoverArgs),
    /// Forecast curves beyond the last time point.
    Forecast(ForecastArgs),
    /// Run the simulation benchmark.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Long-format CSV with header `t,x,y`.
    #[arg(long)]
    pub input: PathBuf,
    /// Horizon `T` (defaults to the largest `t`).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Location domain `a,b`, rescaled to `[0, 1]`.
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
    /// Treat the location domain as a circle.
    #[arg(long)]
    pub circular: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandwidthArgs {
    /// Mean bandwidth; give all three bandwidths or none (cross-validation).
    #[arg(long, requires_all = ["b_r", "b_v"])]
    pub b_mu: Option<f64>,
    #[arg(long, requires_all = ["b_mu", "b_v"])]
    pub b_r: Option<f64>,
    #[arg(long, requires_all = ["b_mu", "b_r"])]
    pub b_v: Option<f64>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "FMA4")]
    pub process: ProcessName,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub n_max: usize,
    /// `tr R_0 / σ²`; `inf` for noiseless samples.
    #[arg(long, default_value_t = 20.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the latent curves on the grid.
    #[arg(long)]
    pub paths: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bandwidths: BandwidthArgs,
    /// Bartlett span `L`, or `auto` for the `T^{1/3} n̄^{1/4}` rule.
    #[arg(long, default_value = "auto")]
    pub span: String,
    /// Keep negative eigenvalues of the spectral kernels.
    #[arg(long)]
    pub no_truncate: bool,
    /// Seasonal period in time steps; enables seasonal adjustment.
    #[arg(long, requires = "seasonal_bandwidth")]
    pub seasonal_period: Option<usize>,
    #[arg(long, requires = "seasonal_period")]
    pub seasonal_bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PeriodogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bandwidths: BandwidthArgs,
    #[arg(long)]
    pub span: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `model.json` written by `estimate`.
    #[arg(long)]
    pub model: PathBuf,
    /// Times to recover (1-based).
    #[arg(long, value_delimiter = ',', required_unless_present = "all", conflicts_with = "all")]
    pub at: Vec<usize>,
    /// Recover every time point.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use the lag-0 model only.
    #[arg(long = "static")]
    pub static_: bool,
    /// Half-width of the window of neighbouring times (default `L`).
    #[arg(long)]
    pub half_width: Option<usize>,
    #[arg(long, default_value_t = sparse_fts::recovery::DEFAULT_MC_PATHS)]
    pub mc_paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Number of steps ahead.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = sparse_fts::recovery::DEFAULT_MC_PATHS)]
    pub mc_paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long, default_value = "FMA4")]
    pub process: ProcessName,
    #[arg(long, value_delimiter = ',', default_value = "150")]
    pub horizon: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub n_max: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20.0)]
    pub snr: f64,
    /// Skip dynamic and static recovery.
    #[arg(long)]
    pub no_recovery: bool,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("not a number: {a}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("not a number: {b}"))?;
    if b > a {
        Ok((a, b))
    } else {
        Err(format!("empty domain [{a}, {b}]"))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(Error::NumericFailure(_)) => EXIT_NUMERIC,
        Some(_) => EXIT_DATA,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let threads = cli.threads;
    match Parallelism::from_threads(threads).install(|| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `epf`: backtests, metrics, ensembles and Diebold-Mariano tests for
//! LEAR day-ahead price forecasts.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epf_core::dataio::{MarketId, Window};
use epf_core::presets::{BacktestPreset, EnsemblePreset};

/// Directory searched for `<MARKET>.csv` when `--data` is omitted.
pub const DATA_DIR_ENV: &str = "EPF_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "epf", version, about = "Day-ahead electricity price forecasting with LEAR models")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset and report the repairs performed.
    Validate(ValidateArgs),
    /// Run a rolling backtest and write the forecast table.
    Backtest(BacktestArgs),
    /// Error metrics of forecast tables against realised prices.
    Metrics(MetricsArgs),
    /// Average forecast tables into an ensemble.
    Ensemble(EnsembleArgs),
    /// Diebold-Mariano test of model A against model B.
    Dm(DmArgs),
    /// Write a seeded synthetic dataset with its manifest.
    Synth(SynthArgs),
}

fn parse_market(s: &str) -> Result<MarketId, String> {
    s.parse::<MarketId>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Hourly CSV (`timestamp,price,exog1,exog2`); defaults to
    /// `$EPF_DATA_DIR/<MARKET>.csv`.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Market id (OMIE-SP, EPEX-DE, EPEX-BE, EPEX-FR, NP, custom).
    #[arg(long, value_parser = parse_market)]
    pub market: Option<MarketId>,
}

#[derive(Debug, Clone, Args)]
pub struct PeriodArgs {
    /// First forecast day.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub test_start: Option<NaiveDate>,
    /// Last forecast day.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub test_end: Option<NaiveDate>,
    /// Number of forecast days from the test start.
    #[arg(long, value_name = "N", conflicts_with = "test_end")]
    pub test_days: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub period: PeriodArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    /// Rolling mean and standard deviation of the previous days.
    Adaptive,
    /// Median and MAD of the training window, then arcsinh.
    Arcsinh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExogArg {
    Own,
    Price,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub period: PeriodArgs,
    #[arg(long, value_enum, default_value = "adaptive", conflicts_with = "preset")]
    pub scheme: SchemeArg,
    /// Calibration window in days, or `all`.
    #[arg(long, default_value = "all", conflicts_with = "preset")]
    pub window: Window,
    /// Days in the rolling standardisation window.
    #[arg(long, default_value_t = 7)]
    pub v: usize,
    /// Outlier threshold in rolling standard deviations.
    #[arg(long, default_value_t = 10.0)]
    pub kappa: f64,
    /// Replace price outliers before fitting (default: on for adaptive,
    /// off for arcsinh).
    #[arg(long, value_name = "BOOL", value_parser = clap::builder::BoolishValueParser::new(), conflicts_with = "preset")]
    pub filter_outliers: Option<bool>,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 100)]
    pub lambda_grid: usize,
    /// Standardise exogenous series with their own rolling parameters or
    /// with the price's.
    #[arg(long, value_enum, default_value = "own")]
    pub exog_params: ExogArg,
    /// Label written into the forecast table.
    #[arg(long, conflicts_with = "preset")]
    pub label: Option<String>,
    /// Output CSV (default `<out-dir>/<label>.csv`).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub out: Option<PathBuf>,
    /// Run a named model group.
    #[arg(long, value_parser = |s: &str| s.parse::<BacktestPreset>())]
    pub preset: Option<BacktestPreset>,
    /// Directory for preset outputs or for `<label>.csv`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Also write the fitted coefficients of every day and hour.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub model_dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Forecast tables, comma separated.
    #[arg(long, required = true, value_delimiter = ',', value_name = "CSV,...")]
    pub forecasts: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Add monthly MAE.
    #[arg(long)]
    pub monthly: bool,
    /// Report each input's metrics divided by this table's.
    #[arg(long, value_name = "CSV")]
    pub ratio_against: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Member tables, comma separated.
    #[arg(long, required = true, value_delimiter = ',', value_name = "CSV,...")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Select members by label and name the result after the preset.
    #[arg(long, value_parser = |s: &str| s.parse::<EnsemblePreset>())]
    pub preset: Option<EnsemblePreset>,
    /// Market whose windows define the preset members.
    #[arg(long, value_parser = parse_market)]
    pub market: Option<MarketId>,
    #[arg(long, conflicts_with = "preset")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DmFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct DmArgs {
    #[arg(long, value_name = "CSV")]
    pub a: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub b: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: DmFormat,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_market, default_value = "custom")]
    pub market: MarketId,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Keep only this many test days.
    #[arg(long, value_name = "N")]
    pub test_days: Option<usize>,
    /// Days of history before the test period.
    #[arg(long, value_name = "N")]
    pub history_days: Option<usize>,
    /// Probability that a day carries a price spike.
    #[arg(long, default_value_t = 0.0)]
    pub spike_prob: f64,
    /// Spike height in multiples of the price level.
    #[arg(long, default_value_t = 6.0)]
    pub spike_magnitude: f64,
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("cannot size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Ensemble(a) => commands::ensemble(&a),
        Command::Dm(a) => commands::dm(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Day-ahead electricity price forecasting with LEAR models under static
//! (median-arcsinh) or adaptive (rolling) standardisation.
//!
//! - [`dataio`]: hourly CSV ingestion, datasets, calibration windows
//! - [`transform`]: standardisation schemes and the outlier filter
//! - [`lear`]: the 247-regressor design, LASSO and cross-validation
//! - [`backtest`]: daily recalibration over a test period
//! - [`evaluate`]: metrics, ensembles, ratios, Diebold-Mariano test
//! - [`presets`]: named configuration groups and ensembles
//! - [`synthetic`]: seeded stand-in market data

pub mod backtest;
pub mod dataio;
pub mod evaluate;
pub mod forecast;
pub mod lear;
pub mod presets;
pub mod synthetic;
pub mod transform;

pub use backtest::{run_backtest, run_suite, BacktestConfig, BacktestError};
pub use dataio::{load_dataset, MarketDataset, MarketId, TestPeriod, Window};
pub use evaluate::{compute_metrics, dm_test_multivariate, ensemble_mean, performance_ratio, DmOutcome, MetricsReport};
pub use forecast::ForecastTable;
pub use transform::Scheme;

//! Daily-recalibrated forecasting over a test period.
//!
//! For every test day `D`, using only prices before `D` and covariates up
//! to and including `D`:
//!
//! 1. take the calibration window ending the day before `D`,
//! 2. optionally replace price outliers,
//! 3. standardise price and covariates,
//! 4. fit the 24 hourly LEAR models with cross-validated penalties,
//! 5. forecast the 24 hours of `D`,
//! 6. map the forecasts back to price units.

use std::fmt;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{slice_training, DataError, MarketDataset, MarketId, TestPeriod, Window, HOURS};
use crate::forecast::{ForecastTable, TableError};
use crate::lear::{build_design, fit_model_set, CvOptions, FeatureSource, LearError, LearModelSet};
use crate::transform::{
    apply_adaptive, apply_arcsinh_params, estimate_adaptive_params_ahead, filter_outliers,
    invert_adaptive, standardise_exogenous_with, ArcsinhParams, Scheme,
    SourceRole, TransformError, TransformedSeries, SIGMA_FLOOR,
};

/// Where covariate standardisation parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExogParams {
    /// Each covariate uses its own rolling mean and deviation.
    #[default]
    Own,
    /// Covariates reuse the price's rolling parameters.
    Price,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub market_id: MarketId,
    pub scheme: Scheme,
    pub window: Window,
    /// Rolling standardisation window in days.
    pub v: usize,
    /// Outlier threshold in rolling standard deviations.
    pub kappa: f64,
    pub filter_outliers: bool,
    pub cv_folds: usize,
    pub lambda_grid: usize,
    #[serde(default)]
    pub exog_params: ExogParams,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
    pub label: String,
    /// Overrides the dataset's test period.
    #[serde(default)]
    pub test_period: Option<TestPeriod>,
}

fn default_floor() -> f64 {
    SIGMA_FLOOR
}

pub const DEFAULT_V: usize = 7;
pub const DEFAULT_KAPPA: f64 = 10.0;
pub const DEFAULT_CV_FOLDS: usize = 5;
pub const DEFAULT_LAMBDA_GRID: usize = 100;

impl BacktestConfig {
    /// Static median-arcsinh LEAR, no outlier filter.
    pub fn lear(market_id: MarketId, window: Window) -> Self {
        Self::new(market_id, Scheme::MedianArcsinh, window, false)
    }

    /// Adaptive-standardisation LEAR with the outlier filter.
    pub fn aslear(market_id: MarketId, window: Window) -> Self {
        Self::new(market_id, Scheme::Adaptive, window, true)
    }

    pub fn new(market_id: MarketId, scheme: Scheme, window: Window, filter_outliers: bool) -> Self {
        let mut cfg = Self {
            market_id,
            scheme,
            window,
            v: DEFAULT_V,
            kappa: DEFAULT_KAPPA,
            filter_outliers,
            cv_folds: DEFAULT_CV_FOLDS,
            lambda_grid: DEFAULT_LAMBDA_GRID,
            exog_params: ExogParams::Own,
            sigma_floor: SIGMA_FLOOR,
            label: String::new(),
            test_period: None,
        };
        cfg.label = cfg.default_label();
        cfg
    }

    /// `LEAR-364`, `ASLEAR-ALL`, with a suffix when the filter setting
    /// differs from the scheme's usual one.
    pub fn default_label(&self) -> String {
        let (name, usual_filter) = match self.scheme {
            Scheme::Adaptive => ("ASLEAR", true),
            Scheme::MedianArcsinh => ("LEAR", false),
            Scheme::Identity => ("RAWLEAR", false),
        };
        let mut label = format!("{name}-{}", self.window);
        if self.filter_outliers != usual_filter {
            label.push_str(if self.filter_outliers { "-filtered" } else { "-nofilter" });
        }
        label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_filter(mut self, on: bool) -> Self {
        let relabel = self.label == self.default_label();
        self.filter_outliers = on;
        if relabel {
            self.label = self.default_label();
        }
        self
    }

    pub fn with_test_period(mut self, tp: TestPeriod) -> Self {
        self.test_period = Some(tp);
        self
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            n_folds: self.cv_folds,
            grid_size: self.lambda_grid,
            ..CvOptions::default()
        }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::Config(m));
        if self.v == 0 {
            return bad("v must be at least 1".into());
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if self.cv_folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.cv_folds));
        }
        if self.lambda_grid == 0 {
            return bad("lambda grid must have at least one point".into());
        }
        if !(self.sigma_floor > 0.0) {
            return bad(format!("sigma floor must be positive, got {}", self.sigma_floor));
        }
        if self.scheme == Scheme::Identity {
            return bad("the identity scheme is not a forecasting configuration".into());
        }
        if let Window::Days(w) = self.window {
            if self.scheme == Scheme::Adaptive && w <= self.v {
                return bad(format!("window {w} must exceed v = {}", self.v));
            }
        }
        Ok(())
    }
}

impl fmt::Display for BacktestConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{} {:?} window={} v={} kappa={} filter={} folds={} grid={}]",
            self.label,
            self.market_id,
            self.scheme,
            self.window,
            self.v,
            self.kappa,
            self.filter_outliers,
            self.cv_folds,
            self.lambda_grid
        )
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Lear(#[from] LearError),
    #[error("non-finite forecast at hour {0}")]
    NonFiniteForecast(usize),
}

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{date}: {source}")]
    Day {
        date: NaiveDate,
        #[source]
        source: StepError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Table(#[from] TableError),
}

impl BacktestError {
    pub fn date(&self) -> Option<NaiveDate> {
        match self {
            BacktestError::Day { date, .. } => Some(*date),
            _ => None,
        }
    }

    /// True when caused by missing history before a forecast day.
    pub fn is_insufficient_history(&self) -> bool {
        matches!(
            self,
            BacktestError::Day {
                source: StepError::Data(DataError::InsufficientHistory { .. }),
                ..
            } | BacktestError::Data(DataError::InsufficientHistory { .. })
        )
    }
}

/// Diagnostics of one forecast day.
#[derive(Debug, Clone)]
pub struct DayReport {
    pub date: NaiveDate,
    pub elapsed: Duration,
    pub training_rows: usize,
    pub lambdas: Vec<f64>,
    pub fallback_hours: usize,
    /// Adaptive scheme: mean and deviation used to invert the forecast.
    pub inversion: Option<(f64, f64)>,
    pub models: Option<LearModelSet>,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub keep_models: bool,
    pub on_day: Option<&'a (dyn Fn(&DayReport) + Sync)>,
}

#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub table: ForecastTable,
    pub days: Vec<DayReport>,
}

/// Forecast of a single day in price units.
#[derive(Debug, Clone)]
pub struct DayForecast {
    pub prices: Array1<f64>,
    pub report: DayReport,
}

enum Inverse {
    Adaptive { mu: f64, sigma: f64, floor: f64 },
    Arcsinh(ArcsinhParams),
}

fn arcsinh_fit(train: ArrayView2<'_, f64>, floor: f64) -> Result<ArcsinhParams, TransformError> {
    let mut p = ArcsinhParams::fit(train)?;
    p.sigma_floor = floor;
    Ok(p)
}

/// Runs steps 1-6 for the day at `target` (a dataset index).
pub fn forecast_day(
    ds: &MarketDataset,
    cfg: &BacktestConfig,
    target: usize,
    keep_model: bool,
) -> Result<DayForecast, StepError> {
    let started = Instant::now();
    let date = ds.days()[target];
    let view = slice_training(ds, date, cfg.window)?;
    let start = view.range().start;
    let w = view.len();

    let raw = view.price();
    let price = if cfg.filter_outliers {
        filter_outliers(raw, cfg.v, cfg.kappa)?
    } else {
        raw.to_owned()
    };
    // covariates include the target day: they are known before gate closure
    let exog1 = ds.exog1().slice_move(s![start..=target, ..]);
    let exog2 = ds.exog2().slice_move(s![start..=target, ..]);

    let (u_price, u_x1, u_x2, inverse) = match cfg.scheme {
        Scheme::Adaptive => {
            let pp = estimate_adaptive_params_ahead(price.view(), cfg.v)?.with_sigma_floor(cfg.sigma_floor);
            let target_params = pp.require(w)?;
            let u = apply_adaptive(price.view(), &pp)?;
            let (x1, x2) = match cfg.exog_params {
                ExogParams::Own => {
                    let own = |x: ArrayView2<'_, f64>| -> Result<TransformedSeries, TransformError> {
                        let p = crate::transform::estimate_adaptive_params(x, cfg.v)?
                            .with_sigma_floor(cfg.sigma_floor);
                        apply_adaptive(x, &p)
                    };
                    (own(exog1)?, own(exog2)?)
                }
                ExogParams::Price => (
                    standardise_exogenous_with(exog1, &pp)?,
                    standardise_exogenous_with(exog2, &pp)?,
                ),
            };
            let inv = Inverse::Adaptive {
                mu: target_params.mu,
                sigma: target_params.sigma,
                floor: cfg.sigma_floor,
            };
            (u, x1, x2, inv)
        }
        Scheme::MedianArcsinh => {
            let pp = arcsinh_fit(price.view(), cfg.sigma_floor)?;
            let p1 = arcsinh_fit(exog1.slice(s![..w, ..]), cfg.sigma_floor)?;
            let p2 = arcsinh_fit(exog2.slice(s![..w, ..]), cfg.sigma_floor)?;
            (
                apply_arcsinh_params(price.view(), pp),
                apply_arcsinh_params(exog1, p1),
                apply_arcsinh_params(exog2, p2),
                Inverse::Arcsinh(pp),
            )
        }
        Scheme::Identity => {
            return Err(StepError::Transform(TransformError::Shape(
                "identity scheme cannot be backtested".into(),
            )))
        }
    };
    let u_x1 = u_x1.with_role(SourceRole::Exog1);
    let u_x2 = u_x2.with_role(SourceRole::Exog2);

    let dow = &ds.day_of_week()[start..=target];
    let src = FeatureSource {
        price: &u_price,
        exog1: &u_x1,
        exog2: &u_x2,
        day_of_week: dow,
    };
    let first = src.first_row_day().min(w);
    let design = build_design(&src, first..w)?;
    let models = fit_model_set(&design, &cfg.cv_options())?;
    let row = src.row(w)?;
    let u_hat = models.predict(row.view())?;

    let (prices, inversion) = match inverse {
        Inverse::Adaptive { mu, sigma, floor } => (
            invert_adaptive(u_hat.view(), crate::transform::DayParams { mu, sigma }, floor),
            Some((mu, sigma)),
        ),
        Inverse::Arcsinh(p) => (u_hat.mapv(|y| p.inverse(y)), None),
    };
    if let Some(h) = prices.iter().position(|v| !v.is_finite()) {
        return Err(StepError::NonFiniteForecast(h + 1));
    }
    let fallback_hours = models.hours.iter().filter(|m| m.fallback).count();
    if fallback_hours > 0 {
        log::warn!("{date}: {fallback_hours} hour model(s) fell back to the zero model");
    }
    Ok(DayForecast {
        prices,
        report: DayReport {
            date,
            elapsed: started.elapsed(),
            training_rows: design.n_rows(),
            lambdas: models.hours.iter().map(|m| m.lambda).collect(),
            fallback_hours,
            inversion,
            models: keep_model.then_some(models),
        },
    })
}

pub fn run_backtest(ds: &MarketDataset, cfg: &BacktestConfig) -> Result<ForecastTable, BacktestError> {
    run_backtest_with(ds, cfg, &RunOptions::default()).map(|o| o.table)
}

pub fn run_backtest_with(
    ds: &MarketDataset,
    cfg: &BacktestConfig,
    opts: &RunOptions<'_>,
) -> Result<BacktestOutput, BacktestError> {
    cfg.validate()?;
    let ds_owned;
    let ds = match cfg.test_period {
        Some(tp) if tp != ds.test_period() => {
            ds_owned = ds.with_test_period(tp)?;
            &ds_owned
        }
        _ => ds,
    };
    let indices: Vec<usize> = ds.test_indices().collect();
    let results: Vec<Result<DayForecast, BacktestError>> = indices
        .par_iter()
        .map(|&t| {
            let out = forecast_day(ds, cfg, t, opts.keep_models).map_err(|source| BacktestError::Day {
                date: ds.days()[t],
                source,
            })?;
            if let Some(cb) = opts.on_day {
                cb(&out.report);
            }
            Ok(out)
        })
        .collect();

    let mut values = Array2::zeros((indices.len(), HOURS));
    let mut dates = Vec::with_capacity(indices.len());
    let mut days = Vec::with_capacity(indices.len());
    for (i, r) in results.into_iter().enumerate() {
        let f = r?;
        values.row_mut(i).assign(&f.prices);
        dates.push(f.report.date);
        days.push(f.report);
    }
    let table = ForecastTable::new(cfg.label.clone(), dates, values)?.with_config(cfg.clone());
    Ok(BacktestOutput { table, days })
}

/// Writes `date,hour,lambda,nonzeros` for every kept model, with the
/// nonzero coefficients as `index:value` pairs joined by `;`. Hours are 1-24.
pub fn write_model_dump<W: std::io::Write>(days: &[DayReport], writer: W) -> Result<(), TableError> {
    let err = |e: csv::Error| TableError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "hour", "lambda", "nonzeros"]).map_err(err)?;
    for day in days {
        let Some(models) = &day.models else { continue };
        for (h, m) in models.hours.iter().enumerate() {
            let nz: Vec<String> = m.nonzeros().map(|(i, v)| format!("{i}:{v}")).collect();
            w.write_record([
                day.date.to_string(),
                (h + 1).to_string(),
                m.lambda.to_string(),
                nz.join(";"),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| TableError::Format(e.to_string()))
}

/// Outcome of a batch of configurations.
#[derive(Debug)]
pub struct SuiteResult {
    pub configs: Vec<BacktestConfig>,
    pub results: Vec<Result<ForecastTable, BacktestError>>,
}

impl SuiteResult {
    pub fn tables(&self) -> impl Iterator<Item = &ForecastTable> {
        self.results.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn errors(&self) -> impl Iterator<Item = (&BacktestConfig, &BacktestError)> {
        self.configs
            .iter()
            .zip(&self.results)
            .filter_map(|(c, r)| r.as_ref().err().map(|e| (c, e)))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (c, r) in self.configs.iter().zip(&self.results) {
            match r {
                Ok(t) => out.push_str(&format!("ok     {:<24} {} days\n", c.label, t.n_days())),
                Err(e) => out.push_str(&format!("FAILED {:<24} {e}\n", c.label)),
            }
        }
        out
    }
}

/// Runs every configuration; failures are isolated per configuration.
pub fn run_suite(ds: &MarketDataset, configs: &[BacktestConfig]) -> SuiteResult {
    let results = configs.par_iter().map(|c| run_backtest(ds, c)).collect();
    SuiteResult {
        configs: configs.to_vec(),
        results,
    }
}

//! LASSO-estimated autoregressive (LEAR) model.
//!
//! One linear model per delivery hour over 247 regressors:
//!
//! | columns   | regressor                          |
//! |-----------|------------------------------------|
//! | 0..24     | price, day d-1, hours 1..24        |
//! | 24..48    | price, day d-2                     |
//! | 48..72    | price, day d-3                     |
//! | 72..96    | price, day d-7                     |
//! | 96..120   | exog1, day d                       |
//! | 120..144  | exog2, day d                       |
//! | 144..168  | exog1, day d-1                     |
//! | 168..192  | exog2, day d-1                     |
//! | 192..216  | exog1, day d-7                     |
//! | 216..240  | exog2, day d-7                     |
//! | 240..247  | weekday one-hot, Monday first      |
//!
//! All series enter already standardised. There is no intercept column; the
//! weekday dummies span the constant.

pub mod cv;
pub mod lars;
pub mod lasso;

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataio::HOURS;
use crate::transform::TransformedSeries;

pub use lars::{homotopy_path, path_solutions};
pub use cv::{fold_bounds, lambda_grid, select_lambda_cv, CvOptions, CvPlan, CvResult};
pub use lasso::{
    fit_lasso, fit_lasso_with, kkt_violation, lambda_max, lasso_path, solve_gram, GramSystem, LassoFit, LassoOptions,
};

pub const N_FEATURES: usize = 247;
pub const PRICE_LAGS: [usize; 4] = [1, 2, 3, 7];
pub const EXOG_LAGS: [usize; 3] = [0, 1, 7];
pub const MAX_LAG: usize = 7;
pub const DUMMY_OFFSET: usize = 240;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearError {
    #[error("lag {lag} of day index {day} is not available")]
    LagUnavailable { day: usize, lag: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{rows} training rows, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Standardised inputs the regressors are drawn from.
///
/// `price` may be one day shorter than the covariates: the day being
/// forecast has known covariates but no price yet.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSource<'a> {
    pub price: &'a TransformedSeries,
    pub exog1: &'a TransformedSeries,
    pub exog2: &'a TransformedSeries,
    /// ISO weekday, Monday = 1, one per covariate day.
    pub day_of_week: &'a [u8],
}

impl<'a> FeatureSource<'a> {
    /// First day index whose full lag structure is available.
    pub fn first_row_day(&self) -> usize {
        let warm = self
            .price
            .first_available()
            .max(self.exog1.first_available())
            .max(self.exog2.first_available());
        warm + MAX_LAG
    }

    /// Writes the 247 regressors of `day` into `out`.
    pub fn write_row(&self, day: usize, out: &mut [f64]) -> Result<(), LearError> {
        if out.len() != N_FEATURES {
            return Err(LearError::Shape(format!("row buffer of {}", out.len())));
        }
        for (b, &lag) in PRICE_LAGS.iter().enumerate() {
            let src = day
                .checked_sub(lag)
                .filter(|&d| self.price.is_available(d))
                .ok_or(LearError::LagUnavailable { day, lag })?;
            out[b * HOURS..(b + 1) * HOURS].copy_from_slice(
                self.price.values().row(src).as_slice().expect("standard layout"),
            );
        }
        let mut block = PRICE_LAGS.len();
        for &lag in EXOG_LAGS.iter() {
            for exog in [self.exog1, self.exog2] {
                let src = day
                    .checked_sub(lag)
                    .filter(|&d| exog.is_available(d))
                    .ok_or(LearError::LagUnavailable { day, lag })?;
                out[block * HOURS..(block + 1) * HOURS]
                    .copy_from_slice(exog.values().row(src).as_slice().expect("standard layout"));
                block += 1;
            }
        }
        let dow = *self
            .day_of_week
            .get(day)
            .ok_or(LearError::LagUnavailable { day, lag: 0 })?;
        if !(1..=7).contains(&dow) {
            return Err(LearError::Shape(format!("weekday {dow} outside 1..=7")));
        }
        out[DUMMY_OFFSET..].fill(0.0);
        out[DUMMY_OFFSET + dow as usize - 1] = 1.0;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LearError::NonFinite("regressors"));
        }
        Ok(())
    }

    pub fn row(&self, day: usize) -> Result<Array1<f64>, LearError> {
        let mut out = Array1::zeros(N_FEATURES);
        self.write_row(day, out.as_slice_mut().expect("contiguous"))?;
        Ok(out)
    }
}

/// Regressors shared by all 24 hourly models plus the 24 targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    /// `rows x 24` standardised prices of each training day.
    pub targets: Array2<f64>,
    /// Day index of each row.
    pub days: Vec<usize>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Design and target of one delivery hour.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub days: Vec<usize>,
    /// Zero-based delivery hour.
    pub hour: usize,
}

pub fn build_design(src: &FeatureSource<'_>, days: Range<usize>) -> Result<DesignMatrix, LearError> {
    let n = days.len();
    let mut x = Array2::zeros((n, N_FEATURES));
    let mut targets = Array2::zeros((n, HOURS));
    for (r, d) in days.clone().enumerate() {
        src.write_row(d, x.row_mut(r).into_slice().expect("contiguous"))?;
        if !src.price.is_available(d) {
            return Err(LearError::LagUnavailable { day: d, lag: 0 });
        }
        targets.row_mut(r).assign(&src.price.values().row(d));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(LearError::NonFinite("targets"));
    }
    Ok(DesignMatrix {
        x,
        targets,
        days: days.collect(),
    })
}

/// Design matrix for the model of zero-based `hour`.
pub fn build_features(
    src: &FeatureSource<'_>,
    days: Range<usize>,
    hour: usize,
) -> Result<FeatureMatrix, LearError> {
    if hour >= HOURS {
        return Err(LearError::Shape(format!("hour {hour} outside 0..24")));
    }
    let d = build_design(src, days)?;
    Ok(FeatureMatrix {
        y: d.targets.column(hour).to_owned(),
        x: d.x,
        days: d.days,
        hour,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourModel {
    pub theta: Array1<f64>,
    pub lambda: f64,
    /// In-sample mean squared error.
    pub training_loss: f64,
    /// Set when cross-validation could not run and the zero model was used.
    pub fallback: bool,
}

impl HourModel {
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
    }
}

/// The 24 hourly models of one calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct LearModelSet {
    pub hours: Vec<HourModel>,
}

impl LearModelSet {
    pub fn zero() -> Self {
        Self {
            hours: (0..HOURS)
                .map(|_| HourModel {
                    theta: Array1::zeros(N_FEATURES),
                    lambda: 0.0,
                    training_loss: 0.0,
                    fallback: true,
                })
                .collect(),
        }
    }

    /// One standardised forecast per hour from a shared regressor row.
    pub fn predict(&self, features: ArrayView1<'_, f64>) -> Result<Array1<f64>, LearError> {
        if features.len() != N_FEATURES {
            return Err(LearError::Shape(format!("{} regressors", features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearError::NonFinite("regressors"));
        }
        Ok(self.hours.iter().map(|m| m.theta.dot(&features)).collect())
    }

    /// Forecasts with a separate regressor row per hour.
    pub fn predict_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array1<f64>, LearError> {
        if rows.nrows() != self.hours.len() {
            return Err(LearError::Shape(format!("{} rows for {} models", rows.nrows(), self.hours.len())));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(LearError::NonFinite("regressors"));
        }
        Ok(self
            .hours
            .iter()
            .zip(rows.outer_iter())
            .map(|(m, r)| m.theta.dot(&r))
            .collect())
    }
}

/// Fits all 24 hourly models with cross-validated penalties.
///
/// When there are fewer rows than folds the hour falls back to the zero
/// model at `lambda_max`, which forecasts the standardised mean.
pub fn fit_model_set(design: &DesignMatrix, opts: &CvOptions) -> Result<LearModelSet, LearError> {
    let plan = match CvPlan::new(design.x.view(), *opts) {
        Ok(p) => Some(p),
        Err(LearError::TooFewRows { rows, needed }) => {
            log::warn!("{rows} training rows (< {needed}); using the zero model for every hour");
            None
        }
        Err(e) => return Err(e),
    };
    let hours: Result<Vec<HourModel>, LearError> = (0..HOURS)
        .into_par_iter()
        .map(|h| {
            let y = design.targets.column(h);
            match &plan {
                Some(plan) => {
                    let (cv, theta) = plan.select_and_fit(y)?;
                    let r = &y - &design.x.dot(&theta);
                    Ok(HourModel {
                        training_loss: r.dot(&r) / y.len() as f64,
                        theta,
                        lambda: cv.lambda,
                        fallback: false,
                    })
                }
                None => Ok(HourModel {
                    lambda: lambda_max(design.x.view(), y),
                    training_loss: if y.is_empty() { 0.0 } else { y.dot(&y) / y.len() as f64 },
                    theta: Array1::zeros(N_FEATURES),
                    fallback: true,
                }),
            }
        })
        .collect();
    Ok(LearModelSet { hours: hours? })
}

/// Regressors of `day` padded to one row per hour (all rows identical).
pub fn day_rows(src: &FeatureSource<'_>, day: usize) -> Result<Array2<f64>, LearError> {
    let row = src.row(day)?;
    let mut out = Array2::zeros((HOURS, N_FEATURES));
    for mut r in out.outer_iter_mut() {
        r.assign(&row);
    }
    Ok(out)
}

/// Column offset of a price lag block.
pub fn price_lag_column(lag: usize, hour: usize) -> Option<usize> {
    PRICE_LAGS.iter().position(|&l| l == lag).map(|b| b * HOURS + hour)
}

/// Column offset of exogenous variable `which` (1 or 2) at `lag`.
pub fn exog_column(which: usize, lag: usize, hour: usize) -> Option<usize> {
    let b = EXOG_LAGS.iter().position(|&l| l == lag)?;
    if !(1..=2).contains(&which) {
        return None;
    }
    Some((PRICE_LAGS.len() + 2 * b + which - 1) * HOURS + hour)
}

const _: () = assert!(DUMMY_OFFSET + 7 == N_FEATURES);
const _: () = assert!((PRICE_LAGS.len() + 2 * EXOG_LAGS.len()) * HOURS == DUMMY_OFFSET);

//! Price and covariate standardisation schemes.
//!
//! The adaptive scheme rescales day `d` with the mean and population
//! standard deviation of the `24 * v` values of days `d-v..=d-1`:
//!
//! ```text
//! u[d][h] = (p[d][h] - mu[d]) / max(sigma[d], floor)
//! ```
//!
//! so day `d` never sees its own values. The median-arcsinh scheme is static:
//! it is fitted once on a training slice and applied unchanged.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::HOURS;

/// Lower bound applied to every scale estimate before dividing by it.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Consistency factor turning a median absolute deviation into a Gaussian
/// standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("window of {v} days needs more than {n_days} days of data")]
    WindowTooLarge { v: usize, n_days: usize },
    #[error("rolling window must be at least one day")]
    ZeroWindow,
    #[error("no standardisation parameters for day index {day}")]
    MissingParams { day: usize },
    #[error("training slice is empty")]
    EmptyTraining,
    #[error("outlier threshold must be positive, got {0}")]
    InvalidKappa(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Adaptive,
    MedianArcsinh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    Price,
    Exog1,
    Exog2,
}

/// Location and scale of one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayParams {
    pub mu: f64,
    pub sigma: f64,
}

impl DayParams {
    pub fn scale(&self, floor: f64) -> f64 {
        self.sigma.max(floor)
    }
}

/// Rolling per-day parameters. Entry `d` is `None` for the first `v` days.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveParams {
    window_v: usize,
    sigma_floor: f64,
    days: Vec<Option<DayParams>>,
}

impl AdaptiveParams {
    pub fn window_v(&self) -> usize {
        self.window_v
    }
    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }
    pub fn with_sigma_floor(mut self, floor: f64) -> Self {
        self.sigma_floor = floor;
        self
    }
    pub fn n_days(&self) -> usize {
        self.days.len()
    }
    pub fn get(&self, day: usize) -> Option<DayParams> {
        self.days.get(day).copied().flatten()
    }
    pub fn require(&self, day: usize) -> Result<DayParams, TransformError> {
        self.get(day).ok_or(TransformError::MissingParams { day })
    }
    pub fn iter(&self) -> impl Iterator<Item = Option<DayParams>> + '_ {
        self.days.iter().copied()
    }
}

/// Mean and population standard deviation of days `day-v..day` of
/// `series`. `day` may equal `series.nrows()`, giving the parameters of the
/// day after the series. `None` when fewer than `v` days precede `day`.
pub fn rolling_params(series: ArrayView2<'_, f64>, day: usize, v: usize) -> Option<DayParams> {
    if v == 0 || day < v || day > series.nrows() {
        return None;
    }
    let block = series.slice(ndarray::s![day - v..day, ..]);
    let n = (v * HOURS) as f64;
    let mu = block.iter().sum::<f64>() / n;
    let var = block.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>() / n;
    Some(DayParams {
        mu,
        sigma: var.sqrt(),
    })
}

fn check_window(n_days: usize, v: usize) -> Result<(), TransformError> {
    if v == 0 {
        return Err(TransformError::ZeroWindow);
    }
    if v >= n_days {
        return Err(TransformError::WindowTooLarge { v, n_days });
    }
    Ok(())
}

pub fn estimate_adaptive_params(
    series: ArrayView2<'_, f64>,
    v: usize,
) -> Result<AdaptiveParams, TransformError> {
    check_window(series.nrows(), v)?;
    let days = (0..series.nrows())
        .map(|d| rolling_params(series, d, v))
        .collect();
    Ok(AdaptiveParams {
        window_v: v,
        sigma_floor: SIGMA_FLOOR,
        days,
    })
}

/// Like [`estimate_adaptive_params`] with one extra entry for the day
/// after the series, whose parameters use only the series itself.
pub fn estimate_adaptive_params_ahead(
    series: ArrayView2<'_, f64>,
    v: usize,
) -> Result<AdaptiveParams, TransformError> {
    let mut p = estimate_adaptive_params(series, v)?;
    p.days.push(rolling_params(series, series.nrows(), v));
    Ok(p)
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Output of [`filter_outliers_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSeries {
    pub values: Array2<f64>,
    /// `(day, hour)` of every replaced cell.
    pub replaced: Vec<(usize, usize)>,
}

/// Replaces cells outside `mu[d] +- kappa * sigma[d]` by the median of the
/// previous `v` days. Bounds are inclusive; the first `v` days pass through.
pub fn filter_outliers(
    series: ArrayView2<'_, f64>,
    v: usize,
    kappa: f64,
) -> Result<Array2<f64>, TransformError> {
    filter_outliers_report(series, v, kappa).map(|f| f.values)
}

pub fn filter_outliers_report(
    series: ArrayView2<'_, f64>,
    v: usize,
    kappa: f64,
) -> Result<FilteredSeries, TransformError> {
    if !(kappa > 0.0) {
        return Err(TransformError::InvalidKappa(kappa));
    }
    check_window(series.nrows(), v)?;
    let mut values = series.to_owned();
    let mut replaced = Vec::new();
    let mut window = Vec::with_capacity(v * HOURS);
    for d in v..series.nrows() {
        let p = rolling_params(series, d, v).expect("d >= v");
        let (lo, hi) = (p.mu - kappa * p.sigma, p.mu + kappa * p.sigma);
        let mut median = None;
        for h in 0..HOURS {
            let x = series[[d, h]];
            if lo <= x && x <= hi {
                continue;
            }
            let m = *median.get_or_insert_with(|| {
                window.clear();
                window.extend(series.slice(ndarray::s![d - v..d, ..]).iter().copied());
                median_of(&mut window)
            });
            values[[d, h]] = m;
            replaced.push((d, h));
        }
    }
    Ok(FilteredSeries { values, replaced })
}

/// Static median / MAD parameters of the arcsinh scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcsinhParams {
    pub median: f64,
    /// `1.4826 * median(|x - median|)`.
    pub mad_scale: f64,
    pub sigma_floor: f64,
}

impl ArcsinhParams {
    pub fn fit(train: ArrayView2<'_, f64>) -> Result<Self, TransformError> {
        if train.is_empty() {
            return Err(TransformError::EmptyTraining);
        }
        let mut vals: Vec<f64> = train.iter().copied().collect();
        let median = median_of(&mut vals);
        for x in vals.iter_mut() {
            *x = (*x - median).abs();
        }
        let mad = median_of(&mut vals);
        Ok(Self {
            median,
            mad_scale: MAD_TO_SIGMA * mad,
            sigma_floor: SIGMA_FLOOR,
        })
    }

    pub fn scale(&self) -> f64 {
        self.mad_scale.max(self.sigma_floor)
    }

    pub fn forward(&self, x: f64) -> f64 {
        ((x - self.median) / self.scale()).asinh()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.median + self.scale() * y.sinh()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformParams {
    Adaptive(AdaptiveParams),
    Arcsinh(ArcsinhParams),
    Identity,
}

/// A dimensionless series together with what is needed to undo it.
///
/// Rows without parameters (adaptive warm-up) hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSeries {
    values: Array2<f64>,
    params: TransformParams,
    role: SourceRole,
}

impl TransformedSeries {
    /// Wraps already-dimensionless values.
    pub fn identity(values: Array2<f64>, role: SourceRole) -> Self {
        Self {
            values,
            params: TransformParams::Identity,
            role,
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
    pub fn params(&self) -> &TransformParams {
        &self.params
    }
    pub fn role(&self) -> SourceRole {
        self.role
    }
    pub fn with_role(mut self, role: SourceRole) -> Self {
        self.role = role;
        self
    }
    pub fn n_days(&self) -> usize {
        self.values.nrows()
    }

    pub fn scheme(&self) -> Scheme {
        match self.params {
            TransformParams::Adaptive(_) => Scheme::Adaptive,
            TransformParams::Arcsinh(_) => Scheme::MedianArcsinh,
            TransformParams::Identity => Scheme::Identity,
        }
    }

    /// First day index with values.
    pub fn first_available(&self) -> usize {
        match &self.params {
            TransformParams::Adaptive(p) => p.window_v(),
            _ => 0,
        }
    }

    pub fn is_available(&self, day: usize) -> bool {
        day < self.n_days() && day >= self.first_available()
    }

    /// Maps one day of transformed values back to original units.
    pub fn invert_day(
        &self,
        day: usize,
        u: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>, TransformError> {
        match &self.params {
            TransformParams::Adaptive(p) => Ok(invert_adaptive(u, p.require(day)?, p.sigma_floor())),
            TransformParams::Arcsinh(p) => Ok(u.mapv(|y| p.inverse(y))),
            TransformParams::Identity => Ok(u.to_owned()),
        }
    }

    /// Inverts every available day; warm-up rows stay NaN.
    pub fn invert(&self) -> Array2<f64> {
        let mut out = Array2::from_elem(self.values.raw_dim(), f64::NAN);
        for d in self.first_available()..self.n_days() {
            if let Ok(row) = self.invert_day(d, self.values.row(d)) {
                out.row_mut(d).assign(&row);
            }
        }
        out
    }
}

pub fn apply_adaptive(
    series: ArrayView2<'_, f64>,
    params: &AdaptiveParams,
) -> Result<TransformedSeries, TransformError> {
    if params.n_days() < series.nrows() {
        return Err(TransformError::MissingParams {
            day: params.n_days(),
        });
    }
    let floor = params.sigma_floor();
    let mut values = Array2::from_elem(series.raw_dim(), f64::NAN);
    for (d, (mut out, row)) in values
        .axis_iter_mut(Axis(0))
        .zip(series.axis_iter(Axis(0)))
        .enumerate()
    {
        match params.get(d) {
            Some(p) => {
                let scale = p.scale(floor);
                out.zip_mut_with(&row, |u, x| *u = (x - p.mu) / scale);
            }
            None if d < params.window_v() => {}
            None => return Err(TransformError::MissingParams { day: d }),
        }
    }
    Ok(TransformedSeries {
        values,
        params: TransformParams::Adaptive(params.clone()),
        role: SourceRole::Price,
    })
}

/// `p = mu + max(sigma, floor) * u`, one day.
pub fn invert_adaptive(u: ArrayView1<'_, f64>, params: DayParams, floor: f64) -> Array1<f64> {
    let scale = params.scale(floor);
    u.mapv(|x| params.mu + scale * x)
}

pub fn apply_median_arcsinh(
    series: ArrayView2<'_, f64>,
    train: ArrayView2<'_, f64>,
) -> Result<TransformedSeries, TransformError> {
    let params = ArcsinhParams::fit(train)?;
    Ok(apply_arcsinh_params(series, params))
}

pub fn apply_arcsinh_params(series: ArrayView2<'_, f64>, params: ArcsinhParams) -> TransformedSeries {
    TransformedSeries {
        values: series.mapv(|x| params.forward(x)),
        params: TransformParams::Arcsinh(params),
        role: SourceRole::Price,
    }
}

pub fn invert_median_arcsinh(y: ArrayView1<'_, f64>, params: &ArcsinhParams) -> Array1<f64> {
    y.mapv(|v| params.inverse(v))
}

/// Rolling standardisation of a covariate with its own rolling parameters.
pub fn standardise_exogenous(
    exog: ArrayView2<'_, f64>,
    v: usize,
) -> Result<TransformedSeries, TransformError> {
    let params = estimate_adaptive_params(exog, v)?;
    apply_adaptive(exog, &params)
}

/// Rolling standardisation of a covariate with the price's parameters.
pub fn standardise_exogenous_with(
    exog: ArrayView2<'_, f64>,
    price_params: &AdaptiveParams,
) -> Result<TransformedSeries, TransformError> {
    apply_adaptive(exog, price_params)
}

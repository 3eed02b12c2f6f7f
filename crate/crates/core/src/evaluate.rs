//! Accuracy metrics, ensembles, performance ratios and the multivariate
//! Diebold-Mariano test.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::dataio::{MarketDataset, HOURS};
use crate::forecast::{ForecastTable, TableError};

/// Lag of the naive benchmark in days.
pub const NAIVE_LAG: usize = 7;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("date mismatch: {0}")]
    DateMismatch(String),
    #[error("no price {NAIVE_LAG} days before {0} for the naive benchmark")]
    MissingNaiveHistory(NaiveDate),
    #[error("the naive benchmark is exact on every forecast day; rMAE is undefined")]
    ZeroNaiveError,
    #[error("loss differential of {a} vs {b} has zero variance over {n} days")]
    DegenerateVariance { a: String, b: String, n: usize },
    #[error("need at least {needed} inputs, got {got}")]
    TooFewInputs { needed: usize, got: usize },
    #[error("{metric} of `{label}` is zero; ratio undefined")]
    DivisionByZero { metric: &'static str, label: String },
    #[error("forecast table is empty")]
    Empty,
    #[error(transparent)]
    Table(#[from] TableError),
}

impl EvalError {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, EvalError::DegenerateVariance { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyMae {
    /// `YYYY-MM`.
    pub month: String,
    pub n_days: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
    pub rmae: f64,
    pub n_days: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monthly: Option<Vec<MonthlyMae>>,
}

impl MetricsReport {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Smape => self.smape,
            Metric::Rmae => self.rmae,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Mae,
    Rmse,
    Smape,
    Rmae,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Smape, Metric::Rmae];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Smape => "sMAPE",
            Metric::Rmae => "rMAE",
        }
    }
}

/// Actual and naive rows aligned with a forecast table.
struct Aligned<'a> {
    forecast: &'a ForecastTable,
    actual: Vec<ArrayView1<'a, f64>>,
    naive: Vec<Option<ArrayView1<'a, f64>>>,
}

fn align<'a>(t: &'a ForecastTable, ds: &'a MarketDataset) -> Result<Aligned<'a>, EvalError> {
    if t.n_days() == 0 {
        return Err(EvalError::Empty);
    }
    let price = ds.price();
    let mut actual = Vec::with_capacity(t.n_days());
    let mut naive = Vec::with_capacity(t.n_days());
    for &d in t.dates() {
        let i = ds.index_of(d).ok_or_else(|| {
            EvalError::DateMismatch(format!("forecast date {d} is not in the dataset"))
        })?;
        actual.push(price.index_axis_move(Axis(0), i));
        naive.push((i >= NAIVE_LAG).then(|| price.index_axis_move(Axis(0), i - NAIVE_LAG)));
    }
    Ok(Aligned {
        forecast: t,
        actual,
        naive,
    })
}

fn smape_term(p: f64, f: f64) -> f64 {
    let den = p.abs() + f.abs();
    if den == 0.0 {
        0.0
    } else {
        2.0 * (p - f).abs() / den
    }
}

pub fn compute_metrics(forecasts: &ForecastTable, ds: &MarketDataset) -> Result<MetricsReport, EvalError> {
    let a = align(forecasts, ds)?;
    let (mut abs, mut sq, mut sm, mut naive_abs) = (0.0, 0.0, 0.0, 0.0);
    for (i, (act, naive)) in a.actual.iter().zip(&a.naive).enumerate() {
        let naive = naive.ok_or(EvalError::MissingNaiveHistory(a.forecast.dates()[i]))?;
        for h in 0..HOURS {
            let (p, f) = (act[h], a.forecast.row(i)[h]);
            let e = p - f;
            abs += e.abs();
            sq += e * e;
            sm += smape_term(p, f);
            naive_abs += (p - naive[h]).abs();
        }
    }
    if naive_abs == 0.0 {
        return Err(EvalError::ZeroNaiveError);
    }
    let cells = (forecasts.n_days() * HOURS) as f64;
    Ok(MetricsReport {
        label: forecasts.label().to_string(),
        mae: abs / cells,
        rmse: (sq / cells).sqrt(),
        smape: sm / cells,
        rmae: abs / naive_abs,
        n_days: forecasts.n_days(),
        monthly: None,
    })
}

/// [`compute_metrics`] plus the monthly MAE breakdown.
pub fn compute_metrics_monthly(forecasts: &ForecastTable, ds: &MarketDataset) -> Result<MetricsReport, EvalError> {
    let mut r = compute_metrics(forecasts, ds)?;
    r.monthly = Some(monthly_mae(forecasts, ds)?);
    Ok(r)
}

/// MAE per calendar month of the forecast dates, months ascending.
pub fn monthly_mae(forecasts: &ForecastTable, ds: &MarketDataset) -> Result<Vec<MonthlyMae>, EvalError> {
    let a = align(forecasts, ds)?;
    let mut out: Vec<(i32, u32, usize, f64)> = Vec::new();
    for (i, act) in a.actual.iter().enumerate() {
        let d = forecasts.dates()[i];
        let err: f64 = (0..HOURS).map(|h| (act[h] - forecasts.row(i)[h]).abs()).sum();
        match out.last_mut() {
            Some(m) if m.0 == d.year() && m.1 == d.month() => {
                m.2 += 1;
                m.3 += err;
            }
            _ => out.push((d.year(), d.month(), 1, err)),
        }
    }
    Ok(out
        .into_iter()
        .map(|(y, m, n, s)| MonthlyMae {
            month: format!("{y:04}-{m:02}"),
            n_days: n,
            mae: s / (n * HOURS) as f64,
        })
        .collect())
}

fn check_same_dates(tables: &[&ForecastTable]) -> Result<(), EvalError> {
    let first = tables[0];
    for t in &tables[1..] {
        if t.dates() != first.dates() {
            return Err(EvalError::DateMismatch(format!(
                "`{}` covers {} days from {:?}, `{}` covers {} days from {:?}",
                first.label(),
                first.n_days(),
                first.dates().first(),
                t.label(),
                t.n_days(),
                t.dates().first()
            )));
        }
    }
    Ok(())
}

/// Cell-wise arithmetic mean; the label joins the input labels with `+`.
pub fn ensemble_mean(tables: &[&ForecastTable]) -> Result<ForecastTable, EvalError> {
    let label = tables.iter().map(|t| t.label()).collect::<Vec<_>>().join("+");
    ensemble_mean_labeled(tables, label)
}

pub fn ensemble_mean_labeled(tables: &[&ForecastTable], label: impl Into<String>) -> Result<ForecastTable, EvalError> {
    if tables.len() < 2 {
        return Err(EvalError::TooFewInputs {
            needed: 2,
            got: tables.len(),
        });
    }
    check_same_dates(tables)?;
    let n = tables[0].n_days();
    let k = tables.len() as f64;
    let mut cell = vec![0.0; tables.len()];
    let values = Array2::from_shape_fn((n, HOURS), |(d, h)| {
        for (c, t) in cell.iter_mut().zip(tables) {
            *c = t.values()[[d, h]];
        }
        // fixed summation order regardless of input order
        cell.sort_by(|a, b| a.total_cmp(b));
        cell.iter().sum::<f64>() / k
    });
    Ok(ForecastTable::new(label, tables[0].dates().to_vec(), values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmOutcome {
    pub model_a_label: String,
    pub model_b_label: String,
    pub dm_statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl DmOutcome {
    /// True when the null is rejected at `alpha`, i.e. B is significantly
    /// more accurate than A.
    pub fn b_better(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("outcome serializes")
    }
}

/// Standard normal upper tail `1 - Phi(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Daily differential of mean absolute errors, A minus B.
pub fn loss_differentials(
    a: &ForecastTable,
    b: &ForecastTable,
    ds: &MarketDataset,
) -> Result<Vec<f64>, EvalError> {
    check_same_dates(&[a, b])?;
    let al = align(a, ds)?;
    Ok(al
        .actual
        .iter()
        .enumerate()
        .map(|(i, act)| {
            let (ra, rb) = (a.row(i), b.row(i));
            let la: f64 = (0..HOURS).map(|h| (act[h] - ra[h]).abs()).sum::<f64>() / HOURS as f64;
            let lb: f64 = (0..HOURS).map(|h| (act[h] - rb[h]).abs()).sum::<f64>() / HOURS as f64;
            la - lb
        })
        .collect())
}

/// `sqrt(N) * mean / sd` with the sample standard deviation, and its
/// one-sided p-value. `None` when the deviation is zero or `N < 2`.
pub fn dm_statistic(delta: &[f64]) -> Option<(f64, f64)> {
    let n = delta.len();
    if n < 2 {
        return None;
    }
    let mean = delta.iter().sum::<f64>() / n as f64;
    let var = delta.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let dm = (n as f64).sqrt() * mean / sd;
    Some((dm, normal_sf(dm)))
}

/// Tests H0: A is at least as accurate as B, on daily loss vectors.
pub fn dm_test_multivariate(
    a: &ForecastTable,
    b: &ForecastTable,
    ds: &MarketDataset,
) -> Result<DmOutcome, EvalError> {
    let delta = loss_differentials(a, b, ds)?;
    let (dm, p) = dm_statistic(&delta).ok_or_else(|| EvalError::DegenerateVariance {
        a: a.label().to_string(),
        b: b.label().to_string(),
        n: delta.len(),
    })?;
    Ok(DmOutcome {
        model_a_label: a.label().to_string(),
        model_b_label: b.label().to_string(),
        dm_statistic: dm,
        p_value: p,
        n: delta.len(),
    })
}

/// Metric of X divided by the same metric of Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRatio {
    pub label_x: String,
    pub label_y: String,
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
    pub rmae: f64,
}

impl PerformanceRatio {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Smape => self.smape,
            Metric::Rmae => self.rmae,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("ratio serializes")
    }
}

pub fn performance_ratio(x: &MetricsReport, y: &MetricsReport) -> Result<PerformanceRatio, EvalError> {
    let div = |m: Metric| {
        let den = y.metric(m);
        if den == 0.0 {
            Err(EvalError::DivisionByZero {
                metric: m.name(),
                label: y.label.clone(),
            })
        } else {
            Ok(x.metric(m) / den)
        }
    };
    Ok(PerformanceRatio {
        label_x: x.label.clone(),
        label_y: y.label.clone(),
        mae: div(Metric::Mae)?,
        rmse: div(Metric::Rmse)?,
        smape: div(Metric::Smape)?,
        rmae: div(Metric::Rmae)?,
    })
}

/// Ratios per market and calibration window, laid out with one row per
/// metric and one column per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub columns: Vec<String>,
    pub markets: Vec<(String, Vec<Option<PerformanceRatio>>)>,
}

impl RatioTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            markets: Vec::new(),
        }
    }

    pub fn push(&mut self, market: impl Into<String>, ratios: Vec<Option<PerformanceRatio>>) {
        assert_eq!(ratios.len(), self.columns.len(), "one ratio per column");
        self.markets.push((market.into(), ratios));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10} {:<7}", "Market", "Metric");
        for c in &self.columns {
            let _ = write!(out, " {c:>10}");
        }
        out.push('\n');
        for (market, ratios) in &self.markets {
            for (k, m) in Metric::ALL.iter().enumerate() {
                let name = if k == 0 { market.as_str() } else { "" };
                let _ = write!(out, "{name:<10} {:<7}", m.name());
                for r in ratios {
                    match r {
                        Some(r) => {
                            let _ = write!(out, " {:>10.4}", r.metric(*m));
                        }
                        None => {
                            let _ = write!(out, " {:>10}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Aligned terminal table of metric reports.
pub fn render_metrics_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
        "model", "MAE", "RMSE", "sMAPE", "rMAE", "days"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$} {:>10.4} {:>10.4} {:>10.5} {:>10.4} {:>6}",
            r.label, r.mae, r.rmse, r.smape, r.rmae, r.n_days
        );
    }
    out
}

/// Aligned monthly MAE table, one column per report.
pub fn render_monthly_table(reports: &[MetricsReport]) -> String {
    let mut months: Vec<String> = reports
        .iter()
        .filter_map(|r| r.monthly.as_ref())
        .flatten()
        .map(|m| m.month.clone())
        .collect();
    months.sort();
    months.dedup();
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<8}", "month");
    for r in reports {
        let _ = write!(out, " {:>width$}", r.label);
    }
    out.push('\n');
    for month in &months {
        let _ = write!(out, "{month:<8}");
        for r in reports {
            let v = r
                .monthly
                .as_ref()
                .and_then(|ms| ms.iter().find(|m| &m.month == month))
                .map(|m| format!("{:.4}", m.mae))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {v:>width$}");
        }
        out.push('\n');
    }
    out
}

pub fn render_dm(o: &DmOutcome) -> String {
    let mut out = format!(
        "A = {}\nB = {}\nN = {}\nDM = {:.6}\np-value = {:.6}\n",
        o.model_a_label, o.model_b_label, o.n, o.dm_statistic, o.p_value
    );
    for alpha in [0.01, 0.05, 0.10] {
        let verdict = if o.b_better(alpha) {
            "B better than A"
        } else {
            "no significant difference"
        };
        let _ = writeln!(out, "alpha {alpha:.2}: {verdict}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TestPeriod;
    use approx::assert_abs_diff_eq;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn dataset(first: NaiveDate, price: Array2<f64>, test_start: usize) -> MarketDataset {
        let n = price.nrows();
        let days: Vec<NaiveDate> = (0..n).map(|i| first + chrono::Duration::days(i as i64)).collect();
        MarketDataset::new(
            crate::dataio::MarketId::Custom,
            first,
            price.clone(),
            price.clone(),
            price,
            TestPeriod::new(days[test_start], days[n - 1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_worked_single_day() {
        let mut price = Array2::from_elem((15, HOURS), 100.0);
        price.row_mut(7).fill(90.0);
        let ds = dataset(d(2022, 1, 1), price, 14);
        let t = ForecastTable::new("m", vec![d(2022, 1, 15)], Array2::from_elem((1, HOURS), 110.0)).unwrap();
        let r = compute_metrics(&t, &ds).unwrap();
        assert_eq!(r.mae, 10.0);
        assert_eq!(r.rmse, 10.0);
        assert_abs_diff_eq!(r.smape, 20.0 / 210.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.smape, 0.09524, epsilon = 5e-6);
        assert_eq!(r.rmae, 1.0);
    }

    #[test]
    fn smape_zero_over_zero() {
        assert_eq!(smape_term(0.0, 0.0), 0.0);
        assert_eq!(smape_term(0.0, 1.0), 2.0);
    }

    #[test]
    fn naive_history_required() {
        let price = Array2::from_shape_fn((20, HOURS), |(i, h)| (i * 3 + h) as f64);
        let ds = dataset(d(2022, 1, 1), price, 14);
        let t = ForecastTable::new("m", vec![d(2022, 1, 3)], Array2::zeros((1, HOURS))).unwrap();
        assert!(matches!(compute_metrics(&t, &ds), Err(EvalError::MissingNaiveHistory(_))));
        let t = ForecastTable::new("m", vec![d(2023, 1, 3)], Array2::zeros((1, HOURS))).unwrap();
        assert!(matches!(compute_metrics(&t, &ds), Err(EvalError::DateMismatch(_))));
    }

    #[test]
    fn monthly_weighted_oracle() {
        // January (31 days) with error 1, February (28 days) with error 3
        let first = d(2021, 12, 1);
        let n = 31 + 31 + 28;
        let price = Array2::from_shape_fn((n, HOURS), |(i, h)| (i * 7 + h * 3) as f64);
        let ds = dataset(first, price.clone(), 31);
        let dates: Vec<NaiveDate> = (31..n).map(|i| first + chrono::Duration::days(i as i64)).collect();
        let fc = Array2::from_shape_fn((n - 31, HOURS), |(i, h)| {
            price[[i + 31, h]] + if i < 31 { 1.0 } else { -3.0 }
        });
        let t = ForecastTable::new("m", dates, fc).unwrap();
        let m = monthly_mae(&t, &ds).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].month, "2022-01");
        assert_eq!((m[0].mae, m[1].mae), (1.0, 3.0));
        let r = compute_metrics(&t, &ds).unwrap();
        assert_abs_diff_eq!(r.mae, (31.0 + 3.0 * 28.0) / 59.0, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_basics() {
        let dates = vec![d(2022, 1, 1), d(2022, 1, 2)];
        let a = ForecastTable::new("a", dates.clone(), Array2::from_elem((2, HOURS), 10.0)).unwrap();
        let b = ForecastTable::new("b", dates.clone(), Array2::from_elem((2, HOURS), 20.0)).unwrap();
        let e = ensemble_mean(&[&a, &b]).unwrap();
        assert_eq!(e.label(), "a+b");
        assert!(e.values().iter().all(|&v| v == 15.0));
        assert_eq!(ensemble_mean(&[&a, &a]).unwrap().values(), a.values());
        assert!(matches!(ensemble_mean(&[&a]), Err(EvalError::TooFewInputs { .. })));
        let c = ForecastTable::new("c", vec![d(2022, 1, 1)], Array2::zeros((1, HOURS))).unwrap();
        assert!(matches!(ensemble_mean(&[&a, &c]), Err(EvalError::DateMismatch(_))));
    }

    #[test]
    fn dm_p_value_at_critical_point() {
        // mean/sd = 1.645 / sqrt(N) with alternating deviations
        let n = 400usize;
        let sd_target = 1.0;
        let mean = 1.645 / (n as f64).sqrt();
        // +-s alternating has sample sd s * sqrt(n / (n - 1))
        let s = sd_target * (((n - 1) as f64) / n as f64).sqrt();
        let delta: Vec<f64> = (0..n).map(|i| mean + if i % 2 == 0 { s } else { -s }).collect();
        let (dm, p) = dm_statistic(&delta).unwrap();
        assert_abs_diff_eq!(dm, 1.645, epsilon = 1e-9);
        assert_abs_diff_eq!(p, 0.05, epsilon = 1e-4);
    }

    #[test]
    fn ratio_and_division_by_zero() {
        let r = |mae: f64| MetricsReport {
            label: format!("m{mae}"),
            mae,
            rmse: 2.0,
            smape: 0.1,
            rmae: 0.5,
            n_days: 1,
            monthly: None,
        };
        let x = performance_ratio(&r(20.0), &r(18.27)).unwrap();
        assert_abs_diff_eq!(x.mae, 1.0947, epsilon = 1e-4);
        assert_eq!(x.rmse, 1.0);
        assert!(matches!(
            performance_ratio(&r(1.0), &r(0.0)),
            Err(EvalError::DivisionByZero { metric: "MAE", .. })
        ));
    }

    #[test]
    fn ratio_table_layout() {
        let mut t = RatioTable::new(vec!["56".into(), "84".into()]);
        let p = PerformanceRatio {
            label_x: "x".into(),
            label_y: "y".into(),
            mae: 1.0,
            rmse: 2.4396,
            smape: 1.0,
            rmae: 1.0,
        };
        t.push("EPEX-BE", vec![Some(p), None]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[2].contains("RMSE") && lines[2].contains("2.4396"));
        assert!(lines[1].starts_with("EPEX-BE"));
    }
}

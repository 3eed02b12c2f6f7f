//! Hourly market data ingestion.
//!
//! A dataset on disk is a CSV with the columns `timestamp,price,exog1,exog2`
//! where timestamps are local trading-calendar hours. After loading, every
//! calendar day holds exactly 24 values per variable:
//!
//! * a 23-hour day (spring DST change) gets its missing hour linearly
//!   interpolated from the neighbouring hours,
//! * a 25-hour day (autumn DST change) has its duplicated hour averaged,
//! * isolated missing cells (runs shorter than [`MAX_INTERPOLATED_RUN`] + 1)
//!   are interpolated, longer runs and missing calendar days are rejected.
//!
//! An optional key-value manifest next to the CSV (same stem, `.manifest`
//! extension) may declare `market_id`, `test_start` and `test_end`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hours in a trading day after DST normalisation.
pub const HOURS: usize = 24;

/// Days that must precede the first test day: lag depth 7 plus a 7-day
/// standardisation window.
pub const MIN_HISTORY_DAYS: usize = 14;

/// Longest run of consecutive missing hourly cells that is repaired by
/// interpolation.
pub const MAX_INTERPOLATED_RUN: usize = 2;

pub const CSV_COLUMNS: [&str; 4] = ["timestamp", "price", "exog1", "exog2"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("gap in data at {date}: {detail}")]
    Gap { date: NaiveDate, detail: String },
    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },
    #[error("insufficient history for {target}: need {needed} prior days, have {available}")]
    InsufficientHistory {
        target: NaiveDate,
        needed: usize,
        available: usize,
    },
    #[error("date {0} is not covered by the dataset")]
    UnknownDate(NaiveDate),
    #[error("unknown market id `{0}`")]
    UnknownMarket(String),
    #[error("no test period declared for market {0}; pass one explicitly or add a manifest")]
    MissingTestPeriod(MarketId),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl DataError {
    /// True for errors caused by the content of the data rather than by I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, DataError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarketId {
    #[serde(rename = "OMIE-SP")]
    OmieSp,
    #[serde(rename = "EPEX-DE")]
    EpexDe,
    #[serde(rename = "EPEX-BE")]
    EpexBe,
    #[serde(rename = "EPEX-FR")]
    EpexFr,
    #[serde(rename = "NP")]
    Np,
    #[serde(rename = "custom")]
    Custom,
}

impl MarketId {
    pub const NAMED: [MarketId; 5] = [
        MarketId::OmieSp,
        MarketId::EpexDe,
        MarketId::EpexBe,
        MarketId::EpexFr,
        MarketId::Np,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MarketId::OmieSp => "OMIE-SP",
            MarketId::EpexDe => "EPEX-DE",
            MarketId::EpexBe => "EPEX-BE",
            MarketId::EpexFr => "EPEX-FR",
            MarketId::Np => "NP",
            MarketId::Custom => "custom",
        }
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarketId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "OMIESP" => Ok(MarketId::OmieSp),
            "EPEXDE" => Ok(MarketId::EpexDe),
            "EPEXBE" => Ok(MarketId::EpexBe),
            "EPEXFR" => Ok(MarketId::EpexFr),
            "NP" => Ok(MarketId::Np),
            "CUSTOM" => Ok(MarketId::Custom),
            _ => Err(DataError::UnknownMarket(s.to_string())),
        }
    }
}

/// Inclusive range of forecast days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPeriod {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TestPeriod {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        if start > end {
            return Err(DataError::Invalid(format!(
                "test period start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn n_days(&self) -> usize {
        ((self.end - self.start).num_days() + 1) as usize
    }
}

/// Test period and calibration windows of one of the five reference markets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetRegistryEntry {
    pub market_id: MarketId,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub short_windows: [usize; 2],
    pub long_windows: [usize; 2],
}

impl DatasetRegistryEntry {
    pub fn test_period(&self) -> TestPeriod {
        TestPeriod {
            start: self.test_start,
            end: self.test_end,
        }
    }

    /// Short windows followed by long windows, ascending.
    pub fn windows(&self) -> [usize; 4] {
        [
            self.short_windows[0],
            self.short_windows[1],
            self.long_windows[0],
            self.long_windows[1],
        ]
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid registry date")
}

pub fn registry_entry(market: MarketId) -> Option<DatasetRegistryEntry> {
    const SHORT: [usize; 2] = [56, 84];
    let (start, end, long) = match market {
        MarketId::OmieSp | MarketId::EpexDe => (ymd(2022, 1, 1), ymd(2023, 5, 31), [364, 728]),
        MarketId::EpexBe | MarketId::EpexFr => (ymd(2015, 1, 4), ymd(2016, 12, 31), [1092, 1456]),
        MarketId::Np => (ymd(2016, 12, 27), ymd(2018, 12, 24), [1092, 1456]),
        MarketId::Custom => return None,
    };
    Some(DatasetRegistryEntry {
        market_id: market,
        test_start: start,
        test_end: end,
        short_windows: SHORT,
        long_windows: long,
    })
}

pub fn registry() -> Vec<DatasetRegistryEntry> {
    MarketId::NAMED
        .iter()
        .filter_map(|m| registry_entry(*m))
        .collect()
}

/// Aligned daily matrices of price and the two exogenous series.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    market_id: MarketId,
    days: Vec<NaiveDate>,
    price: Array2<f64>,
    exog1: Array2<f64>,
    exog2: Array2<f64>,
    day_of_week: Vec<u8>,
    test: TestPeriod,
}

impl MarketDataset {
    /// Builds a dataset from daily matrices, checking every invariant.
    pub fn new(
        market_id: MarketId,
        first_day: NaiveDate,
        price: Array2<f64>,
        exog1: Array2<f64>,
        exog2: Array2<f64>,
        test: TestPeriod,
    ) -> Result<Self, DataError> {
        let n = price.nrows();
        for (name, m) in [("price", &price), ("exog1", &exog1), ("exog2", &exog2)] {
            if m.nrows() != n || m.ncols() != HOURS {
                return Err(DataError::Invalid(format!(
                    "{name} has shape {}x{}, expected {n}x{HOURS}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                let date = first_day + Duration::days((pos / HOURS) as i64);
                return Err(DataError::Gap {
                    date,
                    detail: format!("{name} hour {} is not finite", pos % HOURS),
                });
            }
        }
        if n == 0 {
            return Err(DataError::Invalid("dataset has no days".into()));
        }
        let days: Vec<NaiveDate> = (0..n)
            .map(|i| first_day + Duration::days(i as i64))
            .collect();
        let day_of_week = days
            .iter()
            .map(|d| d.weekday().number_from_monday() as u8)
            .collect();
        let ds = Self {
            market_id,
            days,
            price,
            exog1,
            exog2,
            day_of_week,
            test,
        };
        ds.check_test_period()?;
        Ok(ds)
    }

    fn check_test_period(&self) -> Result<(), DataError> {
        let (first, last) = (self.first_day(), self.last_day());
        let TestPeriod { start, end } = self.test;
        if start > end || start < first || end > last {
            return Err(DataError::Invalid(format!(
                "test period {start}..{end} is not inside the data span {first}..{last}"
            )));
        }
        let before = (start - first).num_days() as usize;
        if before < MIN_HISTORY_DAYS {
            return Err(DataError::InsufficientHistory {
                target: start,
                needed: MIN_HISTORY_DAYS,
                available: before,
            });
        }
        Ok(())
    }

    /// Returns a copy with a different test period.
    pub fn with_test_period(&self, test: TestPeriod) -> Result<Self, DataError> {
        let mut ds = self.clone();
        ds.test = test;
        ds.check_test_period()?;
        Ok(ds)
    }

    /// Returns a copy with a different market id.
    pub fn with_market_id(mut self, market_id: MarketId) -> Self {
        self.market_id = market_id;
        self
    }

    pub fn market_id(&self) -> MarketId {
        self.market_id
    }
    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }
    pub fn n_days(&self) -> usize {
        self.days.len()
    }
    pub fn first_day(&self) -> NaiveDate {
        self.days[0]
    }
    pub fn last_day(&self) -> NaiveDate {
        self.days[self.days.len() - 1]
    }
    pub fn price(&self) -> ArrayView2<'_, f64> {
        self.price.view()
    }
    pub fn exog1(&self) -> ArrayView2<'_, f64> {
        self.exog1.view()
    }
    pub fn exog2(&self) -> ArrayView2<'_, f64> {
        self.exog2.view()
    }
    /// ISO weekday per day, Monday = 1.
    pub fn day_of_week(&self) -> &[u8] {
        &self.day_of_week
    }
    pub fn test_period(&self) -> TestPeriod {
        self.test
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.first_day()).num_days();
        (off >= 0 && (off as usize) < self.days.len()).then_some(off as usize)
    }

    pub fn require_index(&self, date: NaiveDate) -> Result<usize, DataError> {
        self.index_of(date).ok_or(DataError::UnknownDate(date))
    }

    /// Day indices of the test period, ascending.
    pub fn test_indices(&self) -> std::ops::RangeInclusive<usize> {
        let s = self.index_of(self.test.start).expect("checked at construction");
        let e = self.index_of(self.test.end).expect("checked at construction");
        s..=e
    }

    /// Truncates the data after `last` (inclusive) keeping the test period
    /// valid. Used for desk-scale runs.
    pub fn truncate_to(&self, last: NaiveDate) -> Result<Self, DataError> {
        let end = self.require_index(last)?;
        let test = TestPeriod {
            start: self.test.start,
            end: self.test.end.min(last),
        };
        Self::new(
            self.market_id,
            self.first_day(),
            self.price.slice(s![..=end, ..]).to_owned(),
            self.exog1.slice(s![..=end, ..]).to_owned(),
            self.exog2.slice(s![..=end, ..]).to_owned(),
            test,
        )
    }

    /// Replaces the price matrix, keeping everything else.
    pub fn with_price(&self, price: Array2<f64>) -> Result<Self, DataError> {
        Self::new(
            self.market_id,
            self.first_day(),
            price,
            self.exog1.clone(),
            self.exog2.clone(),
            self.test,
        )
    }

    /// Replaces both exogenous matrices, keeping everything else.
    pub fn with_exog(&self, exog1: Array2<f64>, exog2: Array2<f64>) -> Result<Self, DataError> {
        Self::new(
            self.market_id,
            self.first_day(),
            self.price.clone(),
            exog1,
            exog2,
            self.test,
        )
    }

    /// Writes the hourly CSV (24 rows per day, no DST irregularities).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| DataError::Io {
            path: PathBuf::from("<csv writer>"),
            source: std::io::Error::other(e),
        };
        w.write_record(CSV_COLUMNS).map_err(io_err)?;
        for (i, day) in self.days.iter().enumerate() {
            for h in 0..HOURS {
                let ts = day.and_hms_opt(h as u32, 0, 0).expect("valid hour");
                w.write_record([
                    ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                    self.price[[i, h]].to_string(),
                    self.exog1[[i, h]].to_string(),
                    self.exog2[[i, h]].to_string(),
                ])
                .map_err(io_err)?;
            }
        }
        w.flush().map_err(|e| DataError::Io {
            path: PathBuf::from("<csv writer>"),
            source: e,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Writes a manifest next to `csv_path` declaring this dataset's market
    /// and test period.
    pub fn save_manifest(&self, csv_path: &Path) -> Result<PathBuf, DataError> {
        let path = manifest_path_for(csv_path);
        let text = format!(
            "market_id = {}\ntest_start = {}\ntest_end = {}\n",
            self.market_id, self.test.start, self.test.end
        );
        fs::write(&path, text).map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Repairs performed while loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Days that had fewer than 24 distinct hours (spring DST change).
    pub short_days: Vec<NaiveDate>,
    /// Days with a duplicated hour (autumn DST change).
    pub long_days: Vec<NaiveDate>,
    /// Cells filled by linear interpolation, all variables.
    pub interpolated_cells: usize,
    /// Cells obtained by averaging duplicated hours, all variables.
    pub averaged_cells: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Market id; falls back to the manifest, then to `custom`.
    pub market: Option<MarketId>,
    /// Overrides manifest and registry.
    pub test_period: Option<TestPeriod>,
    /// Explicit manifest path; otherwise `<csv stem>.manifest` is used if present.
    pub manifest: Option<PathBuf>,
}

/// Contents of a dataset manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub market_id: Option<MarketId>,
    pub test_start: Option<NaiveDate>,
    pub test_end: Option<NaiveDate>,
}

pub fn manifest_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest")
}

/// Parses `key = value` (or `key: value`) lines; `#` starts a comment.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest, DataError> {
    let mut m = DatasetManifest::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| DataError::Parse {
                line: i as u64 + 1,
                detail: format!("manifest line `{line}` is not key = value"),
            })?;
        let value = value.trim();
        let date = |v: &str| {
            NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|e| DataError::Parse {
                line: i as u64 + 1,
                detail: format!("bad date `{v}`: {e}"),
            })
        };
        match key.trim() {
            "market_id" => m.market_id = Some(value.parse()?),
            "test_start" => m.test_start = Some(date(value)?),
            "test_end" => m.test_end = Some(date(value)?),
            other => log::warn!("ignoring unknown manifest key `{other}`"),
        }
    }
    Ok(m)
}

/// Loads a dataset using the registry (or sibling manifest) test period.
pub fn load_dataset(path: &Path, market: MarketId) -> Result<MarketDataset, DataError> {
    let opts = LoadOptions {
        market: Some(market),
        ..Default::default()
    };
    load_dataset_with(path, &opts).map(|(ds, _)| ds)
}

pub fn load_dataset_with(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(MarketDataset, LoadReport), DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let frame = read_hourly_csv(std::io::BufReader::new(file))?;

    let manifest_path = opts
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(path));
    let manifest = match fs::read_to_string(&manifest_path) {
        Ok(text) => parse_manifest(&text)?,
        Err(e) if opts.manifest.is_none() && e.kind() == std::io::ErrorKind::NotFound => {
            DatasetManifest::default()
        }
        Err(source) => {
            return Err(DataError::Io {
                path: manifest_path,
                source,
            })
        }
    };

    let market = opts
        .market
        .or(manifest.market_id)
        .unwrap_or(MarketId::Custom);
    let test = resolve_test_period(market, opts.test_period, &manifest)?;
    frame.into_dataset(market, test)
}

fn resolve_test_period(
    market: MarketId,
    explicit: Option<TestPeriod>,
    manifest: &DatasetManifest,
) -> Result<TestPeriod, DataError> {
    if let Some(tp) = explicit {
        return Ok(tp);
    }
    let registry = registry_entry(market).map(|e| e.test_period());
    let start = manifest.test_start.or(registry.map(|r| r.start));
    let end = manifest.test_end.or(registry.map(|r| r.end));
    match (start, end) {
        (Some(s), Some(e)) => TestPeriod::new(s, e),
        _ => Err(DataError::MissingTestPeriod(market)),
    }
}

/// Parsed hourly rows grouped per day, before gap repair.
#[derive(Debug, Clone)]
pub struct HourlyFrame {
    first_day: NaiveDate,
    /// Flattened `[day * 24 + hour]` cells, NaN where missing.
    cells: [Vec<f64>; 3],
    report: LoadReport,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    n: u32,
}

const ROLES: [&str; 3] = ["price", "exog1", "exog2"];

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%dT%H:%M%:z", "%Y-%m-%d %H:%M%:z"] {
        if let Ok(dt) = DateTime::parse_from_str(raw, fmt) {
            return Some(dt.naive_local());
        }
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    None
}

/// Reads and groups hourly rows. Does not require a test period.
pub fn read_hourly_csv<R: Read>(reader: R) -> Result<HourlyFrame, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Schema(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let mut idx = [0usize; 4];
    for (k, col) in CSV_COLUMNS.iter().enumerate() {
        idx[k] = names.iter().position(|n| n == col).ok_or_else(|| {
            DataError::Schema(format!(
                "missing column `{col}`; expected header {}",
                CSV_COLUMNS.join(",")
            ))
        })?;
    }
    if names.len() != CSV_COLUMNS.len() {
        return Err(DataError::Schema(format!(
            "expected exactly the columns {}, found {}",
            CSV_COLUMNS.join(","),
            names.join(",")
        )));
    }

    let mut per_day: BTreeMap<NaiveDate, [[Acc; HOURS]; 3]> = BTreeMap::new();
    let mut rows_per_hour: BTreeMap<NaiveDate, [u32; HOURS]> = BTreeMap::new();
    let mut prev: Option<NaiveDateTime> = None;
    let mut rows_read = 0usize;

    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            detail: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows_read += 1;
        let ts_raw = &rec[idx[0]];
        let ts = parse_timestamp(ts_raw).ok_or_else(|| DataError::Parse {
            line,
            detail: format!("malformed timestamp `{ts_raw}`"),
        })?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(DataError::Parse {
                line,
                detail: format!("timestamp `{ts_raw}` is not on an hour boundary"),
            });
        }
        if let Some(p) = prev {
            if ts < p {
                return Err(DataError::Parse {
                    line,
                    detail: format!("rows not sorted ascending: `{ts_raw}` follows {p}"),
                });
            }
        }
        prev = Some(ts);

        let date = ts.date();
        let hour = ts.hour() as usize;
        let accs = per_day.entry(date).or_insert([[Acc::default(); HOURS]; 3]);
        rows_per_hour.entry(date).or_insert([0; HOURS])[hour] += 1;
        for (k, acc) in accs.iter_mut().enumerate() {
            let field = &rec[idx[k + 1]];
            if field.is_empty() || field.eq_ignore_ascii_case("nan") || field.eq_ignore_ascii_case("na")
            {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| DataError::Parse {
                line,
                detail: format!("malformed {} value `{field}`", ROLES[k]),
            })?;
            if !v.is_finite() {
                continue;
            }
            acc[hour].sum += v;
            acc[hour].n += 1;
        }
    }

    let (first_day, last_day) = match (per_day.keys().next(), per_day.keys().next_back()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(DataError::Schema("no data rows".into())),
    };
    let n_days = ((last_day - first_day).num_days() + 1) as usize;

    let mut report = LoadReport {
        rows_read,
        ..Default::default()
    };
    let mut cells = [
        vec![f64::NAN; n_days * HOURS],
        vec![f64::NAN; n_days * HOURS],
        vec![f64::NAN; n_days * HOURS],
    ];
    for i in 0..n_days {
        let date = first_day + Duration::days(i as i64);
        let accs = per_day.get(&date).ok_or_else(|| DataError::Gap {
            date,
            detail: "calendar day missing".into(),
        })?;
        let counts = rows_per_hour[&date];
        if counts.iter().any(|&c| c > 1) {
            report.long_days.push(date);
        }
        if counts.iter().any(|&c| c == 0) {
            report.short_days.push(date);
        }
        for k in 0..3 {
            for h in 0..HOURS {
                let a = accs[k][h];
                if a.n > 0 {
                    cells[k][i * HOURS + h] = a.sum / a.n as f64;
                    if a.n > 1 {
                        report.averaged_cells += 1;
                    }
                }
            }
        }
    }
    Ok(HourlyFrame {
        first_day,
        cells,
        report,
    })
}

impl HourlyFrame {
    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn n_days(&self) -> usize {
        self.cells[0].len() / HOURS
    }

    /// Repairs short gaps and builds the dataset.
    pub fn into_dataset(
        mut self,
        market: MarketId,
        test: TestPeriod,
    ) -> Result<(MarketDataset, LoadReport), DataError> {
        let n_days = self.n_days();
        for k in 0..3 {
            self.report.interpolated_cells +=
                interpolate_short_gaps(&mut self.cells[k], self.first_day, ROLES[k])?;
        }
        let [p, x1, x2] = self.cells;
        let to_matrix = |v: Vec<f64>| {
            Array2::from_shape_vec((n_days, HOURS), v).expect("cells are n_days * 24")
        };
        let ds = MarketDataset::new(
            market,
            self.first_day,
            to_matrix(p),
            to_matrix(x1),
            to_matrix(x2),
            test,
        )?;
        Ok((ds, self.report))
    }
}

/// Linearly interpolates runs of at most [`MAX_INTERPOLATED_RUN`] missing
/// cells. Runs touching either end of the series, or longer runs, are gaps.
fn interpolate_short_gaps(
    cells: &mut [f64],
    first_day: NaiveDate,
    role: &str,
) -> Result<usize, DataError> {
    let date_of = |i: usize| first_day + Duration::days((i / HOURS) as i64);
    let mut filled = 0;
    let mut i = 0;
    while i < cells.len() {
        if !cells[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < cells.len() && cells[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == cells.len() || len > MAX_INTERPOLATED_RUN {
            return Err(DataError::Gap {
                date: date_of(start),
                detail: format!(
                    "{len} consecutive missing {role} cell(s) starting at hour {}",
                    start % HOURS
                ),
            });
        }
        let (lo, hi) = (cells[start - 1], cells[i]);
        let span = (len + 1) as f64;
        for (k, c) in cells[start..i].iter_mut().enumerate() {
            let t = (k + 1) as f64 / span;
            *c = lo + (hi - lo) * t;
        }
        filled += len;
    }
    Ok(filled)
}

/// Calibration window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Window {
    Days(usize),
    All,
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Days(d) => write!(f, "{d}"),
            Window::All => f.write_str("ALL"),
        }
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Window::All);
        }
        match s.trim().parse::<usize>() {
            Ok(0) => Err("window must be at least one day".into()),
            Ok(d) => Ok(Window::Days(d)),
            Err(_) => Err(format!("invalid window `{s}`; expected a day count or `all`")),
        }
    }
}

/// Contiguous run of days `[start, end)` of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetView<'a> {
    ds: &'a MarketDataset,
    start: usize,
    end: usize,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a MarketDataset {
        self.ds
    }
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
    pub fn len(&self) -> usize {
        self.end - self.start
    }
    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
    pub fn days(&self) -> &'a [NaiveDate] {
        &self.ds.days[self.start..self.end]
    }
    pub fn first_day(&self) -> NaiveDate {
        self.ds.days[self.start]
    }
    pub fn last_day(&self) -> NaiveDate {
        self.ds.days[self.end - 1]
    }
    pub fn price(&self) -> ArrayView2<'a, f64> {
        self.ds.price.slice(s![self.start..self.end, ..])
    }
    pub fn exog1(&self) -> ArrayView2<'a, f64> {
        self.ds.exog1.slice(s![self.start..self.end, ..])
    }
    pub fn exog2(&self) -> ArrayView2<'a, f64> {
        self.ds.exog2.slice(s![self.start..self.end, ..])
    }
    pub fn day_of_week(&self) -> &'a [u8] {
        &self.ds.day_of_week[self.start..self.end]
    }
}

/// The calibration slice for forecasting `target_day`: the last `window`
/// days strictly before it, or every prior day for [`Window::All`].
pub fn slice_training(
    ds: &MarketDataset,
    target_day: NaiveDate,
    window: Window,
) -> Result<DatasetView<'_>, DataError> {
    let target = ds.require_index(target_day)?;
    let needed = match window {
        Window::Days(w) => w,
        Window::All => MIN_HISTORY_DAYS,
    };
    if target < needed || needed == 0 {
        return Err(DataError::InsufficientHistory {
            target: target_day,
            needed,
            available: target,
        });
    }
    let start = match window {
        Window::Days(w) => target - w,
        Window::All => 0,
    };
    Ok(DatasetView {
        ds,
        start,
        end: target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn constant_ds(first: NaiveDate, n: usize, test: TestPeriod) -> MarketDataset {
        let m = Array2::from_shape_fn((n, HOURS), |(i, h)| (i * HOURS + h) as f64);
        MarketDataset::new(MarketId::Custom, first, m.clone(), m.clone(), m, test).unwrap()
    }

    fn csv_for(days: &[NaiveDate], skip: &[(NaiveDate, u32)], dup: &[(NaiveDate, u32, f64)]) -> String {
        let mut out = String::from("timestamp,price,exog1,exog2\n");
        for day in days {
            for h in 0..24u32 {
                if skip.contains(&(*day, h)) {
                    continue;
                }
                let v = h as f64;
                out.push_str(&format!("{day}T{h:02}:00:00,{v},{},{}\n", v + 100.0, v + 200.0));
                for (dd, hh, val) in dup {
                    if dd == day && *hh == h {
                        out.push_str(&format!("{day}T{h:02}:00:00,{val},{},{}\n", v + 100.0, v + 200.0));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn market_ids_parse_loosely() {
        assert_eq!("omie-sp".parse::<MarketId>().unwrap(), MarketId::OmieSp);
        assert_eq!("EPEX_BE".parse::<MarketId>().unwrap(), MarketId::EpexBe);
        assert!("PJM".parse::<MarketId>().is_err());
    }

    #[test]
    fn registry_matches_reference_periods() {
        let omie = registry_entry(MarketId::OmieSp).unwrap();
        assert_eq!(omie.test_start, d(2022, 1, 1));
        assert_eq!(omie.test_end, d(2023, 5, 31));
        assert_eq!(omie.test_period().n_days(), 516);
        assert_eq!(omie.long_windows, [364, 728]);
        let np = registry_entry(MarketId::Np).unwrap();
        assert_eq!((np.test_start, np.test_end), (d(2016, 12, 27), d(2018, 12, 24)));
        for m in [MarketId::EpexBe, MarketId::EpexFr] {
            let e = registry_entry(m).unwrap();
            assert_eq!((e.test_start, e.test_end), (d(2015, 1, 4), d(2016, 12, 31)));
            assert_eq!(e.long_windows, [1092, 1456]);
        }
        assert!(registry().iter().all(|e| e.short_windows == [56, 84]));
        assert!(registry_entry(MarketId::Custom).is_none());
    }

    #[test]
    fn long_dst_day_is_averaged() {
        let days: Vec<_> = (0..20).map(|i| d(2021, 10, 20) + Duration::days(i)).collect();
        let text = csv_for(&days, &[], &[(d(2021, 10, 31), 2, 20.0)]);
        // the first copy of hour 2 carries value 2.0; rewrite it to 10
        let text = text.replacen("2021-10-31T02:00:00,2,", "2021-10-31T02:00:00,10,", 1);
        let frame = read_hourly_csv(text.as_bytes()).unwrap();
        let tp = TestPeriod::new(d(2021, 11, 5), d(2021, 11, 8)).unwrap();
        let (ds, report) = frame.into_dataset(MarketId::Custom, tp).unwrap();
        let i = ds.index_of(d(2021, 10, 31)).unwrap();
        assert_eq!(ds.price()[[i, 2]], 15.0);
        assert_eq!(report.long_days, vec![d(2021, 10, 31)]);
        assert_eq!(report.rows_read, 20 * 24 + 1);
    }

    #[test]
    fn short_dst_day_is_interpolated() {
        let days: Vec<_> = (0..20).map(|i| d(2021, 3, 20) + Duration::days(i)).collect();
        let text = csv_for(&days, &[(d(2021, 3, 28), 2)], &[]);
        let frame = read_hourly_csv(text.as_bytes()).unwrap();
        let tp = TestPeriod::new(d(2021, 4, 5), d(2021, 4, 8)).unwrap();
        let (ds, report) = frame.into_dataset(MarketId::Custom, tp).unwrap();
        let i = ds.index_of(d(2021, 3, 28)).unwrap();
        assert_eq!(ds.price()[[i, 2]], 2.0);
        assert_eq!(ds.exog2()[[i, 2]], 202.0);
        assert_eq!(report.short_days, vec![d(2021, 3, 28)]);
        assert_eq!(report.interpolated_cells, 3);
    }

    #[test]
    fn missing_day_is_a_gap() {
        let days: Vec<_> = (0..20)
            .map(|i| d(2021, 1, 1) + Duration::days(i))
            .filter(|day| *day != d(2021, 1, 10))
            .collect();
        let text = csv_for(&days, &[], &[]);
        let err = read_hourly_csv(text.as_bytes()).unwrap_err();
        match err {
            DataError::Gap { date, .. } => assert_eq!(date, d(2021, 1, 10)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_missing_hours_are_a_gap() {
        let days: Vec<_> = (0..20).map(|i| d(2021, 1, 1) + Duration::days(i)).collect();
        let skip = [(d(2021, 1, 5), 3), (d(2021, 1, 5), 4), (d(2021, 1, 5), 5)];
        let frame = read_hourly_csv(csv_for(&days, &skip, &[]).as_bytes()).unwrap();
        let tp = TestPeriod::new(d(2021, 1, 16), d(2021, 1, 18)).unwrap();
        assert!(matches!(
            frame.into_dataset(MarketId::Custom, tp),
            Err(DataError::Gap { .. })
        ));
    }

    #[test]
    fn schema_and_parse_errors() {
        let bad_header = "time,price,exog1,exog2\n2021-01-01T00:00:00,1,2,3\n";
        assert!(matches!(read_hourly_csv(bad_header.as_bytes()), Err(DataError::Schema(_))));
        let extra = "timestamp,price,exog1,exog2,load\n2021-01-01T00:00:00,1,2,3,4\n";
        assert!(matches!(read_hourly_csv(extra.as_bytes()), Err(DataError::Schema(_))));
        let bad_num = "timestamp,price,exog1,exog2\n2021-01-01T00:00:00,abc,2,3\n";
        assert!(matches!(read_hourly_csv(bad_num.as_bytes()), Err(DataError::Parse { line: 2, .. })));
        let bad_ts = "timestamp,price,exog1,exog2\n01/01/2021 00:00,1,2,3\n";
        assert!(matches!(read_hourly_csv(bad_ts.as_bytes()), Err(DataError::Parse { .. })));
        let unsorted = "timestamp,price,exog1,exog2\n2021-01-01T05:00:00,1,2,3\n2021-01-01T04:00:00,1,2,3\n";
        assert!(matches!(read_hourly_csv(unsorted.as_bytes()), Err(DataError::Parse { .. })));
    }

    #[test]
    fn offsets_are_read_as_local_time() {
        let text = "timestamp,price,exog1,exog2\n2021-10-31T02:00:00+02:00,10,0,0\n2021-10-31T02:00:00+01:00,20,0,0\n";
        let frame = read_hourly_csv(text.as_bytes()).unwrap();
        assert_eq!(frame.cells[0][2], 15.0);
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("# comment\nmarket_id = OMIE-SP\ntest_start: 2022-01-01\ntest_end = 2022-01-31\n")
            .unwrap();
        assert_eq!(m.market_id, Some(MarketId::OmieSp));
        assert_eq!(m.test_start, Some(d(2022, 1, 1)));
        assert_eq!(m.test_end, Some(d(2022, 1, 31)));
        assert!(parse_manifest("nonsense").is_err());
    }

    #[test]
    fn test_period_needs_fourteen_prior_days() {
        let m = Array2::zeros((30, HOURS));
        let tp = TestPeriod::new(d(2021, 1, 10), d(2021, 1, 12)).unwrap();
        let err = MarketDataset::new(MarketId::Custom, d(2021, 1, 1), m.clone(), m.clone(), m, tp);
        assert!(matches!(err, Err(DataError::InsufficientHistory { .. })));
    }

    #[test]
    fn slicing_examples() {
        let first = d(2019, 1, 1);
        let n = (d(2023, 5, 31) - first).num_days() as usize + 1;
        let ds = constant_ds(first, n, TestPeriod::new(d(2022, 1, 1), d(2023, 5, 31)).unwrap());
        let v = slice_training(&ds, d(2022, 1, 1), Window::Days(364)).unwrap();
        assert_eq!((v.first_day(), v.last_day()), (d(2021, 1, 2), d(2021, 12, 31)));
        assert_eq!(v.len(), 364);
        let all = slice_training(&ds, d(2022, 1, 1), Window::All).unwrap();
        assert_eq!((all.first_day(), all.last_day()), (d(2019, 1, 1), d(2021, 12, 31)));
        assert_eq!(all.price()[[0, 0]], 0.0);

        let small = constant_ds(d(2020, 1, 1), 30, TestPeriod::new(d(2020, 1, 20), d(2020, 1, 30)).unwrap());
        let target = d(2020, 1, 9);
        assert!(matches!(
            slice_training(&small, target, Window::Days(56)),
            Err(DataError::InsufficientHistory { needed: 56, available: 8, .. })
        ));
        assert!(matches!(
            slice_training(&small, target, Window::All),
            Err(DataError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn window_parsing() {
        assert_eq!("all".parse::<Window>().unwrap(), Window::All);
        assert_eq!("364".parse::<Window>().unwrap(), Window::Days(364));
        assert!("0".parse::<Window>().is_err());
        assert_eq!(Window::All.to_string(), "ALL");
    }
}

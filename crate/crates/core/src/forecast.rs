//! Day-by-day forecast tables and their CSV form
//! (`date,label,h1,...,h24`, values at full precision).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::backtest::BacktestConfig;
use crate::dataio::HOURS;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed forecast file: {0}")]
    Format(String),
    #[error("invalid forecast table: {0}")]
    Invalid(String),
}

/// Hourly forecasts in price units, one row per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTable {
    label: String,
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
    config: Option<BacktestConfig>,
}

impl ForecastTable {
    pub fn new(label: impl Into<String>, dates: Vec<NaiveDate>, values: Array2<f64>) -> Result<Self, TableError> {
        if values.nrows() != dates.len() || values.ncols() != HOURS {
            return Err(TableError::Invalid(format!(
                "{} dates but values of shape {:?}",
                dates.len(),
                values.dim()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TableError::Invalid(format!("dates not increasing at {}", w[1])));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TableError::Invalid(format!(
                "non-finite forecast on {} hour {}",
                dates[i / HOURS],
                i % HOURS + 1
            )));
        }
        Ok(Self {
            label: label.into(),
            dates,
            values,
            config: None,
        })
    }

    pub fn with_config(mut self, cfg: BacktestConfig) -> Self {
        self.config = Some(cfg);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }
    pub fn config(&self) -> Option<&BacktestConfig> {
        self.config.as_ref()
    }
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let err = |e: csv::Error| TableError::Format(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string(), "label".to_string()];
        header.extend((1..=HOURS).map(|h| format!("h{h}")));
        w.write_record(&header).map_err(err)?;
        for (d, row) in self.dates.iter().zip(self.values.outer_iter()) {
            let mut rec = vec![d.to_string(), self.label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| TableError::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| TableError::Format(e.to_string()))?.clone();
        let expected: Vec<String> = ["date".to_string(), "label".to_string()]
            .into_iter()
            .chain((1..=HOURS).map(|h| format!("h{h}")))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(TableError::Format(format!(
                "header must be {}",
                expected.join(",")
            )));
        }
        let mut dates = Vec::new();
        let mut cells = Vec::new();
        let mut label: Option<String> = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| TableError::Format(e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| TableError::Format(format!("line {line}: bad date `{}`: {e}", &rec[0])))?;
            match &label {
                None => label = Some(rec[1].to_string()),
                Some(l) if l != &rec[1] => {
                    return Err(TableError::Format(format!(
                        "line {line}: label `{}` differs from `{l}`",
                        &rec[1]
                    )))
                }
                _ => {}
            }
            for h in 0..HOURS {
                let v: f64 = rec[h + 2].parse().map_err(|_| {
                    TableError::Format(format!("line {line}: bad value `{}`", &rec[h + 2]))
                })?;
                cells.push(v);
            }
            dates.push(date);
        }
        let values = Array2::from_shape_vec((dates.len(), HOURS), cells).expect("24 per row");
        Self::new(label.unwrap_or_default(), dates, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), TableError> {
        let file = fs::File::create(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        let file = fs::File::open(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

//! Atomic output files and the run manifests written next to them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use epf_core::backtest::DayReport;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Writes through a temporary sibling file renamed into place on success.
/// On any failure the temporary file is removed and `path` is untouched.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let name = path
        .file_name()
        .ok_or_else(|| CliError::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e)))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingSummary {
    pub days: usize,
    pub total_secs: f64,
    pub mean_secs: f64,
    pub median_secs: f64,
    pub max_secs: f64,
    pub slowest_day: Option<String>,
}

impl TimingSummary {
    pub fn from_days(days: &[DayReport]) -> Self {
        let mut secs: Vec<f64> = days.iter().map(|d| d.elapsed.as_secs_f64()).collect();
        let total: f64 = secs.iter().sum();
        let slowest = days.iter().max_by_key(|d| d.elapsed).map(|d| d.date.to_string());
        secs.sort_by(f64::total_cmp);
        let n = secs.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => secs[n / 2],
            _ => 0.5 * (secs[n / 2 - 1] + secs[n / 2]),
        };
        Self {
            days: n,
            total_secs: total,
            mean_secs: if n > 0 { total / n as f64 } else { 0.0 },
            median_secs: median,
            max_secs: secs.last().copied().unwrap_or(0.0),
            slowest_day: slowest,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub engine: &'static str,
    pub engine_version: &'static str,
    pub command: String,
    pub created_at: String,
    pub output: FileDigest,
    pub dataset: Option<FileDigest>,
    pub inputs: Vec<FileDigest>,
    pub config: serde_json::Value,
    pub wall_clock_secs: f64,
    pub timing: Option<TimingSummary>,
}

impl RunManifest {
    pub fn new(command: &str, output: &Path, config: serde_json::Value, wall: Duration) -> Result<Self, CliError> {
        Ok(Self {
            engine: env!("CARGO_PKG_NAME"),
            engine_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            output: FileDigest::of(output)?,
            dataset: None,
            inputs: Vec::new(),
            config,
            wall_clock_secs: wall.as_secs_f64(),
            timing: None,
        })
    }

    pub fn with_dataset(mut self, path: Option<&Path>) -> Result<Self, CliError> {
        self.dataset = path.map(FileDigest::of).transpose()?;
        Ok(self)
    }

    pub fn with_inputs(mut self, paths: &[PathBuf]) -> Result<Self, CliError> {
        self.inputs = paths.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn with_timing(mut self, days: &[DayReport]) -> Self {
        self.timing = Some(TimingSummary::from_days(days));
        self
    }

    /// Writes `<output>.manifest.json`.
    pub fn save(&self) -> Result<PathBuf, CliError> {
        let path = manifest_path(Path::new(&self.output.path));
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_text(&path, &text)?;
        Ok(path)
    }
}

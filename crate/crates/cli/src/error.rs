use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use epf_core::backtest::{BacktestError, StepError};
use epf_core::dataio::DataError;
use epf_core::evaluate::EvalError;
use epf_core::forecast::TableError;
use epf_core::presets::PresetError;

/// Error carrying its process exit status: 1 I/O, 2 validation or
/// alignment, 3 statistical degeneracy.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const IO: u8 = 1;
    pub const INVALID: u8 = 2;
    pub const DEGENERATE: u8 = 3;

    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: Self::INVALID,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: Self::IO,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn with_code(code: u8, err: &dyn fmt::Display) -> CliError {
    CliError {
        code,
        message: err.to_string(),
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = if e.is_validation() { CliError::INVALID } else { CliError::IO };
        with_code(code, &e)
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        let code = match e {
            TableError::Io { .. } => CliError::IO,
            _ => CliError::INVALID,
        };
        with_code(code, &e)
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        let code = match &e {
            BacktestError::Data(d) | BacktestError::Day { source: StepError::Data(d), .. } if !d.is_validation() => {
                CliError::IO
            }
            BacktestError::Table(TableError::Io { .. }) => CliError::IO,
            _ => CliError::INVALID,
        };
        with_code(code, &e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Table(t) => t.into(),
            EvalError::DegenerateVariance { .. } | EvalError::DivisionByZero { .. } | EvalError::ZeroNaiveError => {
                with_code(CliError::DEGENERATE, &e)
            }
            _ => with_code(CliError::INVALID, &e),
        }
    }
}

impl From<PresetError> for CliError {
    fn from(e: PresetError) -> Self {
        match e {
            PresetError::Eval(e) => e.into(),
            other => with_code(CliError::INVALID, &other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        with_code(CliError::INVALID, &e)
    }
}

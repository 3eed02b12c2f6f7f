//! Named model groups: the window sweeps of each scheme, the filter
//! ablations, and the ensembles built from them.

use std::fmt;
use std::str::FromStr;

use crate::backtest::BacktestConfig;
use crate::dataio::{registry_entry, MarketId, Window};
use crate::evaluate::{ensemble_mean_labeled, EvalError};
use crate::forecast::ForecastTable;

/// Calibration windows of a market: two short, two long, then ALL.
pub fn market_windows(market: MarketId) -> Vec<Window> {
    let days = registry_entry(market)
        .map(|e| e.windows())
        .unwrap_or([56, 84, 364, 728]);
    days.into_iter().map(Window::Days).chain([Window::All]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BacktestPreset {
    /// Median-arcsinh LEAR over every window.
    Lear,
    /// Adaptive LEAR with the outlier filter over every window.
    Aslear,
    /// Adaptive LEAR with and without the filter.
    AppendixB,
    /// Median-arcsinh LEAR on raw and on filtered prices.
    AppendixC,
    /// `Lear` and `Aslear` together.
    All,
}

impl BacktestPreset {
    pub const NAMES: [&'static str; 5] = ["lear", "aslear", "appendix-b", "appendix-c", "all"];

    pub fn configs(self, market: MarketId) -> Vec<BacktestConfig> {
        let ws = market_windows(market);
        let lear = || ws.iter().map(|&w| BacktestConfig::lear(market, w));
        let aslear = || ws.iter().map(|&w| BacktestConfig::aslear(market, w));
        match self {
            BacktestPreset::Lear => lear().collect(),
            BacktestPreset::Aslear => aslear().collect(),
            BacktestPreset::AppendixB => aslear().chain(aslear().map(|c| c.with_filter(false))).collect(),
            BacktestPreset::AppendixC => lear().chain(lear().map(|c| c.with_filter(true))).collect(),
            BacktestPreset::All => lear().chain(aslear()).collect(),
        }
    }

    /// `(numerator, denominator)` label pairs of the ablation ratio table,
    /// one per window, for the two appendix presets.
    pub fn ratio_pairs(self, market: MarketId) -> Vec<(String, String)> {
        let configs = self.configs(market);
        match self {
            BacktestPreset::AppendixB => {
                let n = configs.len() / 2;
                // ratio is metric without filtering over metric with filtering
                (0..n)
                    .map(|i| (configs[n + i].label.clone(), configs[i].label.clone()))
                    .collect()
            }
            BacktestPreset::AppendixC => {
                let n = configs.len() / 2;
                (0..n)
                    .map(|i| (configs[i].label.clone(), configs[n + i].label.clone()))
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

impl FromStr for BacktestPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "lear" => Ok(Self::Lear),
            "aslear" => Ok(Self::Aslear),
            "appendix-b" | "b" => Ok(Self::AppendixB),
            "appendix-c" | "c" => Ok(Self::AppendixC),
            "all" => Ok(Self::All),
            _ => Err(format!(
                "unknown preset `{s}`; expected one of {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsemblePreset {
    /// LEAR over the four finite windows.
    EnsLear,
    /// ASLEAR over the long windows and ALL.
    Ens1Aslear,
    /// ASLEAR over every window.
    Ens2Aslear,
    /// Mean of `EnsLear` and `Ens1Aslear`.
    LearAslear,
}

impl EnsemblePreset {
    pub const NAMES: [&'static str; 4] = ["ens-lear", "ens1-aslear", "ens2-aslear", "lear-aslear"];
    pub const ALL: [EnsemblePreset; 4] = [
        EnsemblePreset::EnsLear,
        EnsemblePreset::Ens1Aslear,
        EnsemblePreset::Ens2Aslear,
        EnsemblePreset::LearAslear,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EnsemblePreset::EnsLear => "Ens-LEAR",
            EnsemblePreset::Ens1Aslear => "Ens1-ASLEAR",
            EnsemblePreset::Ens2Aslear => "Ens2-ASLEAR",
            EnsemblePreset::LearAslear => "LEAR-ASLEAR",
        }
    }

    /// Labels of the single-model members, as produced by the backtest presets.
    pub fn member_labels(self, market: MarketId) -> Vec<String> {
        let ws = market_windows(market);
        let labels = |cfg: fn(MarketId, Window) -> BacktestConfig, keep: &dyn Fn(&Window) -> bool| {
            ws.iter()
                .filter(|w| keep(w))
                .map(|&w| cfg(market, w).label)
                .collect::<Vec<_>>()
        };
        let short = ws[..2].to_vec();
        match self {
            EnsemblePreset::EnsLear => labels(BacktestConfig::lear, &|w| *w != Window::All),
            EnsemblePreset::Ens1Aslear => labels(BacktestConfig::aslear, &|w| !short.contains(w)),
            EnsemblePreset::Ens2Aslear => labels(BacktestConfig::aslear, &|_| true),
            EnsemblePreset::LearAslear => {
                let mut v = EnsemblePreset::EnsLear.member_labels(market);
                v.extend(EnsemblePreset::Ens1Aslear.member_labels(market));
                v
            }
        }
    }

    /// Builds the ensemble from a pool of tables, picking members by label.
    pub fn build(self, market: MarketId, pool: &[ForecastTable]) -> Result<ForecastTable, PresetError> {
        if self == EnsemblePreset::LearAslear {
            let a = EnsemblePreset::EnsLear.build(market, pool)?;
            let b = EnsemblePreset::Ens1Aslear.build(market, pool)?;
            return Ok(ensemble_mean_labeled(&[&a, &b], self.label())?);
        }
        let members = self
            .member_labels(market)
            .into_iter()
            .map(|l| {
                pool.iter()
                    .find(|t| t.label() == l)
                    .ok_or(PresetError::MissingMember {
                        preset: self.label(),
                        member: l,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ensemble_mean_labeled(&members, self.label())?)
    }
}

impl fmt::Display for EnsemblePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EnsemblePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "enslear" => Ok(Self::EnsLear),
            "ens1aslear" => Ok(Self::Ens1Aslear),
            "ens2aslear" => Ok(Self::Ens2Aslear),
            "learaslear" => Ok(Self::LearAslear),
            _ => Err(format!(
                "unknown ensemble preset `{s}`; expected one of {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error("{preset} needs `{member}`, which is not among the inputs")]
    MissingMember { preset: &'static str, member: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

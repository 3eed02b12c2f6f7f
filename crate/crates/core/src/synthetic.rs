//! Seeded stand-in market data shaped like the reference markets.
//!
//! Prices follow a daily and weekly profile scaled by a level that drifts
//! and shifts between regimes, plus a linear response to the two
//! covariates (a load forecast and a renewable forecast) and AR(1) noise.

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{registry_entry, DataError, MarketDataset, MarketId, TestPeriod, HOURS};

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSpec {
    /// Probability that a day receives one spike.
    pub day_probability: f64,
    /// Spike height in multiples of the local price level.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub market: MarketId,
    pub first_day: NaiveDate,
    pub n_days: usize,
    pub test: TestPeriod,
    pub seed: u64,
    pub base_level: f64,
    /// `(day index, multiplier)`: from that day on the level is scaled.
    pub regime_shifts: Vec<(usize, f64)>,
    /// Noise standard deviation relative to the level.
    pub noise: f64,
    pub spikes: Option<SpikeSpec>,
}

impl SyntheticConfig {
    /// Stub with the market's test period and enough history for its
    /// longest window plus a margin.
    pub fn stub(market: MarketId, seed: u64) -> Self {
        let (test, history) = match registry_entry(market) {
            Some(e) => (e.test_period(), e.long_windows[1] + 100),
            None => {
                let s = NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date");
                (TestPeriod { start: s, end: s + Duration::days(89) }, 828)
            }
        };
        let first_day = test.start - Duration::days(history as i64);
        let n_days = history + test.n_days();
        let base_level = match market {
            MarketId::EpexBe | MarketId::EpexFr => 45.0,
            MarketId::Np => 30.0,
            _ => 50.0,
        };
        Self {
            market,
            first_day,
            n_days,
            test,
            seed,
            base_level,
            // a sharp rise some months before the test period, then a partial fall
            regime_shifts: vec![(history.saturating_sub(240), 2.2), (history + test.n_days() / 2, 0.7)],
            noise: 0.06,
            spikes: None,
        }
    }

    pub fn with_spikes(mut self, spikes: SpikeSpec) -> Self {
        self.spikes = Some(spikes);
        self
    }

    /// Moves the first day so that `days` days precede the test period,
    /// keeping the regime shifts at the same offsets from the test start.
    pub fn with_history_days(mut self, days: usize) -> Self {
        let old = (self.test.start - self.first_day).num_days();
        let shift = days as i64 - old;
        self.first_day = self.test.start - Duration::days(days as i64);
        self.n_days = (self.n_days as i64 + shift) as usize;
        for (at, _) in self.regime_shifts.iter_mut() {
            *at = (*at as i64 + shift).max(0) as usize;
        }
        self
    }

    /// Keeps the first `days` test days and drops later data.
    pub fn with_test_days(mut self, days: usize) -> Self {
        let history = (self.test.start - self.first_day).num_days() as usize;
        self.test.end = self.test.start + Duration::days(days as i64 - 1);
        self.n_days = history + days;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub dataset: MarketDataset,
    /// `(day, hour)` of injected spikes.
    pub spikes: Vec<(usize, usize)>,
}

fn daily_profile(h: usize) -> f64 {
    let t = h as f64 / HOURS as f64 * std::f64::consts::TAU;
    // morning and evening peaks, night trough
    -0.25 * t.cos() - 0.12 * (2.0 * t).cos() + 0.05 * (2.0 * t).sin()
}

fn weekly_factor(dow: u32) -> f64 {
    match dow {
        6 => 0.9,
        7 => 0.8,
        _ => 1.0,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticMarket, DataError> {
    use chrono::Datelike;
    let n = cfg.n_days;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut level = Vec::with_capacity(n);
    let mut walk = 0.0;
    for d in 0..n {
        walk = 0.98 * walk + 0.02 * std_normal.sample(&mut rng);
        let shift: f64 = cfg
            .regime_shifts
            .iter()
            .filter(|(at, _)| d >= *at)
            .map(|(_, m)| m)
            .product();
        let season = 1.0 + 0.1 * (d as f64 / 365.25 * std::f64::consts::TAU).cos();
        level.push(cfg.base_level * shift * season * (1.0 + walk));
    }

    let mut load = Array2::zeros((n, HOURS));
    let mut wind = Array2::zeros((n, HOURS));
    let mut price = Array2::zeros((n, HOURS));
    let mut noise = 0.0;
    let mut wind_state = 0.0;
    for d in 0..n {
        let date = cfg.first_day + Duration::days(d as i64);
        let wk = weekly_factor(date.weekday().number_from_monday());
        wind_state = 0.7 * wind_state + 0.3 * std_normal.sample(&mut rng);
        for h in 0..HOURS {
            let prof = daily_profile(h);
            let l = 30_000.0 * wk * (1.0 + 0.6 * prof) + 800.0 * std_normal.sample(&mut rng);
            let w = (6_000.0 * (1.0 + 0.8 * wind_state) + 500.0 * std_normal.sample(&mut rng)).max(0.0);
            noise = 0.8 * noise + cfg.noise * std_normal.sample(&mut rng);
            let lv = level[d];
            let p = lv * (wk * (1.0 + prof) + 0.6 * (l / 30_000.0 - 1.0) - 0.25 * (w / 6_000.0 - 1.0) + noise);
            load[[d, h]] = l;
            wind[[d, h]] = w;
            price[[d, h]] = p;
        }
    }

    let mut spikes = Vec::new();
    if let Some(s) = &cfg.spikes {
        for d in 0..n {
            if rng.random::<f64>() < s.day_probability {
                let h = rng.random_range(0..HOURS);
                let sign = if rng.random::<f64>() < 0.8 { 1.0 } else { -1.0 };
                price[[d, h]] += sign * s.magnitude * level[d];
                spikes.push((d, h));
            }
        }
    }

    let dataset = MarketDataset::new(cfg.market, cfg.first_day, price, load, wind, cfg.test)?;
    Ok(SyntheticMarket { dataset, spikes })
}

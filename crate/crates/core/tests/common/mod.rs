#![allow(dead_code)]

use chrono::NaiveDate;
use epf_core::dataio::{MarketDataset, MarketId, TestPeriod, HOURS};
use epf_core::synthetic::{generate, SyntheticConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Synthetic custom-market dataset with `history` days before a test
/// period of `test_days` days starting 2022-01-01.
pub fn stub(seed: u64, history: usize, test_days: usize) -> MarketDataset {
    let cfg = SyntheticConfig::stub(MarketId::Custom, seed)
        .with_history_days(history)
        .with_test_days(test_days);
    generate(&cfg).unwrap().dataset
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

/// Dataset built from explicit daily matrices.
pub fn dataset(price: Array2<f64>, exog1: Array2<f64>, exog2: Array2<f64>, test_days: usize) -> MarketDataset {
    let first = date(2021, 1, 4);
    let n = price.nrows();
    assert_eq!(price.ncols(), HOURS);
    let start = first + chrono::Duration::days((n - test_days) as i64);
    let end = first + chrono::Duration::days(n as i64 - 1);
    MarketDataset::new(MarketId::Custom, first, price, exog1, exog2, TestPeriod { start, end }).unwrap()
}

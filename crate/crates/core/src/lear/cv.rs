//! Penalty selection by chronological K-fold cross-validation.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::lars::path_solutions;
use super::lasso::{GramSystem, LassoOptions};
use super::LearError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub n_folds: usize,
    pub grid_size: usize,
    /// Smallest grid point as a fraction of `lambda_max`.
    pub min_ratio: f64,
    pub lasso: LassoOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            n_folds: 5,
            grid_size: 100,
            min_ratio: 1e-4,
            lasso: LassoOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub lambda_max: f64,
    /// Strictly increasing penalties.
    pub grid: Vec<f64>,
    /// Mean out-of-fold squared error per grid point.
    pub cv_curve: Vec<f64>,
    pub selected: usize,
}

/// `size` log-spaced points over `[min_ratio * lambda_max, lambda_max]`,
/// ascending. A zero `lambda_max` (all-zero `X'y`) anchors the grid at 1,
/// where every point yields the zero model.
pub fn lambda_grid(lambda_max: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    let top = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    if size == 1 {
        return vec![top];
    }
    let (lo, hi) = ((top * min_ratio).ln(), top.ln());
    let mut grid: Vec<f64> = (0..size)
        .map(|i| (lo + (hi - lo) * i as f64 / (size - 1) as f64).exp())
        .collect();
    grid[size - 1] = top;
    grid
}

/// Contiguous chronological blocks; the first `n % k` folds get one extra row.
pub fn fold_bounds(n: usize, k: usize) -> Vec<Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Fold Gram matrices of one design matrix, reusable for every target.
#[derive(Debug, Clone)]
pub struct CvPlan<'a> {
    x: ArrayView2<'a, f64>,
    folds: Vec<Range<usize>>,
    full_gram: Array2<f64>,
    fold_grams: Vec<Array2<f64>>,
    opts: CvOptions,
}

impl<'a> CvPlan<'a> {
    pub fn new(x: ArrayView2<'a, f64>, opts: CvOptions) -> Result<Self, LearError> {
        if opts.n_folds < 2 || x.nrows() < opts.n_folds {
            return Err(LearError::TooFewRows {
                rows: x.nrows(),
                needed: opts.n_folds.max(2),
            });
        }
        if opts.grid_size == 0 || !(opts.min_ratio > 0.0 && opts.min_ratio < 1.0) {
            return Err(LearError::Shape(format!(
                "invalid grid: size {}, min ratio {}",
                opts.grid_size, opts.min_ratio
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LearError::NonFinite("design matrix"));
        }
        let folds = fold_bounds(x.nrows(), opts.n_folds);
        let fold_grams: Vec<Array2<f64>> = folds
            .iter()
            .map(|r| {
                let xb = x.slice(s![r.clone(), ..]);
                xb.t().dot(&xb)
            })
            .collect();
        let mut full_gram = Array2::zeros((x.ncols(), x.ncols()));
        for g in &fold_grams {
            full_gram += g;
        }
        Ok(Self {
            x,
            folds,
            full_gram,
            fold_grams,
            opts,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn folds(&self) -> &[Range<usize>] {
        &self.folds
    }

    fn fold_stats(&self, y: ArrayView1<'_, f64>) -> Vec<(Array1<f64>, f64)> {
        self.folds
            .iter()
            .map(|r| {
                let xb = self.x.slice(s![r.clone(), ..]);
                let yb = y.slice(s![r.clone()]);
                (xb.t().dot(&yb), yb.dot(&yb))
            })
            .collect()
    }

    fn full_system(&self, stats: &[(Array1<f64>, f64)]) -> GramSystem {
        let mut xty = Array1::zeros(self.x.ncols());
        let mut yty = 0.0;
        for (c, t) in stats {
            xty += c;
            yty += t;
        }
        GramSystem {
            gram: self.full_gram.clone(),
            xty,
            yty,
        }
    }

    /// Cross-validates the penalty for target `y` and refits on all rows.
    pub fn select_and_fit(&self, y: ArrayView1<'_, f64>) -> Result<(CvResult, Array1<f64>), LearError> {
        if y.len() != self.x.nrows() {
            return Err(LearError::Shape(format!(
                "{} targets for {} rows",
                y.len(),
                self.x.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LearError::NonFinite("target"));
        }
        let stats = self.fold_stats(y);
        let full = self.full_system(&stats);
        let lambda_max = full.lambda_max();
        let grid = lambda_grid(lambda_max, self.opts.grid_size, self.opts.min_ratio);
        let desc: Vec<f64> = grid.iter().rev().copied().collect();

        let mut sse = vec![0.0; grid.len()];
        for (k, (c_k, yty_k)) in stats.iter().enumerate() {
            let train = GramSystem {
                gram: &self.full_gram - &self.fold_grams[k],
                xty: &full.xty - c_k,
                yty: full.yty - yty_k,
            };
            let valid = GramSystem {
                gram: self.fold_grams[k].clone(),
                xty: c_k.clone(),
                yty: *yty_k,
            };
            let sols = path_solutions(&train, &desc, &self.opts.lasso);
            for (i, theta) in sols.iter().enumerate() {
                sse[grid.len() - 1 - i] += valid.rss(theta.view());
            }
        }
        let n = self.x.nrows() as f64;
        let cv_curve: Vec<f64> = sse.iter().map(|e| e / n).collect();

        // ties go to the larger penalty
        let best = cv_curve.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = best * 1e-12;
        let selected = (0..grid.len())
            .rev()
            .find(|&i| cv_curve[i] <= best + slack)
            .expect("non-empty grid");

        let theta = path_solutions(&full, &desc[..grid.len() - selected], &self.opts.lasso)
            .pop()
            .expect("at least one grid point");
        Ok((
            CvResult {
                lambda: grid[selected],
                lambda_max,
                grid,
                cv_curve,
                selected,
            },
            theta,
        ))
    }
}

/// Cross-validated penalty for a single design/target pair.
pub fn select_lambda_cv(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    n_folds: usize,
    grid_size: usize,
) -> Result<CvResult, LearError> {
    let opts = CvOptions {
        n_folds,
        grid_size,
        ..Default::default()
    };
    CvPlan::new(x, opts)?.select_and_fit(y).map(|(r, _)| r)
}

//! Coordinate-descent LASSO on the un-normalised objective
//!
//! ```text
//! ||y - X theta||^2 + lambda * ||theta||_1
//! ```
//!
//! Solved in covariance form: with `G = X'X` and `c = X'y` the solver keeps
//! the gradient vector `q = c - G theta` up to date, so a sweep costs `O(p)`
//! per changed coordinate and never touches the rows of `X`. This lets the
//! cross-validation folds and all 24 hourly models share one Gram matrix.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::LearError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Converged once a sweep moves no coefficient by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Keep the objective value after every sweep.
    pub record_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
            record_objective: false,
        }
    }
}

/// Sufficient statistics of a least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub gram: Array2<f64>,
    pub xty: Array1<f64>,
    pub yty: f64,
}

impl GramSystem {
    pub fn from_data(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        Self {
            gram: x.t().dot(&x),
            xty: x.t().dot(&y),
            yty: y.dot(&y),
        }
    }

    pub fn n_features(&self) -> usize {
        self.xty.len()
    }

    /// Smallest penalty with an all-zero solution: `max_j |2 x_j'y|`.
    pub fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0f64, |m, c| m.max((2.0 * c).abs()))
    }

    /// `||y - X theta||^2` expanded through the Gram matrix, clamped at 0.
    pub fn rss(&self, theta: ArrayView1<'_, f64>) -> f64 {
        let nz: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] != 0.0).collect();
        let mut quad = 0.0;
        for &j in &nz {
            let mut row = 0.0;
            for &k in &nz {
                row += self.gram[[j, k]] * theta[k];
            }
            quad += theta[j] * row;
        }
        let lin: f64 = nz.iter().map(|&j| theta[j] * self.xty[j]).sum();
        (self.yty - 2.0 * lin + quad).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub theta: Array1<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep when requested.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct Solver<'a> {
    sys: &'a GramSystem,
    lambda: f64,
    theta: Array1<f64>,
    grad: Array1<f64>,
}

impl<'a> Solver<'a> {
    fn new(sys: &'a GramSystem, lambda: f64, warm: Option<ArrayView1<'_, f64>>) -> Self {
        let p = sys.n_features();
        let theta = match warm {
            Some(w) => w.to_owned(),
            None => Array1::zeros(p),
        };
        let mut grad = sys.xty.clone();
        for k in 0..p {
            if theta[k] != 0.0 {
                grad.scaled_add(-theta[k], &sys.gram.row(k));
            }
        }
        Self {
            sys,
            lambda,
            theta,
            grad,
        }
    }

    /// Exact minimisation along coordinate `j`; returns |change|.
    fn update(&mut self, j: usize) -> f64 {
        let gjj = self.sys.gram[[j, j]];
        let old = self.theta[j];
        let new = if gjj > 0.0 {
            soft_threshold(self.grad[j] + gjj * old, 0.5 * self.lambda) / gjj
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            self.theta[j] = new;
            self.grad.scaled_add(-delta, &self.sys.gram.row(j));
        }
        delta.abs()
    }

    fn sweep_all(&mut self) -> f64 {
        (0..self.theta.len()).fold(0.0, |m, j| m.max(self.update(j)))
    }

    fn sweep_active(&mut self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.theta.len() {
            if self.theta[j] != 0.0 {
                m = m.max(self.update(j));
            }
        }
        m
    }

    fn objective(&self) -> f64 {
        // ||y - X theta||^2 = yty - theta'c - theta'q  since  G theta = c - q
        let fit = self.sys.yty - self.theta.dot(&self.sys.xty) - self.theta.dot(&self.grad);
        fit + self.lambda * self.theta.iter().map(|t| t.abs()).sum::<f64>()
    }
}

impl Solver<'_> {
    /// Exact minimiser for the current active set and signs:
    /// `G_AA theta_A = c_A - lambda/2 s_A`. Accepted only if the signs hold
    /// and no inactive coordinate violates `|2 q_j| <= lambda`.
    fn polish(&mut self) -> bool {
        let active: Vec<usize> = (0..self.theta.len()).filter(|&j| self.theta[j] != 0.0).collect();
        if active.is_empty() {
            return false;
        }
        let k = active.len();
        let half = 0.5 * self.lambda;
        let g = DMatrix::from_fn(k, k, |a, b| self.sys.gram[[active[a], active[b]]]);
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            self.sys.xty[j] - half * self.theta[j].signum()
        });
        let Some(chol) = g.cholesky() else {
            return false;
        };
        let sol = chol.solve(&rhs);
        if active
            .iter()
            .zip(sol.iter())
            .any(|(&j, &v)| v == 0.0 || v.signum() != self.theta[j].signum())
        {
            return false;
        }
        let mut grad = self.sys.xty.clone();
        for (&j, &v) in active.iter().zip(sol.iter()) {
            grad.scaled_add(-v, &self.sys.gram.row(j));
        }
        let slack = 1e-9 * self.lambda.max(1.0);
        let inactive_ok = (0..self.theta.len())
            .filter(|&j| self.theta[j] == 0.0)
            .all(|j| 2.0 * grad[j].abs() <= self.lambda + slack);
        if !inactive_ok {
            return false;
        }
        for (&j, &v) in active.iter().zip(sol.iter()) {
            self.theta[j] = v;
        }
        self.grad = grad;
        true
    }
}

/// Active-set sweeps between full sweeps.
const ACTIVE_SWEEPS: usize = 20;

/// Solves one penalty level, optionally warm-started.
///
/// Full sweeps alternate with a few sweeps over the active set. Once a full
/// sweep leaves the active set and signs unchanged, the active-set normal
/// equations are solved directly; if that solution keeps the signs and
/// satisfies the optimality conditions it is exact and the solver stops.
/// Otherwise descent continues until no coefficient moves by more than
/// `tol` in a full sweep, with one last exact solve attempted on the final
/// support.
pub fn solve_gram(
    sys: &GramSystem,
    lambda: f64,
    warm: Option<ArrayView1<'_, f64>>,
    opts: &LassoOptions,
) -> LassoFit {
    let mut s = Solver::new(sys, lambda, warm);
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    let record = |s: &Solver<'_>, trace: &mut Vec<f64>| {
        if opts.record_objective {
            trace.push(s.objective());
        }
    };

    while sweeps < opts.max_sweeps {
        let pattern: Vec<i8> = s.theta.iter().map(|t| t.signum() as i8 * (*t != 0.0) as i8).collect();
        let change = s.sweep_all();
        sweeps += 1;
        record(&s, &mut trace);
        if change < opts.tol {
            // descent has stalled; the exact solve removes the residual
            // gradient error left by the step tolerance
            if s.polish() {
                sweeps += 1;
                record(&s, &mut trace);
            }
            converged = true;
            break;
        }
        let same_pattern = s
            .theta
            .iter()
            .zip(&pattern)
            .all(|(t, p)| t.signum() as i8 * (*t != 0.0) as i8 == *p);
        if same_pattern && s.polish() {
            sweeps += 1;
            record(&s, &mut trace);
            converged = true;
            break;
        }
        for _ in 0..ACTIVE_SWEEPS {
            if sweeps >= opts.max_sweeps {
                break;
            }
            let change = s.sweep_active();
            sweeps += 1;
            record(&s, &mut trace);
            if change < opts.tol {
                break;
            }
        }
    }
    if !converged {
        log::debug!("lasso stopped after {sweeps} sweeps without converging (lambda {lambda})");
    }
    LassoFit {
        theta: s.theta,
        sweeps,
        converged,
        objective_trace: trace,
    }
}

/// Largest violation of the optimality conditions at `theta`:
/// `2 x_j'r = lambda sign(theta_j)` on the support and `|2 x_j'r| <= lambda`
/// off it, with `r = y - X theta`.
pub fn kkt_violation(sys: &GramSystem, theta: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let g = &sys.xty - &sys.gram.dot(&theta);
    let mut worst = 0.0f64;
    for (j, &t) in theta.iter().enumerate() {
        let two_g = 2.0 * g[j];
        let v = if t == 0.0 {
            (two_g.abs() - lambda).max(0.0)
        } else {
            (two_g - lambda * t.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn check_finite(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<(), LearError> {
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LearError::NonFinite("design matrix or target"));
    }
    if x.nrows() != y.len() {
        return Err(LearError::Shape(format!(
            "{} rows in X but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// `max_j |2 x_j'y|`.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.t().dot(&y).iter().fold(0.0f64, |m, c| m.max((2.0 * c).abs()))
}

/// LASSO coefficients at a single penalty.
///
/// Follows the exact homotopy path down to `lambda`; coordinate descent
/// takes over only if the path cannot be continued. Descent alone can stall
/// short of optimality when the active set is rank deficient.
pub fn fit_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<Array1<f64>, LearError> {
    check_args(x, y, lambda)?;
    let sys = GramSystem::from_data(x, y);
    let mut path = super::lars::path_solutions(&sys, &[lambda], &LassoOptions::default());
    Ok(path.pop().expect("one penalty in, one solution out"))
}

fn check_args(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> Result<(), LearError> {
    check_finite(x, y)?;
    if x.nrows() == 0 {
        return Err(LearError::TooFewRows { rows: 0, needed: 1 });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LearError::NonFinite("lambda"));
    }
    Ok(())
}

pub fn fit_lasso_with(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit, LearError> {
    check_args(x, y, lambda)?;
    let sys = GramSystem::from_data(x, y);
    Ok(solve_gram(&sys, lambda, None, opts))
}

/// Solutions along a decreasing sequence of penalties with warm starts.
pub fn lasso_path(
    sys: &GramSystem,
    lambdas_desc: &[f64],
    opts: &LassoOptions,
) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(lambdas_desc.len());
    for &lam in lambdas_desc {
        let warm = out.last().map(|t| t.view());
        let fit = solve_gram(sys, lam, warm, opts);
        out.push(fit.theta);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]] * 2.0 - x[[i, 1]] + 0.1 * rng.random_range(-1.0..1.0));
        (x, y)
    }

    #[test]
    fn above_lambda_max_is_zero() {
        let (x, y) = random_problem(1, 30, 12);
        let lm = lambda_max(x.view(), y.view());
        assert!(fit_lasso(x.view(), y.view(), lm).unwrap().iter().all(|&t| t == 0.0));
        assert!(fit_lasso(x.view(), y.view(), 2.0 * lm).unwrap().iter().all(|&t| t == 0.0));
        assert!(fit_lasso(x.view(), y.view(), 0.99 * lm).unwrap().iter().any(|&t| t != 0.0));
    }

    #[test]
    fn one_dimensional_soft_threshold() {
        let n = 8;
        let y = Array1::from(vec![1.0, 2.0, 3.0, 0.5, 2.5, 1.5, 2.0, 3.5]);
        let m = y.sum() / n as f64;
        let x = Array2::ones((n, 1));
        for lambda in [0.0, 1.0, 5.0, 20.0, 40.0] {
            let theta = fit_lasso(x.view(), y.view(), lambda).unwrap()[0];
            let oracle = m.signum() * (m.abs() - lambda / (2.0 * n as f64)).max(0.0);
            assert_abs_diff_eq!(theta, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_columns_stay_zero() {
        let (mut x, y) = random_problem(3, 20, 6);
        x.column_mut(4).fill(0.0);
        let theta = fit_lasso(x.view(), y.view(), 0.0).unwrap();
        assert_eq!(theta[4], 0.0);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        let (mut x, y) = random_problem(4, 10, 3);
        assert!(fit_lasso(x.slice(ndarray::s![..0, ..]), y.slice(ndarray::s![..0]), 1.0).is_err());
        x[[2, 1]] = f64::NAN;
        assert!(matches!(fit_lasso(x.view(), y.view(), 1.0), Err(LearError::NonFinite(_))));
    }

    #[test]
    fn objective_is_monotone() {
        let (x, y) = random_problem(5, 40, 30);
        let opts = LassoOptions {
            record_objective: true,
            ..Default::default()
        };
        let lm = lambda_max(x.view(), y.view());
        let fit = fit_lasso_with(x.view(), y.view(), 0.01 * lm, &opts).unwrap();
        assert!(fit.converged);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let (x, y) = random_problem(6, 50, 20);
        let sys = GramSystem::from_data(x.view(), y.view());
        let lm = sys.lambda_max();
        let lambdas: Vec<f64> = (0..20).map(|i| lm * 0.7f64.powi(i)).collect();
        let path = lasso_path(&sys, &lambdas, &LassoOptions::default());
        for (lam, warm) in lambdas.iter().zip(&path) {
            let cold = solve_gram(&sys, *lam, None, &LassoOptions::default()).theta;
            for (a, b) in warm.iter().zip(cold.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gram_rss_matches_direct_residual() {
        let (x, y) = random_problem(7, 25, 8);
        let sys = GramSystem::from_data(x.view(), y.view());
        let theta = fit_lasso(x.view(), y.view(), 0.5).unwrap();
        let r = &y - &x.dot(&theta);
        assert_abs_diff_eq!(sys.rss(theta.view()), r.dot(&r), epsilon = 1e-9);
    }
}

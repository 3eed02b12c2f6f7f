//! Exact LASSO regularisation path by homotopy (least-angle regression with
//! the lasso modification), in covariance form.
//!
//! With `mu = lambda / 2` and `q = X'y - X'X theta`, the optimality
//! conditions are `q_A = mu * s_A` on the support `A` and `|q_j| <= mu`
//! elsewhere. The solution is piecewise linear in `mu`; between events it
//! moves along `G_AA w = s_A`. Events are a coordinate reaching the
//! boundary (it joins `A`) or an active coefficient crossing zero (it
//! leaves `A`).

use ndarray::{Array1, Array2, ArrayView1};

use super::lasso::{solve_gram, GramSystem, LassoOptions};

/// Steps between exact recomputations of the gradient.
const REFRESH_EVERY: usize = 16;

/// Relative pivot below which a joining column is treated as dependent.
const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor of `G_AA`, grown and shrunk one column at a time.
struct GrowingCholesky {
    l: Array2<f64>,
    k: usize,
}

impl GrowingCholesky {
    fn new(capacity: usize) -> Self {
        Self {
            l: Array2::zeros((capacity, capacity)),
            k: 0,
        }
    }

    /// Appends a column given its cross products with the current set
    /// (`cross`) and its own squared norm. False if it would be singular.
    fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        let k = self.k;
        let mut r = cross.to_vec();
        for i in 0..k {
            let mut s = r[i];
            for m in 0..i {
                s -= self.l[[i, m]] * r[m];
            }
            r[i] = s / self.l[[i, i]];
        }
        let d2 = diag - r.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > PIVOT_TOL * diag.abs()) || !d2.is_finite() {
            return false;
        }
        for (m, v) in r.into_iter().enumerate() {
            self.l[[k, m]] = v;
        }
        self.l[[k, k]] = d2.sqrt();
        self.k += 1;
        true
    }

    /// Removes column `j` and restores the triangular form with Givens
    /// rotations.
    fn remove(&mut self, j: usize) {
        let k = self.k;
        for i in j..k - 1 {
            for m in 0..=i + 1 {
                self.l[[i, m]] = self.l[[i + 1, m]];
            }
        }
        for m in 0..k {
            self.l[[k - 1, m]] = 0.0;
        }
        // rows j.. now carry one entry above the diagonal
        for c in j..k - 1 {
            let (a, b) = (self.l[[c, c]], self.l[[c, c + 1]]);
            let r = a.hypot(b);
            let (cs, sn) = (a / r, b / r);
            for i in c..k - 1 {
                let (x, y) = (self.l[[i, c]], self.l[[i, c + 1]]);
                self.l[[i, c]] = cs * x + sn * y;
                self.l[[i, c + 1]] = -sn * x + cs * y;
            }
            self.l[[c, c + 1]] = 0.0;
            if self.l[[c, c]] < 0.0 {
                for i in c..k - 1 {
                    self.l[[i, c]] = -self.l[[i, c]];
                }
            }
        }
        self.k -= 1;
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut z = b.to_vec();
        for i in 0..k {
            let mut s = z[i];
            for m in 0..i {
                s -= self.l[[i, m]] * z[m];
            }
            z[i] = s / self.l[[i, i]];
        }
        for i in (0..k).rev() {
            let mut s = z[i];
            for m in i + 1..k {
                s -= self.l[[m, i]] * z[m];
            }
            z[i] = s / self.l[[i, i]];
        }
        z
    }
}

/// Solutions at the given penalties (strictly decreasing) along the exact
/// path. Stops early, returning fewer solutions, if the active columns
/// become linearly dependent.
pub fn homotopy_path(sys: &GramSystem, lambdas_desc: &[f64]) -> Vec<Array1<f64>> {
    let p = sys.n_features();
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(lambdas_desc.len());
    let c = &sys.xty;
    let mut theta = Array1::<f64>::zeros(p);
    let mut q = c.clone();
    let mut mu = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let targets: Vec<f64> = lambdas_desc.iter().map(|l| 0.5 * l).collect();
    let mut next = 0;
    while next < targets.len() && targets[next] >= mu {
        out.push(theta.clone());
        next += 1;
    }
    if next == targets.len() || mu == 0.0 {
        while out.len() < targets.len() {
            out.push(theta.clone());
        }
        return out;
    }

    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut in_active = vec![false; p];
    let mut chol = GrowingCholesky::new(p);
    let first = (0..p).fold(0, |b, j| if c[j].abs() > c[b].abs() { j } else { b });
    let join = |j: usize, active: &Vec<usize>, chol: &mut GrowingCholesky| {
        let cross: Vec<f64> = active.iter().map(|&m| sys.gram[[m, j]]).collect();
        chol.push(&cross, sys.gram[[j, j]])
    };
    if !join(first, &active, &mut chol) {
        return out;
    }
    active.push(first);
    signs.push(c[first].signum());
    in_active[first] = true;

    let mut just_left: Option<usize> = None;
    let max_steps = 20 * p + 100;
    let mut steps = 0;
    while steps < max_steps {
        let w = chol.solve(&signs);
        let mut a = Array1::<f64>::zeros(p);
        // G is symmetric: rows are contiguous columns
        for (&m, &wm) in active.iter().zip(&w) {
            a.scaled_add(wm, &sys.gram.row(m));
        }

        let t_end = mu - targets[targets.len() - 1];
        let mut t_best = t_end;
        let mut event: Option<(usize, bool)> = None;
        let tiny = 1e-15 * mu.max(f64::MIN_POSITIVE);
        for j in 0..p {
            if in_active[j] || Some(j) == just_left {
                continue;
            }
            for (num, den) in [(mu - q[j], 1.0 - a[j]), (mu + q[j], 1.0 + a[j])] {
                if den > 1e-12 {
                    let t = num / den;
                    if t > tiny && t < t_best {
                        t_best = t;
                        event = Some((j, true));
                    }
                }
            }
        }
        for (i, &m) in active.iter().enumerate() {
            if w[i] != 0.0 {
                let t = -theta[m] / w[i];
                if t > tiny && t < t_best {
                    t_best = t;
                    event = Some((i, false));
                }
            }
        }

        // emit every target passed by this segment
        while next < targets.len() && (targets[next] >= mu - t_best || event.is_none()) {
            let step = mu - targets[next];
            let mut sol = theta.clone();
            for (&m, &wm) in active.iter().zip(&w) {
                sol[m] += step * wm;
            }
            out.push(sol);
            next += 1;
        }
        if next == targets.len() {
            return out;
        }

        for (&m, &wm) in active.iter().zip(&w) {
            theta[m] += t_best * wm;
        }
        mu -= t_best;
        steps += 1;
        if steps % REFRESH_EVERY == 0 {
            q.assign(c);
            for &m in &active {
                q.scaled_add(-theta[m], &sys.gram.row(m));
            }
        } else {
            q.scaled_add(-t_best, &a);
        }

        match event {
            Some((i, false)) => {
                let m = active.remove(i);
                q[m] = mu * signs[i];
                signs.remove(i);
                in_active[m] = false;
                theta[m] = 0.0;
                chol.remove(i);
                just_left = Some(m);
            }
            Some((j, true)) => {
                if !join(j, &active, &mut chol) {
                    return out;
                }
                active.push(j);
                signs.push(q[j].signum());
                in_active[j] = true;
                just_left = None;
            }
            None => unreachable!("segment without event ends the path"),
        }
    }
    log::debug!("homotopy path stopped after {max_steps} steps");
    out
}

/// Solutions along decreasing penalties: the exact path where it is well
/// defined, coordinate descent (warm-started) for any remainder.
pub fn path_solutions(sys: &GramSystem, lambdas_desc: &[f64], opts: &LassoOptions) -> Vec<Array1<f64>> {
    let mut out = homotopy_path(sys, lambdas_desc);
    if out.len() < lambdas_desc.len() {
        log::debug!(
            "exact path covered {} of {} penalties; finishing by coordinate descent",
            out.len(),
            lambdas_desc.len()
        );
    }
    for &lam in &lambdas_desc[out.len()..] {
        let warm: Option<ArrayView1<'_, f64>> = out.last().map(|t| t.view());
        let fit = solve_gram(sys, lam, warm, opts);
        out.push(fit.theta);
    }
    out
}

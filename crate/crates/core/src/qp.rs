//! Exact solver for small strictly convex QPs
//!
//! ```text
//! minimize    sum_k w_k z_k^2          (w_k > 0)
//! subject to  a_j . z <= b_j           (general rows)
//!             lo_k <= z_k <= hi_k      (box, infinite sides allowed)
//! ```
//!
//! Problems with at most three variables are solved by enumerating working
//! sets; larger ones use a dual active-set method that starts from the
//! unconstrained minimum `z = 0`. Rows are normalized to unit length
//! internally, so rescaling a row does not change the solution.
//!
//! Constraint indices used by [`QpSolution`] and [`Error::Infeasible`] follow
//! [`QpProblem::rows`]: general rows first, then for each variable its finite
//! lower bound followed by its finite upper bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Primal feasibility tolerance on unit-normalized rows.
pub const FEAS_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
const MAX_DIM: usize = 64;
const ENUMERATION_MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    weights: Vec<f64>,
    constraints: Vec<LinearConstraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// A row `a . z <= b` of the unified constraint list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    General(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone)]
struct Row {
    a: Vec<f64>,
    b: f64,
    /// Norm of the original row; the stored row is unit length.
    scale: f64,
}

impl QpProblem {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() > MAX_DIM {
            return Err(Error::param("weights", format!("dimension must be in 1..={MAX_DIM}")));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::param("weights", "all weights must be positive and finite"));
        }
        let n = weights.len();
        Ok(Self {
            weights,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        (self.lower[k], self.upper[k])
    }

    pub fn set_bounds(&mut self, k: usize, lo: f64, hi: f64) -> Result<()> {
        if k >= self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: k });
        }
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::param("bounds", format!("invalid interval [{lo}, {hi}]")));
        }
        self.lower[k] = lo;
        self.upper[k] = hi;
        Ok(())
    }

    pub fn with_bounds(mut self, k: usize, lo: f64, hi: f64) -> Result<Self> {
        self.set_bounds(k, lo, hi)?;
        Ok(self)
    }

    /// Adds `coeffs . z <= bound`.
    pub fn add_constraint(&mut self, coeffs: Vec<f64>, bound: f64) -> Result<()> {
        check_len(self.dim(), coeffs.len())?;
        if coeffs.iter().any(|c| !c.is_finite()) || bound.is_nan() {
            return Err(Error::param("constraint", "coefficients must be finite"));
        }
        self.constraints.push(LinearConstraint { coeffs, bound });
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.weights.iter().zip(z).map(|(w, v)| w * v * v).sum()
    }

    /// Unified row list in the documented index order.
    pub fn rows(&self) -> Vec<(RowKind, Vec<f64>, f64)> {
        let n = self.dim();
        let mut out: Vec<(RowKind, Vec<f64>, f64)> = self
            .constraints
            .iter()
            .enumerate()
            .map(|(j, c)| (RowKind::General(j), c.coeffs.clone(), c.bound))
            .collect();
        for k in 0..n {
            if self.lower[k].is_finite() {
                let mut a = vec![0.0; n];
                a[k] = -1.0;
                out.push((RowKind::Lower(k), a, -self.lower[k]));
            }
            if self.upper[k].is_finite() {
                let mut a = vec![0.0; n];
                a[k] = 1.0;
                out.push((RowKind::Upper(k), a, self.upper[k]));
            }
        }
        out
    }

    /// Largest violation `a . z - b` over all rows (original scaling).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.rows()
            .iter()
            .map(|(_, a, b)| dot(a, z) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Indices (into [`QpProblem::rows`]) of rows tight at the optimum.
    pub active_set: Vec<usize>,
    /// Lagrange multiplier per row, in the original row scaling.
    pub multipliers: Vec<f64>,
}

/// Solves the problem exactly; dispatches on dimension.
pub fn solve(problem: &QpProblem) -> Result<QpSolution> {
    if problem.dim() <= ENUMERATION_MAX_DIM {
        solve_enumerated(problem)
    } else {
        solve_dual_active_set(problem)
    }
}

/// Max-norm of the KKT conditions: stationarity, dual feasibility, primal
/// feasibility (on unit rows) and complementary slackness.
pub fn kkt_residual(problem: &QpProblem, sol: &QpSolution) -> f64 {
    let rows = problem.rows();
    let mut grad: Vec<f64> = problem.weights.iter().zip(&sol.z).map(|(w, z)| 2.0 * w * z).collect();
    let mut worst: f64 = 0.0;
    for ((_, a, b), &lam) in rows.iter().zip(&sol.multipliers) {
        for (g, ak) in grad.iter_mut().zip(a) {
            *g += lam * ak;
        }
        let norm = norm(a).max(f64::MIN_POSITIVE);
        let slack = (dot(a, &sol.z) - b) / norm;
        worst = worst.max(slack.max(0.0)).max((-lam).max(0.0)).max((lam * norm * slack).abs());
    }
    grad.iter().fold(worst, |m, g| m.max(g.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Normalized rows. Zero rows are dropped when satisfied and reported as
/// infeasible otherwise.
fn normalized_rows(problem: &QpProblem) -> Result<(Vec<Row>, Vec<usize>)> {
    let mut rows = Vec::new();
    let mut index = Vec::new();
    for (idx, (_, a, b)) in problem.rows().into_iter().enumerate() {
        let s = norm(&a);
        if s == 0.0 {
            if b < -FEAS_TOL {
                return Err(Error::Infeasible { constraint: idx, violation: -b });
            }
            continue;
        }
        rows.push(Row { a: a.iter().map(|v| v / s).collect(), b: b / s, scale: s });
        index.push(idx);
    }
    Ok((rows, index))
}

fn finish(problem: &QpProblem, rows: &[Row], index: &[usize], mut z: Vec<f64>, lam: &[f64]) -> QpSolution {
    // box bounds are exact; remove rounding overshoot
    for (k, zk) in z.iter_mut().enumerate() {
        let (lo, hi) = problem.bounds(k);
        *zk = zk.clamp(lo, hi);
    }
    let total = problem.rows().len();
    let mut multipliers = vec![0.0; total];
    let mut active_set = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        multipliers[index[r]] = lam[r] / row.scale;
        if (dot(&row.a, &z) - row.b).abs() <= FEAS_TOL {
            active_set.push(index[r]);
        }
    }
    QpSolution { objective: problem.objective(&z), z, active_set, multipliers }
}

fn most_violated(rows: &[Row], index: &[usize], z: &[f64]) -> Error {
    let (r, v) = rows
        .iter()
        .enumerate()
        .map(|(r, row)| (r, dot(&row.a, z) - row.b))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Error::Infeasible { constraint: index.get(r).copied().unwrap_or(0), violation: v.max(0.0) }
}

/// Equality-constrained minimizer on working set `ws`:
/// `z = -H^-1 A^T lam` with `(A H^-1 A^T) lam = -b`, `H = diag(2w)`.
/// Returns `None` when the working rows are (numerically) dependent.
fn solve_working_set(w: &[f64], rows: &[Row], ws: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = w.len();
    let q = ws.len();
    if q == 0 {
        return Some((vec![0.0; n], Vec::new()));
    }
    let hinv: Vec<f64> = w.iter().map(|wk| 0.5 / wk).collect();
    let gram = DMatrix::from_fn(q, q, |p, r| {
        let (ap, ar) = (&rows[ws[p]].a, &rows[ws[r]].a);
        (0..n).map(|k| ap[k] * ar[k] * hinv[k]).sum::<f64>()
    });
    let diag_max = (0..q).map(|p| gram[(p, p)]).fold(0.0, f64::max);
    let chol = gram.cholesky()?;
    let l = chol.l_dirty();
    if (0..q).any(|p| l[(p, p)] * l[(p, p)] <= 1e-12 * diag_max) {
        return None;
    }
    let rhs = DVector::from_iterator(q, ws.iter().map(|&r| -rows[r].b));
    let mut lam = chol.solve(&rhs);
    let primal = |lam: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|k| -hinv[k] * (0..q).map(|p| lam[p] * rows[ws[p]].a[k]).sum::<f64>())
            .collect()
    };
    let mut z = primal(&lam);
    // large multipliers cancel in z; refine until the working rows are tight
    for _ in 0..2 {
        let residual = DVector::from_iterator(q, ws.iter().map(|&r| dot(&rows[r].a, &z) - rows[r].b));
        if residual.amax() <= 1e-14 {
            break;
        }
        lam += chol.solve(&residual);
        z = primal(&lam);
    }
    Some((z, lam.iter().copied().collect()))
}

/// Enumerates working sets by size, then lexicographically, and returns the
/// first primal-dual feasible KKT point. Intended for `n <= 3`.
pub fn solve_enumerated(problem: &QpProblem) -> Result<QpSolution> {
    let (rows, index) = normalized_rows(problem)?;
    let n = problem.dim();
    let m = rows.len();
    for size in 0..=n.min(m) {
        let mut ws: Vec<usize> = (0..size).collect();
        loop {
            if let Some((z, lam_ws)) = solve_working_set(&problem.weights, &rows, &ws) {
                let dual_ok = lam_ws.iter().all(|&l| l >= -DUAL_TOL);
                let primal_ok = rows.iter().all(|row| dot(&row.a, &z) - row.b <= FEAS_TOL);
                if dual_ok && primal_ok {
                    let mut lam = vec![0.0; m];
                    for (p, &r) in ws.iter().enumerate() {
                        lam[r] = lam_ws[p].max(0.0);
                    }
                    return Ok(finish(problem, &rows, &index, z, &lam));
                }
            }
            if !next_combination(&mut ws, m) {
                break;
            }
        }
    }
    Err(most_violated(&rows, &index, &vec![0.0; n]))
}

fn next_combination(c: &mut [usize], m: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < m - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Dual active-set method (Goldfarb-Idnani) specialized to a diagonal
/// Hessian. Each iteration adds the most violated row and takes partial
/// steps that drop rows whose multipliers would turn negative.
pub fn solve_dual_active_set(problem: &QpProblem) -> Result<QpSolution> {
    let (rows, index) = normalized_rows(problem)?;
    let n = problem.dim();
    let m = rows.len();
    let hinv: Vec<f64> = problem.weights.iter().map(|w| 0.5 / w).collect();
    let mut z = vec![0.0; n];
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_iter = 50 * (m + n) + 100;
    let mut iter = 0;

    loop {
        // slack s_j = b_j - a_j . z, violated when negative
        let pick = (0..m)
            .filter(|r| !active.contains(r))
            .map(|r| (r, rows[r].b - dot(&rows[r].a, &z)))
            .filter(|&(_, s)| s < -1e-12)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((p, _)) = pick else { break };
        // normal of the violated row in ">=" form
        let np: Vec<f64> = rows[p].a.iter().map(|v| -v).collect();
        let mut mult_p = 0.0;

        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::NoConvergence { iterations: iter });
            }
            let (dir, r) = step_directions(&hinv, &rows, &active, &np);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (q, &rq) in r.iter().enumerate() {
                if rq > 1e-14 {
                    let t = mult[q] / rq;
                    if t < t1 {
                        t1 = t;
                        drop = Some(q);
                    }
                }
            }
            let curv = dot(&dir, &np);
            let scale = np.iter().zip(&hinv).map(|(v, h)| v * v * h).sum::<f64>();
            let t2 = if curv <= 1e-14 * scale {
                f64::INFINITY
            } else {
                let s_p = rows[p].b - dot(&rows[p].a, &z);
                -s_p / curv
            };

            if t1.is_infinite() && t2.is_infinite() {
                let violation = dot(&rows[p].a, &z) - rows[p].b;
                return Err(Error::Infeasible { constraint: index[p], violation: violation.max(0.0) });
            }
            if t2.is_infinite() {
                for (mq, rq) in mult.iter_mut().zip(&r) {
                    *mq -= t1 * rq;
                }
                mult_p += t1;
                let q = drop.expect("finite t1 has an index");
                active.remove(q);
                mult.remove(q);
                continue;
            }
            let t = t1.min(t2);
            for (zk, dk) in z.iter_mut().zip(&dir) {
                *zk += t * dk;
            }
            for (mq, rq) in mult.iter_mut().zip(&r) {
                *mq -= t * rq;
            }
            mult_p += t;
            if t2 <= t1 {
                active.push(p);
                mult.push(mult_p);
                break;
            }
            let q = drop.expect("finite t1 has an index");
            active.remove(q);
            mult.remove(q);
        }
    }

    if let Some(v) = rows.iter().map(|row| dot(&row.a, &z) - row.b).reduce(f64::max) {
        if v > FEAS_TOL {
            return Err(most_violated(&rows, &index, &z));
        }
    }
    let mut lam = vec![0.0; m];
    for (&r, &u) in active.iter().zip(&mult) {
        lam[r] = u.max(0.0);
    }
    Ok(finish(problem, &rows, &index, z, &lam))
}

/// Primal direction `dir = H^-1 (n - N r)` and dual direction
/// `r = (N^T H^-1 N)^-1 N^T H^-1 n` for active normals `N`.
fn step_directions(hinv: &[f64], rows: &[Row], active: &[usize], np: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = hinv.len();
    let q = active.len();
    if q == 0 {
        return (np.iter().zip(hinv).map(|(v, h)| v * h).collect(), Vec::new());
    }
    // active normals in ">=" form are -a
    let col = |p: usize, k: usize| -rows[active[p]].a[k];
    let gram = DMatrix::from_fn(q, q, |p, s| (0..n).map(|k| col(p, k) * col(s, k) * hinv[k]).sum::<f64>());
    let rhs = DVector::from_fn(q, |p, _| (0..n).map(|k| col(p, k) * hinv[k] * np[k]).sum::<f64>());
    let r = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
    };
    let dir = (0..n)
        .map(|k| hinv[k] * (np[k] - (0..q).map(|p| col(p, k) * r[p]).sum::<f64>()))
        .collect();
    (dir, r.iter().copied().collect())
}

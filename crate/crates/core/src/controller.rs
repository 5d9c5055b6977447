//! Decentralized CLF-CBF density controller and the centralized baseline.
//!
//! Every time derivative the controller needs has the form
//! `-2 l^2 sum_k w_k rho_dot_k(u)`, which is affine in the velocity `u`
//! because the discretized Fokker-Planck rate is
//! `rho_dot = -(u_x A_x + u_y A_y) rho + T B rho`. [`RateForm`] holds that
//! affine map. Minimizing or maximizing it over the box
//! `|u|_inf <= u_max` picks a vertex, componentwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{density_rate, sum_densities, DensityField};
use crate::grid::{Grid, Operators, RegionMask, SparseOperator, Vec2};
use crate::qp::{self, QpProblem};

/// Linear coefficients with magnitude at or below this pick the zero
/// component when optimizing over the velocity box.
pub const TIE_TOL: f64 = 1e-12;

/// Diffusion constant that keeps 99% of the motion noise inside `[-u_max, u_max]`.
pub fn default_diffusion(u_max: f64) -> f64 {
    0.045 * u_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// CLF weight.
    pub alpha: f64,
    /// CBF coefficient.
    pub beta: f64,
    /// Slack weight in the objective.
    pub gamma: f64,
    /// Global safety threshold on `||rho||^2` over the danger region.
    pub epsilon: f64,
    pub u_max: f64,
    /// Diffusion constant `T` in m^2/s.
    pub diffusion: f64,
    /// Team size `N`.
    pub n_total: usize,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and > 0, got {v}")))
            }
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        // the slack weight must be positive for the QP to stay strictly convex
        pos("gamma", self.gamma)?;
        pos("epsilon", self.epsilon)?;
        pos("u_max", self.u_max)?;
        nonneg("diffusion", self.diffusion)?;
        if self.n_total == 0 {
            return Err(Error::param("n_total", "team must have at least one robot"));
        }
        Ok(())
    }
}

/// Affine map `u -> coef . u + constant`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateForm {
    pub coef: Vec2,
    pub constant: f64,
}

impl RateForm {
    pub fn eval(&self, u: Vec2) -> f64 {
        self.coef.dot(&u) + self.constant
    }

    /// Box vertex minimizing the form, with [`TIE_TOL`] tie-breaking to zero.
    pub fn minimizer(&self, u_max: f64) -> Vec2 {
        self.coef.map(|c| vertex_component(-c, u_max))
    }

    pub fn maximizer(&self, u_max: f64) -> Vec2 {
        self.coef.map(|c| vertex_component(c, u_max))
    }
}

fn vertex_component(direction: f64, u_max: f64) -> f64 {
    if direction.abs() <= TIE_TOL {
        0.0
    } else {
        u_max * direction.signum()
    }
}

/// Where a weighted rate integral is taken.
#[derive(Debug, Clone, Copy)]
pub enum Domain<'a> {
    All,
    Region(&'a RegionMask),
}

/// `-2 l^2 sum_{k in domain} weight_k rho_dot_k(u)` for `rho_dot` the rate of `field`.
pub fn rate_form(
    weight: &[f64],
    field: &[f64],
    domain: Domain<'_>,
    diffusion: f64,
    grid: &Grid,
    ops: &Operators,
) -> RateForm {
    let (wx, wy, wb) = match domain {
        Domain::All => (0..grid.len()).fold((0.0, 0.0, 0.0), |acc, k| accumulate(acc, k, weight, field, ops)),
        Domain::Region(mask) => mask
            .cells()
            .iter()
            .fold((0.0, 0.0, 0.0), |acc, &k| accumulate(acc, k, weight, field, ops)),
    };
    let s = 2.0 * grid.cell() * grid.cell();
    RateForm { coef: Vec2::new(s * wx, s * wy), constant: -s * diffusion * wb }
}

#[inline]
fn accumulate(acc: (f64, f64, f64), k: usize, weight: &[f64], field: &[f64], ops: &Operators) -> (f64, f64, f64) {
    let w = weight[k];
    if w == 0.0 {
        return acc;
    }
    (
        acc.0 + w * row_apply(&ops.grad_x, k, field),
        acc.1 + w * row_apply(&ops.grad_y, k, field),
        acc.2 + w * row_apply(&ops.laplacian, k, field),
    )
}

#[inline]
fn row_apply(op: &SparseOperator, k: usize, field: &[f64]) -> f64 {
    op.row(k).map(|(c, v)| v * field[c]).sum()
}

/// `h_i = N_i eps / N - l^2 sum_{k in A} rho_Ni,k^2`.
pub fn local_barrier(
    neighbor_density: &[f64],
    n_i: usize,
    params: &ControllerParams,
    grid: &Grid,
    mask: &RegionMask,
) -> f64 {
    let l2 = grid.cell() * grid.cell();
    n_i as f64 * params.epsilon / params.n_total as f64 - l2 * mask.dot(neighbor_density, neighbor_density)
}

/// `V_i = l^2 sum_k (rho_d - rho_Ni)_k^2`.
pub fn local_lyapunov(neighbor_density: &[f64], target: &[f64], grid: &Grid) -> f64 {
    let l2 = grid.cell() * grid.cell();
    l2 * target
        .iter()
        .zip(neighbor_density)
        .map(|(d, r)| (d - r) * (d - r))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseNeighbors {
    /// `beta_i h_i + sum_j min_u hdot_{j,i}(u)`.
    pub lambda: f64,
    pub h_local: f64,
    /// Worst-case velocity assumed for each neighbor.
    pub controls: Vec<Vec2>,
    /// Worst-case rate field of each neighbor, reused by the main QP.
    pub rates: Vec<DensityField>,
}

/// Predicts, without communication, the neighbor motion that decreases
/// `h_i` the most. `neighbors` excludes robot `i` itself.
pub fn worst_case_neighbor_rate(
    neighbors: &[&DensityField],
    neighbor_density: &DensityField,
    params: &ControllerParams,
    grid: &Grid,
    mask: &RegionMask,
    ops: &Operators,
) -> Result<WorstCaseNeighbors> {
    let h_local = local_barrier(neighbor_density, neighbors.len() + 1, params, grid, mask);
    let l2 = grid.cell() * grid.cell();
    let mut lambda = params.beta * h_local;
    let mut controls = Vec::with_capacity(neighbors.len());
    let mut rates = Vec::with_capacity(neighbors.len());
    for field in neighbors {
        let form = rate_form(neighbor_density, field, Domain::Region(mask), params.diffusion, grid, ops);
        let u = form.minimizer(params.u_max);
        let rate = density_rate(field, u, params.diffusion, ops)?;
        lambda += -2.0 * l2 * mask.dot(neighbor_density, &rate);
        controls.push(u);
        rates.push(rate);
    }
    Ok(WorstCaseNeighbors { lambda, h_local, controls, rates })
}

/// Largest achievable `hdot_i^self` and the velocity attaining it.
pub fn best_self_rate(
    own: &[f64],
    neighbor_density: &[f64],
    params: &ControllerParams,
    grid: &Grid,
    mask: &RegionMask,
    ops: &Operators,
) -> (f64, Vec2) {
    let form = rate_form(neighbor_density, own, Domain::Region(mask), params.diffusion, grid, ops);
    let u = form.maximizer(params.u_max);
    (form.eval(u), u)
}

/// What robot `i` knows when deciding: its own density, its neighbors'
/// densities (excluding itself) and the shared world description.
#[derive(Debug, Clone, Copy)]
pub struct LocalScene<'a> {
    pub own: &'a DensityField,
    pub neighbors: &'a [&'a DensityField],
    pub target: &'a DensityField,
    pub grid: &'a Grid,
    pub mask: &'a RegionMask,
    pub ops: &'a Operators,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: Vec2,
    pub slack: f64,
    pub delta: f64,
    pub lambda: f64,
    pub h_self_rate: f64,
    pub u_safest: Vec2,
    pub h_local: f64,
    pub v_local: f64,
    /// Worst-case neighbor rate fields used in the CBF row.
    pub neighbor_rates: Vec<DensityField>,
}

/// Runs the full per-robot pipeline: worst-case neighbor rate, best self
/// rate, relaxation `delta`, then the 3-variable QP in `(u_x, u_y, s)`.
pub fn decide(scene: &LocalScene<'_>, params: &ControllerParams) -> Result<ControlDecision> {
    let LocalScene { own, neighbors, target, grid, mask, ops } = *scene;
    let rho_n = sum_densities(grid.len(), std::iter::once(own).chain(neighbors.iter().copied()))?;
    let v_local = local_lyapunov(&rho_n, target, grid);

    let worst = worst_case_neighbor_rate(neighbors, &rho_n, params, grid, mask, ops)?;
    let self_form = rate_form(&rho_n, own, Domain::Region(mask), params.diffusion, grid, ops);
    let u_safest = self_form.maximizer(params.u_max);
    let h_self_rate = self_form.eval(u_safest);
    let delta = (worst.lambda + h_self_rate).min(0.0);

    let tracking: Vec<f64> = target.iter().zip(rho_n.iter()).map(|(d, r)| d - r).collect();
    let clf = rate_form(&tracking, own, Domain::All, params.diffusion, grid, ops);

    let mut problem = QpProblem::new(vec![1.0, 1.0, params.gamma])?
        .with_bounds(0, -params.u_max, params.u_max)?
        .with_bounds(1, -params.u_max, params.u_max)?
        .with_bounds(2, 0.0, f64::INFINITY)?;
    // alpha V_i + Vdot_i(u) - s <= 0
    problem.add_constraint(vec![clf.coef.x, clf.coef.y, -1.0], -(params.alpha * v_local + clf.constant))?;
    // lambda + hdot_self(u) >= delta, written so u_safest satisfies it exactly:
    // lambda + c - delta = max(lambda + c, -coef . u_safest)
    let cbf_bound = (worst.lambda + self_form.constant).max(-self_form.coef.dot(&u_safest));
    problem.add_constraint(vec![-self_form.coef.x, -self_form.coef.y, 0.0], cbf_bound)?;

    let sol = qp::solve(&problem)?;
    Ok(ControlDecision {
        u: Vec2::new(sol.z[0], sol.z[1]),
        slack: sol.z[2],
        delta,
        lambda: worst.lambda,
        h_self_rate,
        u_safest,
        h_local: worst.h_local,
        v_local,
        neighbor_rates: worst.rates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedDecision {
    pub controls: Vec<Vec2>,
    /// Aggregate CLF slack.
    pub slack: f64,
    pub v: f64,
    pub h: f64,
}

/// Centralized QP over `(u_1, ..., u_N, s)` together with the global `V` and
/// `h`. The slack vector enters the scalar CLF row through its sum, so at the
/// optimum it is split evenly and acts as one variable with weight `gamma / N`.
pub fn centralized_problem(
    fields: &[DensityField],
    target: &DensityField,
    params: &ControllerParams,
    grid: &Grid,
    mask: &RegionMask,
    ops: &Operators,
) -> Result<(QpProblem, f64, f64)> {
    let n = fields.len();
    if n == 0 || 2 * n + 1 > 64 {
        return Err(Error::param("fields", format!("centralized control supports 1..=31 robots, got {n}")));
    }
    let rho = sum_densities(grid.len(), fields)?;
    let l2 = grid.cell() * grid.cell();
    let v = local_lyapunov(&rho, target, grid);
    let h = params.epsilon - l2 * mask.dot(&rho, &rho);
    let tracking: Vec<f64> = target.iter().zip(rho.iter()).map(|(d, r)| d - r).collect();

    let dim = 2 * n + 1;
    let mut weights = vec![1.0; dim];
    weights[2 * n] = params.gamma / n as f64;
    let mut problem = QpProblem::new(weights)?;
    for k in 0..2 * n {
        problem.set_bounds(k, -params.u_max, params.u_max)?;
    }
    problem.set_bounds(2 * n, 0.0, f64::INFINITY)?;

    let mut clf_row = vec![0.0; dim];
    let mut cbf_row = vec![0.0; dim];
    let (mut clf_const, mut cbf_const) = (0.0, 0.0);
    for (i, f) in fields.iter().enumerate() {
        let fv = rate_form(&tracking, f, Domain::All, params.diffusion, grid, ops);
        let fh = rate_form(&rho, f, Domain::Region(mask), params.diffusion, grid, ops);
        clf_row[2 * i] = fv.coef.x;
        clf_row[2 * i + 1] = fv.coef.y;
        cbf_row[2 * i] = -fh.coef.x;
        cbf_row[2 * i + 1] = -fh.coef.y;
        clf_const += fv.constant;
        cbf_const += fh.constant;
    }
    clf_row[2 * n] = -1.0;
    problem.add_constraint(clf_row, -(params.alpha * v + clf_const))?;
    problem.add_constraint(cbf_row, params.beta * h + cbf_const)?;
    Ok((problem, v, h))
}

/// Solves the centralized QP.
pub fn centralized_control(
    fields: &[DensityField],
    target: &DensityField,
    params: &ControllerParams,
    grid: &Grid,
    mask: &RegionMask,
    ops: &Operators,
) -> Result<CentralizedDecision> {
    let n = fields.len();
    let (problem, v, h) = centralized_problem(fields, target, params, grid, mask, ops)?;
    let sol = qp::solve(&problem)?;
    let controls = (0..n).map(|i| Vec2::new(sol.z[2 * i], sol.z[2 * i + 1])).collect();
    Ok(CentralizedDecision { controls, slack: sol.z[2 * n], v, h })
}

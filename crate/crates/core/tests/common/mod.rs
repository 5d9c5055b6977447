//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fpcbf::controller::{default_diffusion, ControllerParams};
use fpcbf::field::{density_rate, robot_density, target_density, DensityField, GaussianShape, TargetSpec};
use fpcbf::grid::{Grid, Operators, RegionMask, Vec2};
use fpcbf::qp::QpProblem;
use rand::Rng;

/// Reference solution of `min sum w_k z_k^2` s.t. general rows and box
/// bounds, by accelerated projected gradient ascent on the dual of the
/// general rows with adaptive restart. Boxes stay in the primal, where the
/// minimizer is a clip.
pub struct DualOracle {
    pub z: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
}

fn primal_of(problem: &QpProblem, lam: &[f64]) -> Vec<f64> {
    (0..problem.dim())
        .map(|k| {
            let (lo, hi) = problem.bounds(k);
            let g: f64 = problem.constraints().iter().zip(lam).map(|(c, l)| l * c.coeffs[k]).sum();
            (-g / (2.0 * problem.weights()[k])).clamp(lo, hi)
        })
        .collect()
}

fn general_violation(problem: &QpProblem, z: &[f64]) -> f64 {
    problem
        .constraints()
        .iter()
        .map(|c| {
            let a: f64 = c.coeffs.iter().zip(z).map(|(x, y)| x * y).sum();
            let n = c.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            ((a - c.bound) / n).max(0.0)
        })
        .fold(0.0, f64::max)
}

pub fn dual_oracle(problem: &QpProblem, max_iter: usize) -> DualOracle {
    // rows scaled to unit norm so one step size fits all
    let rows: Vec<(Vec<f64>, f64)> = problem
        .constraints()
        .iter()
        .map(|c| {
            let n = c.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
            (c.coeffs.iter().map(|x| x / n).collect(), c.bound / n)
        })
        .collect();
    let mut scaled = QpProblem::new(problem.weights().to_vec()).unwrap();
    for k in 0..problem.dim() {
        let (lo, hi) = problem.bounds(k);
        scaled.set_bounds(k, lo, hi).unwrap();
    }
    for (a, b) in &rows {
        scaled.add_constraint(a.clone(), *b).unwrap();
    }
    let m = rows.len();
    let wmin = problem.weights().iter().copied().fold(f64::INFINITY, f64::min);
    // Lipschitz constant of the dual gradient: ||A||^2 / (2 w_min)
    let lip = m as f64 / (2.0 * wmin);
    let step = 1.0 / lip;

    let mut lam = vec![0.0; m];
    let mut y = lam.clone();
    let mut t: f64 = 1.0;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let z = primal_of(&scaled, &y);
        let next: Vec<f64> = rows
            .iter()
            .zip(&y)
            .map(|((a, b), yl)| {
                let g: f64 = a.iter().zip(&z).map(|(x, v)| x * v).sum::<f64>() - b;
                (yl + step * g).max(0.0)
            })
            .collect();
        let moved: f64 = next.iter().zip(&lam).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // adaptive restart: drop momentum once it points against the ascent step
        let against: f64 = y.iter().zip(&next).zip(&lam).map(|((yv, n), l)| (yv - n) * (n - l)).sum();
        if against > 0.0 {
            t = 1.0;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = next.iter().zip(&lam).map(|(n, l)| n + momentum * (n - l)).collect();
        lam = next;
        t = t_next;
        if moved < 1e-15 && it > 10 {
            break;
        }
    }
    let z = primal_of(&scaled, &lam);
    DualOracle { objective: problem.objective(&z), max_violation: general_violation(problem, &z), z, iterations }
}

/// Random feasible QP: a random interior point certifies feasibility.
pub fn random_feasible_qp(rng: &mut impl Rng, dim: usize, rows: usize, slack_var: bool) -> QpProblem {
    let weights: Vec<f64> = (0..dim)
        .map(|k| if slack_var && k == dim - 1 { rng.random_range(0.5..100.0) } else { rng.random_range(0.2..5.0) })
        .collect();
    let mut p = QpProblem::new(weights).unwrap();
    let mut anchor = vec![0.0; dim];
    for k in 0..dim {
        if slack_var && k == dim - 1 {
            p.set_bounds(k, 0.0, f64::INFINITY).unwrap();
            anchor[k] = rng.random_range(0.0..5.0);
        } else {
            let u = rng.random_range(0.1..2.0);
            p.set_bounds(k, -u, u).unwrap();
            anchor[k] = rng.random_range(-u..u);
        }
    }
    for _ in 0..rows {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let at: f64 = a.iter().zip(&anchor).map(|(x, y)| x * y).sum();
        let slack = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) };
        p.add_constraint(a, at + slack).unwrap();
    }
    p
}

/// Rate of `-2 l^2 sum_A w rho_dot` evaluated from the density rate field.
pub fn weighted_rate(weight: &[f64], field: &[f64], u: Vec2, diffusion: f64, grid: &Grid, mask: &RegionMask, ops: &Operators) -> f64 {
    let rate = density_rate(field, u, diffusion, ops).unwrap();
    let l2 = grid.cell() * grid.cell();
    -2.0 * l2 * mask.cells().iter().map(|&k| weight[k] * rate[k]).sum::<f64>()
}

/// Exhaustive search over the four box corners. A component whose two
/// corner values coincide within `tie` is set to zero.
pub fn enumerate_vertices(f: impl Fn(Vec2) -> f64, u_max: f64, maximize: bool, tie: f64) -> Vec2 {
    let corners = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
    let vals: Vec<f64> = corners.iter().map(|&(x, y)| f(Vec2::new(x * u_max, y * u_max))).collect();
    let key = |v: f64| if maximize { -v } else { v };
    let best = (0..4).min_by(|&a, &b| key(vals[a]).total_cmp(&key(vals[b]))).unwrap();
    let (bx, by) = corners[best];
    // partner corners differ in exactly one component
    let partner = |flip_x: bool| {
        let c = if flip_x { (-bx, by) } else { (bx, -by) };
        corners.iter().position(|&q| q == c).unwrap()
    };
    let x = if (vals[best] - vals[partner(true)]).abs() <= tie { 0.0 } else { bx * u_max };
    let y = if (vals[best] - vals[partner(false)]).abs() <= tie { 0.0 } else { by * u_max };
    Vec2::new(x, y)
}

pub fn random_point(rng: &mut impl Rng, grid: &Grid) -> Vec2 {
    let lo = grid.lower_corner();
    let ext = grid.extent();
    Vec2::new(lo.x + rng.random_range(0.0..ext.x), lo.y + rng.random_range(0.0..ext.y))
}

pub fn fields_at(grid: &Grid, shape: &GaussianShape, pts: &[Vec2]) -> Vec<DensityField> {
    pts.iter().map(|&p| robot_density(grid, p, shape)).collect()
}

/// Random rectangular block of cells.
pub fn random_block(rng: &mut impl Rng, grid: &Grid) -> RegionMask {
    let w = rng.random_range(2..6);
    let h = rng.random_range(2..6);
    let i0 = rng.random_range(0..grid.nx());
    let j0 = rng.random_range(0..grid.ny());
    let cells = (0..h).flat_map(|dj| (0..w).map(move |di| ((j0 + dj) % grid.ny(), (i0 + di) % grid.nx())));
    RegionMask::new(grid, cells.map(|(j, i)| grid.flatten(i, j))).unwrap()
}

/// Robots, danger block and controller parameters for oracle scenes.
pub struct Scene {
    pub fields: Vec<DensityField>,
    pub mask: RegionMask,
    pub shape: GaussianShape,
    pub params: ControllerParams,
}

pub fn random_scene(rng: &mut impl Rng, grid: &Grid, n: usize, adversarial: bool) -> Scene {
    let mask = random_block(rng, grid);
    let shape = GaussianShape::isotropic(rng.random_range(10.0..60.0)).unwrap();
    let pts: Vec<Vec2> = (0..n)
        .map(|_| {
            if adversarial && rng.random_bool(0.7) {
                // inside the block or within one cell of it
                let k = mask.cells()[rng.random_range(0..mask.len())];
                let jitter = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)) * grid.cell();
                grid.wrap_point(grid.cell_center(k) + jitter)
            } else {
                random_point(rng, grid)
            }
        })
        .collect();
    let u_max = rng.random_range(0.05..2.0);
    let params = ControllerParams {
        alpha: rng.random_range(0.0..5.0),
        beta: rng.random_range(0.0..5.0),
        gamma: rng.random_range(0.1..100.0),
        epsilon: rng.random_range(0.01..1.0),
        u_max,
        diffusion: if rng.random_bool(0.5) { default_diffusion(u_max) } else { rng.random_range(0.0..0.2) },
        n_total: n + rng.random_range(0..4),
    };
    Scene { fields: fields_at(grid, &shape, &pts), mask, shape, params }
}

pub fn random_target(rng: &mut impl Rng, grid: &Grid, n: usize, shape: &GaussianShape) -> DensityField {
    let spec = TargetSpec {
        center: {
            let p = random_point(rng, grid);
            [p.x, p.y]
        },
        precision: {
            let p = rng.random_range(2.0..20.0);
            [[p, 0.0], [0.0, p]]
        },
        mass_scale: rng.random_range(0.5..1.5),
    };
    target_density(grid, &spec, n, shape).unwrap()
}

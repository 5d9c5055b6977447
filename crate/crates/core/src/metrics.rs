//! Global tracking/safety metrics and offline checks of the local-to-global
//! safety bounds.
//!
//! The verifiers take global knowledge: every robot's density (from true
//! positions), the neighbor graph the controllers used, and the velocities
//! that were actually applied. Rates use the same discretized operator as
//! the controller.

use serde::Serialize;

use crate::controller::{best_self_rate, ControllerParams};
use crate::error::Result;
use crate::field::{density_rate, sum_densities, DensityField};
use crate::graph::NeighborSet;
use crate::grid::{Grid, Operators, RegionMask, Vec2};

/// Everything a verifier needs about one instant.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub fields: &'a [DensityField],
    pub graph: &'a [NeighborSet],
    pub target: &'a DensityField,
    pub grid: &'a Grid,
    pub mask: &'a RegionMask,
    pub ops: &'a Operators,
}

impl Snapshot<'_> {
    pub fn total(&self) -> Result<DensityField> {
        sum_densities(self.grid.len(), self.fields)
    }

    pub fn neighborhood(&self, i: usize) -> Result<DensityField> {
        sum_densities(self.grid.len(), self.graph[i].neighbors.iter().map(|&j| &self.fields[j]))
    }

    pub fn non_neighborhood(&self, i: usize) -> Result<DensityField> {
        sum_densities(self.grid.len(), self.graph[i].non_neighbors.iter().map(|&j| &self.fields[j]))
    }
}

/// `(V, h)` with `V = ||rho_d - rho||^2` over the domain and
/// `h = eps - ||rho||^2` over the danger region.
pub fn global_metrics(
    fields: &[DensityField],
    target: &DensityField,
    epsilon: f64,
    grid: &Grid,
    mask: &RegionMask,
) -> Result<(f64, f64)> {
    let rho = sum_densities(grid.len(), fields)?;
    let diff: Vec<f64> = target.iter().zip(rho.iter()).map(|(d, r)| (d - r) * (d - r)).collect();
    let v = grid.integrate(&diff)?;
    let h = epsilon - grid.integrate_region(&rho.squared(), mask)?;
    Ok((v, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwarmBound {
    /// `2 sum_i int_A rho_dot_i rho_nbar_i`.
    pub lhs: f64,
    /// `beta h + sum_i hdot_i^self`.
    pub rhs: f64,
    pub holds: bool,
}

impl SwarmBound {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

struct RobotTerms {
    /// `2 int_A rho_dot_i rho_nbar_i`.
    coupling: f64,
    h_self: f64,
    /// `int_A rho_i rho`.
    share: f64,
}

fn robot_terms(
    snap: &Snapshot<'_>,
    controls: &[Vec2],
    params: &ControllerParams,
    rho: &DensityField,
) -> Result<Vec<RobotTerms>> {
    let l2 = snap.grid.cell() * snap.grid.cell();
    (0..snap.fields.len())
        .map(|i| {
            let own = &snap.fields[i];
            let rate = density_rate(own, controls[i], params.diffusion, snap.ops)?;
            let nbar = snap.non_neighborhood(i)?;
            let nbhd = snap.neighborhood(i)?;
            let (h_self, _) = best_self_rate(own, &nbhd, params, snap.grid, snap.mask, snap.ops);
            Ok(RobotTerms {
                coupling: 2.0 * l2 * snap.mask.dot(&rate, &nbar),
                h_self,
                share: l2 * snap.mask.dot(own, rho),
            })
        })
        .collect()
}

/// Swarm-level sufficient condition for the global CBF condition.
pub fn verify_swarm_bound(
    snap: &Snapshot<'_>,
    controls: &[Vec2],
    params: &ControllerParams,
    global_beta: f64,
) -> Result<SwarmBound> {
    let rho = snap.total()?;
    let (_, h) = global_metrics(snap.fields, snap.target, params.epsilon, snap.grid, snap.mask)?;
    let terms = robot_terms(snap, controls, params, &rho)?;
    let lhs: f64 = terms.iter().map(|t| t.coupling).sum();
    let rhs = global_beta * h + terms.iter().map(|t| t.h_self).sum::<f64>();
    Ok(SwarmBound { lhs, rhs, holds: lhs <= rhs })
}

/// Per-robot margins `rhs_i - lhs_i` of the tighter individual bound
/// `2 int_A rho_dot_i rho_nbar_i <= beta (eps/N - int_A rho_i rho) + hdot_i^self`.
pub fn verify_individual_bound(
    snap: &Snapshot<'_>,
    controls: &[Vec2],
    params: &ControllerParams,
    global_beta: f64,
) -> Result<Vec<f64>> {
    let rho = snap.total()?;
    let share = params.epsilon / params.n_total as f64;
    Ok(robot_terms(snap, controls, params, &rho)?
        .into_iter()
        .map(|t| global_beta * (share - t.share) + t.h_self - t.coupling)
        .collect())
}

/// `(sum_i ||rho_nbar_i||_A, sum_i ||rho_N_i||_A)` with L2 norms over the
/// danger region.
pub fn verify_norm_bound(snap: &Snapshot<'_>) -> Result<(f64, f64)> {
    let l2 = snap.grid.cell() * snap.grid.cell();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..snap.fields.len() {
        let nbar = snap.non_neighborhood(i)?;
        let nbhd = snap.neighborhood(i)?;
        lhs += (l2 * snap.mask.dot(&nbar, &nbar)).sqrt();
        rhs += (l2 * snap.mask.dot(&nbhd, &nbhd)).sqrt();
    }
    Ok((lhs, rhs))
}

/// Rebuilds `h` from per-robot shares,
/// `sum_i (eps/N - int_A rho_i (rho_N_i + rho_nbar_i))`; equals the direct
/// global barrier up to rounding.
pub fn h_from_shares(snap: &Snapshot<'_>, epsilon: f64) -> Result<f64> {
    let l2 = snap.grid.cell() * snap.grid.cell();
    let n = snap.fields.len() as f64;
    let mut h = 0.0;
    for i in 0..snap.fields.len() {
        let mut all = snap.neighborhood(i)?;
        all.add_assign(&snap.non_neighborhood(i)?)?;
        h += epsilon / n - l2 * snap.mask.dot(&snap.fields[i], &all);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobotMetrics {
    pub h_local: f64,
    pub v_local: f64,
    pub delta: f64,
    pub lambda: f64,
    pub h_self_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub t: f64,
    pub v_global: f64,
    pub h_global: f64,
    pub local_h_sum: f64,
    pub per_robot: Vec<RobotMetrics>,
    pub swarm: SwarmBound,
    pub individual_margins: Vec<f64>,
    pub norm_bound_lhs: f64,
    pub norm_bound_rhs: f64,
    pub collision_stop: bool,
}

impl StepMetrics {
    pub fn min_individual_margin(&self) -> f64 {
        self.individual_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_bound_margin(&self) -> f64 {
        self.norm_bound_rhs - self.norm_bound_lhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::default_diffusion;
    use crate::field::{robot_density, GaussianShape};
    use crate::graph::{delta_disk, Metric};

    struct Fixture {
        grid: Grid,
        ops: Operators,
        mask: RegionMask,
        shape: GaussianShape,
    }

    fn fixture() -> Fixture {
        let grid = Grid::centered(35, 35, 0.1).unwrap();
        let ops = Operators::new(&grid);
        // column of cells x in [-0.1, 0.1]
        let mask = RegionMask::new(&grid, (0..35).flat_map(|j| (16..19).map(move |i| j * 35 + i))).unwrap();
        Fixture { grid, ops, mask, shape: GaussianShape::isotropic(25.0).unwrap() }
    }

    fn params(n: usize) -> ControllerParams {
        ControllerParams { alpha: 1.0, beta: 1.0, gamma: 10.0, epsilon: 0.2, u_max: 0.5, diffusion: default_diffusion(0.5), n_total: n }
    }

    fn fields(fx: &Fixture, pts: &[(f64, f64)]) -> (Vec<Vec2>, Vec<DensityField>) {
        let pos: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        let f = pos.iter().map(|&p| robot_density(&fx.grid, p, &fx.shape)).collect();
        (pos, f)
    }

    #[test]
    fn global_metric_identities() {
        let fx = fixture();
        let (_, f) = fields(&fx, &[(1.2, 0.3), (-1.0, 0.8)]);
        let target = sum_densities(fx.grid.len(), &f).unwrap();
        let (v, h) = global_metrics(&f, &target, 0.2, &fx.grid, &fx.mask).unwrap();
        assert_eq!(v, 0.0);
        let rho = sum_densities(fx.grid.len(), &f).unwrap();
        let on_a = fx.grid.integrate_region(&rho.squared(), &fx.mask).unwrap();
        assert!((h + on_a - 0.2).abs() < 1e-15);
        let empty = RegionMask::empty(&fx.grid);
        assert_eq!(global_metrics(&f, &target, 0.2, &fx.grid, &empty).unwrap().1, 0.2);
    }

    #[test]
    fn full_graph_has_no_coupling() {
        let fx = fixture();
        let (pos, f) = fields(&fx, &[(0.3, 0.0), (-0.3, 0.2), (0.5, -0.6)]);
        let graph = delta_disk(&pos, 10.0, &Metric::Torus(fx.grid));
        let target = DensityField::zeros(fx.grid.len());
        let snap = Snapshot { fields: &f, graph: &graph, target: &target, grid: &fx.grid, mask: &fx.mask, ops: &fx.ops };
        let u = vec![Vec2::new(-0.5, 0.2), Vec2::new(0.5, 0.0), Vec2::new(-0.1, 0.4)];
        let b = verify_swarm_bound(&snap, &u, &params(3), 1.0).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert_eq!(verify_norm_bound(&snap).unwrap().0, 0.0);
    }

    #[test]
    fn single_robot_has_no_coupling() {
        let fx = fixture();
        let (pos, f) = fields(&fx, &[(0.3, 0.0)]);
        let graph = delta_disk(&pos, 0.5, &Metric::Torus(fx.grid));
        let target = DensityField::zeros(fx.grid.len());
        let snap = Snapshot { fields: &f, graph: &graph, target: &target, grid: &fx.grid, mask: &fx.mask, ops: &fx.ops };
        let b = verify_swarm_bound(&snap, &[Vec2::new(-0.5, 0.0)], &params(1), 1.0).unwrap();
        assert_eq!(b.lhs, 0.0);
        let m = verify_individual_bound(&snap, &[Vec2::new(-0.5, 0.0)], &params(1), 1.0).unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn mirrored_pair_balances_norm_bound() {
        let fx = fixture();
        // mirror images about x = 0, farther apart than the radius
        let (pos, f) = fields(&fx, &[(-0.25, 0.4), (0.25, 0.4)]);
        let graph = delta_disk(&pos, 0.3, &Metric::Torus(fx.grid));
        assert!(!graph[0].contains(1));
        let target = DensityField::zeros(fx.grid.len());
        let snap = Snapshot { fields: &f, graph: &graph, target: &target, grid: &fx.grid, mask: &fx.mask, ops: &fx.ops };
        let (lhs, rhs) = verify_norm_bound(&snap).unwrap();
        assert!(lhs > 0.0);
        assert!((lhs - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn shares_rebuild_global_barrier() {
        let fx = fixture();
        let (pos, f) = fields(&fx, &[(0.3, 0.0), (-0.2, 0.2), (0.1, -0.9), (1.4, 1.1)]);
        let graph = delta_disk(&pos, 0.6, &Metric::Torus(fx.grid));
        let target = DensityField::zeros(fx.grid.len());
        let snap = Snapshot { fields: &f, graph: &graph, target: &target, grid: &fx.grid, mask: &fx.mask, ops: &fx.ops };
        let (_, h) = global_metrics(&f, &target, 0.2, &fx.grid, &fx.mask).unwrap();
        assert!((h_from_shares(&snap, 0.2).unwrap() - h).abs() < 1e-9);
    }

    #[test]
    fn individual_margins_sum_to_swarm_margin_under_equal_beta() {
        // sum_i [beta(eps/N - share_i) + hself_i - coupling_i] = beta h + sum hself - lhs
        let fx = fixture();
        let (pos, f) = fields(&fx, &[(0.3, 0.0), (-0.2, 0.5), (0.4, -0.9)]);
        let graph = delta_disk(&pos, 0.7, &Metric::Torus(fx.grid));
        let target = DensityField::zeros(fx.grid.len());
        let snap = Snapshot { fields: &f, graph: &graph, target: &target, grid: &fx.grid, mask: &fx.mask, ops: &fx.ops };
        let u = vec![Vec2::new(-0.5, 0.5), Vec2::new(0.5, -0.5), Vec2::new(0.0, 0.5)];
        let p = params(3);
        let swarm = verify_swarm_bound(&snap, &u, &p, 2.0).unwrap();
        let ind: f64 = verify_individual_bound(&snap, &u, &p, 2.0).unwrap().iter().sum();
        assert!((swarm.margin() - ind).abs() < 1e-12);
    }
}

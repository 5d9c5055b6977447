//! Synchronous discrete-time swarm simulation.
//!
//! Each step: measure, build the graph, synthesize fields, decide every
//! robot on the frozen snapshot, apply the collision stop, integrate with
//! optional Brownian noise, wrap, then log metrics for the pre-move snapshot.

use std::time::Instant;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{
    best_self_rate, centralized_control, decide, worst_case_neighbor_rate, ControllerParams, LocalScene,
};
use crate::error::{Error, Result};
use crate::field::{robot_density, sum_densities, target_density, DensityField, GaussianShape};
use crate::graph::{delta_disk, Metric, NeighborSet};
use crate::grid::{Grid, Operators, RegionMask, Vec2};
use crate::metrics::{
    global_metrics, verify_individual_bound, verify_norm_bound, verify_swarm_bound, RobotMetrics, Snapshot,
    StepMetrics,
};
use crate::scenario::{PositionSource, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Decentralized,
    Centralized,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Decentralized => "decentralized",
            ControlMode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobotState {
    pub id: usize,
    pub x_true: Vec2,
    pub x_meas: Vec2,
    pub u_last: Vec2,
}

/// Static data shared by every step of a run.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: Grid,
    pub ops: Operators,
    pub mask: RegionMask,
    pub shape: GaussianShape,
    pub target: DensityField,
    pub params: ControllerParams,
    pub verifier_beta: f64,
}

impl World {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let grid = scenario.grid.build()?;
        let shape = scenario.robot_shape()?;
        let params = scenario.controller_params();
        params.validate()?;
        Ok(World {
            ops: Operators::new(&grid),
            mask: scenario.danger_mask(&grid)?,
            target: target_density(&grid, &scenario.target, params.n_total, &shape)?,
            shape,
            params,
            verifier_beta: scenario.verifier.beta,
            grid,
        })
    }

    pub fn fields(&self, positions: &[Vec2]) -> Vec<DensityField> {
        positions.iter().map(|&p| robot_density(&self.grid, p, &self.shape)).collect()
    }
}

/// Robot positions and applied commands at the start of one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub step: usize,
    pub t: f64,
    pub robots: Vec<RobotState>,
    pub collision_stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub metrics: StepMetrics,
    pub frame: Frame,
    /// Wall time of each robot's control computation in seconds.
    pub decide_times: Vec<f64>,
}

const STREAM_LOCALIZATION: u64 = 0;
const STREAM_MOTION: u64 = 1;

pub struct Simulation<'a> {
    scenario: &'a Scenario,
    world: World,
    mode: ControlMode,
    seed: u64,
    step: usize,
    robots: Vec<RobotState>,
    localization: Option<Matrix2<f64>>,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, mode: ControlMode) -> Result<Self> {
        scenario.validate()?;
        let world = World::from_scenario(scenario)?;
        let robots = scenario
            .initial_positions()?
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                let p = world.grid.wrap_point(p);
                RobotState { id, x_true: p, x_meas: p, u_last: Vec2::zeros() }
            })
            .collect();
        let scale = scenario.noise.localization_scale;
        let localization = if scale > 0.0 {
            let cov = world.shape.covariance() * scale;
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::validation("noise.localization_scale", "covariance not positive definite"))?;
            Some(chol.l())
        } else {
            None
        };
        Ok(Simulation { scenario, world, mode, seed: scenario.sim.seed, step: 0, robots, localization })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn true_positions(&self) -> Vec<Vec2> {
        self.robots.iter().map(|r| r.x_true).collect()
    }

    /// Independent normal pair for `(step, robot, purpose)`; the result does
    /// not depend on the order robots are processed in.
    fn normal_pair(&self, robot: usize, purpose: u64) -> Vec2 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.step as u64) << 32) | ((robot as u64) << 1) | purpose);
        Vec2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    }

    fn graph(&self, positions: &[Vec2]) -> Vec<NeighborSet> {
        let metric = if self.scenario.sim.periodic_graph { Metric::Torus(self.world.grid) } else { Metric::Plane };
        delta_disk(positions, self.scenario.sim.detection_radius, &metric)
    }

    pub fn step(&mut self) -> Result<StepOutput> {
        let w = &self.world;
        let n = self.robots.len();
        let dt = self.scenario.sim.dt;

        // measure
        for i in 0..n {
            let noise = match &self.localization {
                Some(l) => l * self.normal_pair(i, STREAM_LOCALIZATION),
                None => Vec2::zeros(),
            };
            let r = &mut self.robots[i];
            r.x_meas = w.grid.wrap_point(r.x_true + noise);
        }
        let measured: Vec<Vec2> = self.robots.iter().map(|r| r.x_meas).collect();
        let truth = self.true_positions();

        // graph and fields
        let graph = self.graph(match self.scenario.sim.graph_positions {
            PositionSource::Measured => &measured,
            PositionSource::True => &truth,
        });
        let fields = w.fields(&measured);

        // decide
        let mut controls = Vec::with_capacity(n);
        let mut per_robot = Vec::with_capacity(n);
        let mut decide_times = Vec::with_capacity(n);
        match self.mode {
            ControlMode::Decentralized => {
                for i in 0..n {
                    let neighbors: Vec<&DensityField> = graph[i].others().map(|j| &fields[j]).collect();
                    let scene = LocalScene {
                        own: &fields[i],
                        neighbors: &neighbors,
                        target: &w.target,
                        grid: &w.grid,
                        mask: &w.mask,
                        ops: &w.ops,
                    };
                    let start = Instant::now();
                    let d = decide(&scene, &w.params).map_err(|e| self.wrap(i, e))?;
                    decide_times.push(start.elapsed().as_secs_f64());
                    controls.push(d.u);
                    per_robot.push(RobotMetrics {
                        h_local: d.h_local,
                        v_local: d.v_local,
                        delta: d.delta,
                        lambda: d.lambda,
                        h_self_rate: d.h_self_rate,
                    });
                }
            }
            ControlMode::Centralized => {
                let start = Instant::now();
                let d = centralized_control(&fields, &w.target, &w.params, &w.grid, &w.mask, &w.ops)
                    .map_err(|e| self.wrap(0, e))?;
                let per = start.elapsed().as_secs_f64() / n as f64;
                decide_times.resize(n, per);
                controls = d.controls;
                for i in 0..n {
                    per_robot.push(robot_diagnostics(w, &fields, &graph[i]).map_err(|e| self.wrap(i, e))?);
                }
            }
        }

        // collision stop
        let mut collision_stop = false;
        let radius = self.scenario.sim.collision_radius;
        if radius > 0.0 {
            let mut stop = vec![false; n];
            for i in 0..n {
                for j in i + 1..n {
                    if w.grid.displacement(measured[i], measured[j]).norm() < radius {
                        stop[i] = true;
                        stop[j] = true;
                    }
                }
            }
            for (u, s) in controls.iter_mut().zip(&stop) {
                if *s {
                    *u = Vec2::zeros();
                    collision_stop = true;
                }
            }
        }

        // metrics on the pre-move snapshot, true-position fields
        let true_fields = w.fields(&truth);
        let metrics = step_metrics(w, self.step, self.step as f64 * dt, &true_fields, &graph, &controls, per_robot)?;
        let metrics = StepMetrics { collision_stop, ..metrics };

        for (r, &u) in self.robots.iter_mut().zip(&controls) {
            r.u_last = u;
        }
        let frame = Frame { step: self.step, t: self.step as f64 * dt, robots: self.robots.clone(), collision_stop };

        // integrate, wrap
        let sigma = (2.0 * w.params.diffusion * dt).sqrt();
        for i in 0..n {
            let noise = if self.scenario.noise.motion && sigma > 0.0 {
                self.normal_pair(i, STREAM_MOTION) * sigma
            } else {
                Vec2::zeros()
            };
            let r = &mut self.robots[i];
            r.x_true = w.grid.wrap_point(r.x_true + controls[i] * dt + noise);
        }
        self.step += 1;
        Ok(StepOutput { metrics, frame, decide_times })
    }

    fn wrap(&self, robot: usize, source: Error) -> Error {
        Error::Controller { robot, step: self.step, source: Box::new(source) }
    }
}

/// Per-robot pipeline quantities that do not depend on the chosen command.
fn robot_diagnostics(w: &World, fields: &[DensityField], nbhd: &NeighborSet) -> Result<RobotMetrics> {
    let neighbors: Vec<&DensityField> = nbhd.others().map(|j| &fields[j]).collect();
    let own = &fields[nbhd.robot];
    let rho_n = sum_densities(w.grid.len(), nbhd.neighbors.iter().map(|&j| &fields[j]))?;
    let worst = worst_case_neighbor_rate(&neighbors, &rho_n, &w.params, &w.grid, &w.mask, &w.ops)?;
    let (h_self_rate, _) = best_self_rate(own, &rho_n, &w.params, &w.grid, &w.mask, &w.ops);
    Ok(RobotMetrics {
        h_local: worst.h_local,
        v_local: crate::controller::local_lyapunov(&rho_n, &w.target, &w.grid),
        delta: (worst.lambda + h_self_rate).min(0.0),
        lambda: worst.lambda,
        h_self_rate,
    })
}

fn step_metrics(
    w: &World,
    step: usize,
    t: f64,
    fields: &[DensityField],
    graph: &[NeighborSet],
    controls: &[Vec2],
    per_robot: Vec<RobotMetrics>,
) -> Result<StepMetrics> {
    let snap = Snapshot { fields, graph, target: &w.target, grid: &w.grid, mask: &w.mask, ops: &w.ops };
    let (v_global, h_global) = global_metrics(fields, &w.target, w.params.epsilon, &w.grid, &w.mask)?;
    let swarm = verify_swarm_bound(&snap, controls, &w.params, w.verifier_beta)?;
    let individual_margins = verify_individual_bound(&snap, controls, &w.params, w.verifier_beta)?;
    let (norm_bound_lhs, norm_bound_rhs) = verify_norm_bound(&snap)?;
    Ok(StepMetrics {
        step,
        t,
        v_global,
        h_global,
        local_h_sum: per_robot.iter().map(|r| r.h_local).sum(),
        per_robot,
        swarm,
        individual_margins,
        norm_bound_lhs,
        norm_bound_rhs,
        collision_stop: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: ControlMode,
    pub metrics: Vec<StepMetrics>,
    pub frames: Vec<Frame>,
    /// Per-robot per-step control computation times in seconds.
    pub decide_times: Vec<f64>,
    pub final_positions: Vec<Vec2>,
    pub final_v: f64,
    pub final_h: f64,
}

impl RunLog {
    pub fn initial_v(&self) -> f64 {
        self.metrics.first().map_or(self.final_v, |m| m.v_global)
    }

    /// Smallest global barrier value over all logged steps and the final state.
    pub fn min_h(&self) -> f64 {
        self.metrics.iter().map(|m| m.h_global).fold(self.final_h, f64::min)
    }
}

pub fn run(scenario: &Scenario, mode: ControlMode) -> Result<RunLog> {
    run_seeded(scenario, mode, scenario.sim.seed)
}

pub fn run_seeded(scenario: &Scenario, mode: ControlMode, seed: u64) -> Result<RunLog> {
    let mut sim = Simulation::new(scenario, mode)?.with_seed(seed);
    let steps = scenario.sim.steps;
    let mut metrics = Vec::with_capacity(steps);
    let mut frames = Vec::with_capacity(steps);
    let mut decide_times = Vec::new();
    for _ in 0..steps {
        let out = sim.step()?;
        metrics.push(out.metrics);
        frames.push(out.frame);
        decide_times.extend(out.decide_times);
    }
    let final_positions = sim.true_positions();
    let w = sim.world();
    let (final_v, final_h) = global_metrics(&w.fields(&final_positions), &w.target, w.params.epsilon, &w.grid, &w.mask)?;
    Ok(RunLog { mode, metrics, frames, decide_times, final_positions, final_v, final_h })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra: &str, positions: &str) -> Scenario {
        let text = format!(
            r#"
name = "t"
[grid]
nx = 20
ny = 20
cell = 0.1
[robots]
precision = [[25.0, 0.0], [0.0, 25.0]]
positions = {positions}
[target]
center = [0.5, 0.5]
precision = [[4.0, 0.0], [0.0, 4.0]]
[[danger]]
type = "box"
min = [-0.8, -0.8]
max = [-0.5, -0.5]
[controller]
alpha = 1.0
beta = 1.0
gamma = 10.0
epsilon = 0.1
u_max = 0.5
[verifier]
beta = 1.0
[sim]
dt = 0.05
steps = 4
detection_radius = 1.0
seed = 9
{extra}
"#
        );
        Scenario::from_toml_str(&text).unwrap()
    }

    #[test]
    fn zero_velocity_keeps_positions() {
        let mut s = scenario("", "[[0.1, 0.2], [0.3, -0.1]]");
        s.controller.u_max = 1e-300;
        s.controller.diffusion = Some(0.0);
        let log = run(&s, ControlMode::Decentralized).unwrap();
        for (p, q) in log.final_positions.iter().zip(s.robots.positions.as_ref().unwrap()) {
            assert!((p - Vec2::from(*q)).norm() < 1e-250);
        }
    }

    #[test]
    fn wraps_across_edge() {
        let s = scenario("", "[[0.94, 0.0]]");
        let mut sim = Simulation::new(&s, ControlMode::Decentralized).unwrap();
        sim.robots[0].x_true = Vec2::new(0.999, 0.0);
        sim.step().unwrap();
        let x = sim.robots()[0].x_true.x;
        let u = sim.robots()[0].u_last.x;
        let expected = if 0.999 + u * 0.05 >= 1.0 { 0.999 + u * 0.05 - 2.0 } else { 0.999 + u * 0.05 };
        assert!((x - expected).abs() < 1e-12);
        assert!((-1.0..1.0).contains(&x));
    }

    #[test]
    fn noisy_runs_are_reproducible() {
        let s = scenario("[noise]\nmotion = true\nlocalization_scale = 0.1", "[[0.1, 0.2], [0.3, -0.1], [0.0, 0.4]]");
        let a = run(&s, ControlMode::Decentralized).unwrap();
        let b = run(&s, ControlMode::Decentralized).unwrap();
        assert_eq!(a.final_positions, b.final_positions);
        assert_eq!(a.metrics, b.metrics);
        let c = run_seeded(&s, ControlMode::Decentralized, 10).unwrap();
        assert_ne!(a.final_positions, c.final_positions);
    }

    #[test]
    fn speed_bound_without_noise() {
        let s = scenario("", "[[0.1, 0.2], [0.3, -0.1], [0.0, 0.4]]");
        let log = run(&s, ControlMode::Decentralized).unwrap();
        let grid = s.grid.build().unwrap();
        let mut prev: Vec<Vec2> = log.frames[0].robots.iter().map(|r| r.x_true).collect();
        let next_positions = log.frames[1..].iter().map(|f| f.robots.iter().map(|r| r.x_true).collect::<Vec<_>>());
        for next in next_positions.chain(std::iter::once(log.final_positions.clone())) {
            for (a, b) in prev.iter().zip(&next) {
                let d = grid.displacement(*a, *b);
                assert!(d.amax() <= 0.5 * 0.05 + 1e-15, "{d:?}");
            }
            prev = next;
        }
    }

    #[test]
    fn full_graph_has_zero_coupling() {
        let s = scenario("", "[[0.1, 0.2], [0.3, -0.1], [-0.6, -0.2]]");
        let mut s = s;
        s.sim.detection_radius = 10.0;
        let log = run(&s, ControlMode::Decentralized).unwrap();
        for m in &log.metrics {
            assert_eq!(m.swarm.lhs, 0.0);
        }
    }

    #[test]
    fn collision_stop_zeroes_both() {
        let mut s = scenario("", "[[0.1, 0.2], [0.15, 0.2], [-0.5, 0.3]]");
        s.sim.collision_radius = 0.1;
        let mut sim = Simulation::new(&s, ControlMode::Decentralized).unwrap();
        let out = sim.step().unwrap();
        assert!(out.metrics.collision_stop);
        assert_eq!(out.frame.robots[0].u_last, Vec2::zeros());
        assert_eq!(out.frame.robots[1].u_last, Vec2::zeros());
    }

    #[test]
    fn centralized_mode_runs() {
        let s = scenario("", "[[0.1, 0.2], [0.3, -0.1], [-0.6, -0.2]]");
        let log = run(&s, ControlMode::Centralized).unwrap();
        assert_eq!(log.metrics.len(), 4);
        assert!(log.decide_times.iter().all(|&t| t >= 0.0));
    }
}

//! Scenario files.
//!
//! A scenario is a TOML document with the tables `[grid]`, `[robots]`,
//! `[target]`, `[[danger]]`, `[controller]`, `[verifier]`, `[sim]` and
//! `[noise]`. Unknown keys are rejected. See `scenarios/README.md` for the
//! schema.

use std::path::Path;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{default_diffusion, ControllerParams};
use crate::error::{Error, Result};
use crate::field::{GaussianShape, TargetSpec};
use crate::grid::{Grid, RegionMask, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub robots: RobotsSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub danger: Vec<DangerRegion>,
    pub controller: ControllerSpec,
    pub verifier: VerifierSpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cell edge length in meters.
    pub cell: f64,
    /// Center of cell (0, 0); defaults to a grid centered on the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        match self.origin {
            Some(o) => Grid::new(self.nx, self.ny, self.cell, Vec2::from(o)),
            None => Grid::centered(self.nx, self.ny, self.cell),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsSpec {
    /// Matrix in the exponent of every robot Gaussian (1/m^2).
    pub precision: [[f64; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scatter: Option<ScatterSpec>,
}

/// Seeded uniform placement inside a box, away from danger cells and from
/// each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterSpec {
    pub count: usize,
    pub seed: u64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Minimum distance from any danger cell center.
    #[serde(default)]
    pub clearance: f64,
    /// Minimum distance between robots.
    #[serde(default)]
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DangerRegion {
    Box { min: [f64; 2], max: [f64; 2] },
    Circle { center: [f64; 2], radius: f64 },
    Cells { indices: Vec<usize> },
}

impl DangerRegion {
    /// Cells whose centers lie inside the primitive (minimum-image distance
    /// for circles).
    pub fn rasterize(&self, grid: &Grid) -> Result<RegionMask> {
        match self {
            DangerRegion::Box { min, max } => RegionMask::new(
                grid,
                (0..grid.len()).filter(|&k| {
                    let c = grid.cell_center(k);
                    c.x >= min[0] && c.x <= max[0] && c.y >= min[1] && c.y <= max[1]
                }),
            ),
            DangerRegion::Circle { center, radius } => {
                let center = Vec2::from(*center);
                RegionMask::new(
                    grid,
                    (0..grid.len()).filter(|&k| grid.displacement(center, grid.cell_center(k)).norm() <= *radius),
                )
            }
            DangerRegion::Cells { indices } => RegionMask::new(grid, indices.iter().copied()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub u_max: f64,
    /// Defaults to `0.045 * u_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierSpec {
    /// Global CBF coefficient used by the offline bound checks.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionSource {
    #[default]
    Measured,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub steps: usize,
    pub detection_radius: f64,
    #[serde(default)]
    pub collision_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub graph_positions: PositionSource,
    /// Graph distances use the torus metric.
    #[serde(default = "yes")]
    pub periodic_graph: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Brownian motion with per-axis std `sqrt(2 T dt)` per step.
    #[serde(default)]
    pub motion: bool,
    /// Localization covariance as a multiple of the robot covariance
    /// (inverse of the Gaussian precision). 0 disables.
    #[serde(default)]
    pub localization_scale: f64,
}

fn mat(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be >= 0, got {v}")))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn robot_count(&self) -> usize {
        match (&self.robots.positions, &self.robots.scatter) {
            (Some(p), _) => p.len(),
            (None, Some(s)) => s.count,
            (None, None) => 0,
        }
    }

    pub fn robot_shape(&self) -> Result<GaussianShape> {
        GaussianShape::new(mat(&self.robots.precision)).map_err(|e| Error::validation("robots.precision", e.to_string()))
    }

    pub fn controller_params(&self) -> ControllerParams {
        let c = &self.controller;
        ControllerParams {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            epsilon: c.epsilon,
            u_max: c.u_max,
            diffusion: c.diffusion.unwrap_or_else(|| default_diffusion(c.u_max)),
            n_total: self.robot_count(),
        }
    }

    /// Union of all danger regions.
    pub fn danger_mask(&self, grid: &Grid) -> Result<RegionMask> {
        self.danger.iter().enumerate().try_fold(RegionMask::empty(grid), |acc, (i, region)| {
            let mask = region
                .rasterize(grid)
                .map_err(|e| Error::validation(format!("danger[{i}]"), e.to_string()))?;
            Ok(acc.union(&mask))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build().map_err(|e| Error::validation("grid", e.to_string()))?;
        self.robot_shape()?;
        match (&self.robots.positions, &self.robots.scatter) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("robots", "give either `positions` or `scatter`, not both"))
            }
            (None, None) => return Err(Error::validation("robots", "missing `positions` or `scatter`")),
            (Some(p), None) => {
                for (i, q) in p.iter().enumerate() {
                    finite(&format!("robots.positions[{i}]"), q[0])?;
                    finite(&format!("robots.positions[{i}]"), q[1])?;
                }
            }
            (None, Some(s)) => {
                nonneg("robots.scatter.clearance", s.clearance)?;
                nonneg("robots.scatter.separation", s.separation)?;
                if !(s.min[0] < s.max[0] && s.min[1] < s.max[1]) {
                    return Err(Error::validation("robots.scatter", "min must be below max"));
                }
            }
        }
        if self.robot_count() == 0 {
            return Err(Error::validation("robots", "need at least one robot"));
        }
        self.target
            .shape()
            .map_err(|e| Error::validation("target.precision", e.to_string()))?;
        nonneg("target.mass_scale", self.target.mass_scale)?;
        finite("target.center", self.target.center[0])?;
        finite("target.center", self.target.center[1])?;
        for (i, region) in self.danger.iter().enumerate() {
            if let DangerRegion::Circle { radius, .. } = region {
                nonneg(&format!("danger[{i}].radius"), *radius)?;
            }
        }
        self.danger_mask(&grid)?;

        let c = &self.controller;
        nonneg("controller.alpha", c.alpha)?;
        nonneg("controller.beta", c.beta)?;
        positive("controller.gamma", c.gamma)?;
        positive("controller.epsilon", c.epsilon)?;
        positive("controller.u_max", c.u_max)?;
        if let Some(t) = c.diffusion {
            nonneg("controller.diffusion", t)?;
        }
        nonneg("verifier.beta", self.verifier.beta)?;

        positive("dt", self.sim.dt)?;
        if self.sim.steps == 0 {
            return Err(Error::validation("steps", "must be >= 1"));
        }
        positive("sim.detection_radius", self.sim.detection_radius)?;
        nonneg("sim.collision_radius", self.sim.collision_radius)?;
        nonneg("noise.localization_scale", self.noise.localization_scale)?;
        Ok(())
    }

    /// Initial positions, resolving scatter placement.
    pub fn initial_positions(&self) -> Result<Vec<Vec2>> {
        if let Some(p) = &self.robots.positions {
            return Ok(p.iter().map(|&q| Vec2::from(q)).collect());
        }
        let s = self.robots.scatter.as_ref().expect("validated");
        let grid = self.grid.build()?;
        let mask = self.danger_mask(&grid)?;
        let danger: Vec<Vec2> = mask.cells().iter().map(|&k| grid.cell_center(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut out: Vec<Vec2> = Vec::with_capacity(s.count);
        let max_attempts = 100_000;
        for _ in 0..max_attempts {
            if out.len() == s.count {
                break;
            }
            let p = grid.wrap_point(Vec2::new(
                rng.random_range(s.min[0]..s.max[0]),
                rng.random_range(s.min[1]..s.max[1]),
            ));
            let clear = danger.iter().all(|&d| grid.displacement(p, d).norm() >= s.clearance);
            let apart = out.iter().all(|&q| grid.displacement(p, q).norm() >= s.separation);
            if clear && apart {
                out.push(p);
            }
        }
        if out.len() < s.count {
            return Err(Error::validation(
                "robots.scatter",
                format!("placed only {} of {} robots", out.len(), s.count),
            ));
        }
        Ok(out)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml_str(&text)
}

//! Gaussian robot and target densities on the grid, and the discretized
//! Fokker-Planck rate `-(u_x A_x + u_y A_y) rho + T B rho`.

use std::ops::{Deref, DerefMut};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{Grid, Operators, Vec2};

/// Flattened scalar field over the grid. Synthesized densities are
/// nonnegative; rate fields use the same storage and may be signed.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField(Vec<f64>);

impl DensityField {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn add_assign(&mut self, other: &DensityField) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> DensityField {
        DensityField(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn squared(&self) -> DensityField {
        DensityField(self.0.iter().map(|v| v * v).collect())
    }
}

impl Deref for DensityField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DensityField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// The matrix in the exponent of the robot Gaussian,
/// `exp(-1/2 d^T S d)`. It plays the role of a precision (1/m^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianShape {
    precision: Matrix2<f64>,
}

impl GaussianShape {
    pub fn new(precision: Matrix2<f64>) -> Result<Self> {
        if precision.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("precision", "entries must be finite"));
        }
        let asym = (precision[(0, 1)] - precision[(1, 0)]).abs();
        if asym > 1e-12 * precision.abs().max() {
            return Err(Error::param("precision", "matrix must be symmetric"));
        }
        // 2x2 symmetric PD iff leading minor and determinant positive
        if !(precision[(0, 0)] > 0.0 && precision.determinant() > 0.0) {
            return Err(Error::param("precision", "matrix must be positive definite"));
        }
        Ok(Self { precision })
    }

    pub fn isotropic(p: f64) -> Result<Self> {
        Self::new(Matrix2::new(p, 0.0, 0.0, p))
    }

    pub fn precision(&self) -> Matrix2<f64> {
        self.precision
    }

    /// Inverse of the precision matrix, in m^2.
    pub fn covariance(&self) -> Matrix2<f64> {
        self.precision.try_inverse().expect("positive definite")
    }

    #[inline]
    pub fn quadratic_form(&self, d: Vec2) -> f64 {
        d.dot(&(self.precision * d))
    }
}

/// Peak-1 Gaussian centered at `center`, evaluated with minimum-image
/// displacements so it wraps across the periodic boundary.
pub fn robot_density(grid: &Grid, center: Vec2, shape: &GaussianShape) -> DensityField {
    let values = (0..grid.len())
        .map(|k| {
            let d = grid.displacement(center, grid.cell_center(k));
            (-0.5 * shape.quadratic_form(d)).exp()
        })
        .collect();
    DensityField(values)
}

/// Pointwise sum; an empty list yields the zero field of length `len`.
pub fn sum_densities<'a>(
    len: usize,
    fields: impl IntoIterator<Item = &'a DensityField>,
) -> Result<DensityField> {
    let mut acc = DensityField::zeros(len);
    for f in fields {
        acc.add_assign(f)?;
    }
    Ok(acc)
}

/// Signed rate field `-(u_x A_x + u_y A_y) rho + T B rho`.
pub fn density_rate(field: &[f64], u: Vec2, diffusion: f64, ops: &Operators) -> Result<DensityField> {
    check_len(ops.dim(), field.len())?;
    let gx = ops.grad_x.apply(field)?;
    let gy = ops.grad_y.apply(field)?;
    let lap = ops.laplacian.apply(field)?;
    let values = gx
        .iter()
        .zip(&gy)
        .zip(&lap)
        .map(|((&ax, &ay), &b)| -(u.x * ax + u.y * ay) + diffusion * b)
        .collect();
    Ok(DensityField(values))
}

/// Static Gaussian target. With `mass_scale = 1` the target carries the mass
/// of `n` robot Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub center: [f64; 2],
    pub precision: [[f64; 2]; 2],
    #[serde(default = "one")]
    pub mass_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl TargetSpec {
    pub fn shape(&self) -> Result<GaussianShape> {
        GaussianShape::new(Matrix2::new(
            self.precision[0][0],
            self.precision[0][1],
            self.precision[1][0],
            self.precision[1][1],
        ))
    }
}

pub fn target_density(
    grid: &Grid,
    spec: &TargetSpec,
    n_robots: usize,
    robot_shape: &GaussianShape,
) -> Result<DensityField> {
    if !(spec.mass_scale >= 0.0 && spec.mass_scale.is_finite()) {
        return Err(Error::param("mass_scale", format!("must be finite and >= 0, got {}", spec.mass_scale)));
    }
    let shape = spec.shape()?;
    let center = Vec2::new(spec.center[0], spec.center[1]);
    if spec.mass_scale == 0.0 || n_robots == 0 {
        return Ok(DensityField::zeros(grid.len()));
    }
    let unit = robot_density(grid, center, &shape);
    let robot_mass = grid.integrate(&robot_density(grid, center, robot_shape))?;
    let unit_mass = grid.integrate(&unit)?;
    let amplitude = spec.mass_scale * n_robots as f64 * robot_mass / unit_mass;
    Ok(unit.scaled(amplitude))
}

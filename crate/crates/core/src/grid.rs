//! Uniform periodic 2D grid, flattened indexing, central-difference operators
//! and midpoint quadrature.
//!
//! Cells are flattened row-major in x: `k = j * nx + i`. Every operator wraps
//! periodically in both axes, so there are no boundary rows.

use std::collections::BTreeSet;

use nalgebra::Vector2;

use crate::error::{check_len, Error, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    cell: f64,
    origin: Vec2,
}

impl Grid {
    /// `origin` is the center of cell `(0, 0)`.
    pub fn new(nx: usize, ny: usize, cell: f64, origin: Vec2) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::param("grid", format!("need at least 3x3 cells, got {nx}x{ny}")));
        }
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::param("cell", format!("must be positive, got {cell}")));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::param("origin", "must be finite"));
        }
        Ok(Self { nx, ny, cell, origin })
    }

    /// Grid whose cell centers are symmetric about the coordinate origin.
    pub fn centered(nx: usize, ny: usize, cell: f64) -> Result<Self> {
        let origin = Vec2::new(
            -0.5 * (nx as f64 - 1.0) * cell,
            -0.5 * (ny as f64 - 1.0) * cell,
        );
        Self::new(nx, ny, cell, origin)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Cell edge length `l` in meters.
    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    /// Number of cells `N_d = nx * ny`.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Domain side lengths in meters.
    pub fn extent(&self) -> Vec2 {
        Vec2::new(self.nx as f64 * self.cell, self.ny as f64 * self.cell)
    }

    /// Lower-left corner of the fundamental domain.
    pub fn lower_corner(&self) -> Vec2 {
        self.origin - Vec2::repeat(0.5 * self.cell)
    }

    #[inline]
    pub fn flatten(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.len());
        (k % self.nx, k / self.nx)
    }

    pub fn cell_center(&self, k: usize) -> Vec2 {
        let (i, j) = self.unflatten(k);
        self.origin + Vec2::new(i as f64 * self.cell, j as f64 * self.cell)
    }

    /// Maps a point into the fundamental domain `[lower, lower + extent)`.
    pub fn wrap_point(&self, p: Vec2) -> Vec2 {
        let lo = self.lower_corner();
        let ext = self.extent();
        Vec2::new(wrap_coord(p.x, lo.x, ext.x), wrap_coord(p.y, lo.y, ext.y))
    }

    /// Minimum-image displacement `to - from` on the torus.
    pub fn displacement(&self, from: Vec2, to: Vec2) -> Vec2 {
        let ext = self.extent();
        let d = to - from;
        Vec2::new(min_image(d.x, ext.x), min_image(d.y, ext.y))
    }

    /// Flattened index of the cell containing `p` (after wrapping).
    pub fn locate(&self, p: Vec2) -> usize {
        let q = self.wrap_point(p) - self.lower_corner();
        let i = ((q.x / self.cell).floor() as usize).min(self.nx - 1);
        let j = ((q.y / self.cell).floor() as usize).min(self.ny - 1);
        self.flatten(i, j)
    }

    /// Midpoint quadrature `l^2 * sum_k f_k`.
    pub fn integrate(&self, field: &[f64]) -> Result<f64> {
        check_len(self.len(), field.len())?;
        Ok(self.cell * self.cell * field.iter().sum::<f64>())
    }

    /// Midpoint quadrature restricted to the cells of `mask`.
    pub fn integrate_region(&self, field: &[f64], mask: &RegionMask) -> Result<f64> {
        check_len(self.len(), field.len())?;
        mask.check_grid(self)?;
        let s: f64 = mask.cells().iter().map(|&k| field[k]).sum();
        Ok(self.cell * self.cell * s)
    }
}

fn wrap_coord(x: f64, lo: f64, ext: f64) -> f64 {
    if x >= lo && x < lo + ext {
        return x;
    }
    let r = (x - lo).rem_euclid(ext);
    // rem_euclid can round up to `ext` for tiny negative inputs
    if r >= ext {
        lo
    } else {
        lo + r
    }
}

fn min_image(d: f64, ext: f64) -> f64 {
    d - ext * (d / ext).round()
}

/// Row-compressed square operator on flattened fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(column, coefficient)` lists. Duplicate columns in a
    /// row are merged.
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if c >= dim {
                    return Err(Error::Dimension { expected: dim, got: c });
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        check_len(dim + 1, row_ptr.len())?;
        Ok(Self { dim, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim];
        self.apply_into(x, &mut y)?;
        Ok(y)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.dim, x.len())?;
        check_len(self.dim, y.len())?;
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *out = self.cols[span.clone()]
                .iter()
                .zip(&self.vals[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
        Ok(())
    }

    /// Exactly rounded column sums.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut per_col = vec![Vec::new(); self.dim];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            per_col[c].push(v);
        }
        per_col.iter().map(|vals| exact_sum(vals)).collect()
    }
}

/// Shewchuk's error-free summation (the algorithm behind Python's `fsum`).
fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    partials.iter().sum()
}

/// Central difference `d/dx`: `(f[i+1] - f[i-1]) / 2l` with periodic wrap.
pub fn build_gradient_x(grid: &Grid) -> SparseOperator {
    let nx = grid.nx();
    let c = 0.5 / grid.cell();
    let rows = (0..grid.len()).map(|k| {
        let (i, j) = grid.unflatten(k);
        vec![
            (grid.flatten((i + 1) % nx, j), c),
            (grid.flatten((i + nx - 1) % nx, j), -c),
        ]
    });
    SparseOperator::from_rows(grid.len(), rows).expect("stencil indices are in range")
}

/// Central difference `d/dy`: `(f[j+1] - f[j-1]) / 2l` with periodic wrap.
pub fn build_gradient_y(grid: &Grid) -> SparseOperator {
    let ny = grid.ny();
    let c = 0.5 / grid.cell();
    let rows = (0..grid.len()).map(|k| {
        let (i, j) = grid.unflatten(k);
        vec![
            (grid.flatten(i, (j + 1) % ny), c),
            (grid.flatten(i, (j + ny - 1) % ny), -c),
        ]
    });
    SparseOperator::from_rows(grid.len(), rows).expect("stencil indices are in range")
}

/// Five-point Laplacian `(sum of 4 neighbors - 4 center) / l^2` with periodic wrap.
pub fn build_laplacian(grid: &Grid) -> SparseOperator {
    let (nx, ny) = (grid.nx(), grid.ny());
    let c = 1.0 / (grid.cell() * grid.cell());
    let rows = (0..grid.len()).map(|k| {
        let (i, j) = grid.unflatten(k);
        vec![
            (k, -4.0 * c),
            (grid.flatten((i + 1) % nx, j), c),
            (grid.flatten((i + nx - 1) % nx, j), c),
            (grid.flatten(i, (j + 1) % ny), c),
            (grid.flatten(i, (j + ny - 1) % ny), c),
        ]
    });
    SparseOperator::from_rows(grid.len(), rows).expect("stencil indices are in range")
}

/// The three constant operators of the discretized Fokker-Planck rate,
/// built once per scenario.
#[derive(Debug, Clone)]
pub struct Operators {
    pub grad_x: SparseOperator,
    pub grad_y: SparseOperator,
    pub laplacian: SparseOperator,
}

impl Operators {
    pub fn new(grid: &Grid) -> Self {
        Self {
            grad_x: build_gradient_x(grid),
            grad_y: build_gradient_y(grid),
            laplacian: build_laplacian(grid),
        }
    }

    pub fn dim(&self) -> usize {
        self.laplacian.dim()
    }
}

/// Deduplicated, sorted set of flattened cell indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionMask {
    cells: Vec<usize>,
    dim: usize,
}

impl RegionMask {
    pub fn new(grid: &Grid, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = cells.into_iter().collect();
        if let Some(&max) = set.iter().next_back() {
            if max >= grid.len() {
                return Err(Error::Dimension { expected: grid.len(), got: max });
            }
        }
        Ok(Self { cells: set.into_iter().collect(), dim: grid.len() })
    }

    pub fn empty(grid: &Grid) -> Self {
        Self { cells: Vec::new(), dim: grid.len() }
    }

    pub fn all(grid: &Grid) -> Self {
        Self { cells: (0..grid.len()).collect(), dim: grid.len() }
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.cells.binary_search(&k).is_ok()
    }

    pub fn union(&self, other: &RegionMask) -> RegionMask {
        let set: BTreeSet<usize> = self.cells.iter().chain(&other.cells).copied().collect();
        RegionMask { cells: set.into_iter().collect(), dim: self.dim.max(other.dim) }
    }

    /// Restricted inner product `sum_{k in mask} a_k b_k`.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cells.iter().map(|&k| a[k] * b[k]).sum()
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dim != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: self.dim });
        }
        Ok(())
    }
}

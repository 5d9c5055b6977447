//! Δ-disk neighbor graph over robot positions.

use crate::grid::{Grid, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Plane,
    /// Minimum-image distance on the grid's torus.
    Torus(Grid),
}

impl Metric {
    pub fn distance(&self, a: Vec2, b: Vec2) -> f64 {
        match self {
            Metric::Plane => (b - a).norm(),
            Metric::Torus(grid) => grid.displacement(a, b).norm(),
        }
    }
}

/// Neighborhood of one robot. `neighbors` includes the robot itself and is
/// sorted; `non_neighbors` is the sorted complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub robot: usize,
    pub neighbors: Vec<usize>,
    pub non_neighbors: Vec<usize>,
}

impl NeighborSet {
    /// `N_i`, including self.
    pub fn count(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors excluding self.
    pub fn others(&self) -> impl Iterator<Item = usize> + '_ {
        let me = self.robot;
        self.neighbors.iter().copied().filter(move |&j| j != me)
    }

    pub fn contains(&self, j: usize) -> bool {
        self.neighbors.binary_search(&j).is_ok()
    }
}

/// Robots `i` and `j` are neighbors iff their distance is `<= radius`.
pub fn delta_disk(positions: &[Vec2], radius: f64, metric: &Metric) -> Vec<NeighborSet> {
    let n = positions.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        for j in i + 1..n {
            let linked = metric.distance(positions[i], positions[j]) <= radius;
            adj[i][j] = linked;
            adj[j][i] = linked;
        }
    }
    adj.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let (neighbors, non_neighbors): (Vec<usize>, Vec<usize>) = (0..n).partition(|&j| row[j]);
            NeighborSet { robot: i, neighbors, non_neighbors }
        })
        .collect()
}

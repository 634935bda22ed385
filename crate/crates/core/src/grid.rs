//! Uniform rectangular node grids in two or three dimensions.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a point lies inside the extents.
const CONTAINS_SLACK: f64 = 1e-12;

/// A uniform node grid on an axis-aligned box.
///
/// Nodes are numbered x-fastest: `node = i + nx * (j + ny * k)`. Unused axes of a
/// two-dimensional grid carry a single node so that three-index arithmetic works
/// for both dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lower: [f64; 3],
    upper: [f64; 3],
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(lower: &[f64], upper: &[f64], shape: &[usize]) -> Result<Self> {
        let dim = shape.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "extent arrays have lengths {} and {}, expected {dim}",
                lower.len(),
                upper.len()
            )));
        }
        let mut g = Grid {
            dim,
            lower: [0.0; 3],
            upper: [0.0; 3],
            shape: [1; 3],
            spacing: [1.0; 3],
        };
        for a in 0..dim {
            if shape[a] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} nodes, need at least 3",
                    shape[a]
                )));
            }
            if !(lower[a].is_finite() && upper[a].is_finite()) || upper[a] <= lower[a] {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} extent [{}, {}] is empty",
                    lower[a], upper[a]
                )));
            }
            g.lower[a] = lower[a];
            g.upper[a] = upper[a];
            g.shape[a] = shape[a];
            g.spacing[a] = (upper[a] - lower[a]) / (shape[a] - 1) as f64;
        }
        Ok(g)
    }

    /// Unit square or cube with `n` nodes per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Grid::new(&vec![0.0; dim], &vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest per-axis node count.
    pub fn max_axis_nodes(&self) -> usize {
        self.shape().iter().copied().max().unwrap_or(0)
    }

    /// Diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| (self.upper[a] - self.lower[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.shape[0] * (idx[1] + self.shape[1] * idx[2])
    }

    #[inline]
    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let i = node % self.shape[0];
        let r = node / self.shape[0];
        [i, r % self.shape[1], r / self.shape[1]]
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.shape[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing[axis]
        }
    }

    /// Coordinates of a node; unused axes are zero.
    #[inline]
    pub fn point(&self, node: usize) -> [f64; 3] {
        let idx = self.multi_index(node);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.coord(a, idx[a]);
        }
        p
    }

    /// Number of boundary faces a node lies on.
    pub fn boundary_faces(&self, node: usize) -> usize {
        let idx = self.multi_index(node);
        (0..self.dim)
            .filter(|&a| idx[a] == 0 || idx[a] + 1 == self.shape[a])
            .count()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_faces(node) > 0
    }

    /// Nodes lying on two or more faces, where the outward normal is undefined.
    pub fn is_corner(&self, node: usize) -> bool {
        self.boundary_faces(node) > 1
    }

    /// Outward unit normal at a boundary node lying on exactly one face.
    pub fn outward_normal(&self, node: usize) -> Option<[f64; 3]> {
        if self.boundary_faces(node) != 1 {
            return None;
        }
        let idx = self.multi_index(node);
        let mut n = [0.0; 3];
        for a in 0..self.dim {
            if idx[a] == 0 {
                n[a] = -1.0;
            } else if idx[a] + 1 == self.shape[a] {
                n[a] = 1.0;
            }
        }
        Some(n)
    }

    /// Boundary node indices in ascending order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&n| self.is_boundary(n)).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..self.dim).all(|a| {
            let slack = CONTAINS_SLACK * (self.upper[a] - self.lower[a]);
            p[a] >= self.lower[a] - slack && p[a] <= self.upper[a] + slack
        })
    }

    /// Node nearest to a point (clamped to the grid).
    pub fn nearest_node(&self, p: &[f64]) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let f = ((p[a] - self.lower[a]) / self.spacing[a]).round();
            idx[a] = f.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
        }
        self.index(idx)
    }

    /// The sub-grid spanned by node index ranges `lo[a]..=hi[a]`.
    pub fn subgrid(&self, lo: &[usize], hi: &[usize]) -> Result<Grid> {
        let lower: Vec<f64> = (0..self.dim).map(|a| self.coord(a, lo[a])).collect();
        let upper: Vec<f64> = (0..self.dim).map(|a| self.coord(a, hi[a])).collect();
        let shape: Vec<usize> = (0..self.dim).map(|a| hi[a] + 1 - lo[a]).collect();
        Grid::new(&lower, &upper, &shape)
    }

    /// Short stable digest of the grid geometry.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{}", self.dim).as_bytes());
        for a in 0..self.dim {
            hasher.update(self.lower[a].to_le_bytes());
            hasher.update(self.upper[a].to_le_bytes());
            hasher.update((self.shape[a] as u64).to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Straight segment `t -> (1 - t) from + t to`, `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: [f64; 3],
    pub to: [f64; 3],
}

impl Segment {
    pub fn new(from: &[f64], to: &[f64]) -> Self {
        let mut s = Segment {
            from: [0.0; 3],
            to: [0.0; 3],
        };
        s.from[..from.len()].copy_from_slice(from);
        s.to[..to.len()].copy_from_slice(to);
        s
    }

    #[inline]
    pub fn point(&self, t: f64) -> [f64; 3] {
        [
            (1.0 - t) * self.from[0] + t * self.to[0],
            (1.0 - t) * self.from[1] + t * self.to[1],
            (1.0 - t) * self.from[2] + t * self.to[2],
        ]
    }

    /// Velocity `to - from`.
    #[inline]
    pub fn velocity(&self) -> [f64; 3] {
        [
            self.to[0] - self.from[0],
            self.to[1] - self.from[1],
            self.to[2] - self.from[2],
        ]
    }

    pub fn length(&self) -> f64 {
        let v = self.velocity();
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }

    /// Number of quadrature steps so that each step is at most half the finest spacing.
    pub fn steps_for(&self, grid: &Grid) -> usize {
        let h = 0.5 * grid.min_spacing();
        ((self.length() / h).ceil() as usize).max(1)
    }

    pub fn within(&self, grid: &Grid) -> bool {
        grid.contains(&self.from) && grid.contains(&self.to)
    }
}

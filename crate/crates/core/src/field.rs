//! Grid-sampled scalar, vector and matrix fields.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;

fn check_finite(values: &[f64], ncomp: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFinite { node: pos / ncomp }),
        None => Ok(()),
    }
}

/// Multilinear interpolation of `ncomp` interleaved components at `p`.
pub(crate) fn interpolate(
    grid: &Grid,
    values: &[f64],
    ncomp: usize,
    p: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if !grid.contains(p) {
        return Err(Error::OutsideDomain {
            point: p[..grid.dim()].to_vec(),
        });
    }
    let dim = grid.dim();
    let shape = grid.shape();
    let lower = grid.lower();
    let h = grid.spacing();
    let mut cell = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dim {
        let s = (p[a] - lower[a]) / h[a];
        let c = (s.floor().max(0.0) as usize).min(shape[a] - 2);
        cell[a] = c;
        frac[a] = (s - c as f64).clamp(0.0, 1.0);
    }
    out[..ncomp].iter_mut().for_each(|o| *o = 0.0);
    let corners = 1usize << dim;
    for corner in 0..corners {
        let mut idx = [0usize; 3];
        let mut w = 1.0;
        for a in 0..dim {
            let up = (corner >> a) & 1;
            idx[a] = cell[a] + up;
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        let base = grid.index(idx) * ncomp;
        for c in 0..ncomp {
            out[c] += w * values[base + c];
        }
    }
    Ok(())
}

/// A real value at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "scalar field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, 1)?;
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|n| f(&grid.point(n))).collect();
        ScalarField::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, value: f64) -> Result<Self> {
        ScalarField::new(grid.clone(), vec![value; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Nodewise map, checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScalarField::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ScalarField::new(self.grid.clone(), values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of the field restricted to a sub-grid described by its node offset.
    pub fn restrict(&self, sub: &Grid, offset: &[usize]) -> Result<Self> {
        let values = restrict_values(&self.grid, &self.values, 1, sub, offset);
        ScalarField::new(sub.clone(), values)
    }
}

/// A `dim`-vector at every node, components interleaved per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let dim = grid.dim();
        if values.len() != dim * grid.len() {
            return Err(Error::InvalidArgument(format!(
                "vector field has {} values for {} nodes of dimension {dim}",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, dim)?;
        Ok(VectorField { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> [f64; 3]) -> Result<Self> {
        let dim = grid.dim();
        let mut values = Vec::with_capacity(dim * grid.len());
        for n in 0..grid.len() {
            let v = f(&grid.point(n));
            values.extend_from_slice(&v[..dim]);
        }
        VectorField::new(grid.clone(), values)
    }

    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            grid: grid.clone(),
            values: vec![0.0; grid.dim() * grid.len()],
        }
    }

    /// Assemble from per-component scalar fields.
    pub fn from_components(components: &[ScalarField]) -> Result<Self> {
        let grid = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("no components".into()))?
            .grid()
            .clone();
        let dim = grid.dim();
        if components.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "{} components for dimension {dim}",
                components.len()
            )));
        }
        if components.iter().any(|c| c.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
        let mut values = vec![0.0; dim * grid.len()];
        for (a, c) in components.iter().enumerate() {
            for n in 0..grid.len() {
                values[n * dim + a] = c.at(n);
            }
        }
        VectorField::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn component(&self, a: usize) -> ScalarField {
        let d = self.dim();
        ScalarField {
            grid: self.grid.clone(),
            values: (0..self.grid.len()).map(|n| self.values[n * d + a]).collect(),
        }
    }

    /// Largest Euclidean norm over nodes.
    pub fn max_norm(&self) -> f64 {
        let d = self.dim();
        self.values
            .chunks(d)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &VectorField) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        VectorField::new(self.grid.clone(), values)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        VectorField::new(self.grid.clone(), self.values.iter().map(|v| v * s).collect())
    }

    pub fn restrict(&self, sub: &Grid, offset: &[usize]) -> Result<Self> {
        let values = restrict_values(&self.grid, &self.values, self.dim(), sub, offset);
        VectorField::new(sub.clone(), values)
    }
}

/// A `rows x cols` matrix at every node, stored row-major per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    symmetric: bool,
}

impl MatrixField {
    /// Build a field; when `symmetric` is set every node must be exactly symmetric.
    pub fn new(
        grid: Grid,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        symmetric: bool,
    ) -> Result<Self> {
        if values.len() != rows * cols * grid.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix field has {} values for {} nodes of {rows}x{cols}",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, rows * cols)?;
        let f = MatrixField {
            grid,
            rows,
            cols,
            values,
            symmetric,
        };
        if symmetric {
            if rows != cols {
                return Err(Error::InvalidArgument("non-square symmetric field".into()));
            }
            if let Some(node) = f.first_asymmetric_node() {
                return Err(Error::InvalidArgument(format!(
                    "matrix field flagged symmetric is asymmetric at node {node}"
                )));
            }
        }
        Ok(f)
    }

    /// Build from per-entry scalar fields, `entries[i * cols + j]`.
    pub fn from_entries(
        entries: &[ScalarField],
        rows: usize,
        cols: usize,
        symmetric: bool,
    ) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::InvalidArgument("wrong number of entry fields".into()));
        }
        let grid = entries[0].grid().clone();
        if entries.iter().any(|e| e.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
        let mut values = vec![0.0; rows * cols * grid.len()];
        for (e, f) in entries.iter().enumerate() {
            for n in 0..grid.len() {
                values[n * rows * cols + e] = f.at(n);
            }
        }
        MatrixField::new(grid, rows, cols, values, symmetric)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn entry(&self, node: usize, i: usize, j: usize) -> f64 {
        self.values[node * self.rows * self.cols + i * self.cols + j]
    }

    #[inline]
    pub fn node_slice(&self, node: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.values[node * s..(node + 1) * s]
    }

    pub fn matrix(&self, node: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.node_slice(node))
    }

    pub fn entry_field(&self, i: usize, j: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: (0..self.grid.len()).map(|n| self.entry(n, i, j)).collect(),
        }
    }

    /// First node where `|M - M^T| != 0`, if any.
    pub fn first_asymmetric_node(&self) -> Option<usize> {
        if self.rows != self.cols {
            return Some(0);
        }
        (0..self.grid.len()).find(|&n| {
            (0..self.rows).any(|i| (0..i).any(|j| self.entry(n, i, j) != self.entry(n, j, i)))
        })
    }

    /// Largest `|M_ij - M_ji|` over all nodes.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.grid.len() {
            for i in 0..self.rows {
                for j in 0..i.min(self.cols) {
                    worst = worst.max((self.entry(n, i, j) - self.entry(n, j, i)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nodewise matrix map producing a field of the given shape.
    pub fn map_nodes(
        &self,
        rows: usize,
        cols: usize,
        symmetric: bool,
        f: impl Fn(usize, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols * self.grid.len());
        for n in 0..self.grid.len() {
            let m = f(n, &self.matrix(n));
            for i in 0..rows {
                for j in 0..cols {
                    values.push(m[(i, j)]);
                }
            }
        }
        MatrixField::new(self.grid.clone(), rows, cols, values, symmetric)
    }

    pub fn restrict(&self, sub: &Grid, offset: &[usize]) -> Result<Self> {
        let values = restrict_values(&self.grid, &self.values, self.rows * self.cols, sub, offset);
        MatrixField::new(sub.clone(), self.rows, self.cols, values, self.symmetric)
    }
}

/// Several interleaved components per node, used for packed interpolation.
#[derive(Debug, Clone)]
pub struct MultiField {
    grid: Grid,
    ncomp: usize,
    values: Vec<f64>,
}

impl MultiField {
    pub fn new(grid: Grid, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != ncomp * grid.len() {
            return Err(Error::InvalidArgument("packed field length mismatch".into()));
        }
        check_finite(&values, ncomp)?;
        Ok(MultiField {
            grid,
            ncomp,
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.ncomp..(node + 1) * self.ncomp]
    }

    pub fn sample_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        interpolate(&self.grid, &self.values, self.ncomp, p, out)
    }
}

fn restrict_values(
    grid: &Grid,
    values: &[f64],
    ncomp: usize,
    sub: &Grid,
    offset: &[usize],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(ncomp * sub.len());
    for n in 0..sub.len() {
        let idx = sub.multi_index(n);
        let mut g = [0usize; 3];
        for a in 0..3 {
            g[a] = idx[a] + offset.get(a).copied().unwrap_or(0);
        }
        let src = grid.index(g) * ncomp;
        out.extend_from_slice(&values[src..src + ncomp]);
    }
    out
}

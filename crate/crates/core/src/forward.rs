//! Finite-difference Dirichlet solver for the conductivity equation.

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::ops::gradient;

/// Positive conductivity field with declared bounds.
#[derive(Debug, Clone)]
pub struct Conductivity {
    sigma: ScalarField,
    min: f64,
    max: f64,
}

impl Conductivity {
    pub fn new(sigma: ScalarField, min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max >= min) {
            return Err(Error::InvalidArgument(format!(
                "conductivity bounds [{min}, {max}] must be positive and ordered"
            )));
        }
        if let Some((node, &value)) = sigma
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v < min || v > max)
        {
            return Err(Error::ConductivityBounds {
                node,
                value,
                min,
                max,
            });
        }
        Ok(Conductivity { sigma, min, max })
    }

    /// Bounds taken from the field itself; fails on non-positive values.
    pub fn from_field(sigma: ScalarField) -> Result<Self> {
        let (min, max) = (sigma.min(), sigma.max());
        if min <= 0.0 {
            let node = sigma.values().iter().position(|&v| v <= 0.0).unwrap_or(0);
            return Err(Error::ConductivityBounds {
                node,
                value: min,
                min: f64::MIN_POSITIVE,
                max,
            });
        }
        Conductivity::new(sigma, min, max)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Conductivity::from_field(ScalarField::from_fn(grid, f)?)
    }

    pub fn sigma(&self) -> &ScalarField {
        &self.sigma
    }

    pub fn grid(&self) -> &Grid {
        self.sigma.grid()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.min, self.max)
    }

    pub fn log_sigma(&self) -> ScalarField {
        self.sigma.map(f64::ln).expect("positive conductivity has finite log")
    }
}

/// Dirichlet data on every boundary node, in ascending node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Illumination {
    nodes: Vec<usize>,
    values: Vec<f64>,
}

impl Illumination {
    pub fn new(grid: &Grid, nodes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if nodes != grid.boundary_nodes() {
            return Err(Error::InvalidArgument(
                "illumination must list every boundary node in ascending order".into(),
            ));
        }
        if nodes.len() != values.len() {
            return Err(Error::InvalidArgument("illumination length mismatch".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: nodes[i] });
        }
        Ok(Illumination { nodes, values })
    }

    pub fn from_fn(grid: &Grid, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let nodes = grid.boundary_nodes();
        let values = nodes.iter().map(|&n| g(&grid.point(n))).collect();
        Illumination::new(grid, nodes, values)
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().copied().zip(self.values.iter().copied())
    }

    /// Boundary minima: the smallest value and every node attaining it.
    pub fn minimizers(&self) -> (f64, Vec<usize>) {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let nodes = self
            .iter()
            .filter(|&(_, v)| v == min)
            .map(|(n, _)| n)
            .collect();
        (min, nodes)
    }

    pub fn range(&self) -> (f64, f64) {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }
}

/// A discrete solution with its final relative residual.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ScalarField,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Face coefficients `harmonic(sigma_n, sigma_{n+e_a}) / h_a^2`, indexed by the lower node.
struct Stencil<'g> {
    grid: &'g Grid,
    strides: [usize; 3],
    faces: Vec<Vec<f64>>,
    diag: Vec<f64>,
    interior: Vec<bool>,
}

impl<'g> Stencil<'g> {
    fn new(grid: &'g Grid, sigma: &[f64]) -> Self {
        let dim = grid.dim();
        let shape = grid.shape();
        let strides = [1, shape[0], shape[0] * shape[1]];
        let len = grid.len();
        let mut faces = vec![vec![0.0; len]; dim];
        for a in 0..dim {
            let h2 = grid.spacing()[a].powi(2);
            for n in 0..len {
                if grid.multi_index(n)[a] + 1 < shape[a] {
                    let (s0, s1) = (sigma[n], sigma[n + strides[a]]);
                    faces[a][n] = 2.0 * s0 * s1 / (s0 + s1) / h2;
                }
            }
        }
        let interior: Vec<bool> = (0..len).map(|n| !grid.is_boundary(n)).collect();
        let mut diag = vec![0.0; len];
        for n in 0..len {
            if interior[n] {
                diag[n] = (0..dim)
                    .map(|a| faces[a][n] + faces[a][n - strides[a]])
                    .sum();
            }
        }
        Stencil {
            grid,
            strides,
            faces,
            diag,
            interior,
        }
    }

    /// `out = A x` on interior rows; boundary rows are zero.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.grid.dim();
        for n in 0..x.len() {
            if !self.interior[n] {
                out[n] = 0.0;
                continue;
            }
            let mut acc = 0.0;
            for a in 0..dim {
                let s = self.strides[a];
                acc += self.faces[a][n] * (x[n] - x[n + s]) + self.faces[a][n - s] * (x[n] - x[n - s]);
            }
            out[n] = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `div(sigma grad u) = 0` with `u = g` on the boundary by Jacobi-preconditioned CG.
pub fn solve_dirichlet(c: &Conductivity, g: &Illumination, tol: f64) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("solver tolerance {tol} must be positive")));
    }
    let grid = c.grid();
    if g.nodes() != grid.boundary_nodes().as_slice() {
        return Err(Error::GridMismatch);
    }
    let len = grid.len();
    let stencil = Stencil::new(grid, c.sigma().values());

    let mut lifted = vec![0.0; len];
    for (n, v) in g.iter() {
        lifted[n] = v;
    }
    // b = -A_IB g on interior rows
    let mut b = vec![0.0; len];
    stencil.apply(&lifted, &mut b);
    b.iter_mut().for_each(|v| *v = -*v);

    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; len];
    let cap = 50 * grid.max_axis_nodes();
    let mut iterations = 0;
    let mut rel = 0.0;
    if b_norm > 0.0 {
        let mut r = b.clone();
        let precond = |r: &[f64], z: &mut [f64]| {
            for n in 0..len {
                z[n] = if stencil.interior[n] { r[n] / stencil.diag[n] } else { 0.0 };
            }
        };
        let mut z = vec![0.0; len];
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; len];
        let mut rz = dot(&r, &z);
        rel = 1.0;
        while rel > tol {
            if iterations >= cap {
                return Err(Error::NotConverged {
                    iterations,
                    residual: rel,
                });
            }
            stencil.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for n in 0..len {
                x[n] += alpha * p[n];
                r[n] -= alpha * ap[n];
            }
            iterations += 1;
            rel = dot(&r, &r).sqrt() / b_norm;
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for n in 0..len {
                p[n] = z[n] + beta * p[n];
            }
        }
    }
    for (n, v) in g.iter() {
        x[n] = v;
    }
    Ok(Solution {
        u: ScalarField::new(grid.clone(), x)?,
        residual_norm: rel,
        iterations,
    })
}

/// The rescaled flux `sqrt(sigma) grad u`.
pub fn flux_field(c: &Conductivity, u: &Solution) -> Result<VectorField> {
    if c.grid() != u.u.grid() {
        return Err(Error::GridMismatch);
    }
    if let Some(node) = c.sigma().values().iter().position(|&s| s < 0.0) {
        let (min, max) = c.bounds();
        return Err(Error::ConductivityBounds {
            node,
            value: c.sigma().at(node),
            min,
            max,
        });
    }
    let grad = gradient(&u.u);
    let dim = grad.dim();
    let values = grad
        .values()
        .iter()
        .enumerate()
        .map(|(k, g)| c.sigma().at(k / dim).sqrt() * g)
        .collect();
    VectorField::new(grad.grid().clone(), values)
}

/// Solve and take the flux for each illumination in turn.
pub fn fluxes(c: &Conductivity, gs: &[Illumination], tol: f64) -> Result<Vec<VectorField>> {
    gs.iter()
        .map(|g| solve_dirichlet(c, g, tol).and_then(|s| flux_field(c, &s)))
        .collect()
}

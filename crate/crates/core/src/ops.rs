//! Discrete differential operators, sampling and line integration.

use crate::error::{Error, Result};
use crate::field::{interpolate, MatrixField, ScalarField, VectorField};
use crate::grid::{Grid, Segment};

/// Derivative along `axis` of one interleaved component, second order everywhere.
fn partial(grid: &Grid, values: &[f64], ncomp: usize, comp: usize, axis: usize, out: &mut [f64]) {
    let shape = grid.shape();
    let n = shape[axis];
    let h = grid.spacing()[axis];
    let stride = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let inv2h = 0.5 / h;
    for node in 0..grid.len() {
        let i = grid.multi_index(node)[axis];
        let at = |k: isize| values[((node as isize + k * stride as isize) as usize) * ncomp + comp];
        out[node] = if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h
        } else if i + 1 == n {
            (3.0 * at(0) - 4.0 * at(-1) + at(-2)) * inv2h
        } else {
            (at(1) - at(-1)) * inv2h
        };
    }
}

/// Gradient of every interleaved component: result is `[node][comp][axis]` flattened.
pub(crate) fn gradient_components(grid: &Grid, values: &[f64], ncomp: usize) -> Vec<f64> {
    let dim = grid.dim();
    let len = grid.len();
    let mut out = vec![0.0; len * ncomp * dim];
    let mut buf = vec![0.0; len];
    for c in 0..ncomp {
        for a in 0..dim {
            partial(grid, values, ncomp, c, a, &mut buf);
            for n in 0..len {
                out[(n * ncomp + c) * dim + a] = buf[n];
            }
        }
    }
    out
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    let values = gradient_components(g, f.values(), 1);
    VectorField::new(g.clone(), values).expect("gradient of finite values is finite")
}

pub fn divergence(a: &VectorField) -> ScalarField {
    let g = a.grid();
    let dim = g.dim();
    let mut total = vec![0.0; g.len()];
    let mut buf = vec![0.0; g.len()];
    for axis in 0..dim {
        partial(g, a.values(), dim, axis, axis, &mut buf);
        total.iter_mut().zip(&buf).for_each(|(t, b)| *t += b);
    }
    ScalarField::new(g.clone(), total).expect("divergence of finite values is finite")
}

/// Result of [`curl`]: scalar in two dimensions, vector in three.
#[derive(Debug, Clone)]
pub enum Curl {
    Planar(ScalarField),
    Spatial(VectorField),
}

pub fn curl(a: &VectorField) -> Result<Curl> {
    let g = a.grid();
    let dim = g.dim();
    let d = gradient_components(g, a.values(), dim);
    // d[(n*dim + c)*dim + axis] = partial_axis A_c
    let at = |n: usize, c: usize, axis: usize| d[(n * dim + c) * dim + axis];
    match dim {
        2 => {
            let v = (0..g.len()).map(|n| at(n, 1, 0) - at(n, 0, 1)).collect();
            Ok(Curl::Planar(ScalarField::new(g.clone(), v)?))
        }
        3 => {
            let mut v = Vec::with_capacity(3 * g.len());
            for n in 0..g.len() {
                v.push(at(n, 2, 1) - at(n, 1, 2));
                v.push(at(n, 0, 2) - at(n, 2, 0));
                v.push(at(n, 1, 0) - at(n, 0, 1));
            }
            Ok(Curl::Spatial(VectorField::new(g.clone(), v)?))
        }
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// Multilinear sampling at an arbitrary point of the grid box.
pub trait Sample {
    type Value;
    fn sample(&self, p: &[f64]) -> Result<Self::Value>;
}

impl Sample for ScalarField {
    type Value = f64;
    fn sample(&self, p: &[f64]) -> Result<f64> {
        let mut out = [0.0];
        interpolate(self.grid(), self.values(), 1, p, &mut out)?;
        Ok(out[0])
    }
}

impl Sample for VectorField {
    type Value = [f64; 3];
    fn sample(&self, p: &[f64]) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        interpolate(self.grid(), self.values(), self.dim(), p, &mut out)?;
        Ok(out)
    }
}

impl Sample for MatrixField {
    type Value = Vec<f64>;
    fn sample(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows() * self.cols()];
        interpolate(self.grid(), self.values(), self.rows() * self.cols(), p, &mut out)?;
        Ok(out)
    }
}

pub fn sample<F: Sample>(field: &F, p: &[f64]) -> Result<F::Value> {
    field.sample(p)
}

/// Composite midpoint rule for the integral of `velocity . A` along the segment.
pub fn line_integral(a: &VectorField, seg: &Segment) -> Result<f64> {
    let grid = a.grid();
    if !seg.within(grid) {
        return Err(Error::OutsideDomain {
            point: if grid.contains(&seg.from) {
                seg.to[..grid.dim()].to_vec()
            } else {
                seg.from[..grid.dim()].to_vec()
            },
        });
    }
    let dim = grid.dim();
    let steps = seg.steps_for(grid);
    let vel = seg.velocity();
    let dt = 1.0 / steps as f64;
    let mut buf = [0.0; 3];
    let mut sum = 0.0;
    for s in 0..steps {
        let p = seg.point((s as f64 + 0.5) * dt);
        interpolate(grid, a.values(), dim, &p, &mut buf)?;
        sum += (0..dim).map(|c| vel[c] * buf[c]).sum::<f64>();
    }
    Ok(sum * dt)
}

/// Bound on the midpoint error of [`line_integral`] for the field `a`: segment length
/// times `dim * h^2 / 8` times the largest second difference per unit length squared.
pub fn quadrature_tolerance(a: &VectorField, seg: &Segment) -> f64 {
    let grid = a.grid();
    let dim = grid.dim();
    let shape = grid.shape();
    let mut worst: f64 = 0.0;
    for axis in 0..dim {
        let h = grid.spacing()[axis];
        let stride = match axis {
            0 => 1,
            1 => shape[0],
            _ => shape[0] * shape[1],
        };
        for node in 0..grid.len() {
            let i = grid.multi_index(node)[axis];
            if i == 0 || i + 1 == shape[axis] {
                continue;
            }
            for c in 0..dim {
                let v = |n: usize| a.values()[n * dim + c];
                let dd = v(node + stride) - 2.0 * v(node) + v(node - stride);
                worst = worst.max(dd.abs() / (h * h));
            }
        }
    }
    let h = grid.spacing().iter().copied().fold(0.0, f64::max);
    seg.length() * dim as f64 * h * h / 8.0 * worst.max(f64::EPSILON)
}

/// Max over nodes of `|f|` plus max over nodes of `|grad f|`.
pub fn w1inf_scalar(f: &ScalarField) -> f64 {
    f.max_abs() + gradient(f).max_norm()
}

fn w1inf_components(grid: &Grid, values: &[f64], ncomp: usize) -> f64 {
    let dim = grid.dim();
    let d = gradient_components(grid, values, ncomp);
    (0..ncomp)
        .map(|c| {
            let sup = (0..grid.len()).fold(0.0f64, |m, n| m.max(values[n * ncomp + c].abs()));
            let sup_grad = (0..grid.len()).fold(0.0f64, |m, n| {
                let base = (n * ncomp + c) * dim;
                m.max(d[base..base + dim].iter().map(|x| x * x).sum::<f64>().sqrt())
            });
            sup + sup_grad
        })
        .fold(0.0, f64::max)
}

/// Largest componentwise W^{1,inf} norm of a vector field.
pub fn w1inf_vector(a: &VectorField) -> f64 {
    w1inf_components(a.grid(), a.values(), a.dim())
}

/// Largest entrywise W^{1,inf} norm of a matrix field.
pub fn w1inf_matrix(m: &MatrixField) -> f64 {
    w1inf_components(m.grid(), m.values(), m.rows() * m.cols())
}

/// W^{1,inf} norm of a difference of two matrix fields on one grid.
pub fn w1inf_matrix_diff(a: &MatrixField, b: &MatrixField) -> Result<f64> {
    if a.grid() != b.grid() || a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::GridMismatch);
    }
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(w1inf_components(a.grid(), &diff, a.rows() * a.cols()))
}

/// W^{1,inf} norm of a difference of two scalar fields on one grid.
pub fn w1inf_scalar_diff(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    Ok(w1inf_scalar(&a.zip_map(b, |x, y| x - y)?))
}

//! Checks of the frame equations against known frames.

use super::rotation_ode::{alphas, f_vector, PointData, CYCLES};
use crate::algebra::{RotationField, TransitionField, VFieldSet};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::Grid;
use crate::ops::gradient_components;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameValidation {
    /// Largest difference between the closed-form `alpha_i` and `R_j . grad R_k`.
    pub alpha_error: f64,
    /// Largest `|curl R_i - sum_l V_il x R_l - F x R_i|`.
    pub curl_error: f64,
    /// Largest `|F - grad log sigma / 2|`, when the true conductivity is given.
    pub f_error: Option<f64>,
    pub checked_nodes: usize,
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn interior(grid: &Grid, node: usize, margin: usize) -> bool {
    let idx = grid.multi_index(node);
    (0..grid.dim()).all(|a| idx[a] >= margin && idx[a] + margin < grid.shape()[a])
}

/// Compare the data-driven frame equations with a known frame field, away from
/// `margin` layers of boundary nodes.
pub fn validate_frames(
    v: &VFieldSet,
    t: &TransitionField,
    truth: &RotationField,
    grad_log_sigma: Option<&VectorField>,
    margin: usize,
) -> Result<FrameValidation> {
    let grid = v.grid();
    if grid.dim() != 3 || v.n() != 3 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if truth.r.grid() != grid || t.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let flat: Vec<f64> = (0..grid.len()).flat_map(|n| truth.flat(n)).collect();
    // d[(n*9 + c)*3 + axis]
    let d = gradient_components(grid, &flat, 9);
    let glog_d = gradient_components(grid, &t.sqrt_det.map(f64::ln)?.into_values(), 1);
    let mut out = FrameValidation {
        alpha_error: 0.0,
        curl_error: 0.0,
        f_error: grad_log_sigma.map(|_| 0.0),
        checked_nodes: 0,
    };
    for n in (0..grid.len()).filter(|&n| interior(grid, n, margin)) {
        out.checked_nodes += 1;
        let r = truth.flat(n);
        let mut pd = PointData::default();
        for i in 0..3 {
            for j in 0..3 {
                pd.v[3 * i + j].copy_from_slice(v.get(i, j).at(n));
            }
        }
        pd.grad_log_d.copy_from_slice(&glog_d[3 * n..3 * n + 3]);
        let dr = |c: usize, axis: usize| d[(n * 9 + c) * 3 + axis];
        let al = alphas(&pd.v, &r);
        for &(i, j, k) in &CYCLES {
            for axis in 0..3 {
                let fd: f64 = (0..3).map(|x| r[3 * j + x] * dr(3 * k + x, axis)).sum();
                out.alpha_error = out.alpha_error.max((fd - al[i][axis]).abs());
            }
        }
        let f = f_vector(&pd, &r);
        for i in 0..3 {
            let c = |x: usize, axis: usize| dr(3 * i + x, axis);
            let curl = [c(2, 1) - c(1, 2), c(0, 2) - c(2, 0), c(1, 0) - c(0, 1)];
            let mut rhs = cross(&f, &r[3 * i..3 * i + 3]);
            for l in 0..3 {
                let w = cross(&pd.v[3 * i + l], &r[3 * l..3 * l + 3]);
                (0..3).for_each(|x| rhs[x] += w[x]);
            }
            let e = (0..3).map(|x| (curl[x] - rhs[x]).abs()).fold(0.0, f64::max);
            out.curl_error = out.curl_error.max(e);
        }
        if let (Some(g), Some(fe)) = (grad_log_sigma, out.f_error.as_mut()) {
            let gl = g.at(n);
            let e = (0..3).map(|x| (f[x] - 0.5 * gl[x]).abs()).fold(0.0, f64::max);
            *fe = fe.max(e);
        }
    }
    Ok(out)
}

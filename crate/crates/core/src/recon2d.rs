//! Planar reconstruction: frame angle from data, then the conductivity by segment integration.

use rayon::prelude::*;

use crate::acquisition::PowerDensityData;
use crate::algebra::{build_v, det_threshold, gram_schmidt_t, Construction, TransitionField, VFieldSet};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::forward::Illumination;
use crate::grid::{Grid, Segment};
use crate::ops::{gradient, line_integral, w1inf_matrix_diff, w1inf_scalar};

/// `sqrt(det H)` of the leading 2x2 block, checked against `max(c0^2, floor)` nodewise.
fn checked_sqrt_det(h: &PowerDensityData, c0: f64) -> Result<ScalarField> {
    let grid = h.grid();
    let mut bad = Vec::new();
    let mut worst = (f64::INFINITY, 0.0);
    let vals: Vec<f64> = (0..grid.len())
        .map(|n| {
            let m = h.h.matrix(n).view((0, 0), (2, 2)).into_owned();
            let det = m.determinant();
            let thr = det_threshold(&m, c0);
            if !(det >= thr) {
                bad.push(n);
                if det < worst.0 {
                    worst = (det, thr);
                }
                1.0
            } else {
                det.sqrt()
            }
        })
        .collect();
    if let Some(&node) = bad.first() {
        return Err(Error::Singular {
            det: worst.0,
            threshold: worst.1,
            node,
            count: bad.len(),
        });
    }
    ScalarField::new(grid.clone(), vals)
}

/// `grad theta = (V_12 - V_21 - J grad log d) / 2` with `J` the quarter turn.
pub fn theta_gradient(v: &VFieldSet, h: &PowerDensityData, c0: f64) -> Result<VectorField> {
    if v.n() != 2 || h.grid().dim() != 2 {
        return Err(Error::UnsupportedDimension(h.grid().dim()));
    }
    let d = checked_sqrt_det(h, c0)?;
    let gl = gradient(&d.map(f64::ln)?);
    let (v12, v21) = (v.get(0, 1), v.get(1, 0));
    let grid = h.grid();
    let mut vals = Vec::with_capacity(2 * grid.len());
    for n in 0..grid.len() {
        let g = gl.at(n);
        let j_g = [-g[1], g[0]];
        for a in 0..2 {
            vals.push(0.5 * (v12.at(n)[a] - v21.at(n)[a] - j_g[a]));
        }
    }
    VectorField::new(grid.clone(), vals)
}

/// Boundary point where the first illumination is smallest, with the frame angle there.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaAnchor {
    pub node: usize,
    pub point: [f64; 3],
    pub theta: f64,
    /// Every non-corner node attaining the minimum, in node order.
    pub ties: Vec<usize>,
}

/// The first flux points along the inward normal at the boundary minimum of `g1`.
pub fn boundary_anchor(g1: &Illumination, h: &PowerDensityData) -> Result<ThetaAnchor> {
    let grid = h.grid();
    let (_, minimizers) = g1.minimizers();
    let (corners, ties): (Vec<usize>, Vec<usize>) =
        minimizers.into_iter().partition(|&n| grid.is_corner(n));
    let Some(&node) = ties.first() else {
        return Err(Error::CornerMinimum { nodes: corners });
    };
    let h11 = h.h.entry(node, 0, 0);
    if !(h11 > 0.0) {
        return Err(Error::Singular {
            det: h11,
            threshold: 0.0,
            node,
            count: 1,
        });
    }
    let nu = grid.outward_normal(node).expect("non-corner boundary node has a normal");
    Ok(ThetaAnchor {
        node,
        point: grid.point(node),
        theta: (-nu[1]).atan2(-nu[0]),
        ties,
    })
}

#[derive(Debug, Clone)]
pub struct ThetaField {
    /// Unwrapped angle: the integral itself, never reduced.
    pub theta: ScalarField,
    pub anchor: ThetaAnchor,
}

impl ThetaField {
    /// `R_1 = (cos theta, sin theta)`, `R_2 = J R_1` at a node.
    pub fn frame(&self, node: usize) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.at(node).sin_cos();
        [[c, s], [-s, c]]
    }
}

/// Integrate a gradient field from `from` to every node along straight segments.
fn integrate_from(grad: &VectorField, from: &[f64; 3], base: f64, scale: f64) -> Result<ScalarField> {
    let grid = grad.grid();
    let vals: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let seg = Segment::new(&from[..grid.dim()], &grid.point(n)[..grid.dim()]);
            Ok(base + scale * line_integral(grad, &seg)?)
        })
        .collect();
    ScalarField::new(grid.clone(), vals?)
}

pub fn reconstruct_theta(grad_theta: &VectorField, anchor: &ThetaAnchor) -> Result<ThetaField> {
    Ok(ThetaField {
        theta: integrate_from(grad_theta, &anchor.point, anchor.theta, 1.0)?,
        anchor: anchor.clone(),
    })
}

/// Conductivity anchor: a point and the value of `log sigma` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaAnchor {
    pub point: [f64; 3],
    pub log_sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics2D {
    pub anchor_ties: Vec<usize>,
    pub min_sqrt_det: f64,
    pub theta_anchor_node: usize,
}

#[derive(Debug, Clone)]
pub struct ReconResult2D {
    pub log_sigma: ScalarField,
    pub theta: ThetaField,
    pub f: VectorField,
    pub sigma_anchor: SigmaAnchor,
    pub diagnostics: Diagnostics2D,
}

/// `F = (grad log d + sum_ij ((V_ij + V_ji) . R_i) R_j) / 2` from data and frame.
pub fn f_field(v: &VFieldSet, h: &PowerDensityData, theta: &ThetaField, c0: f64) -> Result<VectorField> {
    let grid = h.grid();
    let d = checked_sqrt_det(h, c0)?;
    let gl = gradient(&d.map(f64::ln)?);
    let mut vals = Vec::with_capacity(2 * grid.len());
    for n in 0..grid.len() {
        let r = theta.frame(n);
        let mut f = [gl.at(n)[0], gl.at(n)[1]];
        for i in 0..2 {
            for j in 0..2 {
                let (a, b) = (v.get(i, j).at(n), v.get(j, i).at(n));
                let c = (a[0] + b[0]) * r[i][0] + (a[1] + b[1]) * r[i][1];
                f[0] += c * r[j][0];
                f[1] += c * r[j][1];
            }
        }
        vals.push(0.5 * f[0]);
        vals.push(0.5 * f[1]);
    }
    VectorField::new(grid.clone(), vals)
}

pub fn f_and_sigma(
    v: &VFieldSet,
    h: &PowerDensityData,
    theta: ThetaField,
    sigma_anchor: SigmaAnchor,
    c0: f64,
) -> Result<ReconResult2D> {
    let grid = h.grid();
    if !grid.contains(&sigma_anchor.point) {
        return Err(Error::OutsideDomain {
            point: sigma_anchor.point[..2].to_vec(),
        });
    }
    let f = f_field(v, h, &theta, c0)?;
    let log_sigma = integrate_from(&f, &sigma_anchor.point, sigma_anchor.log_sigma, 2.0)?;
    let min_sqrt_det = checked_sqrt_det(h, c0)?.min();
    Ok(ReconResult2D {
        log_sigma,
        diagnostics: Diagnostics2D {
            anchor_ties: theta.anchor.ties.clone(),
            min_sqrt_det,
            theta_anchor_node: theta.anchor.node,
        },
        theta,
        f,
        sigma_anchor,
    })
}

/// Angle of `T_gs^{-T} T^T` at a node: the frame of `t` is the Gram-Schmidt frame turned by it.
fn anchor_offset(t: &TransitionField, h: &PowerDensityData, node: usize, c0: f64) -> Result<f64> {
    let hm = h.h.matrix(node).view((0, 0), (2, 2)).into_owned();
    let gs = gram_schmidt_t(&hm, c0)?;
    let gs_inv_t = gs
        .try_inverse()
        .ok_or(Error::Singular {
            det: 0.0,
            threshold: 0.0,
            node,
            count: 1,
        })?
        .transpose();
    let m = gs_inv_t * t.t.matrix(node).transpose();
    Ok(m[(1, 0)].atan2(m[(0, 0)]))
}

/// Full planar pipeline from two-solution data.
pub fn reconstruct_2d(
    h: &PowerDensityData,
    g1: &Illumination,
    sigma_anchor: SigmaAnchor,
    c0: f64,
    construction: Construction,
) -> Result<ReconResult2D> {
    if h.grid().dim() != 2 || h.m() < 2 {
        return Err(Error::UnsupportedDimension(h.grid().dim()));
    }
    let block = h.block(&[0, 1], &[0, 1], &[1.0, 1.0], &[1.0, 1.0])?;
    let t = TransitionField::build(&block, construction, c0)?;
    let v = build_v(&t)?;
    let grad = theta_gradient(&v, h, c0)?;
    let mut anchor = boundary_anchor(g1, h)?;
    if construction != Construction::GramSchmidt {
        anchor.theta += anchor_offset(&t, h, anchor.node, c0)?;
    }
    let theta = reconstruct_theta(&grad, &anchor)?;
    f_and_sigma(&v, h, theta, sigma_anchor, c0)
}

/// Difference of `theta` along `[from, via] + [via, to]` and along `[from, to]`.
pub fn path_discrepancy(grad: &VectorField, from: &[f64], via: &[f64], to: &[f64]) -> Result<f64> {
    let direct = line_integral(grad, &Segment::new(from, to))?;
    let broken =
        line_integral(grad, &Segment::new(from, via))? + line_integral(grad, &Segment::new(via, to))?;
    Ok(broken - direct)
}

/// Reduce an angle difference to `(-pi, pi]`.
pub fn wrap_angle(d: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    d - tau * (d / tau).round()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport2D {
    pub theta_error: f64,
    pub log_sigma_error: f64,
    pub data_error: f64,
    pub theta_ratio: f64,
    pub log_sigma_ratio: f64,
}

/// Reconstruct from both data sets with shared anchors and compare in W^{1,inf}.
pub fn stability_probe_2d(
    h: &PowerDensityData,
    h_tilde: &PowerDensityData,
    g1: &Illumination,
    sigma_anchor: SigmaAnchor,
    c0: f64,
) -> Result<StabilityReport2D> {
    let a = reconstruct_2d(h, g1, sigma_anchor, c0, Construction::GramSchmidt)
        .map_err(|e| e.context("reference data"))?;
    let b = reconstruct_2d(h_tilde, g1, sigma_anchor, c0, Construction::GramSchmidt)
        .map_err(|e| e.context("perturbed data"))?;
    let dtheta = a.theta.theta.zip_map(&b.theta.theta, |x, y| wrap_angle(x - y))?;
    let dsig = a.log_sigma.zip_map(&b.log_sigma, |x, y| x - y)?;
    let theta_error = w1inf_scalar(&dtheta);
    let log_sigma_error = w1inf_scalar(&dsig);
    let data_error = w1inf_matrix_diff(&h.h, &h_tilde.h)?;
    let ratio = |e: f64| if data_error > 0.0 { e / data_error } else { 0.0 };
    Ok(StabilityReport2D {
        theta_error,
        log_sigma_error,
        data_error,
        theta_ratio: ratio(theta_error),
        log_sigma_ratio: ratio(log_sigma_error),
    })
}

/// Max-norm distance between reconstructed and reference angles, modulo `2 pi`.
pub fn theta_distance(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    Ok(a.zip_map(b, |x, y| wrap_angle(x - y))?.max_abs())
}

/// Common grid shortcut for tests and drivers.
pub fn sigma_anchor_at(grid: &Grid, node: usize, log_sigma: f64) -> SigmaAnchor {
    SigmaAnchor {
        point: grid.point(node),
        log_sigma,
    }
}

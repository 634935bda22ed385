//! Sensitivity of the 3D reconstruction to perturbed data and anchors.

use super::covering::Covering;
use super::global::{prepare_3d, prepare_with_bound, Anchor3D, Options3D};
use crate::acquisition::PowerDensityData;
use crate::error::Result;
use crate::ops::{w1inf_matrix_diff, w1inf_scalar_diff};

/// Fraction of the covering's determinant bound the perturbed data must still reach.
pub const PERTURBED_DET_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport3D {
    /// `W^{1,inf}` distance between the two reconstructions.
    pub log_sigma_error: f64,
    /// Anchor discrepancy: `|log sigma_0 - log sigma~_0| + |R_0 - R~_0|`.
    pub eps0: f64,
    /// `W^{1,inf}` distance between the two data sets.
    pub data_error: f64,
    /// `log_sigma_error / (eps0 + data_error)`.
    pub ratio: f64,
    /// Frame distance on arrival at each waypoint of the path to `probe`.
    pub waypoint_errors: Vec<f64>,
}

fn frame_distance(a: &[f64; 9], b: &[f64; 9]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Reconstruct from both data sets with the same covering and compare.
pub fn stability_probe_3d(
    h: &PowerDensityData,
    h_tilde: &PowerDensityData,
    covering: &Covering,
    anchor: &Anchor3D,
    anchor_tilde: &Anchor3D,
    options: Options3D,
    probe: &[f64],
) -> Result<StabilityReport3D> {
    let a = prepare_3d(h, covering, options).map_err(|e| e.context("reference data"))?;
    let b = prepare_with_bound(h_tilde, covering, options, PERTURBED_DET_FRACTION * covering.c0).map_err(|e| e.context("perturbed data"))?;
    let ra = a.reconstruct(anchor).map_err(|e| e.context("reference data"))?;
    let rb = b.reconstruct(anchor_tilde).map_err(|e| e.context("perturbed data"))?;
    let log_sigma_error = w1inf_scalar_diff(&ra.log_sigma, &rb.log_sigma)?;
    let data_error = w1inf_matrix_diff(&h.h, &h_tilde.h)?;
    let eps0 = (anchor.log_sigma - anchor_tilde.log_sigma).abs()
        + frame_distance(&anchor.frame, &anchor_tilde.frame);
    let ta = a.trace(anchor, probe)?;
    let tb = b.trace_plan(anchor_tilde, ta.plan.clone())?;
    let waypoint_errors = ta
        .arrivals
        .iter()
        .zip(&tb.arrivals)
        .map(|(x, y)| frame_distance(x, y))
        .collect();
    Ok(StabilityReport3D {
        log_sigma_error,
        eps0,
        data_error,
        ratio: log_sigma_error / (eps0 + data_error),
        waypoint_errors,
    })
}

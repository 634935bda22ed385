//! Complex geometrical optics illuminations.

use crate::error::{Error, Result};
use crate::forward::{Conductivity, Illumination};

/// Minimum nodes per oscillation period of `cos(rho x1)`.
pub const MIN_NODES_PER_PERIOD: f64 = 8.0;

/// Boundary traces of the real and imaginary parts of `exp(rho_1 . x)` and `exp(rho_2 . x)`,
/// with `rho_1 = rho (e2 + i e1)` and `rho_2 = rho (e3 + i e1)`.
#[derive(Debug, Clone)]
pub struct CgoIllumination {
    pub rho: f64,
    pub k_dir: [f64; 3],
    pub k_perp: [f64; 3],
    pub traces: [Illumination; 4],
}

/// Closed-form values of the four constant-conductivity solutions at `p`.
pub fn cgo_values(rho: f64, p: &[f64]) -> [f64; 4] {
    let (s, c) = (rho * p[0]).sin_cos();
    let (e2, e3) = ((rho * p[1]).exp(), (rho * p[2]).exp());
    [e2 * c, e2 * s, e3 * c, e3 * s]
}

/// Closed-form gradients matching [`cgo_values`].
pub fn cgo_gradients(rho: f64, p: &[f64]) -> [[f64; 3]; 4] {
    let (s, c) = (rho * p[0]).sin_cos();
    let (e2, e3) = ((rho * p[1]).exp(), (rho * p[2]).exp());
    [
        [-rho * e2 * s, rho * e2 * c, 0.0],
        [rho * e2 * c, rho * e2 * s, 0.0],
        [-rho * e3 * s, 0.0, rho * e3 * c],
        [rho * e3 * c, 0.0, rho * e3 * s],
    ]
}

/// `rho^3 exp(rho (2 x2 + x3))`, the envelope of both triple determinants.
pub fn cgo_envelope(rho: f64, p: &[f64]) -> f64 {
    rho.powi(3) * (rho * (2.0 * p[1] + p[2])).exp()
}

/// Check that `cos(rho x1)` is resolved on the grid.
pub fn check_resolution(spacing: f64, rho: f64) -> Result<()> {
    let nodes_per_period = 2.0 * std::f64::consts::PI / (rho * spacing);
    if nodes_per_period < MIN_NODES_PER_PERIOD {
        return Err(Error::UnderResolved {
            nodes_per_period,
            required_spacing: 2.0 * std::f64::consts::PI / (MIN_NODES_PER_PERIOD * rho),
        });
    }
    Ok(())
}

/// Constant-conductivity traces; for variable conductivity they are used as is and the
/// determinant condition has to be verified on the solved fields.
pub fn cgo_illuminations(c: &Conductivity, rho: f64) -> Result<CgoIllumination> {
    let grid = c.grid();
    if grid.dim() != 3 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("CGO frequency {rho} must be positive")));
    }
    check_resolution(grid.spacing()[0], rho)?;
    let trace = |i: usize| Illumination::from_fn(grid, |p| cgo_values(rho, p)[i]);
    Ok(CgoIllumination {
        rho,
        k_dir: [0.0, 1.0, 0.0],
        k_perp: [1.0, 0.0, 0.0],
        traces: [trace(0)?, trace(1)?, trace(2)?, trace(3)?],
    })
}

//! Analytic conductivity phantoms with known log-gradients.

use crate::error::Result;
use crate::forward::Conductivity;
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub enum Phantom {
    Constant { value: f64 },
    /// `sigma = exp(a . x)`
    Exponential { rate: [f64; 3] },
    /// `sigma = 1 + amplitude exp(-|x - center|^2 / width^2)`
    Bump {
        amplitude: f64,
        center: [f64; 3],
        width: f64,
    },
    /// `sigma = s^2` with `s = offset + slope . x + curvature (x1^2 - x2^2)` harmonic.
    HarmonicSquare {
        offset: f64,
        slope: [f64; 3],
        curvature: f64,
    },
    /// `sigma = 1 + amplitude sin(2 pi x1 / p1) cos(2 pi x2 / p2)`
    Periodic { amplitude: f64, periods: [f64; 2] },
}

impl Phantom {
    pub fn sigma(&self, p: &[f64]) -> f64 {
        match self {
            Phantom::Constant { value } => *value,
            Phantom::Exponential { rate } => (0..p.len().min(3)).map(|a| rate[a] * p[a]).sum::<f64>().exp(),
            Phantom::Bump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = (0..p.len().min(3)).map(|a| (p[a] - center[a]).powi(2)).sum();
                1.0 + amplitude * (-r2 / (width * width)).exp()
            }
            Phantom::HarmonicSquare { .. } => self.harmonic_root(p).powi(2),
            Phantom::Periodic { amplitude, periods } => {
                let tau = 2.0 * std::f64::consts::PI;
                1.0 + amplitude * (tau * p[0] / periods[0]).sin() * (tau * p[1] / periods[1]).cos()
            }
        }
    }

    pub fn log_sigma(&self, p: &[f64]) -> f64 {
        self.sigma(p).ln()
    }

    /// Exact gradient of `log sigma` (three components; unused ones are zero).
    pub fn grad_log_sigma(&self, p: &[f64]) -> [f64; 3] {
        let dim = p.len().min(3);
        let mut g = [0.0; 3];
        match self {
            Phantom::Constant { .. } => {}
            Phantom::Exponential { rate } => g[..dim].copy_from_slice(&rate[..dim]),
            Phantom::Bump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = (0..dim).map(|a| (p[a] - center[a]).powi(2)).sum();
                let e = amplitude * (-r2 / (width * width)).exp();
                let s = 1.0 + e;
                for a in 0..dim {
                    g[a] = -2.0 * (p[a] - center[a]) / (width * width) * e / s;
                }
            }
            Phantom::HarmonicSquare {
                slope, curvature, ..
            } => {
                let s = self.harmonic_root(p);
                let mut ds = [0.0; 3];
                ds[..dim].copy_from_slice(&slope[..dim]);
                ds[0] += 2.0 * curvature * p[0];
                ds[1] -= 2.0 * curvature * p[1];
                for a in 0..dim {
                    g[a] = 2.0 * ds[a] / s;
                }
            }
            Phantom::Periodic { amplitude, periods } => {
                let tau = 2.0 * std::f64::consts::PI;
                let (a1, a2) = (tau * p[0] / periods[0], tau * p[1] / periods[1]);
                let s = self.sigma(p);
                g[0] = amplitude * tau / periods[0] * a1.cos() * a2.cos() / s;
                g[1] = -amplitude * tau / periods[1] * a1.sin() * a2.sin() / s;
            }
        }
        g
    }

    /// The harmonic square root `s` of a [`Phantom::HarmonicSquare`], else `sqrt(sigma)`.
    pub fn harmonic_root(&self, p: &[f64]) -> f64 {
        match self {
            Phantom::HarmonicSquare {
                offset,
                slope,
                curvature,
            } => {
                let lin: f64 = (0..p.len().min(3)).map(|a| slope[a] * p[a]).sum();
                offset + lin + curvature * (p[0] * p[0] - p[1] * p[1])
            }
            _ => self.sigma(p).sqrt(),
        }
    }

    pub fn conductivity(&self, grid: &Grid) -> Result<Conductivity> {
        Conductivity::from_fn(grid, |p| self.sigma(&p[..grid.dim()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_gradients_match_finite_differences() {
        let phantoms = [
            Phantom::Constant { value: 2.0 },
            Phantom::Exponential {
                rate: [0.3, -0.2, 0.5],
            },
            Phantom::Bump {
                amplitude: 1.0,
                center: [0.5, 0.4, 0.6],
                width: 0.3,
            },
            Phantom::HarmonicSquare {
                offset: 2.0,
                slope: [0.2, -0.1, 0.3],
                curvature: 0.25,
            },
            Phantom::Periodic {
                amplitude: 0.3,
                periods: [1.0, 2.0],
            },
        ];
        let p = [0.37, 0.61, 0.29];
        let h = 1e-6;
        for ph in &phantoms {
            let g = ph.grad_log_sigma(&p);
            for a in 0..3 {
                if matches!(ph, Phantom::Periodic { .. }) && a == 2 {
                    continue;
                }
                let mut q = p;
                q[a] += h;
                let mut r = p;
                r[a] -= h;
                let fd = (ph.log_sigma(&q) - ph.log_sigma(&r)) / (2.0 * h);
                assert!((fd - g[a]).abs() < 1e-7, "{ph:?} axis {a}: {fd} vs {}", g[a]);
            }
        }
    }
}

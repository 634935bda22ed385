//! Overlapping slabs on which a chosen flux triple has a positive determinant.

use nalgebra::Matrix3;

use super::cgo::cgo_envelope;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{Grid, Segment};

/// Slack when testing whether a point lies in a box.
const BOX_SLACK: f64 = 1e-12;

/// The two triples used by the slab construction (zero-based solution indices).
pub const SLAB_TRIPLES: [[usize; 3]; 2] = [[0, 1, 2], [0, 1, 3]];

/// An axis-aligned box with the flux triple and signs used inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub triple: [usize; 3],
    pub signs: [f64; 3],
}

impl Subdomain {
    pub fn contains(&self, p: &[f64]) -> bool {
        (0..3).all(|a| {
            let slack = BOX_SLACK * (1.0 + self.upper[a].abs().max(self.lower[a].abs()));
            p[a] >= self.lower[a] - slack && p[a] <= self.upper[a] + slack
        })
    }

    /// Parameter interval `[t0, t1]` of the part of `seg` inside the box.
    pub fn segment_interval(&self, seg: &Segment) -> Option<(f64, f64)> {
        let v = seg.velocity();
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for a in 0..3 {
            let slack = BOX_SLACK * (1.0 + self.upper[a].abs().max(self.lower[a].abs()));
            let (lo, hi) = (self.lower[a] - slack, self.upper[a] + slack);
            if v[a] == 0.0 {
                if seg.from[a] < lo || seg.from[a] > hi {
                    return None;
                }
                continue;
            }
            let (mut a0, mut a1) = ((lo - seg.from[a]) / v[a], (hi - seg.from[a]) / v[a]);
            if a0 > a1 {
                std::mem::swap(&mut a0, &mut a1);
            }
            t0 = t0.max(a0);
            t1 = t1.min(a1);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Subdomains with their triples and the determinant bound they were verified against.
#[derive(Debug, Clone, PartialEq)]
pub struct Covering {
    pub subdomains: Vec<Subdomain>,
    pub c0: f64,
}

/// `det(eps_1 S_a, eps_2 S_b, eps_3 S_c)` at a node.
pub fn triple_det(s: &[VectorField], triple: &[usize; 3], signs: &[f64; 3], node: usize) -> f64 {
    let m = Matrix3::from_fn(|r, k| signs[k] * s[triple[k]].at(node)[r]);
    m.determinant()
}

impl Covering {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    /// Check nodewise positivity on every box and that the boxes cover the grid.
    /// Returns the smallest determinant found in each box.
    pub fn verify(&self, s: &[VectorField]) -> Result<Vec<f64>> {
        let grid = s[0].grid();
        let mut mins = vec![f64::INFINITY; self.len()];
        let mut covered = vec![false; grid.len()];
        for (k, sub) in self.subdomains.iter().enumerate() {
            if sub.triple.iter().any(|&i| i >= s.len()) {
                return Err(Error::InvalidArgument(format!(
                    "subdomain {k} uses a solution index beyond {}",
                    s.len()
                )));
            }
            for n in 0..grid.len() {
                if sub.contains(&grid.point(n)) {
                    covered[n] = true;
                    mins[k] = mins[k].min(triple_det(s, &sub.triple, &sub.signs, n));
                }
            }
            if mins[k] < self.c0 {
                return Err(Error::Covering {
                    target: self.c0,
                    best: mins[k],
                    lo: sub.lower[0].max(grid.lower()[0]),
                    hi: sub.upper[0].min(grid.upper()[0]),
                });
            }
        }
        if let Some(n) = covered.iter().position(|&c| !c) {
            let p = grid.point(n);
            return Err(Error::Covering {
                target: self.c0,
                best: 0.0,
                lo: p[0],
                hi: p[0],
            });
        }
        Ok(mins)
    }

    /// Indices of the boxes containing a point.
    pub fn containing(&self, p: &[f64]) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.subdomains[k].contains(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    triple: usize,
    sign: f64,
    start: usize,
    end: usize,
}

/// Determinant range `(min, max)` of a triple over each `x1` layer.
fn layer_ranges(s: &[VectorField], triple: &[usize; 3]) -> Vec<(f64, f64)> {
    let grid = s[0].grid();
    let nx = grid.shape()[0];
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); nx];
    for n in 0..grid.len() {
        let i = grid.multi_index(n)[0];
        let d = triple_det(s, triple, &[1.0; 3], n);
        out[i].0 = out[i].0.min(d);
        out[i].1 = out[i].1.max(d);
    }
    out
}

/// Slabs across `x1` alternating between the two triples, each with the sign of the
/// last flux chosen to make the determinant positive. Consecutive slabs share at
/// least `overlap_layers` node layers.
pub fn build_covering(s: &[VectorField], c0_target: f64, overlap_layers: usize) -> Result<Covering> {
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!("{} flux fields, need 4", s.len())));
    }
    let grid = s[0].grid();
    if grid.dim() != 3 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if s.iter().any(|f| f.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    let overlap_layers = overlap_layers.max(2);
    let nx = grid.shape()[0];
    let ranges: Vec<Vec<(f64, f64)>> = SLAB_TRIPLES.iter().map(|t| layer_ranges(s, t)).collect();

    // best margin per layer over triples and signs
    let margins: Vec<f64> = (0..nx)
        .map(|i| {
            ranges
                .iter()
                .map(|r| r[i].0.max(-r[i].1))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let best = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let failing: Vec<usize> = (0..nx).filter(|&i| margins[i] < c0_target).collect();
    if let (Some(&lo), Some(&hi)) = (failing.first(), failing.last()) {
        return Err(Error::Covering {
            target: c0_target,
            best,
            lo: grid.coord(0, lo),
            hi: grid.coord(0, hi),
        });
    }

    let mut runs = Vec::new();
    for (t, r) in ranges.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let good = |i: usize| {
                if sign > 0.0 {
                    r[i].0 >= c0_target
                } else {
                    -r[i].1 >= c0_target
                }
            };
            let mut i = 0;
            while i < nx {
                if good(i) {
                    let start = i;
                    while i + 1 < nx && good(i + 1) {
                        i += 1;
                    }
                    runs.push(Run {
                        triple: t,
                        sign,
                        start,
                        end: i,
                    });
                }
                i += 1;
            }
        }
    }

    let mut chosen: Vec<Run> = Vec::new();
    let first = runs
        .iter()
        .filter(|r| r.start == 0)
        .fold(None::<Run>, |acc, r| match acc {
            Some(a) if a.end >= r.end => Some(a),
            _ => Some(*r),
        })
        .expect("layer 0 has a good triple");
    chosen.push(first);
    while chosen.last().unwrap().end + 1 < nx {
        let cur = chosen.last().unwrap().end;
        let next = runs
            .iter()
            .filter(|r| r.start + overlap_layers <= cur + 1 && r.end > cur)
            .fold(None::<Run>, |acc, r| match acc {
                Some(a) if a.end >= r.end => Some(a),
                _ => Some(*r),
            });
        match next {
            Some(r) => chosen.push(r),
            None => {
                return Err(Error::Covering {
                    target: c0_target,
                    best,
                    lo: grid.coord(0, cur),
                    hi: grid.coord(0, (cur + 1).min(nx - 1)),
                })
            }
        }
    }

    let lower = grid.lower();
    let upper = grid.upper();
    let subdomains = chosen
        .iter()
        .map(|r| {
            let mut lo = [lower[0] - 1.0, lower[1] - 1.0, lower[2] - 1.0];
            let mut hi = [upper[0] + 1.0, upper[1] + 1.0, upper[2] + 1.0];
            if r.start > 0 {
                lo[0] = grid.coord(0, r.start);
            }
            if r.end + 1 < nx {
                hi[0] = grid.coord(0, r.end);
            }
            Subdomain {
                lower: lo,
                upper: hi,
                triple: SLAB_TRIPLES[r.triple],
                signs: [1.0, 1.0, r.sign],
            }
        })
        .collect();
    let covering = Covering {
        subdomains,
        c0: c0_target,
    };
    covering.verify(s)?;
    Ok(covering)
}

/// Measured remainders `sup |f_1|`, `sup |f_2|` of the two triple determinants against
/// `envelope * (-cos rho x1)` and `envelope * (-sin rho x1)`.
pub fn cgo_remainders(s: &[VectorField], rho: f64) -> (f64, f64) {
    let grid = s[0].grid();
    let (mut f1, mut f2) = (0.0f64, 0.0f64);
    for n in 0..grid.len() {
        let p = grid.point(n);
        let env = cgo_envelope(rho, &p);
        let (sn, cs) = (rho * p[0]).sin_cos();
        f1 = f1.max((triple_det(s, &SLAB_TRIPLES[0], &[1.0; 3], n) / env + cs).abs());
        f2 = f2.max((triple_det(s, &SLAB_TRIPLES[1], &[1.0; 3], n) / env + sn).abs());
    }
    (f1, f2)
}

/// Smallest envelope `rho^3 exp(rho (2 x2 + x3))` over the grid.
pub fn gamma0(grid: &Grid, rho: f64) -> f64 {
    (0..grid.len())
        .map(|n| cgo_envelope(rho, &grid.point(n)))
        .fold(f64::INFINITY, f64::min)
}

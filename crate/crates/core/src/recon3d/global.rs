//! Conductivity on the whole grid by integrating frames along paths from an anchor.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use super::covering::{Covering, Subdomain};
use super::path::{plan_path, PathPlan};
use super::rotation_ode::{
    from_matrix, integrate_r_segment, Frame, IntegratorOptions, PACKED_COMPONENTS,
};
use super::transfer::{apply_transfer, transfer_between, transfer_between_matrix, transition};
use crate::acquisition::PowerDensityData;
use crate::algebra::{build_v, Construction, TransitionField};
use crate::error::{Error, Result};
use crate::field::{MatrixField, MultiField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::ops::gradient;

/// Extra node layers kept around each box so the cells it touches use central differences.
pub const LOCAL_MARGIN: usize = 2;

/// Known conductivity and frame at one point, relative to one subdomain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor3D {
    pub point: [f64; 3],
    pub log_sigma: f64,
    pub frame: Frame,
    pub subdomain: usize,
}

impl Anchor3D {
    /// Frame `S T^T` of the subdomain's signed triple at a node, from known fluxes.
    pub fn from_fluxes(
        s: &[VectorField],
        covering: &Covering,
        subdomain: usize,
        node: usize,
        log_sigma: f64,
        construction: Construction,
    ) -> Result<Self> {
        let sub = covering
            .subdomains
            .get(subdomain)
            .ok_or_else(|| Error::InvalidArgument(format!("no subdomain {subdomain}")))?;
        let grid = s[0].grid();
        let p = grid.point(node);
        if !sub.contains(&p) {
            return Err(Error::OutsideDomain { point: p.to_vec() });
        }
        let sm = Matrix3::from_fn(|r, c| sub.signs[c] * s[sub.triple[c]].at(node)[r]);
        let t = transition(&(sm.transpose() * sm), construction)?;
        Ok(Anchor3D {
            point: p,
            log_sigma,
            frame: from_matrix(&(sm * t.transpose())),
            subdomain,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options3D {
    pub construction: Construction,
    pub integrator: IntegratorOptions,
    /// Largest fraction of nodes allowed to fail.
    pub max_failure_fraction: f64,
}

impl Default for Options3D {
    fn default() -> Self {
        Options3D {
            construction: Construction::GramSchmidt,
            integrator: IntegratorOptions::default(),
            max_failure_fraction: 0.01,
        }
    }
}

struct Local {
    packed: MultiField,
    min_det: f64,
}

/// Packed V fields for every subdomain, ready for path integration.
pub struct Prepared3D {
    grid: Grid,
    covering: Covering,
    locals: Vec<Local>,
    full_h: MultiField,
    m: usize,
    options: Options3D,
    /// Node values of the transfer matrix on the overlap of each ordered pair of boxes.
    transfers: HashMap<(usize, usize), MultiField>,
}

/// Frames and increments along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub plan: PathPlan,
    /// Frame on arrival at each waypoint after the first, before any transfer.
    pub arrivals: Vec<Frame>,
    pub log_sigma: f64,
    pub drift: f64,
    pub projection: f64,
    pub min_det: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDiagnostics {
    pub pieces: usize,
    pub drift: f64,
    pub projection: f64,
    pub min_det: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReconResult3D {
    /// Failed nodes hold the anchor value.
    pub log_sigma: ScalarField,
    pub diagnostics: Vec<NodeDiagnostics>,
    pub failed: usize,
}

impl ReconResult3D {
    pub fn max_drift(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.drift).fold(0.0, f64::max)
    }

    pub fn max_projection(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.projection).fold(0.0, f64::max)
    }
}

fn node_range(grid: &Grid, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let h = grid.spacing()[axis];
    let x0 = grid.lower()[axis];
    let last = grid.shape()[axis] - 1;
    let a = ((lo - x0) / h - 1e-9).ceil().max(0.0);
    let b = ((hi - x0) / h + 1e-9).floor().min(last as f64);
    (a <= b).then_some((a as usize, b as usize))
}

/// Whether every node of layer `i` along `axis` keeps `sqrt(det)` of the block above `floor`.
fn layer_ok(block: &MatrixField, axis: usize, i: usize, floor: f64) -> bool {
    let grid = block.grid();
    (0..grid.len())
        .filter(|&n| grid.multi_index(n)[axis] == i)
        .all(|n| {
            let m = block.node_slice(n);
            let d = Matrix3::from_row_slice(m).determinant();
            d > 0.0 && d.sqrt() > floor
        })
}

fn local_field(
    data: &PowerDensityData,
    sub: &Subdomain,
    c0: f64,
    bound: f64,
    construction: Construction,
) -> Result<Local> {
    let grid = data.grid();
    let full = data.block(&sub.triple, &sub.triple, &sub.signs, &sub.signs)?;
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let (mut l, mut h) = node_range(grid, a, sub.lower[a], sub.upper[a]).ok_or(Error::Covering {
            target: c0,
            best: 0.0,
            lo: sub.lower[0],
            hi: sub.upper[0],
        })?;
        // extra layers only where the triple stays nondegenerate
        for _ in 0..LOCAL_MARGIN {
            if l > 0 && layer_ok(&full, a, l - 1, 0.5 * c0) {
                l -= 1;
            }
            if h + 1 < grid.shape()[a] && layer_ok(&full, a, h + 1, 0.5 * c0) {
                h += 1;
            }
        }
        if h - l < 2 {
            return Err(Error::InvalidArgument(format!(
                "subdomain spans {} nodes along axis {a}",
                h + 1 - l
            )));
        }
        lo[a] = l;
        hi[a] = h;
    }
    let sg = grid.subgrid(&lo, &hi)?;
    let block = full.restrict(&sg, &lo)?;
    let t = TransitionField::build(&block, construction, 0.0)?;
    let mut min_det = f64::INFINITY;
    for n in 0..sg.len() {
        if sub.contains(&sg.point(n)) {
            min_det = min_det.min(t.sqrt_det.at(n));
        }
    }
    if min_det < bound {
        return Err(Error::Covering {
            target: bound,
            best: min_det,
            lo: sub.lower[0].max(grid.lower()[0]),
            hi: sub.upper[0].min(grid.upper()[0]),
        });
    }
    let v = build_v(&t)?;
    let grad_log_d = gradient(&t.sqrt_det.map(f64::ln)?);
    let mut packed = Vec::with_capacity(PACKED_COMPONENTS * sg.len());
    for n in 0..sg.len() {
        for i in 0..3 {
            for j in 0..3 {
                packed.extend_from_slice(v.get(i, j).at(n));
            }
        }
        packed.extend_from_slice(grad_log_d.at(n));
    }
    Ok(Local {
        packed: MultiField::new(sg, PACKED_COMPONENTS, packed)?,
        min_det,
    })
}

/// Build local V fields for every subdomain, checking the determinant bound on each.
pub fn prepare_3d(data: &PowerDensityData, covering: &Covering, options: Options3D) -> Result<Prepared3D> {
    prepare_with_bound(data, covering, options, covering.c0)
}

/// As [`prepare_3d`], but only `sqrt det >= bound` is enforced inside each subdomain.
pub(crate) fn prepare_with_bound(
    data: &PowerDensityData,
    covering: &Covering,
    options: Options3D,
    bound: f64,
) -> Result<Prepared3D> {
    let grid = data.grid().clone();
    if grid.dim() != 3 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if covering.is_empty() {
        return Err(Error::InvalidArgument("empty covering".into()));
    }
    let locals = covering
        .subdomains
        .iter()
        .enumerate()
        .map(|(k, sub)| {
            local_field(data, sub, covering.c0, bound, options.construction)
                .map_err(|e| e.context(format!("subdomain {k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = data.m();
    let mut transfers = HashMap::new();
    for (p, a) in covering.subdomains.iter().enumerate() {
        for (q, b) in covering.subdomains.iter().enumerate() {
            if a.triple == b.triple && a.signs == b.signs {
                continue;
            }
            if let Some(f) = transfer_field(data, a, b, options.construction)? {
                transfers.insert((p, q), f);
            }
        }
    }
    Ok(Prepared3D {
        full_h: MultiField::new(grid.clone(), m * m, data.h.values().to_vec())?,
        grid,
        covering: covering.clone(),
        locals,
        m,
        options,
        transfers,
    })
}

/// Transfer matrices at the nodes shared by two boxes; `None` when they share fewer
/// than two layers along some axis.
fn transfer_field(
    data: &PowerDensityData,
    a: &Subdomain,
    b: &Subdomain,
    construction: Construction,
) -> Result<Option<MultiField>> {
    let grid = data.grid();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for axis in 0..3 {
        let l = a.lower[axis].max(b.lower[axis]);
        let u = a.upper[axis].min(b.upper[axis]);
        match node_range(grid, axis, l, u) {
            Some((i, j)) if j > i => {
                lo[axis] = i;
                hi[axis] = j;
            }
            _ => return Ok(None),
        }
    }
    let sg = grid.subgrid(&lo, &hi)?;
    let m = data.m();
    let mut values = Vec::with_capacity(9 * sg.len());
    for n in 0..sg.len() {
        let idx = sg.multi_index(n);
        let node = grid.index([idx[0] + lo[0], idx[1] + lo[1], idx[2] + lo[2]]);
        let h = DMatrix::from_row_slice(m, m, data.h.node_slice(node));
        let t = transfer_between_matrix(&h, a, b, construction)?;
        values.extend((0..9).map(|k| t[(k / 3, k % 3)]));
    }
    Ok(Some(MultiField::new(sg, 9, values)?))
}

impl Prepared3D {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn covering(&self) -> &Covering {
        &self.covering
    }

    fn h_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let mut buf = vec![0.0; self.m * self.m];
        self.full_h.sample_into(p, &mut buf)?;
        Ok(DMatrix::from_row_slice(self.m, self.m, &buf))
    }

    fn transfer(&self, r: &Frame, p: &[f64], from: usize, to: usize) -> Result<(Frame, f64)> {
        let (a, b) = (&self.covering.subdomains[from], &self.covering.subdomains[to]);
        if a.triple == b.triple && a.signs == b.signs {
            return Ok((*r, 0.0));
        }
        let out = match self.transfers.get(&(from, to)) {
            Some(field) if field.grid().contains(p) => {
                let mut buf = [0.0; 9];
                field.sample_into(p, &mut buf)?;
                apply_transfer(r, &Matrix3::from_row_slice(&buf))?
            }
            _ => transfer_between(r, &self.h_at(p)?, a, b, self.options.construction)?,
        };
        Ok((out.frame, out.projection))
    }

    /// Integrate from the anchor to `x` along a planned path.
    pub fn trace(&self, anchor: &Anchor3D, x: &[f64]) -> Result<PathTrace> {
        let plan = plan_path(&anchor.point, x, &self.covering)?;
        self.trace_plan(anchor, plan)
    }

    pub fn trace_plan(&self, anchor: &Anchor3D, plan: PathPlan) -> Result<PathTrace> {
        if !self.covering.subdomains[anchor.subdomain].contains(&anchor.point) {
            return Err(Error::OutsideDomain {
                point: anchor.point.to_vec(),
            });
        }
        let mut projection: f64 = 0.0;
        let mut drift: f64 = 0.0;
        let mut min_det = f64::INFINITY;
        let (mut r, p0) = self.transfer(&anchor.frame, &anchor.point, anchor.subdomain, plan.assignment[0])?;
        projection = projection.max(p0);
        let mut log_sigma = anchor.log_sigma;
        let mut arrivals = Vec::with_capacity(plan.pieces());
        for k in 0..plan.pieces() {
            let sub = plan.assignment[k];
            if k > 0 {
                let (next, p) = self.transfer(&r, &plan.waypoints[k], plan.assignment[k - 1], sub)?;
                r = next;
                projection = projection.max(p);
            }
            let local = &self.locals[sub];
            min_det = min_det.min(local.min_det);
            let out = integrate_r_segment(&local.packed, &r, &plan.segment(k), &self.options.integrator)?;
            r = out.frame;
            log_sigma += out.log_sigma_increment;
            drift = drift.max(out.drift);
            projection = projection.max(out.projection);
            arrivals.push(r);
        }
        Ok(PathTrace {
            plan,
            arrivals,
            log_sigma,
            drift,
            projection,
            min_det,
        })
    }

    /// Reconstruct `log sigma` at every node; fails when too many nodes fail.
    pub fn reconstruct(&self, anchor: &Anchor3D) -> Result<ReconResult3D> {
        let per_node: Vec<(f64, NodeDiagnostics)> = (0..self.grid.len())
            .into_par_iter()
            .map(|n| match self.trace(anchor, &self.grid.point(n)) {
                Ok(t) => (
                    t.log_sigma,
                    NodeDiagnostics {
                        pieces: t.plan.pieces(),
                        drift: t.drift,
                        projection: t.projection,
                        min_det: t.min_det,
                        failure: None,
                    },
                ),
                Err(e) => (
                    anchor.log_sigma,
                    NodeDiagnostics {
                        pieces: 0,
                        drift: 0.0,
                        projection: 0.0,
                        min_det: 0.0,
                        failure: Some(e.to_string()),
                    },
                ),
            })
            .collect();
        let failed = per_node.iter().filter(|(_, d)| d.failure.is_some()).count();
        let total = per_node.len();
        if failed as f64 > self.options.max_failure_fraction * total as f64 {
            return Err(Error::TooManyFailures { failed, total });
        }
        let (values, diagnostics): (Vec<f64>, Vec<NodeDiagnostics>) = per_node.into_iter().unzip();
        Ok(ReconResult3D {
            log_sigma: ScalarField::new(self.grid.clone(), values)?,
            diagnostics,
            failed,
        })
    }
}

/// Prepare and reconstruct in one call.
pub fn global_reconstruct_3d(
    data: &PowerDensityData,
    covering: &Covering,
    anchor: &Anchor3D,
    options: Options3D,
) -> Result<ReconResult3D> {
    prepare_3d(data, covering, options)?.reconstruct(anchor)
}

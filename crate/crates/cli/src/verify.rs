//! Pointwise identities of the acquired data and the frame equations derived from it.

use powerdense::acquisition::PowerDensityData;
use powerdense::algebra::{build_v, check_identities, rotation_from_s, TransitionField, VFieldSet};
use powerdense::forward::Solution;
use powerdense::ops::gradient;
use powerdense::recon3d::validate::validate_frames;
use powerdense::{Grid, MatrixField, ScalarField, VectorField};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, StageExt};
use crate::pipeline::{covering, forward, Forward};
use crate::report::{fmt, fmt_opt, Table};

/// Largest `|H_ij - H_ji|` relative to `max |H|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// `T^T T H = I` holds to round-off.
pub const TMATRIX_TOL: f64 = 1e-10;
/// Gramian inequalities, relative to the largest eigenvalue.
pub const GRAMIAN_TOL: f64 = 1e-10;
/// Polarization of the product field, relative to its size.
pub const POLARIZATION_TOL: f64 = 1e-10;
/// Observed order of the Liouville residual under refinement.
pub const MIN_LIOUVILLE_ORDER: f64 = 1.9;
/// A Liouville residual this small (relative) counts as exact and needs no order.
pub const EXACT_LIOUVILLE: f64 = 1e-10;
/// Residuals are measured on the box leaving this fraction of each side free; the
/// forward solutions are singular at the corners of the domain.
pub const INTERIOR_FRACTION: f64 = 0.125;

/// Node range `[lo, hi]` of the interior box along one axis.
pub fn interior_range(n: usize) -> (usize, usize) {
    let cut = (INTERIOR_FRACTION * (n - 1) as f64).ceil() as usize;
    (cut, n - 1 - cut)
}

/// Identity residuals of one block on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub n: usize,
    pub spacing: f64,
    /// `interior` in two dimensions, `slab<k>` for each covering box in three.
    pub block: String,
    pub grid_hash: String,
    pub liouville: f64,
    pub liouville_scale: f64,
    pub tmatrix: f64,
    pub gramian_margin: f64,
    pub alpha_error: Option<f64>,
    pub f_error: Option<f64>,
}

impl IdentityRow {
    pub fn relative_liouville(&self) -> f64 {
        self.liouville / self.liouville_scale.max(1.0)
    }
}

/// Scalar residuals that do not depend on the block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataChecks {
    pub asymmetry: f64,
    pub polarization: f64,
}

/// `sigma grad u . grad v` by central differences.
pub fn product_field(fwd: &Forward, u: &ScalarField, v: &ScalarField) -> CliResult<ScalarField> {
    let (gu, gv) = (gradient(u), gradient(v));
    let d = fwd.grid.dim();
    let vals = (0..fwd.grid.len())
        .map(|n| fwd.conductivity.sigma().at(n) * (0..d).map(|a| gu.at(n)[a] * gv.at(n)[a]).sum::<f64>())
        .collect();
    ScalarField::new(fwd.grid.clone(), vals).stage("polarization")
}

/// `max |(F(u+v) - F(u-v))/4 - F(u,v)| / max |F(u+v)|` for the first two solutions.
pub fn polarization_residual(fwd: &Forward, a: &Solution, b: &Solution) -> CliResult<f64> {
    let sum = a.u.zip_map(&b.u, |x, y| x + y).stage("polarization")?;
    let diff = a.u.zip_map(&b.u, |x, y| x - y).stage("polarization")?;
    let plus = product_field(fwd, &sum, &sum)?;
    let minus = product_field(fwd, &diff, &diff)?;
    let cross = product_field(fwd, &a.u, &b.u)?;
    let scale = plus.max_abs().max(minus.max_abs()).max(f64::MIN_POSITIVE);
    let worst = (0..fwd.grid.len())
        .map(|n| (0.25 * (plus.at(n) - minus.at(n)) - cross.at(n)).abs())
        .fold(0.0, f64::max);
    Ok(worst / scale)
}

/// The power densities as a general (unflagged) matrix field, optionally with one
/// off-diagonal entry disturbed to exercise the symmetry check.
pub fn raw_power_densities(fwd: &Forward, corrupt: bool) -> CliResult<MatrixField> {
    let m = fwd.fluxes.len();
    let grid = &fwd.grid;
    let d = grid.dim();
    let mut values: Vec<f64> = Vec::with_capacity(m * m * grid.len());
    for n in 0..grid.len() {
        for i in 0..m {
            for j in 0..m {
                values.push((0..d).map(|a| fwd.fluxes[i].at(n)[a] * fwd.fluxes[j].at(n)[a]).sum());
            }
        }
    }
    if corrupt {
        let centre = grid.len() / 2;
        let scale = values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        values[centre * m * m + 1] += 1e-3 * scale;
    }
    MatrixField::new(grid.clone(), m, m, values, false).stage("acquisition")
}

/// Node box `[lo, hi]` to score, padded by one layer where the grid allows so that
/// every scored difference is central.
#[derive(Debug, Clone, Copy)]
struct ScoreBox {
    lo: [usize; 3],
    hi: [usize; 3],
    pad_lo: [usize; 3],
    pad_hi: [usize; 3],
}

impl ScoreBox {
    fn new(grid: &Grid, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let d = grid.dim();
        let mut b = ScoreBox { lo, hi, pad_lo: lo, pad_hi: hi };
        for a in 0..d {
            b.pad_lo[a] = lo[a].saturating_sub(1);
            b.pad_hi[a] = (hi[a] + 1).min(grid.shape()[a] - 1);
        }
        b
    }

    fn padded_grid(&self, grid: &Grid) -> CliResult<Grid> {
        let d = grid.dim();
        grid.subgrid(&self.pad_lo[..d], &self.pad_hi[..d]).stage("identities")
    }

    /// Whether a node of the padded grid lies in the scored box.
    fn scores(&self, idx: [usize; 3], d: usize) -> bool {
        (0..d).all(|a| {
            let g = idx[a] + self.pad_lo[a];
            g >= self.lo[a] && g <= self.hi[a]
        })
    }
}

fn identity_row(
    n: usize,
    block: String,
    score: &ScoreBox,
    h: &MatrixField,
    c0: f64,
    cfg: &ExperimentConfig,
) -> CliResult<(IdentityRow, TransitionField, VFieldSet)> {
    let grid = h.grid();
    let data = PowerDensityData::from_field(h.clone()).stage("identities")?;
    let t = TransitionField::build(&data.h, cfg.construction(), c0).stage("identities")?;
    let v = build_v(&t).stage("identities")?;
    let rep = check_identities(&v, &t, &data).stage("identities")?;
    let (liouville, liouville_scale) = scored_liouville(&v, &t, score)?;
    let g = rep.gramian;
    let gramian_margin = g
        .lower_margin
        .min(g.hadamard_margin)
        .min(g.upper_margin)
        .min(g.min_relative_eigenvalue);
    let row = IdentityRow {
        n,
        spacing: grid.min_spacing(),
        block,
        grid_hash: grid.hash_hex(),
        liouville,
        liouville_scale,
        tmatrix: rep.tmatrix,
        gramian_margin,
        alpha_error: None,
        f_error: None,
    };
    Ok((row, t, v))
}

/// `max |sum_i V_ii + grad log sqrt(det H)|` and `max |grad log sqrt(det H)|` over the
/// scored box.
fn scored_liouville(v: &VFieldSet, t: &TransitionField, score: &ScoreBox) -> CliResult<(f64, f64)> {
    let grid = v.grid();
    let d = grid.dim();
    let gl = gradient(&t.sqrt_det.map(f64::ln).stage("identities")?);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for n in 0..grid.len() {
        if !score.scores(grid.multi_index(n), d) {
            continue;
        }
        let g = gl.at(n);
        let r: f64 = (0..d)
            .map(|a| (g[a] + (0..v.n()).map(|i| v.get(i, i).at(n)[a]).sum::<f64>()).powi(2))
            .sum();
        worst = worst.max(r.sqrt());
        scale = scale.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    Ok((worst, scale))
}

fn node_span(grid: &Grid, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let n = grid.shape()[0];
    let idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let x = grid.coord(0, i);
            x >= lo - 1e-12 && x <= hi + 1e-12
        })
        .collect();
    Some((*idx.first()?, *idx.last()?))
}

/// Residuals of every block at one resolution, plus the data checks.
pub fn identities_at(cfg: &ExperimentConfig, n: usize, corrupt: bool) -> CliResult<(Vec<IdentityRow>, DataChecks)> {
    let fwd = forward(cfg, n)?;
    let raw = raw_power_densities(&fwd, corrupt)?;
    let checks = DataChecks {
        asymmetry: raw.max_asymmetry() / raw.max_abs().max(f64::MIN_POSITIVE),
        polarization: polarization_residual(&fwd, &fwd.solutions[0], &fwd.solutions[1])?,
    };
    if checks.asymmetry > SYMMETRY_TOL {
        return Ok((Vec::new(), checks));
    }
    let h = MatrixField::new(fwd.grid.clone(), raw.rows(), raw.cols(), raw.values().to_vec(), true)
        .stage("acquisition")?;
    let mut rows = Vec::new();
    let shape = fwd.grid.shape().to_vec();
    let inner: Vec<(usize, usize)> = shape.iter().map(|&s| interior_range(s)).collect();
    if fwd.grid.dim() == 2 {
        let b = ScoreBox::new(&fwd.grid, [inner[0].0, inner[1].0, 0], [inner[0].1, inner[1].1, 0]);
        let sg = b.padded_grid(&fwd.grid)?;
        let hb = h.restrict(&sg, &b.pad_lo[..2]).stage("identities")?;
        rows.push(identity_row(n, "interior".into(), &b, &hb, cfg.c0, cfg)?.0);
        return Ok((rows, checks));
    }
    let data = PowerDensityData::from_field(h).stage("acquisition")?;
    let cov = covering(cfg, &fwd)?;
    for (k, sub) in cov.subdomains.iter().enumerate() {
        let Some((lo, hi)) = node_span(&fwd.grid, sub.lower[0], sub.upper[0]) else {
            continue;
        };
        let (lo, hi) = (lo.max(inner[0].0), hi.min(inner[0].1));
        if hi < lo + 4 {
            continue;
        }
        let b = ScoreBox::new(&fwd.grid, [lo, inner[1].0, inner[2].0], [hi, inner[1].1, inner[2].1]);
        let sg = b.padded_grid(&fwd.grid)?;
        let lo3 = b.pad_lo;
        let block = data
            .block(&sub.triple, &sub.triple, &sub.signs, &sub.signs)
            .and_then(|m| m.restrict(&sg, &lo3))
            .stage("identities")?;
        let (mut row, t, v) = identity_row(n, format!("slab{k}"), &b, &block, 0.0, cfg)?;
        let s: Vec<VectorField> = (0..3)
            .map(|c| {
                fwd.fluxes[sub.triple[c]]
                    .scale(sub.signs[c])
                    .and_then(|f| f.restrict(&sg, &lo3))
            })
            .collect::<powerdense::Result<_>>()
            .stage("identities")?;
        let truth = rotation_from_s(&s, &t).stage("identities")?;
        let gl = VectorField::from_fn(&sg, |p| fwd.phantom.grad_log_sigma(p)).stage("identities")?;
        let val = validate_frames(&v, &t, &truth, Some(&gl), 1).stage("identities")?;
        row.alpha_error = Some(val.alpha_error);
        row.f_error = val.f_error;
        rows.push(row);
    }
    Ok((rows, checks))
}

/// Outcome of the whole suite over all configured resolutions.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<IdentityRow>,
    pub checks: Vec<(usize, DataChecks)>,
    /// Liouville order per block between consecutive resolutions.
    pub orders: Vec<(String, usize, f64)>,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n",
            "block",
            "liouville",
            "liouville_scale",
            "tmatrix",
            "gramian_margin",
            "alpha_error",
            "f_error",
            "liouville_order",
        ]);
        for r in &self.rows {
            let order = self
                .orders
                .iter()
                .find(|(b, n, _)| *b == r.block && *n == r.n)
                .map(|o| o.2);
            t.push(
                vec![
                    r.n.to_string(),
                    r.block.clone(),
                    fmt(r.liouville),
                    fmt(r.liouville_scale),
                    fmt(r.tmatrix),
                    fmt(r.gramian_margin),
                    fmt_opt(r.alpha_error),
                    fmt_opt(r.f_error),
                    fmt_opt(order),
                ],
                &r.grid_hash,
            );
        }
        t
    }
}

pub fn verify(cfg: &ExperimentConfig, corrupt: bool) -> CliResult<VerifyReport> {
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut failures = Vec::new();
    for &n in &cfg.grid.resolutions {
        let (r, c) = identities_at(cfg, n, corrupt)?;
        if c.asymmetry > SYMMETRY_TOL {
            failures.push(format!("n={n}: power densities asymmetric by {:e}", c.asymmetry));
        }
        if c.polarization > POLARIZATION_TOL {
            failures.push(format!("n={n}: polarization residual {:e}", c.polarization));
        }
        for row in &r {
            if row.tmatrix > TMATRIX_TOL {
                failures.push(format!("n={n} {}: T-matrix residual {:e}", row.block, row.tmatrix));
            }
            if row.gramian_margin < -GRAMIAN_TOL {
                failures.push(format!("n={n} {}: Gramian margin {:e}", row.block, row.gramian_margin));
            }
        }
        checks.push((n, c));
        rows.extend(r);
    }
    let mut orders = Vec::new();
    for pair in cfg.grid.resolutions.windows(2) {
        let at = |n: usize| rows.iter().filter(move |r: &&IdentityRow| r.n == n);
        for fine in at(pair[1]) {
            let Some(coarse) = at(pair[0]).find(|r| r.block == fine.block) else {
                continue;
            };
            if fine.relative_liouville() <= EXACT_LIOUVILLE {
                continue;
            }
            let order = (coarse.liouville / fine.liouville).ln() / (coarse.spacing / fine.spacing).ln();
            if !(order >= MIN_LIOUVILLE_ORDER) {
                failures.push(format!("{} {}->{}: Liouville order {order:.3}", fine.block, pair[0], pair[1]));
            }
            orders.push((fine.block.clone(), fine.n, order));
        }
    }
    Ok(VerifyReport {
        rows,
        checks,
        orders,
        failures,
    })
}

pub fn into_result(report: &VerifyReport) -> CliResult<()> {
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check(report.failures.join("; ")))
    }
}

//! Power-density data: direct synthesis, the modulated-measurement route, and noise.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, VectorField};
use crate::forward::{Conductivity, Solution};
use crate::grid::Grid;
use crate::ops::{gradient, w1inf_matrix};

/// Relative threshold below which a Gramian counts as rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Uniform,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian-iid",
            NoiseKind::Uniform => "uniform-iid",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian-iid" => Ok(NoiseKind::Gaussian),
            "uniform" | "uniform-iid" => Ok(NoiseKind::Uniform),
            other => Err(Error::InvalidArgument(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub seed: u64,
}

/// What was done to the data after synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProvenance {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub seed: u64,
    /// Scale `||H||_{W^{1,inf}}` the amplitude was applied to.
    pub reference_norm: f64,
}

/// Symmetric matrix field of internal functionals `H_ij = S_i . S_j`.
#[derive(Debug, Clone)]
pub struct PowerDensityData {
    pub h: MatrixField,
    pub zeta_removed: bool,
    pub noise: Option<NoiseProvenance>,
    pub rank_deficient: bool,
}

impl PowerDensityData {
    /// Wrap an existing ζ-free symmetric field.
    pub fn from_field(h: MatrixField) -> Result<Self> {
        if h.rows() != h.cols() {
            return Err(Error::InvalidArgument("power densities must be square".into()));
        }
        if let Some(node) = h.first_asymmetric_node() {
            return Err(Error::InvalidArgument(format!(
                "power densities are asymmetric at node {node}"
            )));
        }
        let h = if h.is_symmetric() {
            h
        } else {
            MatrixField::new(h.grid().clone(), h.rows(), h.cols(), h.values().to_vec(), true)?
        };
        let rank_deficient = is_rank_deficient(&h);
        Ok(PowerDensityData {
            h,
            zeta_removed: true,
            noise: None,
            rank_deficient,
        })
    }

    /// Divide measured `ζ H` by the known coupling constant.
    pub fn from_scaled(scaled: MatrixField, zeta: f64) -> Result<Self> {
        if zeta == 0.0 {
            return Err(Error::InvalidArgument("coupling constant must be nonzero".into()));
        }
        let values = scaled.values().iter().map(|v| v / zeta).collect();
        let h = MatrixField::new(
            scaled.grid().clone(),
            scaled.rows(),
            scaled.cols(),
            values,
            scaled.is_symmetric(),
        )?;
        PowerDensityData::from_field(h)
    }

    pub fn m(&self) -> usize {
        self.h.rows()
    }

    pub fn grid(&self) -> &Grid {
        self.h.grid()
    }

    pub fn entry(&self, i: usize, j: usize) -> ScalarField {
        self.h.entry_field(i, j)
    }

    /// Sub-block `eps_a eps_b H_{rows[a], cols[b]}` as its own matrix field.
    pub fn block(
        &self,
        rows: &[usize],
        cols: &[usize],
        row_signs: &[f64],
        col_signs: &[f64],
    ) -> Result<MatrixField> {
        let m = self.m();
        if rows.iter().chain(cols).any(|&i| i >= m) {
            return Err(Error::InvalidArgument(format!(
                "block indices {rows:?}/{cols:?} exceed {m} solutions"
            )));
        }
        let (r, c) = (rows.len(), cols.len());
        let mut values = Vec::with_capacity(r * c * self.grid().len());
        for n in 0..self.grid().len() {
            for a in 0..r {
                for b in 0..c {
                    values.push(row_signs[a] * col_signs[b] * self.h.entry(n, rows[a], cols[b]));
                }
            }
        }
        let symmetric = rows == cols && row_signs == col_signs;
        MatrixField::new(self.grid().clone(), r, c, values, symmetric)
    }
}

fn is_rank_deficient(h: &MatrixField) -> bool {
    let m = h.rows();
    if m > h.grid().dim() {
        return true;
    }
    (0..h.grid().len()).any(|n| {
        let mat = h.matrix(n);
        let scale = (0..m).map(|i| mat[(i, i)].abs()).fold(0.0, f64::max).powi(m as i32);
        mat.determinant() <= RANK_TOL * scale
    })
}

/// `H_ij = S_i . S_j` at every node; symmetric by construction.
pub fn synthesize_h(fluxes: &[VectorField]) -> Result<PowerDensityData> {
    let first = fluxes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no flux fields".into()))?;
    let grid = first.grid();
    if fluxes.iter().any(|s| s.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    let m = fluxes.len();
    let dim = grid.dim();
    let mut values = vec![0.0; m * m * grid.len()];
    for n in 0..grid.len() {
        let base = n * m * m;
        for i in 0..m {
            for j in i..m {
                let v: f64 = (0..dim).map(|a| fluxes[i].at(n)[a] * fluxes[j].at(n)[a]).sum();
                values[base + i * m + j] = v;
                values[base + j * m + i] = v;
            }
        }
    }
    PowerDensityData::from_field(MatrixField::new(grid.clone(), m, m, values, true)?)
}

pub fn coupling_zeta(gamma: f64, dim: usize) -> f64 {
    -(1.0 + (dim as f64 - 1.0) * gamma)
}

/// Margins of the Gramian inequality chain
/// `lambda_min^n <= det H <= prod H_ii <= lambda_max^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramianReport {
    /// Smallest `(det - lambda_min^n) / scale` over invertible nodes.
    pub lower_margin: f64,
    /// Smallest `(prod H_ii - det) / scale`.
    pub hadamard_margin: f64,
    /// Smallest `(lambda_max^n - prod H_ii) / scale`.
    pub upper_margin: f64,
    /// Most negative eigenvalue relative to the largest.
    pub min_relative_eigenvalue: f64,
    pub checked_nodes: usize,
}

impl GramianReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.lower_margin >= -tol
            && self.hadamard_margin >= -tol
            && self.upper_margin >= -tol
            && self.min_relative_eigenvalue >= -tol
    }
}

pub fn gramian_chain(data: &PowerDensityData) -> GramianReport {
    let h = &data.h;
    let m = h.rows();
    let mut rep = GramianReport {
        lower_margin: f64::INFINITY,
        hadamard_margin: f64::INFINITY,
        upper_margin: f64::INFINITY,
        min_relative_eigenvalue: f64::INFINITY,
        checked_nodes: 0,
    };
    for n in 0..h.grid().len() {
        let mat: DMatrix<f64> = h.matrix(n);
        let eig = SymmetricEigen::new(mat.clone());
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.max();
        let scale = lmax.abs().max(f64::MIN_POSITIVE);
        rep.min_relative_eigenvalue = rep.min_relative_eigenvalue.min(lmin / scale);
        let det = mat.determinant();
        let prod: f64 = (0..m).map(|i| mat[(i, i)]).product();
        let top = scale.powi(m as i32);
        rep.hadamard_margin = rep.hadamard_margin.min((prod - det) / top);
        rep.upper_margin = rep.upper_margin.min((lmax.powi(m as i32) - prod) / top);
        if lmin > RANK_TOL * scale {
            rep.lower_margin = rep.lower_margin.min((det - lmin.powi(m as i32)) / top);
            rep.checked_nodes += 1;
        }
    }
    rep
}

/// Trapezoid weight of a node: product over axes of `h` (halved at the ends).
fn trapezoid_weight(grid: &Grid, node: usize) -> f64 {
    let idx = grid.multi_index(node);
    (0..grid.dim())
        .map(|a| {
            let h = grid.spacing()[a];
            if idx[a] == 0 || idx[a] + 1 == grid.shape()[a] {
                0.5 * h
            } else {
                h
            }
        })
        .product()
}

fn product_field(u: &Solution, v: &Solution, c: &Conductivity) -> Result<Vec<f64>> {
    let grid = c.grid();
    if u.u.grid() != grid || v.u.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let gu = gradient(&u.u);
    let gv = gradient(&v.u);
    let dim = grid.dim();
    Ok((0..grid.len())
        .map(|n| c.sigma().at(n) * (0..dim).map(|a| gu.at(n)[a] * gv.at(n)[a]).sum::<f64>())
        .collect())
}

fn j1_from_product(grid: &Grid, f: &[f64], zeta: f64, k: &[f64], phi: f64) -> f64 {
    let dim = grid.dim();
    (0..grid.len())
        .map(|n| {
            let p = grid.point(n);
            let phase: f64 = (0..dim).map(|a| k[a] * p[a]).sum::<f64>() + phi;
            trapezoid_weight(grid, n) * f[n] * phase.cos()
        })
        .sum::<f64>()
        * zeta
}

/// Leading-order modulated measurement `int zeta sigma grad u . grad v cos(k.x + phi)`.
pub fn simulate_j1(
    u: &Solution,
    v: &Solution,
    c: &Conductivity,
    zeta: f64,
    k: &[f64],
    phi: f64,
) -> Result<f64> {
    let f = product_field(u, v, c)?;
    Ok(j1_from_product(c.grid(), &f, zeta, k, phi))
}

/// Acoustic modulation parameters for the Fourier route.
#[derive(Debug, Clone)]
pub struct ModulationParams {
    pub gamma: f64,
    pub dim: usize,
    pub zeta: f64,
    pub k_lattice: Vec<[f64; 3]>,
    pub phases: [f64; 2],
    /// Modulation amplitude; it does not enter the leading-order term.
    pub amplitude: f64,
}

impl ModulationParams {
    pub fn for_grid(grid: &Grid, gamma: f64, amplitude: f64) -> Result<Self> {
        let zeta = coupling_zeta(gamma, grid.dim());
        if zeta == 0.0 {
            return Err(Error::InvalidArgument("coupling constant vanishes".into()));
        }
        Ok(ModulationParams {
            gamma,
            dim: grid.dim(),
            zeta,
            k_lattice: fourier_lattice(grid),
            phases: [0.0, std::f64::consts::FRAC_PI_2],
            amplitude,
        })
    }
}

/// Distinct samples per axis of the periodic extension (last node repeats the first).
fn periods(grid: &Grid) -> Vec<usize> {
    grid.shape().iter().map(|&n| n - 1).collect()
}

/// Centered integer mode range for `len` samples.
fn mode_range(len: usize) -> std::ops::Range<i64> {
    let half = (len / 2) as i64;
    -half..(len as i64 - half)
}

/// Wave vectors of the full discrete Fourier lattice of the periodic grid.
pub fn fourier_lattice(grid: &Grid) -> Vec<[f64; 3]> {
    let dim = grid.dim();
    let per = periods(grid);
    let mut out = Vec::new();
    let r2 = mode_range(per[1]);
    let r3 = if dim == 3 { mode_range(per[2]) } else { 0..1 };
    for m3 in r3 {
        for m2 in r2.clone() {
            for m1 in mode_range(per[0]) {
                let modes = [m1, m2, m3];
                let mut k = [0.0; 3];
                for a in 0..dim {
                    let len = grid.upper()[a] - grid.lower()[a];
                    k[a] = 2.0 * std::f64::consts::PI * modes[a] as f64 / len;
                }
                out.push(k);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct J1Sample {
    pub k: [f64; 3],
    pub phi: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct J1Samples {
    pub grid: Grid,
    pub samples: Vec<J1Sample>,
}

/// Measurements for every lattice mode and both phases, evaluated in parallel.
pub fn simulate_j1_lattice(
    u: &Solution,
    v: &Solution,
    c: &Conductivity,
    params: &ModulationParams,
) -> Result<J1Samples> {
    let f = product_field(u, v, c)?;
    let grid = c.grid();
    let samples = params
        .k_lattice
        .par_iter()
        .flat_map_iter(|k| {
            let f = &f;
            params.phases.iter().map(move |&phi| J1Sample {
                k: *k,
                phi,
                value: j1_from_product(grid, f, params.zeta, k, phi),
            })
        })
        .collect();
    Ok(J1Samples {
        grid: grid.clone(),
        samples,
    })
}

/// Invert the lattice of measurements back to the ζ-free field `sigma grad u . grad v`.
pub fn fourier_recover_h(samples: &J1Samples, zeta: f64) -> Result<ScalarField> {
    if zeta == 0.0 {
        return Err(Error::InvalidArgument("coupling constant must be nonzero".into()));
    }
    let grid = &samples.grid;
    let dim = grid.dim();
    let per = periods(grid);
    let lengths: Vec<f64> = (0..dim).map(|a| grid.upper()[a] - grid.lower()[a]).collect();

    // (mode, phase slot) -> value
    let mut table: HashMap<([i64; 3], usize), f64> = HashMap::new();
    for s in &samples.samples {
        let mut mode = [0i64; 3];
        for a in 0..dim {
            mode[a] = (s.k[a] * lengths[a] / (2.0 * std::f64::consts::PI)).round() as i64;
        }
        let slot = if s.phi.abs() < 1e-9 {
            0
        } else if (s.phi - std::f64::consts::FRAC_PI_2).abs() < 1e-9 {
            1
        } else {
            continue;
        };
        table.insert((mode, slot), s.value);
    }

    let total: usize = per.iter().product();
    let mut spectrum = vec![Complex::new(0.0, 0.0); total];
    let mut missing = Vec::new();
    let r3 = if dim == 3 { mode_range(per[2]) } else { 0..1 };
    let cell: f64 = grid.spacing().iter().product();
    for m3 in r3 {
        for m2 in mode_range(per[1]) {
            for m1 in mode_range(per[0]) {
                let mode = [m1, m2, m3];
                let (re, im) = (table.get(&(mode, 0)), table.get(&(mode, 1)));
                let (Some(&re), Some(&im)) = (re, im) else {
                    for (slot, got) in [(0, re), (1, im)] {
                        if got.is_none() {
                            missing.push(format!(
                                "{:?} phase {}",
                                &mode[..dim],
                                if slot == 0 { "0" } else { "pi/2" }
                            ));
                        }
                    }
                    continue;
                };
                // cos(kx + pi/2) = -sin(kx), so re - i im = zeta h^d sum f e^{ikx}
                let mut shift = 0.0;
                let mut idx = 0usize;
                let mut stride = 1usize;
                for a in 0..dim {
                    let k = 2.0 * std::f64::consts::PI * mode[a] as f64 / lengths[a];
                    shift += k * grid.lower()[a];
                    idx += mode[a].rem_euclid(per[a] as i64) as usize * stride;
                    stride *= per[a];
                }
                let c = Complex::new(re, -im) * Complex::from_polar(1.0, -shift) / (zeta * cell);
                spectrum[idx] = c;
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteLattice { missing });
    }

    // f_j = (1 / N) sum_m c_m e^{-2 pi i m j / N}: a forward transform along every axis.
    let mut planner = FftPlanner::<f64>::new();
    let mut stride = 1usize;
    for a in 0..dim {
        let len = per[a];
        let fft = planner.plan_fft_forward(len);
        let mut line = vec![Complex::new(0.0, 0.0); len];
        for start in 0..total {
            if !(start / stride).is_multiple_of(len) {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = spectrum[start + t * stride];
            }
            fft.process(&mut line);
            for (t, l) in line.iter().enumerate() {
                spectrum[start + t * stride] = *l;
            }
        }
        stride *= len;
    }

    let values = (0..grid.len())
        .map(|n| {
            let idx = grid.multi_index(n);
            let mut flat = 0usize;
            let mut stride = 1usize;
            for a in 0..dim {
                flat += (idx[a] % per[a]) * stride;
                stride *= per[a];
            }
            spectrum[flat].re / total as f64
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// Perturb every independent entry by `amplitude ||H||_{W^{1,inf}} xi`, with `xi` an
/// iid field rescaled to unit W^{1,inf} norm, then restore symmetry.
pub fn add_noise(data: &PowerDensityData, nm: &NoiseModel) -> Result<PowerDensityData> {
    if !(nm.amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise amplitude {} must be non-negative",
            nm.amplitude
        )));
    }
    let reference_norm = w1inf_matrix(&data.h);
    let provenance = NoiseProvenance {
        kind: nm.kind,
        amplitude: nm.amplitude,
        seed: nm.seed,
        reference_norm,
    };
    if nm.amplitude == 0.0 {
        let mut out = data.clone();
        out.noise = Some(provenance);
        return Ok(out);
    }
    let grid = data.grid().clone();
    let m = data.m();
    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
    let mut values = data.h.values().to_vec();
    for i in 0..m {
        for j in i..m {
            let xi: Vec<f64> = (0..grid.len())
                .map(|_| match nm.kind {
                    NoiseKind::Gaussian => rng.sample::<f64, _>(StandardNormal),
                    NoiseKind::Uniform => rng.random_range(-1.0..=1.0),
                })
                .collect();
            let xi = ScalarField::new(grid.clone(), xi)?;
            let norm = crate::ops::w1inf_scalar(&xi);
            let scale = if norm > 0.0 {
                nm.amplitude * reference_norm / norm
            } else {
                0.0
            };
            for n in 0..grid.len() {
                let v = values[n * m * m + i * m + j] + scale * xi.at(n);
                values[n * m * m + i * m + j] = v;
                values[n * m * m + j * m + i] = v;
            }
        }
    }
    let h = MatrixField::new(grid, m, m, values, true)?;
    let mut out = PowerDensityData::from_field(h)?;
    out.noise = Some(provenance);
    Ok(out)
}

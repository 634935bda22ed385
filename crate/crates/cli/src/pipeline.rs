//! Forward solves, data acquisition and reconstruction for one grid.

use powerdense::acquisition::{
    add_noise, fourier_recover_h, simulate_j1_lattice, synthesize_h, ModulationParams, PowerDensityData,
};
use powerdense::forward::{flux_field, solve_dirichlet, Conductivity, Illumination, Solution};
use powerdense::phantom::Phantom;
use powerdense::recon2d::{reconstruct_2d, sigma_anchor_at, ReconResult2D, SigmaAnchor};
use powerdense::recon3d::cgo::cgo_illuminations;
use powerdense::recon3d::covering::gamma0;
use powerdense::recon3d::{build_covering, global_reconstruct_3d, Anchor3D, Covering, Options3D, ReconResult3D};
use powerdense::{Grid, MatrixField, ScalarField, VectorField};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, IlluminationKind, Route};
use crate::error::{CliError, CliResult, StageExt};

/// Modulation strength of the acoustic perturbation in the Fourier route.
pub const MODULATION_GAMMA: f64 = 0.5;

/// Truth, boundary data and solved fields on one grid.
#[derive(Debug, Clone)]
pub struct Forward {
    pub grid: Grid,
    pub phantom: Phantom,
    pub conductivity: Conductivity,
    pub illuminations: Vec<Illumination>,
    pub solutions: Vec<Solution>,
    pub fluxes: Vec<VectorField>,
    /// CGO frequency in three dimensions.
    pub rho: Option<f64>,
}

pub fn forward(cfg: &ExperimentConfig, n: usize) -> CliResult<Forward> {
    let grid = cfg.grid(n)?;
    let phantom = cfg.phantom.phantom()?;
    let conductivity = phantom.conductivity(&grid).stage("forward")?;
    let (illuminations, rho) = match cfg.illumination.kind {
        IlluminationKind::Linear => {
            let gs = (0..grid.dim())
                .map(|a| Illumination::from_fn(&grid, |p| p[a]))
                .collect::<powerdense::Result<Vec<_>>>()
                .stage("illumination")?;
            (gs, None)
        }
        IlluminationKind::Cgo => {
            let cgo = cgo_illuminations(&conductivity, cfg.illumination.rho).stage("illumination")?;
            (cgo.traces.to_vec(), Some(cgo.rho))
        }
    };
    let solutions = illuminations
        .par_iter()
        .map(|g| solve_dirichlet(&conductivity, g, cfg.solver_tol))
        .collect::<powerdense::Result<Vec<_>>>()
        .stage("forward")?;
    let fluxes = solutions
        .iter()
        .map(|u| flux_field(&conductivity, u))
        .collect::<powerdense::Result<Vec<_>>>()
        .stage("forward")?;
    Ok(Forward {
        grid,
        phantom,
        conductivity,
        illuminations,
        solutions,
        fluxes,
        rho,
    })
}

/// Noise-free power densities and the coupling constant they were divided by.
#[derive(Debug, Clone)]
pub struct Acquired {
    pub data: PowerDensityData,
    pub zeta: f64,
}

pub fn acquire(cfg: &ExperimentConfig, fwd: &Forward) -> CliResult<Acquired> {
    match cfg.route {
        Route::Direct => Ok(Acquired {
            data: synthesize_h(&fwd.fluxes).stage("acquisition")?,
            zeta: 1.0,
        }),
        Route::Fourier => fourier_data(fwd),
    }
}

/// Every `H_ij` recovered from its modulated measurements.
pub fn fourier_data(fwd: &Forward) -> CliResult<Acquired> {
    let params = ModulationParams::for_grid(&fwd.grid, MODULATION_GAMMA, 1.0).stage("acquisition")?;
    let m = fwd.solutions.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let recovered = pairs
        .par_iter()
        .map(|&(i, j)| {
            let samples = simulate_j1_lattice(&fwd.solutions[i], &fwd.solutions[j], &fwd.conductivity, &params)?;
            fourier_recover_h(&samples, params.zeta)
        })
        .collect::<powerdense::Result<Vec<ScalarField>>>()
        .stage("acquisition")?;
    let mut entries = vec![recovered[0].clone(); m * m];
    for (&(i, j), f) in pairs.iter().zip(&recovered) {
        entries[i * m + j] = f.clone();
        entries[j * m + i] = f.clone();
    }
    let h = MatrixField::from_entries(&entries, m, m, true).stage("acquisition")?;
    Ok(Acquired {
        data: PowerDensityData::from_field(h).stage("acquisition")?,
        zeta: params.zeta,
    })
}

pub fn with_noise(cfg: &ExperimentConfig, data: &PowerDensityData, amplitude: f64, seed: u64) -> CliResult<PowerDensityData> {
    if amplitude == 0.0 {
        return Ok(data.clone());
    }
    add_noise(data, &cfg.noise_model(amplitude, seed)?).stage("noise")
}

/// Independent seeds for a list of noise draws, all derived from the master seed.
pub fn derived_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn anchor_node(cfg: &ExperimentConfig, grid: &Grid) -> usize {
    grid.nearest_node(&cfg.anchors.point)
}

pub fn anchor_log_sigma(cfg: &ExperimentConfig, fwd: &Forward, node: usize) -> f64 {
    cfg.anchors
        .log_sigma
        .unwrap_or_else(|| fwd.phantom.log_sigma(&fwd.grid.point(node)[..fwd.grid.dim()]))
}

pub fn sigma_anchor(cfg: &ExperimentConfig, fwd: &Forward) -> SigmaAnchor {
    let node = anchor_node(cfg, &fwd.grid);
    sigma_anchor_at(&fwd.grid, node, anchor_log_sigma(cfg, fwd, node))
}

pub fn covering(cfg: &ExperimentConfig, fwd: &Forward) -> CliResult<Covering> {
    build_covering(&fwd.fluxes, cfg.c0, cfg.covering.overlap).stage("covering")
}

/// Smallest CGO envelope on the grid, the scale `c0` is compared with.
pub fn envelope_floor(fwd: &Forward) -> Option<f64> {
    fwd.rho.map(|rho| gamma0(&fwd.grid, rho))
}

/// Anchor log-conductivity and frame taken from the true fluxes.
pub fn anchor_3d(cfg: &ExperimentConfig, fwd: &Forward, cov: &Covering) -> CliResult<Anchor3D> {
    let node = anchor_node(cfg, &fwd.grid);
    let p = fwd.grid.point(node);
    let k = *cov
        .containing(&p)
        .first()
        .ok_or_else(|| CliError::Config(format!("anchor {p:?} is outside the covering")))?;
    Anchor3D::from_fluxes(&fwd.fluxes, cov, k, node, anchor_log_sigma(cfg, fwd, node), cfg.construction())
        .stage("anchor")
}

pub fn options_3d(cfg: &ExperimentConfig) -> Options3D {
    Options3D {
        construction: cfg.construction(),
        ..Options3D::default()
    }
}

#[derive(Debug, Clone)]
pub enum Reconstruction {
    Planar(ReconResult2D),
    Spatial(ReconResult3D),
}

impl Reconstruction {
    pub fn log_sigma(&self) -> &ScalarField {
        match self {
            Reconstruction::Planar(r) => &r.log_sigma,
            Reconstruction::Spatial(r) => &r.log_sigma,
        }
    }
}

/// Summary of one reconstruction against the phantom.
#[derive(Debug, Clone)]
pub struct Level {
    pub n: usize,
    pub spacing: f64,
    pub grid_hash: String,
    pub log_sigma_error: f64,
    /// Planar only: `max |F - grad log sigma / 2|`.
    pub f_error: Option<f64>,
    /// Spatial only: largest pre-projection `|R|^2` drift.
    pub drift: Option<f64>,
    pub failed: usize,
    pub nodes: usize,
    pub reconstruction: Reconstruction,
}

pub fn reconstruct(cfg: &ExperimentConfig, fwd: &Forward, data: &PowerDensityData) -> CliResult<Reconstruction> {
    match fwd.grid.dim() {
        2 => reconstruct_2d(data, &fwd.illuminations[0], sigma_anchor(cfg, fwd), cfg.c0, cfg.construction())
            .map(Reconstruction::Planar)
            .stage("reconstruction"),
        _ => {
            let cov = covering(cfg, fwd)?;
            let anchor = anchor_3d(cfg, fwd, &cov)?;
            global_reconstruct_3d(data, &cov, &anchor, options_3d(cfg))
                .map(Reconstruction::Spatial)
                .stage("reconstruction")
        }
    }
}

pub fn max_log_error(fwd: &Forward, rec: &ScalarField) -> f64 {
    let d = fwd.grid.dim();
    (0..fwd.grid.len())
        .map(|k| (rec.at(k) - fwd.phantom.log_sigma(&fwd.grid.point(k)[..d])).abs())
        .fold(0.0, f64::max)
}

pub fn max_f_error(fwd: &Forward, f: &VectorField) -> f64 {
    let d = fwd.grid.dim();
    (0..fwd.grid.len())
        .map(|k| {
            let gl = fwd.phantom.grad_log_sigma(&fwd.grid.point(k)[..d]);
            let v = f.at(k);
            (0..d).map(|a| (v[a] - 0.5 * gl[a]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// Forward solve, acquisition with the configured noise, reconstruction and scoring.
pub fn run_level(cfg: &ExperimentConfig, n: usize, noise_seed: u64) -> CliResult<(Forward, Level)> {
    let fwd = forward(cfg, n)?;
    let clean = acquire(cfg, &fwd)?;
    let data = with_noise(cfg, &clean.data, cfg.noise.amplitude, noise_seed)?;
    let rec = reconstruct(cfg, &fwd, &data)?;
    let log_sigma_error = max_log_error(&fwd, rec.log_sigma());
    let (f_error, drift, failed) = match &rec {
        Reconstruction::Planar(r) => (Some(max_f_error(&fwd, &r.f)), None, 0),
        Reconstruction::Spatial(r) => (None, Some(r.max_drift()), r.failed),
    };
    let level = Level {
        n,
        spacing: fwd.grid.min_spacing(),
        grid_hash: fwd.grid.hash_hex(),
        log_sigma_error,
        f_error,
        drift,
        failed,
        nodes: fwd.grid.len(),
        reconstruction: rec,
    };
    Ok((fwd, level))
}

/// Observed order between two levels for any refinement ratio.
pub fn order_between(coarse: &Level, fine: &Level) -> f64 {
    (coarse.log_sigma_error / fine.log_sigma_error).ln() / (coarse.spacing / fine.spacing).ln()
}

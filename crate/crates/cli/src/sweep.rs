//! Stability probes over a list of noise amplitudes.

use powerdense::recon2d::stability_probe_2d;
use powerdense::recon3d::stability::stability_probe_3d;
use powerdense::stats::{loglog_slope, ratios_bounded};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, StageExt};
use crate::pipeline::{acquire, anchor_3d, covering, derived_seeds, forward, options_3d, sigma_anchor, with_noise};
use crate::report::{fmt, Table};

/// Allowed spread of `error / noise` around its geometric mean.
pub const RATIO_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub seed: u64,
    pub data_error: f64,
    pub log_sigma_error: f64,
    pub ratio: f64,
    /// Frame error on arrival at each waypoint towards the probe point (3D).
    pub waypoint_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub n: usize,
    pub grid_hash: String,
    pub points: Vec<SweepPoint>,
    /// Log-log slope of the reconstruction error against the data error.
    pub slope: Option<f64>,
    pub ratios_bounded: bool,
}

impl SweepReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["amplitude", "noise_seed", "data_error", "log_sigma_error", "ratio"]);
        for p in &self.points {
            t.push(
                vec![
                    fmt(p.amplitude),
                    p.seed.to_string(),
                    fmt(p.data_error),
                    fmt(p.log_sigma_error),
                    fmt(p.ratio),
                ],
                &self.grid_hash,
            );
        }
        t
    }

    pub fn waypoint_table(&self) -> Table {
        let mut t = Table::new(&["amplitude", "waypoint", "frame_error"]);
        for p in &self.points {
            for (k, e) in p.waypoint_errors.iter().enumerate() {
                t.push(vec![fmt(p.amplitude), k.to_string(), fmt(*e)], &self.grid_hash);
            }
        }
        t
    }

    pub fn summary(&self) -> Table {
        let mut t = Table::new(&["n", "slope", "ratios_bounded"]);
        t.push(
            vec![
                self.n.to_string(),
                self.slope.map(fmt).unwrap_or_default(),
                self.ratios_bounded.to_string(),
            ],
            &self.grid_hash,
        );
        t
    }
}

/// Perturb the finest configured grid at every amplitude of `noise.sweep`.
pub fn sweep(cfg: &ExperimentConfig) -> CliResult<SweepReport> {
    if cfg.noise.sweep.len() < 2 {
        return Err(CliError::Config("noise.sweep needs at least two amplitudes".into()));
    }
    let n = *cfg.grid.resolutions.last().expect("validated non-empty");
    let fwd = forward(cfg, n)?;
    let clean = acquire(cfg, &fwd)?.data;
    let seeds = derived_seeds(cfg.seed, cfg.noise.sweep.len());
    let jobs: Vec<(f64, u64)> = cfg.noise.sweep.iter().copied().zip(seeds).collect();

    let points: Vec<SweepPoint> = if fwd.grid.dim() == 2 {
        let anchor = sigma_anchor(cfg, &fwd);
        jobs.par_iter()
            .map(|&(amplitude, seed)| {
                let noisy = with_noise(cfg, &clean, amplitude, seed)?;
                let r = stability_probe_2d(&clean, &noisy, &fwd.illuminations[0], anchor, cfg.c0).stage("stability")?;
                Ok(SweepPoint {
                    amplitude,
                    seed,
                    data_error: r.data_error,
                    log_sigma_error: r.log_sigma_error,
                    ratio: r.log_sigma_ratio,
                    waypoint_errors: Vec::new(),
                })
            })
            .collect::<CliResult<_>>()?
    } else {
        let cov = covering(cfg, &fwd)?;
        let anchor = anchor_3d(cfg, &fwd, &cov)?;
        let probe = fwd.grid.upper().to_vec();
        jobs.par_iter()
            .map(|&(amplitude, seed)| {
                let noisy = with_noise(cfg, &clean, amplitude, seed)?;
                let r = stability_probe_3d(&clean, &noisy, &cov, &anchor, &anchor, options_3d(cfg), &probe)
                    .stage("stability")?;
                Ok(SweepPoint {
                    amplitude,
                    seed,
                    data_error: r.data_error,
                    log_sigma_error: r.log_sigma_error,
                    ratio: r.ratio,
                    waypoint_errors: r.waypoint_errors,
                })
            })
            .collect::<CliResult<_>>()?
    };
    let xs: Vec<f64> = points.iter().map(|p| p.data_error).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.log_sigma_error).collect();
    let ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    Ok(SweepReport {
        n,
        grid_hash: fwd.grid.hash_hex(),
        slope: loglog_slope(&xs, &ys),
        ratios_bounded: ratios_bounded(&ratios, RATIO_SPREAD),
        points,
    })
}

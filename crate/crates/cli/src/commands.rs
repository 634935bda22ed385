//! One function per subcommand; each writes its files plus a `manifest.toml`.

use std::path::{Path, PathBuf};

use powerdense::algebra::Construction;
use powerdense::io::{
    read_covering, read_frame, read_illumination, read_power_density, write_covering, write_frame, write_illumination,
    write_power_density, write_scalar, write_vector, Encoding, FrameRecord,
};
use powerdense::recon2d::{reconstruct_2d, SigmaAnchor};
use powerdense::recon3d::{global_reconstruct_3d, Anchor3D, Options3D};
use powerdense::Grid;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LoadedConfig};
use crate::error::{CliError, CliResult, StageExt};
use crate::pipeline::{
    acquire, anchor_3d, covering, envelope_floor, forward, order_between, run_level, with_noise, Level,
};
use crate::report::{fmt, fmt_opt, Outputs, Provenance, Table};
use crate::sweep::sweep;
use crate::verify::{into_result, verify};

fn outputs_for(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<Outputs> {
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| loaded.config.output.clone());
    Outputs::create(
        &root,
        Provenance {
            config_hash: loaded.hash.clone(),
            seed: loaded.config.seed,
        },
    )
}

fn level_dir(n: usize) -> String {
    format!("n{n}")
}

/// Record every regular file below `rel` in the outputs.
fn record_dir(outputs: &mut Outputs, rel: &str) -> CliResult<()> {
    let dir = outputs.root().join(rel);
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        outputs.record(&format!("{rel}/{name}"))?;
    }
    Ok(())
}

/// Conductivity, potentials and fluxes for each resolution.
pub fn cmd_forward(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &loaded.config;
    let mut outputs = outputs_for(loaded, out)?;
    let mut grids = Vec::new();
    for &n in &cfg.grid.resolutions {
        let fwd = forward(cfg, n)?;
        let dir = level_dir(n);
        let enc = cfg.encoding();
        write_scalar(&outputs.path(&format!("{dir}/sigma.field"))?, fwd.conductivity.sigma(), enc).stage("output")?;
        for (i, (u, s)) in fwd.solutions.iter().zip(&fwd.fluxes).enumerate() {
            write_scalar(&outputs.path(&format!("{dir}/u_{i}.field"))?, &u.u, enc).stage("output")?;
            write_vector(&outputs.path(&format!("{dir}/flux_{i}.field"))?, s, enc).stage("output")?;
        }
        let mut t = Table::new(&["solution", "iterations", "relative_residual"]);
        for (i, u) in fwd.solutions.iter().enumerate() {
            t.push(vec![i.to_string(), u.iterations.to_string(), fmt(u.residual_norm)], &fwd.grid.hash_hex());
        }
        outputs.write_table(&format!("{dir}/solves.csv"), &t)?;
        record_dir(&mut outputs, &dir)?;
        grids.push(fwd.grid.hash_hex());
    }
    outputs.finish("forward", &grids)
}

/// Power-density data sets ready for the reconstruct commands.
pub fn cmd_acquire(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &loaded.config;
    let mut outputs = outputs_for(loaded, out)?;
    let mut grids = Vec::new();
    for &n in &cfg.grid.resolutions {
        let fwd = forward(cfg, n)?;
        let acq = acquire(cfg, &fwd)?;
        let data = with_noise(cfg, &acq.data, cfg.noise.amplitude, cfg.seed)?;
        let dir = level_dir(n);
        let names: Vec<String> = (0..fwd.illuminations.len()).map(|i| format!("g_{i}.csv")).collect();
        for (g, name) in fwd.illuminations.iter().zip(&names) {
            write_illumination(&outputs.path(&format!("{dir}/{name}"))?, &fwd.grid, g).stage("output")?;
        }
        let cov_name = if fwd.grid.dim() == 3 {
            let cov = covering(cfg, &fwd)?;
            write_covering(&outputs.path(&format!("{dir}/covering.toml"))?, &cov).stage("output")?;
            let anchor = anchor_3d(cfg, &fwd, &cov)?;
            let rec = FrameRecord {
                subdomain: anchor.subdomain,
                frame: anchor.frame,
            };
            write_frame(&outputs.path(&format!("{dir}/anchor_frame.toml"))?, &rec).stage("output")?;
            Some("covering.toml".to_string())
        } else {
            None
        };
        let dpath = outputs.path(&format!("{dir}/manifest.toml"))?;
        write_power_density(dpath.parent().expect("has parent"), &data, acq.zeta, &names, cov_name, cfg.encoding())
            .stage("output")?;
        if let Some(g0) = envelope_floor(&fwd) {
            let mut t = Table::new(&["gamma0", "c0"]);
            t.push(vec![fmt(g0), fmt(cfg.c0)], &fwd.grid.hash_hex());
            outputs.write_table(&format!("{dir}/envelope.csv"), &t)?;
        }
        record_dir(&mut outputs, &dir)?;
        grids.push(fwd.grid.hash_hex());
    }
    outputs.finish("acquire", &grids)
}

fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn check_point(grid: &Grid, p: &[f64], what: &str) -> CliResult<[f64; 3]> {
    if p.len() != grid.dim() {
        return Err(CliError::Config(format!("{what} needs {} coordinates, got {}", grid.dim(), p.len())));
    }
    if !grid.contains(p) {
        return Err(CliError::Config(format!("{what} {p:?} lies outside the grid")));
    }
    let mut out = [0.0; 3];
    out[..p.len()].copy_from_slice(p);
    Ok(out)
}

pub struct Reconstruct2dArgs<'a> {
    pub data: &'a Path,
    pub anchor: &'a [f64],
    pub log_sigma0: f64,
    pub c0: f64,
    pub g1: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn cmd_reconstruct2d(a: &Reconstruct2dArgs) -> CliResult<PathBuf> {
    let (manifest, data) = read_power_density(a.data).stage("input")?;
    let grid = data.grid().clone();
    let point = check_point(&grid, a.anchor, "--anchor-x0")?;
    let dir = a.data.parent().unwrap_or(Path::new("."));
    let g1_path = match a.g1 {
        Some(p) => p.to_path_buf(),
        None => dir.join(
            manifest
                .illuminations
                .first()
                .ok_or_else(|| CliError::Config("manifest lists no illuminations; pass --g1".into()))?,
        ),
    };
    let g1 = read_illumination(&g1_path, &grid).stage("input")?;
    let anchor = SigmaAnchor {
        point,
        log_sigma: a.log_sigma0,
    };
    let res = reconstruct_2d(&data, &g1, anchor, a.c0, Construction::GramSchmidt).stage("reconstruction")?;
    let mut outputs = Outputs::create(
        a.out,
        Provenance {
            config_hash: file_hash(a.data)?,
            seed: manifest.noise.as_ref().map_or(0, |n| n.seed),
        },
    )?;
    let enc = Encoding::Csv;
    write_scalar(&outputs.path("log_sigma.field")?, &res.log_sigma, enc).stage("output")?;
    write_scalar(&outputs.path("theta.field")?, &res.theta.theta, enc).stage("output")?;
    write_vector(&outputs.path("f.field")?, &res.f, enc).stage("output")?;
    for f in ["log_sigma.field", "theta.field", "f.field"] {
        outputs.record(f)?;
    }
    let mut t = Table::new(&["theta_anchor_node", "anchor_ties", "min_sqrt_det"]);
    t.push(
        vec![
            res.diagnostics.theta_anchor_node.to_string(),
            res.diagnostics.anchor_ties.len().to_string(),
            fmt(res.diagnostics.min_sqrt_det),
        ],
        &grid.hash_hex(),
    );
    outputs.write_table("diagnostics.csv", &t)?;
    outputs.finish("reconstruct2d", &[grid.hash_hex()])
}

pub struct Reconstruct3dArgs<'a> {
    pub data: &'a Path,
    /// `None` uses the covering recorded in the data manifest.
    pub covering: Option<&'a Path>,
    pub anchor: &'a [f64],
    pub log_sigma0: f64,
    pub frame: &'a Path,
    pub c0: Option<f64>,
    pub out: &'a Path,
}

pub fn cmd_reconstruct3d(a: &Reconstruct3dArgs) -> CliResult<PathBuf> {
    let (manifest, data) = read_power_density(a.data).stage("input")?;
    let grid = data.grid().clone();
    let point = check_point(&grid, a.anchor, "--anchor")?;
    let dir = a.data.parent().unwrap_or(Path::new("."));
    let cov_path = match a.covering {
        Some(p) => p.to_path_buf(),
        None => dir.join(
            manifest
                .covering
                .as_deref()
                .ok_or_else(|| CliError::Config("manifest records no covering; pass --covering FILE".into()))?,
        ),
    };
    let mut cov = read_covering(&cov_path).stage("input")?;
    if let Some(c0) = a.c0 {
        cov.c0 = c0;
    }
    let rec = read_frame(a.frame).stage("input")?;
    if rec.subdomain >= cov.len() || !cov.subdomains[rec.subdomain].contains(&point) {
        return Err(CliError::Config(format!(
            "anchor frame refers to subdomain {} which does not contain {point:?}",
            rec.subdomain
        )));
    }
    let anchor = Anchor3D {
        point,
        log_sigma: a.log_sigma0,
        frame: rec.frame,
        subdomain: rec.subdomain,
    };
    let res = global_reconstruct_3d(&data, &cov, &anchor, Options3D::default()).stage("reconstruction")?;
    let mut outputs = Outputs::create(
        a.out,
        Provenance {
            config_hash: file_hash(a.data)?,
            seed: manifest.noise.as_ref().map_or(0, |n| n.seed),
        },
    )?;
    write_scalar(&outputs.path("log_sigma.field")?, &res.log_sigma, Encoding::Csv).stage("output")?;
    outputs.record("log_sigma.field")?;
    let mut t = Table::new(&["nodes", "failed", "max_drift", "max_projection"]);
    t.push(
        vec![
            grid.len().to_string(),
            res.failed.to_string(),
            fmt(res.max_drift()),
            fmt(res.max_projection()),
        ],
        &grid.hash_hex(),
    );
    outputs.write_table("diagnostics.csv", &t)?;
    let mut failures = Table::new(&["node", "reason"]);
    for (n, d) in res.diagnostics.iter().enumerate() {
        if let Some(f) = &d.failure {
            failures.push(vec![n.to_string(), format!("{:?}", f.replace(',', ";"))], &grid.hash_hex());
        }
    }
    outputs.write_table("failures.csv", &failures)?;
    outputs.finish("reconstruct3d", &[grid.hash_hex()])
}

/// Refinement study: reconstruct on every resolution and report errors and orders.
pub fn cmd_run(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<Vec<Level>> {
    let cfg = &loaded.config;
    let mut outputs = outputs_for(loaded, out)?;
    let mut levels: Vec<Level> = Vec::new();
    for &n in &cfg.grid.resolutions {
        let (_, level) = run_level(cfg, n, cfg.seed)?;
        write_scalar(
            &outputs.path(&format!("{}/log_sigma.field", level_dir(n)))?,
            level.reconstruction.log_sigma(),
            cfg.encoding(),
        )
        .stage("output")?;
        outputs.record(&format!("{}/log_sigma.field", level_dir(n)))?;
        levels.push(level);
    }
    outputs.write_table("errors.csv", &errors_table(&levels))?;
    let grids: Vec<String> = levels.iter().map(|l| l.grid_hash.clone()).collect();
    outputs.finish("run", &grids)?;
    Ok(levels)
}

pub fn errors_table(levels: &[Level]) -> Table {
    let mut t = Table::new(&["n", "h", "log_sigma_error", "order", "f_error", "max_drift", "failed", "nodes"]);
    for (k, l) in levels.iter().enumerate() {
        let order = k.checked_sub(1).map(|j| order_between(&levels[j], l));
        t.push(
            vec![
                l.n.to_string(),
                fmt(l.spacing),
                fmt(l.log_sigma_error),
                fmt_opt(order),
                fmt_opt(l.f_error),
                fmt_opt(l.drift),
                l.failed.to_string(),
                l.nodes.to_string(),
            ],
            &l.grid_hash,
        );
    }
    t
}

pub fn cmd_sweep(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let cfg: &ExperimentConfig = &loaded.config;
    let mut outputs = outputs_for(loaded, out)?;
    let rep = sweep(cfg)?;
    outputs.write_table("sweep.csv", &rep.table())?;
    outputs.write_table("sweep_summary.csv", &rep.summary())?;
    if cfg.dimension == 3 {
        outputs.write_table("waypoints.csv", &rep.waypoint_table())?;
    }
    outputs.finish("sweep", &[rep.grid_hash.clone()])
}

/// Identity suite; the report is written before a failure is returned.
pub fn cmd_verify(loaded: &LoadedConfig, out: Option<&Path>, corrupt_symmetry: bool) -> CliResult<PathBuf> {
    let cfg = &loaded.config;
    let mut outputs = outputs_for(loaded, out)?;
    let rep = verify(cfg, corrupt_symmetry)?;
    outputs.write_table("identities.csv", &rep.table())?;
    let mut checks = Table::new(&["n", "asymmetry", "polarization"]);
    let mut grids = Vec::new();
    for (n, c) in &rep.checks {
        let hash = cfg.grid(*n)?.hash_hex();
        checks.push(vec![n.to_string(), fmt(c.asymmetry), fmt(c.polarization)], &hash);
        grids.push(hash);
    }
    outputs.write_table("checks.csv", &checks)?;
    let path = outputs.finish("verify", &grids)?;
    into_result(&rep)?;
    Ok(path)
}

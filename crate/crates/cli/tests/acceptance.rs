//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines go straight to the stderr handle so they show up even when the harness
//! captures test output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use powerdense::acquisition::synthesize_h;
use powerdense::algebra::{build_v, rotation_from_s, Construction, TransitionField};
use powerdense::phantom::Phantom;
use powerdense::recon3d::cgo::{cgo_envelope, cgo_gradients, cgo_values};
use powerdense::recon3d::covering::{build_covering, cgo_remainders, gamma0, triple_det, SLAB_TRIPLES};
use powerdense::recon3d::rotation_ode::{build_q, project_to_rotation, to_matrix, Frame};
use powerdense::recon3d::transfer::transfer_between;
use powerdense::recon3d::validate::{validate_frames, FrameValidation};
use powerdense::recon3d::{plan_path, prepare_3d, Anchor3D, Covering, Options3D, Subdomain};
use powerdense::{Grid, VectorField};
use powerdense_cli::commands::{cmd_acquire, cmd_forward, cmd_run, cmd_sweep, cmd_verify};
use powerdense_cli::pipeline::{fourier_data, forward, run_level};
use powerdense_cli::sweep::sweep;
use powerdense_cli::verify::{polarization_residual, verify};
use powerdense_cli::{CliError, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = std::f64::consts::PI;

// criterion 1
const IDENTITY_ORDER: f64 = 1.9;
const IDENTITY_RUNTIME: Duration = Duration::from_secs(120);
// criterion 2
const F_TOL: f64 = 1e-2;
// criterion 3
const PLANAR_TOL: f64 = 1e-2;
const PLANAR_ORDER: f64 = 1.5;
// criterion 4
const SPATIAL_TOL: f64 = 5e-2;
const MIN_RECONSTRUCTED: f64 = 0.99;
const DRIFT_TOL: f64 = 1e-6;
// criterion 5
const SLOPE_SPREAD_2D: f64 = 0.2;
const SLOPE_SPREAD_3D: f64 = 0.3;
// criterion 6
const DET_ORDER: f64 = 1.9;
const REMAINDER_BOUND: f64 = 0.25;
// criterion 7
const FOURIER_TOL: f64 = 1e-6;
const POLARIZATION_TOL: f64 = 1e-10;
// criterion 8
const ALPHA_ORDER: f64 = 1.9;
const TANGENT_TOL: f64 = 1e-12;
const TRIALS: usize = 1000;
// criterion 9
const SAME_TRIPLE_TOL: f64 = 1e-12;
/// Five times the per-segment drift limit of the integrator.
const TWO_PATH_TOL: f64 = 5.0 * 1e-3;

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id:>2} [{verdict}] {title}: {detail}");
    assert!(pass, "criterion {id} failed: {detail}");
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap().config
}

fn order(coarse: (f64, f64), fine: (f64, f64)) -> f64 {
    (coarse.1 / fine.1).ln() / (coarse.0 / fine.0).ln()
}

fn identity_config(dimension: usize, phantom: &str) -> ExperimentConfig {
    let text = if dimension == 2 {
        format!(
            "seed = 1\ndimension = 2\nc0 = 0.1\noutput = \"unused\"\n\
             [phantom]\n{phantom}\n\
             [grid]\nresolutions = [65, 129]\n\
             [illumination]\nkind = \"linear\"\n\
             [anchors]\npoint = [0.5, 0.5]\n"
        )
    } else {
        format!(
            "seed = 1\ndimension = 3\nc0 = 0.12\noutput = \"unused\"\n\
             [phantom]\n{phantom}\n\
             [grid]\nresolutions = [25, 49]\n\
             [illumination]\nkind = \"cgo\"\nrho = {}\n\
             [anchors]\npoint = [0.5, 0.5, 0.5]\n",
            PI / 4.0
        )
    };
    ExperimentConfig::parse(&text).unwrap()
}

#[test]
fn c01_identity_suite() {
    let start = Instant::now();
    let phantoms = [
        ("constant", 2, "kind = \"constant\"\nvalue = 2.0"),
        ("exponential", 2, "kind = \"exponential\"\nrate = [0.5, -0.3]"),
        ("bump", 2, "kind = \"bump\"\namplitude = 1.0\ncenter = [0.5, 0.5]\nwidth = 0.2"),
        ("constant", 3, "kind = \"constant\"\nvalue = 2.0"),
        ("exponential", 3, "kind = \"exponential\"\nrate = [0.3, -0.2, 0.25]"),
        ("bump", 3, "kind = \"bump\"\namplitude = 1.0\ncenter = [0.5, 0.5, 0.5]\nwidth = 0.2"),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, dim, table) in phantoms {
        let rep = verify(&identity_config(dim, table), false).unwrap();
        let worst = rep.orders.iter().map(|o| o.2).fold(f64::INFINITY, f64::min);
        let tmatrix = rep.rows.iter().map(|r| r.tmatrix).fold(0.0, f64::max);
        pass &= rep.passed() && rep.orders.iter().all(|o| o.2 >= IDENTITY_ORDER);
        let shown = if worst.is_finite() { format!("{worst:.3}") } else { "exact".into() };
        notes.push(format!("{name}{dim}d order {shown} T {tmatrix:.1e}"));
        notes.extend(rep.failures.iter().cloned());
    }
    let elapsed = start.elapsed();
    pass &= elapsed < IDENTITY_RUNTIME;
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    report(1, "Liouville and T-matrix identities", pass, &notes.join(", "));
}

fn harmonic_square() -> Phantom {
    Phantom::HarmonicSquare {
        offset: 1.0,
        slope: [0.2, 0.1, -0.1],
        curvature: 0.15,
    }
}

/// Exact fluxes of `sigma = s^2` for the four CGO solutions of the Laplacian, divided by `s`.
fn analytic_fluxes(grid: &Grid, ph: &Phantom) -> Vec<VectorField> {
    let Phantom::HarmonicSquare { slope, curvature, .. } = ph else {
        unreachable!()
    };
    (0..4)
        .map(|i| {
            VectorField::from_fn(grid, |p| {
                let s = ph.harmonic_root(p);
                let ds = [slope[0] + 2.0 * curvature * p[0], slope[1] - 2.0 * curvature * p[1], slope[2]];
                let v = cgo_values(PI, p)[i];
                let dv = cgo_gradients(PI, p)[i];
                std::array::from_fn(|a| dv[a] - v * ds[a] / s)
            })
            .unwrap()
        })
        .collect()
}

/// Frame checks on the fixed box `[1/4, 3/4] x [1/8, 7/8]^2` inside the middle slab, where
/// the signed triple `(S1, S2, -S4)` is positive. `n - 1` must be a multiple of 8.
fn middle_slab_frames(n: usize) -> FrameValidation {
    let g = Grid::unit(3, n).unwrap();
    let ph = harmonic_square();
    let s = analytic_fluxes(&g, &ph);
    // one layer of padding so that the scored box sees central differences only
    let (q, e) = ((n - 1) / 4, (n - 1) / 8);
    let lo = [q - 1, e - 1, e - 1];
    let hi = [3 * q + 1, n - e, n - e];
    let sg = g.subgrid(&lo, &hi).unwrap();
    let sub: Vec<_> = [s[0].clone(), s[1].clone(), s[3].scale(-1.0).unwrap()]
        .iter()
        .map(|f| f.restrict(&sg, &lo).unwrap())
        .collect();
    let data = synthesize_h(&sub).unwrap();
    let t = TransitionField::build(&data.h, Construction::GramSchmidt, 0.0).unwrap();
    let v = build_v(&t).unwrap();
    let r = rotation_from_s(&sub, &t).unwrap();
    let gl = VectorField::from_fn(&sg, |p| ph.grad_log_sigma(p)).unwrap();
    validate_frames(&v, &t, &r, Some(&gl), 1).unwrap()
}

#[test]
fn c02_f_formula() {
    let cfg = load("bump2d.toml");
    let (_, coarse) = run_level(&cfg, 65, 0).unwrap();
    let (_, fine) = run_level(&cfg, 129, 0).unwrap();
    let (p0, p1) = (coarse.f_error.unwrap(), fine.f_error.unwrap());
    let (s0, s1) = (middle_slab_frames(25).f_error.unwrap(), middle_slab_frames(49).f_error.unwrap());
    let pass = p1 <= F_TOL && p1 < p0 && s1 <= F_TOL && s1 < s0;
    report(
        2,
        "F against grad log sigma / 2",
        pass,
        &format!("2d {p0:.2e} -> {p1:.2e}, 3d {s0:.2e} -> {s1:.2e}"),
    );
}

#[test]
fn c03_planar_end_to_end() {
    let cfg = load("bump2d.toml");
    let (_, mid) = run_level(&cfg, 129, 0).unwrap();
    let (_, fine) = run_level(&cfg, 257, 0).unwrap();
    let p = order((mid.spacing, mid.log_sigma_error), (fine.spacing, fine.log_sigma_error));
    let pass = mid.log_sigma_error <= PLANAR_TOL && p >= PLANAR_ORDER;
    report(
        3,
        "2D bump reconstruction",
        pass,
        &format!(
            "error {:.2e} at 129, {:.2e} at 257, order {p:.3}",
            mid.log_sigma_error, fine.log_sigma_error
        ),
    );
}

#[test]
fn c04_spatial_end_to_end() {
    let cfg = load("bump3d.toml");
    assert!((cfg.illumination.rho - PI).abs() < 1e-15);
    let (_, level) = run_level(&cfg, 49, 0).unwrap();
    let done = 1.0 - level.failed as f64 / level.nodes as f64;
    let drift = level.drift.unwrap();
    let pass = level.log_sigma_error <= SPATIAL_TOL && done > MIN_RECONSTRUCTED && drift <= DRIFT_TOL;
    report(
        4,
        "3D bump reconstruction with CGO at rho = pi",
        pass,
        &format!(
            "error {:.2e}, reconstructed {:.4}%, drift {drift:.1e}",
            level.log_sigma_error,
            100.0 * done
        ),
    );
}

#[test]
fn c05_stability() {
    let planar = sweep(&load("bump2d.toml")).unwrap();
    let spatial = sweep(&load("stability3d.toml")).unwrap();
    let amplitudes = |r: &powerdense_cli::sweep::SweepReport| r.points.iter().map(|p| p.amplitude).collect::<Vec<_>>();
    let s2 = planar.slope.unwrap();
    let s3 = spatial.slope.unwrap();
    let pass = amplitudes(&planar) == [1e-4, 1e-3, 1e-2]
        && amplitudes(&spatial) == [1e-4, 1e-3, 1e-2]
        && (s2 - 1.0).abs() <= SLOPE_SPREAD_2D
        && (s3 - 1.0).abs() <= SLOPE_SPREAD_3D
        && planar.ratios_bounded
        && spatial.ratios_bounded;
    let ratios = |r: &powerdense_cli::sweep::SweepReport| {
        r.points.iter().map(|p| format!("{:.2}", p.ratio)).collect::<Vec<_>>().join("/")
    };
    report(
        5,
        "Lipschitz stability",
        pass,
        &format!(
            "slope 2d {s2:.3} (ratios {}), 3d {s3:.3} (ratios {})",
            ratios(&planar),
            ratios(&spatial)
        ),
    );
}

fn unit_cgo(n: usize) -> (Grid, Vec<VectorField>) {
    let text = format!(
        "seed = 1\ndimension = 3\nc0 = 0.0\noutput = \"unused\"\n\
         [phantom]\nkind = \"identity\"\n\
         [grid]\nresolutions = [{n}]\n\
         [illumination]\nkind = \"cgo\"\nrho = {PI}\n\
         [anchors]\npoint = [0.5, 0.5, 0.5]\n"
    );
    let fwd = forward(&ExperimentConfig::parse(&text).unwrap(), n).unwrap();
    (fwd.grid, fwd.fluxes)
}

/// Largest `|det(S1, S2, S3) - rho^3 e^{rho (2 x2 + x3)} (-cos rho x1)|`, relative to the envelope.
fn determinant_error(grid: &Grid, s: &[VectorField]) -> f64 {
    (0..grid.len())
        .map(|n| {
            let p = grid.point(n);
            let env = cgo_envelope(PI, &p);
            let want = -env * (PI * p[0]).cos();
            (triple_det(s, &SLAB_TRIPLES[0], &[1.0; 3], n) - want).abs() / env
        })
        .fold(0.0, f64::max)
}

#[test]
fn c06_cgo_determinant() {
    let (g0, s0) = unit_cgo(25);
    let (g1, s1) = unit_cgo(49);
    let (e0, e1) = (determinant_error(&g0, &s0), determinant_error(&g1, &s1));
    let p = order((g0.spacing()[0], e0), (g1.spacing()[0], e1));
    let floor = gamma0(&g1, PI);
    let covering = build_covering(&s1, 0.25 * floor, 3).unwrap();
    let achieved = covering.verify(&s1).unwrap().into_iter().fold(f64::INFINITY, f64::min);
    let (f1, f2) = cgo_remainders(&s1, PI);
    let pass = p >= DET_ORDER
        && covering.c0 >= 0.25 * floor
        && achieved >= 0.25 * floor
        && f1.max(f2) < REMAINDER_BOUND;
    report(
        6,
        "CGO determinant structure",
        pass,
        &format!(
            "det error {e0:.2e} -> {e1:.2e} (order {p:.3}), c0 {achieved:.3} vs gamma0/4 {:.3}, sup|f| {:.2e}",
            0.25 * floor,
            f1.max(f2)
        ),
    );
}

#[test]
fn c07_fourier_round_trip() {
    let base = std::fs::read_to_string(config_path("periodic2d.toml")).unwrap();
    let variants = [
        base.clone(),
        base.replace("amplitude = 0.3", "amplitude = 0.5")
            .replace("periods = [1.0, 1.0]", "periods = [0.5, 1.0]"),
    ];
    let mut worst_h = 0.0f64;
    let mut worst_pol = 0.0f64;
    for text in variants {
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let n = cfg.grid.resolutions[0];
        let fwd = forward(&cfg, n).unwrap();
        let direct = synthesize_h(&fwd.fluxes).unwrap();
        let recovered = fourier_data(&fwd).unwrap().data;
        let scale = direct.h.max_abs();
        let m = direct.m() * direct.m();
        // the last node of each axis is the first one again on the periodic lattice
        let off_seam = |node: usize| {
            let idx = fwd.grid.multi_index(node);
            (0..2).all(|a| idx[a] > 0 && idx[a] + 1 < n)
        };
        let diff = (0..fwd.grid.len())
            .filter(|&node| off_seam(node))
            .flat_map(|node| (0..m).map(move |c| (node, c)))
            .map(|(node, c)| (direct.h.values()[node * m + c] - recovered.h.values()[node * m + c]).abs())
            .fold(0.0, f64::max);
        worst_h = worst_h.max(diff / scale);
        worst_pol = worst_pol.max(polarization_residual(&fwd, &fwd.solutions[0], &fwd.solutions[1]).unwrap());
    }
    let pass = worst_h <= FOURIER_TOL && worst_pol <= POLARIZATION_TOL;
    report(
        7,
        "Fourier acquisition round trip",
        pass,
        &format!("relative error {worst_h:.2e}, polarization {worst_pol:.2e}"),
    );
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Frame {
    let m: Frame = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let (mut q, _) = project_to_rotation(&m).unwrap();
    if to_matrix(&q).determinant() < 0.0 {
        q.iter_mut().take(3).for_each(|x| *x = -*x);
    }
    q
}

#[test]
fn c08_alpha_and_tangency() {
    let (a0, a1) = (middle_slab_frames(25).alpha_error, middle_slab_frames(49).alpha_error);
    let p = order((1.0 / 24.0, a0), (1.0 / 48.0, a1));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let v: [[f64; 3]; 9] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let r = random_rotation(&mut rng);
        let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let g = build_q(&v).evaluate(&r, &dir);
        worst = worst.max((0..9).map(|x| g[x] * r[x]).sum::<f64>().abs());
    }
    let pass = p >= ALPHA_ORDER && worst <= TANGENT_TOL;
    report(
        8,
        "alpha against finite differences, G . R = 0",
        pass,
        &format!("alpha error {a0:.2e} -> {a1:.2e} (order {p:.3}), max |G . R| {worst:.1e} over {TRIALS}"),
    );
}

fn center_anchor(g: &Grid, s: &[VectorField], cov: &Covering, ph: &Phantom) -> Anchor3D {
    let n = g.shape()[0];
    let x0 = g.index([n / 2, n / 2, n / 2]);
    let k = cov.containing(&g.point(x0))[0];
    Anchor3D::from_fluxes(s, cov, k, x0, ph.log_sigma(&g.point(x0)), Construction::GramSchmidt).unwrap()
}

#[test]
fn c09_transfer_and_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut same = 0.0f64;
    for _ in 0..TRIALS {
        let s = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = s.transpose() * &s;
        let sub = Subdomain {
            lower: [0.0; 3],
            upper: [1.0; 3],
            triple: [0, 1, 3],
            signs: [1.0, -1.0, 1.0],
        };
        let block = DMatrix::from_fn(3, 3, |r, c| sub.signs[r] * sub.signs[c] * h[(sub.triple[r], sub.triple[c])]);
        if block.determinant() < 1e-3 {
            continue;
        }
        let frame = random_rotation(&mut rng);
        let out = transfer_between(&frame, &h, &sub, &sub, Construction::GramSchmidt).unwrap();
        same = same.max((0..9).map(|x| (out.frame[x] - frame[x]).abs()).fold(0.0, f64::max));
    }

    let g = Grid::unit(3, 49).unwrap();
    let ph = harmonic_square();
    let s = analytic_fluxes(&g, &ph);
    let data = synthesize_h(&s).unwrap();
    let cov = build_covering(&s, 0.25 * gamma0(&g, PI), 3).unwrap();
    let anchor = center_anchor(&g, &s, &cov, &ph);
    let prep = prepare_3d(&data, &cov, Options3D::default()).unwrap();
    let mut gap = 0.0f64;
    for (x, via) in [([1.0, 0.25, 0.75], [0.0, 1.0, 0.0]), ([0.0, 0.0, 1.0], [1.0, 1.0, 0.5])] {
        let direct = prep.trace(&anchor, &x).unwrap();
        let plan = plan_path(&anchor.point, &via, &cov)
            .unwrap()
            .concat(plan_path(&via, &x, &cov).unwrap())
            .unwrap();
        let detour = prep.trace_plan(&anchor, plan).unwrap();
        gap = gap.max((direct.log_sigma - detour.log_sigma).abs());
        let (a, b) = (direct.arrivals.last().unwrap(), detour.arrivals.last().unwrap());
        gap = gap.max((0..9).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max));
    }
    let pass = same <= SAME_TRIPLE_TOL && gap <= TWO_PATH_TOL;
    report(
        9,
        "transfer and path coherence",
        pass,
        &format!("same-triple transfer {same:.1e}, two-path gap {gap:.2e}"),
    );
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn every_command(config: &Path, out: &Path) {
    let loaded = ExperimentConfig::load(config).unwrap();
    cmd_forward(&loaded, Some(&out.join("forward"))).unwrap();
    cmd_acquire(&loaded, Some(&out.join("acquire"))).unwrap();
    cmd_run(&loaded, Some(&out.join("run"))).unwrap();
    cmd_sweep(&loaded, Some(&out.join("sweep"))).unwrap();
    // coarse grids may miss the order gate; the report files are written either way
    match cmd_verify(&loaded, Some(&out.join("verify")), false) {
        Ok(_) | Err(CliError::Check(_)) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn c10_determinism() {
    let work = tempfile::tempdir().unwrap();
    let planar = std::fs::read_to_string(config_path("bump2d.toml"))
        .unwrap()
        .replace("resolutions = [65, 129, 257]", "resolutions = [33, 65]");
    let spatial = std::fs::read_to_string(config_path("stability3d.toml"))
        .unwrap()
        .replace("resolutions = [49]", "resolutions = [17]");
    let mut files = 0;
    let mut identical = true;
    for (name, text) in [("planar", planar), ("spatial", spatial)] {
        let config = work.path().join(format!("{name}.toml"));
        std::fs::write(&config, text).unwrap();
        let (a, b) = (work.path().join(format!("{name}_a")), work.path().join(format!("{name}_b")));
        every_command(&config, &a);
        every_command(&config, &b);
        let (ta, tb) = (tree(&a), tree(&b));
        files += ta.len();
        identical &= !ta.is_empty() && ta == tb;
    }
    report(10, "byte-identical reruns", identical, &format!("{files} files compared"));
}

use std::path::Path;
use std::process::{Command, Output};

use powerdense::io::read_field;

const BUMP_2D: &str = r#"
seed = 3
dimension = 2
c0 = 0.1
output = "out"

[phantom]
kind = "bump"
amplitude = 1.0
center = [0.5, 0.5]
width = 0.2

[grid]
resolutions = [33]

[illumination]
kind = "linear"

[anchors]
point = [0.5, 0.5]
"#;

const BUMP_3D: &str = r#"
seed = 3
dimension = 3
c0 = 0.96
output = "out"

[phantom]
kind = "bump"
amplitude = 1.0
center = [0.5, 0.5, 0.5]
width = 0.2

[grid]
resolutions = [17]

[illumination]
kind = "cgo"
rho = 1.5707963267948966

[anchors]
point = [0.5, 0.5, 0.5]
"#;

fn powerdense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powerdense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn max_error(field: &Path, truth: impl Fn(&[f64]) -> f64) -> f64 {
    let f = read_field(field).unwrap().into_scalar().unwrap();
    let g = f.grid().clone();
    (0..g.len())
        .map(|n| (f.at(n) - truth(&g.point(n)[..g.dim()])).abs())
        .fold(0.0, f64::max)
}

fn bump_log_sigma(p: &[f64]) -> f64 {
    let r2: f64 = p.iter().map(|x| (x - 0.5).powi(2)).sum();
    (1.0 + (-r2 / 0.04).exp()).ln()
}

#[test]
fn missing_anchors_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = BUMP_2D.replace("[anchors]\npoint = [0.5, 0.5]\n", "");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = powerdense(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("anchors"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_and_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BUMP_2D}\n[extra]\nx = 1\n"));
    assert_eq!(powerdense(&["forward", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        powerdense(&["forward", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn corrupted_symmetry_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMP_2D);
    let out_dir = dir.path().join("v");
    let o = out_dir.to_str().unwrap();
    let clean = powerdense(&["verify", "--config", &cfg, "--out", o]);
    assert!(clean.status.success(), "{}", stderr(&clean));
    let bad = powerdense(&["verify", "--config", &cfg, "--out", o, "--corrupt-symmetry"]);
    assert_eq!(bad.status.code(), Some(1), "{}", stderr(&bad));
    assert!(stderr(&bad).contains("symmetr"), "{}", stderr(&bad));
    assert!(out_dir.join("checks.csv").exists());
}

#[test]
fn planar_acquire_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMP_2D);
    let data = dir.path().join("data");
    let acq = powerdense(&["acquire", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(acq.status.success(), "{}", stderr(&acq));
    let rec = dir.path().join("rec");
    let log0 = format!("{}", 2f64.ln());
    let out = powerdense(&[
        "reconstruct2d",
        "--data",
        data.join("n33/manifest.toml").to_str().unwrap(),
        "--anchor-x0",
        "0.5,0.5",
        "--log-sigma0",
        &log0,
        "--c0",
        "0.1",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let err = max_error(&rec.join("log_sigma.field"), bump_log_sigma);
    assert!(err < 5e-2, "{err:e}");
    assert!(rec.join("diagnostics.csv").exists());
}

#[test]
fn spatial_acquire_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMP_3D);
    let data = dir.path().join("data");
    let acq = powerdense(&["acquire", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(acq.status.success(), "{}", stderr(&acq));
    let level = data.join("n17");
    let anchor = format!(
        "0.5,0.5,0.5,{},{}",
        2f64.ln(),
        level.join("anchor_frame.toml").to_str().unwrap()
    );
    let rec = dir.path().join("rec");
    let out = powerdense(&[
        "reconstruct3d",
        "--data",
        level.join("manifest.toml").to_str().unwrap(),
        "--anchor",
        &anchor,
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let err = max_error(&rec.join("log_sigma.field"), bump_log_sigma);
    assert!(err < 0.2, "{err:e}");

    let bad = powerdense(&[
        "reconstruct3d",
        "--data",
        level.join("manifest.toml").to_str().unwrap(),
        "--anchor",
        "0.5,0.5",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMP_2D);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = powerdense(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["errors.csv", "manifest.toml", "n33/log_sigma.field"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

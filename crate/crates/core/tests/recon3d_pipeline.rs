use nalgebra::Matrix3;
use powerdense::acquisition::synthesize_h;
use powerdense::algebra::{build_v, rotation_from_s, Construction, TransitionField};
use powerdense::forward::fluxes;
use powerdense::phantom::Phantom;
use powerdense::recon3d::cgo::{cgo_gradients, cgo_illuminations, cgo_values};
use powerdense::recon3d::covering::{build_covering, gamma0, Covering};
use powerdense::recon3d::rotation_ode::from_matrix;
use powerdense::recon3d::transfer::{signed_block, transfer_between, transition};
use powerdense::recon3d::validate::validate_frames;
use powerdense::recon3d::{global_reconstruct_3d, plan_path, prepare_3d, Anchor3D, Options3D};
use powerdense::{Grid, VectorField};

const RHO: f64 = std::f64::consts::PI;

fn square() -> Phantom {
    Phantom::HarmonicSquare {
        offset: 1.0,
        slope: [0.2, 0.1, -0.1],
        curvature: 0.15,
    }
}

/// Exact fluxes `s grad(v / s)` of `sigma = s^2` for the four harmonic CGO solutions `v`.
fn analytic_fluxes(grid: &Grid, ph: &Phantom) -> Vec<VectorField> {
    let Phantom::HarmonicSquare { slope, curvature, .. } = ph else {
        unreachable!()
    };
    (0..4)
        .map(|i| {
            VectorField::from_fn(grid, |p| {
                let s = ph.harmonic_root(p);
                let ds = [slope[0] + 2.0 * curvature * p[0], slope[1] - 2.0 * curvature * p[1], slope[2]];
                let v = cgo_values(RHO, p)[i];
                let dv = cgo_gradients(RHO, p)[i];
                std::array::from_fn(|a| dv[a] - v * ds[a] / s)
            })
            .unwrap()
        })
        .collect()
}

fn center_anchor(g: &Grid, s: &[VectorField], cov: &Covering, ph: &Phantom) -> Anchor3D {
    let n = g.shape()[0];
    let x0 = g.index([n / 2, n / 2, n / 2]);
    let k = cov.containing(&g.point(x0))[0];
    Anchor3D::from_fluxes(s, cov, k, x0, ph.log_sigma(&g.point(x0)), Construction::GramSchmidt).unwrap()
}

fn max_log_error(g: &Grid, rec: &powerdense::ScalarField, ph: &Phantom) -> f64 {
    (0..g.len())
        .map(|k| (rec.at(k) - ph.log_sigma(&g.point(k))).abs())
        .fold(0.0, f64::max)
}

fn analytic_error(n: usize) -> (f64, f64) {
    let g = Grid::unit(3, n).unwrap();
    let ph = square();
    let s = analytic_fluxes(&g, &ph);
    let data = synthesize_h(&s).unwrap();
    let cov = build_covering(&s, 0.25 * gamma0(&g, RHO), 3).unwrap();
    let anchor = center_anchor(&g, &s, &cov, &ph);
    let res = global_reconstruct_3d(&data, &cov, &anchor, Options3D::default()).unwrap();
    assert_eq!(res.failed, 0);
    (max_log_error(&g, &res.log_sigma, &ph), res.max_drift())
}

#[test]
fn analytic_fluxes_converge() {
    let ((a, _), (b, drift)) = (analytic_error(25), analytic_error(49));
    assert!(drift <= 1e-6, "{drift:e}");
    let order = (a / b).ln() / (48.0f64 / 24.0).ln();
    assert!(b <= 3e-2, "{b:e}");
    assert!(order >= 1.5, "{a:e} {b:e} {order}");
}

#[test]
fn frame_equations_hold_for_analytic_data() {
    let mut last: Option<(f64, f64)> = None;
    for n in [17, 33] {
        let g = Grid::unit(3, n).unwrap();
        let ph = square();
        let s = analytic_fluxes(&g, &ph);
        // the triple (1, 2, -4) is positive in the middle slab
        let lo = [n / 4, 0, 0];
        let hi = [3 * n / 4, n - 1, n - 1];
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
        let out = validate_frames(&v, &t, &r, Some(&gl), 1).unwrap();
        let f = out.f_error.unwrap();
        if let Some((alpha, f_prev)) = last {
            assert!(out.alpha_error < alpha / 2.5, "{alpha:e} {:e}", out.alpha_error);
            assert!(f < f_prev / 3.5 && f <= 1e-2, "{f_prev:e} {f:e}");
        }
        last = Some((out.alpha_error, f));
    }
}

fn bump() -> Phantom {
    Phantom::Bump {
        amplitude: 1.0,
        center: [0.5, 0.5, 0.5],
        width: 0.2,
    }
}

#[test]
fn bump_from_solved_cgo_data() {
    let g = Grid::unit(3, 33).unwrap();
    let ph = bump();
    let c = ph.conductivity(&g).unwrap();
    let cgo = cgo_illuminations(&c, RHO).unwrap();
    let s = fluxes(&c, &cgo.traces, 1e-12).unwrap();
    let data = synthesize_h(&s).unwrap();
    let cov = build_covering(&s, 0.25 * gamma0(&g, RHO), 3).unwrap();
    let anchor = center_anchor(&g, &s, &cov, &ph);
    let res = global_reconstruct_3d(&data, &cov, &anchor, Options3D::default()).unwrap();
    assert_eq!(res.failed, 0);
    let err = max_log_error(&g, &res.log_sigma, &ph);
    assert!(err <= 5e-2, "{err:e}");
}

#[test]
fn two_paths_to_one_node_agree() {
    let g = Grid::unit(3, 49).unwrap();
    let ph = square();
    let s = analytic_fluxes(&g, &ph);
    let data = synthesize_h(&s).unwrap();
    let cov = build_covering(&s, 0.25 * gamma0(&g, RHO), 3).unwrap();
    let anchor = center_anchor(&g, &s, &cov, &ph);
    let prep = prepare_3d(&data, &cov, Options3D::default()).unwrap();
    for (x, via) in [
        ([1.0, 0.25, 0.75], [0.0, 1.0, 0.0]),
        ([0.0, 0.0, 1.0], [1.0, 1.0, 0.5]),
    ] {
        let direct = prep.trace(&anchor, &x).unwrap();
        let plan = plan_path(&anchor.point, &via, &cov)
            .unwrap()
            .concat(plan_path(&via, &x, &cov).unwrap())
            .unwrap();
        let detour = prep.trace_plan(&anchor, plan).unwrap();
        let gap = (direct.log_sigma - detour.log_sigma).abs();
        assert!(gap <= 5e-3, "{gap:e}");
        let fd: f64 = direct.arrivals.last().unwrap().iter().zip(detour.arrivals.last().unwrap()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(fd <= 5e-3, "{fd:e}");
    }
}

#[test]
fn transfer_matches_the_next_frame_for_unit_conductivity() {
    let g = Grid::unit(3, 25).unwrap();
    let s: Vec<_> = (0..4)
        .map(|i| VectorField::from_fn(&g, |p| cgo_gradients(RHO, p)[i]).unwrap())
        .collect();
    let cov = build_covering(&s, 0.25 * gamma0(&g, RHO), 3).unwrap();
    let (a, b) = (&cov.subdomains[0], &cov.subdomains[1]);
    // a point in the overlap of the first two slabs
    let y = [0.5 * (b.lower[0] + a.upper[0]), 0.3, 0.6];
    let grads = cgo_gradients(RHO, &y);
    let smat = nalgebra::DMatrix::from_fn(3, 4, |r, c| grads[c][r]);
    let h = smat.transpose() * &smat;
    let frame = |d: &powerdense::recon3d::Subdomain| {
        let sm = Matrix3::from_fn(|r, c| d.signs[c] * grads[d.triple[c]][r]);
        let t = transition(&signed_block(&h, d, d), Construction::GramSchmidt).unwrap();
        from_matrix(&(sm * t.transpose()))
    };
    let out = transfer_between(&frame(a), &h, a, b, Construction::GramSchmidt).unwrap();
    let want = frame(b);
    let err = (0..9).map(|x| (out.frame[x] - want[x]).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err:e}");
}

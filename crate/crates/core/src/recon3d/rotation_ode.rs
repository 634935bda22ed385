//! The quadratic frame equation along a segment and its integrator.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::field::MultiField;
use crate::grid::Segment;

/// Stacked columns `(R_1, R_2, R_3)`.
pub type Frame = [f64; 9];

/// The index cycles `(i, j, k)` of positive orientation.
pub const CYCLES: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// Components packed per node of a local field: nine V vectors, then `grad log D`.
pub const PACKED_COMPONENTS: usize = 30;

/// Data needed at one point: `V_ij` (row-major) and `grad log D`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointData {
    pub v: [[f64; 3]; 9],
    pub grad_log_d: [f64; 3],
}

impl PointData {
    pub fn from_packed(p: &[f64]) -> Self {
        let mut d = PointData::default();
        for (m, v) in d.v.iter_mut().enumerate() {
            v.copy_from_slice(&p[3 * m..3 * m + 3]);
        }
        d.grad_log_d.copy_from_slice(&p[27..30]);
        d
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn col(r: &Frame, i: usize) -> &[f64] {
    &r[3 * i..3 * i + 3]
}

/// `c[i][p] = alpha_i . R_p` from the data vectors and the frame.
pub fn alpha_coefficients(v: &[[f64; 3]; 9], r: &Frame) -> [[f64; 3]; 3] {
    // vr[a][b][q] = V_ab . R_q
    let mut vr = [[[0.0; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for q in 0..3 {
                vr[a][b][q] = dot(&v[3 * a + b], col(r, q));
            }
        }
    }
    let mut c = [[0.0; 3]; 3];
    for &(i, j, k) in &CYCLES {
        c[i][i] = 0.5
            * ((vr[k][j][i] - vr[j][k][i]) - (vr[i][k][j] + vr[k][i][j])
                + (vr[j][i][k] + vr[i][j][k]));
        c[i][j] = ((vr[i][k][i] + vr[k][i][i]) + (vr[k][j][j] - 2.0 * vr[j][k][j])
            + (2.0 * vr[j][j][k] + vr[k][k][k] - vr[i][i][k]))
            / 3.0;
        c[i][k] = (-(vr[i][j][i] + vr[j][i][i]) - (vr[j][j][j] + 2.0 * vr[k][k][j] - vr[i][i][j])
            + (2.0 * vr[k][j][k] - vr[j][k][k]))
            / 3.0;
    }
    c
}

/// The vectors `alpha_i = sum_p (alpha_i . R_p) R_p`.
pub fn alphas(v: &[[f64; 3]; 9], r: &Frame) -> [[f64; 3]; 3] {
    let c = alpha_coefficients(v, r);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for p in 0..3 {
            for a in 0..3 {
                out[i][a] += c[i][p] * r[3 * p + a];
            }
        }
    }
    out
}

/// Derivative of the frame along `dir`.
pub fn frame_rhs(v: &[[f64; 3]; 9], r: &Frame, dir: &[f64]) -> Frame {
    let c = alpha_coefficients(v, r);
    let rd = [dot(col(r, 0), dir), dot(col(r, 1), dir), dot(col(r, 2), dir)];
    let a: [f64; 3] = std::array::from_fn(|i| c[i][0] * rd[0] + c[i][1] * rd[1] + c[i][2] * rd[2]);
    let mut out = [0.0; 9];
    for x in 0..3 {
        out[x] = -a[2] * r[3 + x] + a[1] * r[6 + x];
        out[3 + x] = a[2] * r[x] - a[0] * r[6 + x];
        out[6 + x] = -a[1] * r[x] + a[0] * r[3 + x];
    }
    out
}

/// `F = (grad log D + sum_ij ((V_ij + V_ji) . R_i) R_j) / 3`.
pub fn f_vector(d: &PointData, r: &Frame) -> [f64; 3] {
    let mut f = d.grad_log_d;
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = (&d.v[3 * i + j], &d.v[3 * j + i]);
            let w = (a[0] + b[0]) * r[3 * i] + (a[1] + b[1]) * r[3 * i + 1] + (a[2] + b[2]) * r[3 * i + 2];
            for x in 0..3 {
                f[x] += w * r[3 * j + x];
            }
        }
    }
    f.map(|x| x / 3.0)
}

/// Number of cubic monomials in nine variables.
pub const CUBIC_MONOMIALS: usize = 165;

/// Sorted index triples `a <= b <= c` over nine variables, in lexicographic order.
pub fn cubic_monomials() -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(CUBIC_MONOMIALS);
    for a in 0..9 {
        for b in a..9 {
            for c in b..9 {
                out.push([a, b, c]);
            }
        }
    }
    out
}

fn monomial_index(mut m: [usize; 3]) -> usize {
    m.sort_unstable();
    let [a, b, c] = m;
    // count of sorted triples preceding (a, b, c)
    let tri = |n: usize| n * (n + 1) * (n + 2) / 6;
    let tet = |n: usize| n * (n + 1) / 2;
    (tri(9) - tri(9 - a)) + (tet(9 - a) - tet(9 - b)) + (c - b)
}

/// Coefficients of the cubic right side per axis: `coeffs[axis][monomial][component]`.
#[derive(Debug, Clone)]
pub struct QCoefficients {
    pub coeffs: Vec<Vec<[f64; 9]>>,
}

impl QCoefficients {
    /// `G(R) = sum_k dir_k sum_m Q^k_m R^m`.
    pub fn evaluate(&self, r: &Frame, dir: &[f64]) -> Frame {
        let monos = cubic_monomials();
        let mut out = [0.0; 9];
        for (k, per_axis) in self.coeffs.iter().enumerate() {
            if dir[k] == 0.0 {
                continue;
            }
            for (m, q) in monos.iter().zip(per_axis) {
                let w = dir[k] * r[m[0]] * r[m[1]] * r[m[2]];
                for x in 0..9 {
                    out[x] += w * q[x];
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().flatten().all(|&c| c == 0.0)
    }
}

/// Expand the right side into cubic monomials of the nine frame entries.
pub fn build_q(v: &[[f64; 3]; 9]) -> QCoefficients {
    // linear form of V_ab . R_q
    let form = |a: usize, b: usize, q: usize| {
        let mut l = [0.0; 9];
        l[3 * q..3 * q + 3].copy_from_slice(&v[3 * a + b]);
        l
    };
    let comb = |terms: &[(f64, [f64; 9])]| {
        let mut l = [0.0; 9];
        for (w, t) in terms {
            for x in 0..9 {
                l[x] += w * t[x];
            }
        }
        l
    };
    // lin[i][p] is the linear form alpha_i . R_p
    let mut lin = [[[0.0; 9]; 3]; 3];
    for &(i, j, k) in &CYCLES {
        lin[i][i] = comb(&[
            (0.5, form(k, j, i)),
            (-0.5, form(j, k, i)),
            (-0.5, form(i, k, j)),
            (-0.5, form(k, i, j)),
            (0.5, form(j, i, k)),
            (0.5, form(i, j, k)),
        ]);
        let t = 1.0 / 3.0;
        lin[i][j] = comb(&[
            (t, form(i, k, i)),
            (t, form(k, i, i)),
            (t, form(k, j, j)),
            (-2.0 * t, form(j, k, j)),
            (2.0 * t, form(j, j, k)),
            (t, form(k, k, k)),
            (-t, form(i, i, k)),
        ]);
        lin[i][k] = comb(&[
            (-t, form(i, j, i)),
            (-t, form(j, i, i)),
            (-t, form(j, j, j)),
            (-2.0 * t, form(k, k, j)),
            (t, form(i, i, j)),
            (2.0 * t, form(k, j, k)),
            (-t, form(j, k, k)),
        ]);
    }
    let mut coeffs = Vec::with_capacity(3);
    for axis in 0..3 {
        // a_i = sum_p lin[i][p] * R_p[axis]: quadratic q_i[x][y] for var_x var_y
        let mut quad = [[[0.0; 9]; 9]; 3];
        for i in 0..3 {
            for p in 0..3 {
                for x in 0..9 {
                    quad[i][x][3 * p + axis] += lin[i][p][x];
                }
            }
        }
        let mut per = vec![[0.0; 9]; CUBIC_MONOMIALS];
        // dR_1 = -a3 R2 + a2 R3, dR_2 = a3 R1 - a1 R3, dR_3 = -a2 R1 + a1 R2
        let rules: [[(usize, f64, usize); 2]; 3] = [
            [(2, -1.0, 1), (1, 1.0, 2)],
            [(2, 1.0, 0), (0, -1.0, 2)],
            [(1, -1.0, 0), (0, 1.0, 1)],
        ];
        for (out_col, terms) in rules.iter().enumerate() {
            for &(ai, sign, rcol) in terms {
                for comp in 0..3 {
                    let var = 3 * rcol + comp;
                    for x in 0..9 {
                        for y in 0..9 {
                            let q = quad[ai][x][y];
                            if q != 0.0 {
                                per[monomial_index([x, y, var])][3 * out_col + comp] += sign * q;
                            }
                        }
                    }
                }
            }
        }
        coeffs.push(per);
    }
    QCoefficients { coeffs }
}

/// `|R|^2 - 3` of a stacked frame.
pub fn norm_defect(r: &Frame) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>() - 3.0
}

pub fn to_matrix(r: &Frame) -> Matrix3<f64> {
    Matrix3::from_fn(|a, i| r[3 * i + a])
}

pub fn from_matrix(m: &Matrix3<f64>) -> Frame {
    std::array::from_fn(|k| m[(k % 3, k / 3)])
}

/// Nearest rotation in Frobenius norm and the distance moved.
pub fn project_to_rotation(r: &Frame) -> Result<(Frame, f64)> {
    let m = to_matrix(r);
    let defect = (m.transpose() * m - Matrix3::identity()).amax();
    let q = if defect < 0.1 {
        // Newton-Schulz on the polar factor; quadratic near orthogonal matrices
        let mut x = m;
        for _ in 0..20 {
            let next = x * (Matrix3::identity() * 3.0 - x.transpose() * x) * 0.5;
            let step = (next - x).amax();
            x = next;
            if step < 1e-16 {
                break;
            }
        }
        x
    } else {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
        let mut u = u;
        if (u * vt).determinant() < 0.0 {
            u.column_mut(2).neg_mut();
        }
        u * vt
    };
    if !(q.determinant() > 0.0) {
        return Err(Error::NotOrthonormal { deviation: defect });
    }
    Ok((from_matrix(&q), (q - m).norm()))
}

/// Per-segment integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Re-orthonormalize after every step.
    pub project: bool,
    /// Largest tolerated `| |R|^2 - 3 |` before a projection.
    pub drift_limit: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            project: true,
            drift_limit: 1e-3,
        }
    }
}

/// Result of integrating the frame and `log sigma` along one piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOutcome {
    pub frame: Frame,
    pub log_sigma_increment: f64,
    /// Largest `| |R|^2 - 3 |` seen before any projection (at the end when not projecting).
    pub drift: f64,
    /// Largest distance moved by a projection.
    pub projection: f64,
    pub steps: usize,
}

/// Augmented right side `(dR/dt, d log sigma / dt)` along velocity `vel`.
#[inline]
fn augmented(d: &PointData, r: &Frame, vel: &[f64; 3]) -> (Frame, f64) {
    let dr = frame_rhs(&d.v, r, vel);
    let f = f_vector(d, r);
    (dr, 2.0 * dot(&f, vel))
}

/// Classical fourth-order integration of the frame and `log sigma` from `seg.from` to `seg.to`.
pub fn integrate_r_segment(
    local: &MultiField,
    r_start: &Frame,
    seg: &Segment,
    opts: &IntegratorOptions,
) -> Result<SegmentOutcome> {
    if local.ncomp() != PACKED_COMPONENTS {
        return Err(Error::InvalidArgument("local field is not a packed V field".into()));
    }
    let steps = seg.steps_for(local.grid());
    let vel = seg.velocity();
    let dt = 1.0 / steps as f64;
    let mut buf = [0.0; PACKED_COMPONENTS];
    let mut sample = |t: f64| -> Result<PointData> {
        local.sample_into(&seg.point(t), &mut buf)?;
        Ok(PointData::from_packed(&buf))
    };
    let mut r = *r_start;
    let mut ls = 0.0;
    let mut drift: f64 = 0.0;
    let mut projection: f64 = 0.0;
    let mut d0 = sample(0.0)?;
    for s in 0..steps {
        let t = s as f64 * dt;
        let dm = sample(t + 0.5 * dt)?;
        let d1 = sample(t + dt)?;
        let (k1, l1) = augmented(&d0, &r, &vel);
        let r2: Frame = std::array::from_fn(|x| r[x] + 0.5 * dt * k1[x]);
        let (k2, l2) = augmented(&dm, &r2, &vel);
        let r3: Frame = std::array::from_fn(|x| r[x] + 0.5 * dt * k2[x]);
        let (k3, l3) = augmented(&dm, &r3, &vel);
        let r4: Frame = std::array::from_fn(|x| r[x] + dt * k3[x]);
        let (k4, l4) = augmented(&d1, &r4, &vel);
        for x in 0..9 {
            r[x] += dt / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
        }
        ls += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        if opts.project {
            let step_drift = norm_defect(&r).abs();
            drift = drift.max(step_drift);
            if step_drift > opts.drift_limit {
                return Err(Error::Drift {
                    drift: step_drift,
                    limit: opts.drift_limit,
                });
            }
            let (q, dist) = project_to_rotation(&r)?;
            projection = projection.max(dist);
            r = q;
        }
        d0 = d1;
    }
    if !opts.project {
        drift = norm_defect(&r).abs();
        if drift > opts.drift_limit {
            return Err(Error::Drift {
                drift,
                limit: opts.drift_limit,
            });
        }
    }
    Ok(SegmentOutcome {
        frame: r,
        log_sigma_increment: ls,
        drift,
        projection,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_v(rng: &mut ChaCha8Rng) -> [[f64; 3]; 9] {
        std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
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
    fn monomial_indexing_is_dense() {
        let monos = cubic_monomials();
        assert_eq!(monos.len(), CUBIC_MONOMIALS);
        for (k, m) in monos.iter().enumerate() {
            assert_eq!(monomial_index(*m), k);
            assert_eq!(monomial_index([m[2], m[0], m[1]]), k);
        }
    }

    #[test]
    fn expanded_form_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = random_v(&mut rng);
            let r: Frame = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let q = build_q(&v);
            let a = q.evaluate(&r, &dir);
            let b = frame_rhs(&v, &r, &dir);
            for x in 0..9 {
                assert!((a[x] - b[x]).abs() < 1e-12, "{a:?} {b:?}");
            }
        }
        assert!(build_q(&[[0.0; 3]; 9]).is_zero());
    }

    #[test]
    fn right_side_is_tangent_to_the_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v = random_v(&mut rng);
            let r = random_rotation(&mut rng);
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let g = build_q(&v).evaluate(&r, &dir);
            let gr: f64 = (0..9).map(|x| g[x] * r[x]).sum();
            assert!(gr.abs() < 1e-12, "{gr}");
        }
    }

    #[test]
    fn projection_of_a_rotation_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rotation(&mut rng);
        let (q, d) = project_to_rotation(&r).unwrap();
        assert!(d < 1e-14);
        let mut bent = r;
        bent[0] += 1e-4;
        let (q2, d2) = project_to_rotation(&bent).unwrap();
        assert!(d2 > 0.0 && d2 < 2e-4);
        assert!((to_matrix(&q2).transpose() * to_matrix(&q2) - Matrix3::identity()).amax() < 1e-14);
        assert!((0..9).all(|x| (q[x] - r[x]).abs() < 1e-14));
    }

    #[test]
    fn zero_data_keeps_the_frame() {
        let g = Grid::unit(3, 5).unwrap();
        let local = MultiField::new(g.clone(), PACKED_COMPONENTS, vec![0.0; PACKED_COMPONENTS * g.len()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r0 = random_rotation(&mut rng);
        let seg = Segment::new(&[0.0, 0.1, 0.2], &[1.0, 0.9, 0.3]);
        for project in [true, false] {
            let out = integrate_r_segment(
                &local,
                &r0,
                &seg,
                &IntegratorOptions {
                    project,
                    drift_limit: 1e-3,
                },
            )
            .unwrap();
            assert!((0..9).all(|x| (out.frame[x] - r0[x]).abs() < 1e-10));
            assert_eq!(out.log_sigma_increment, 0.0);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projection_lands_on_rotations(seed in any::<u64>(), bend in 0.0f64..0.05) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut r = random_rotation(&mut rng);
                r.iter_mut().for_each(|x| *x += bend * rng.random_range(-1.0..1.0));
                let (q, _) = project_to_rotation(&r).unwrap();
                let m = to_matrix(&q);
                prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
                prop_assert!((norm_defect(&q)).abs() < 1e-12);
            }

            #[test]
            fn right_side_stays_tangent(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_v(&mut rng);
                let r = random_rotation(&mut rng);
                let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let g = frame_rhs(&v, &r, &dir);
                let skew = to_matrix(&r).transpose() * to_matrix(&g);
                prop_assert!((skew + skew.transpose()).amax() < 1e-12);
            }
        }
    }
}

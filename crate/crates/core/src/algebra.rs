//! Pointwise algebra on power densities: transition matrices, V fields, frames.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::acquisition::{gramian_chain, GramianReport, PowerDensityData};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::ops::{gradient, gradient_components};

/// Relative floor on `det H` independent of the configured `c0`.
const RELATIVE_DET_FLOOR: f64 = 1e-10;
/// Largest tolerated `|R^T R - I|` for frames built from fluxes.
const FRAME_TOL: f64 = 1e-6;

/// Threshold `max(c0^2, 1e-10 ||H||_inf^n)` on `det H` at one node.
pub fn det_threshold(h: &DMatrix<f64>, c0: f64) -> f64 {
    let n = h.nrows();
    let norm = (0..n)
        .map(|i| (0..n).map(|j| h[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    (c0 * c0).max(RELATIVE_DET_FLOOR * norm.powi(n as i32))
}

fn check_det(h: &DMatrix<f64>, c0: f64, node: usize) -> Result<f64> {
    let det = h.determinant();
    let threshold = det_threshold(h, c0);
    if !(det >= threshold) {
        return Err(Error::Singular {
            det,
            threshold,
            node,
            count: 1,
        });
    }
    Ok(det)
}

/// Closed-form lower-triangular Gram-Schmidt transition matrix of an SPD 2x2 or 3x3 `H`.
pub fn gram_schmidt_t(h: &DMatrix<f64>, c0: f64) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n || !(2..=3).contains(&n) {
        return Err(Error::UnsupportedDimension(n));
    }
    check_det(h, c0, 0)?;
    let h11 = h[(0, 0)];
    let h12 = h[(0, 1)];
    let h22 = h[(1, 1)];
    let d2 = h11 * h22 - h12 * h12;
    if !(h11 > 0.0 && d2 > 0.0) {
        return Err(Error::Singular {
            det: d2,
            threshold: 0.0,
            node: 0,
            count: 1,
        });
    }
    let d = d2.sqrt();
    let s11 = h11.sqrt();
    let mut t = DMatrix::zeros(n, n);
    t[(0, 0)] = 1.0 / s11;
    t[(1, 0)] = -h12 / (s11 * d);
    t[(1, 1)] = s11 / d;
    if n == 3 {
        let (h13, h23) = (h[(0, 2)], h[(1, 2)]);
        let big_d = h.determinant().sqrt();
        t[(2, 0)] = (h12 * h23 - h22 * h13) / (d * big_d);
        t[(2, 1)] = (h12 * h13 - h11 * h23) / (d * big_d);
        t[(2, 2)] = d / big_d;
    }
    Ok(t)
}

/// Symmetric transition matrix `H^{-1/2}`.
pub fn symmetric_inverse_sqrt(h: &DMatrix<f64>, c0: f64) -> Result<DMatrix<f64>> {
    check_det(h, c0, 0)?;
    let eig = SymmetricEigen::new(h.clone());
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    GramSchmidt,
    SymmetricInverseSqrt,
}

/// Transition matrices `T` (with `T^T T = H^{-1}`) and their inverses at every node.
#[derive(Debug, Clone)]
pub struct TransitionField {
    pub t: MatrixField,
    pub tinv: MatrixField,
    pub construction: Construction,
    /// `sqrt(det H)` per node.
    pub sqrt_det: ScalarField,
}

impl TransitionField {
    /// Build from a square block of power densities; singular nodes are collected into one error.
    pub fn build(h: &MatrixField, construction: Construction, c0: f64) -> Result<Self> {
        let n = h.rows();
        if h.cols() != n || !(2..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        let grid = h.grid().clone();
        let mut tv = Vec::with_capacity(n * n * grid.len());
        let mut iv = Vec::with_capacity(n * n * grid.len());
        let mut dv = Vec::with_capacity(grid.len());
        let mut worst: Option<(f64, f64, usize)> = None;
        let mut count = 0;
        for node in 0..grid.len() {
            let hm = h.matrix(node);
            let t = match construction {
                Construction::GramSchmidt => gram_schmidt_t(&hm, c0),
                Construction::SymmetricInverseSqrt => symmetric_inverse_sqrt(&hm, c0),
            };
            match t {
                Ok(t) => {
                    let tinv = t.clone().try_inverse().ok_or(Error::Singular {
                        det: t.determinant(),
                        threshold: 0.0,
                        node,
                        count: 1,
                    })?;
                    tv.extend(t.transpose().iter());
                    iv.extend(tinv.transpose().iter());
                    dv.push(hm.determinant().sqrt());
                }
                Err(Error::Singular { det, threshold, .. }) => {
                    count += 1;
                    if worst.is_none_or(|(d, _, _)| det < d) {
                        worst = Some((det, threshold, node));
                    }
                    tv.extend(std::iter::repeat_n(0.0, n * n));
                    iv.extend(std::iter::repeat_n(0.0, n * n));
                    dv.push(0.0);
                }
                Err(e) => return Err(e),
            }
        }
        if let Some((det, threshold, node)) = worst {
            return Err(Error::Singular {
                det,
                threshold,
                node,
                count,
            });
        }
        Ok(TransitionField {
            t: MatrixField::new(grid.clone(), n, n, tv, false)?,
            tinv: MatrixField::new(grid.clone(), n, n, iv, false)?,
            construction,
            sqrt_det: ScalarField::new(grid, dv)?,
        })
    }

    pub fn n(&self) -> usize {
        self.t.rows()
    }

    pub fn grid(&self) -> &Grid {
        self.t.grid()
    }

    /// Largest `|T^T T H - I|` entry over all nodes.
    pub fn tmatrix_residual(&self, h: &MatrixField) -> f64 {
        let n = self.n();
        (0..self.grid().len())
            .map(|node| {
                let t = self.t.matrix(node);
                let r = t.transpose() * &t * h.matrix(node) - DMatrix::identity(n, n);
                r.amax()
            })
            .fold(0.0, f64::max)
    }
}

/// The `n x n` array of vector fields `V_ij = sum_k grad(t_ik) t^{kj}`.
#[derive(Debug, Clone)]
pub struct VFieldSet {
    n: usize,
    v: Vec<VectorField>,
}

impl VFieldSet {
    pub fn new(n: usize, v: Vec<VectorField>) -> Result<Self> {
        if v.len() != n * n {
            return Err(Error::InvalidArgument("V set needs n^2 fields".into()));
        }
        Ok(VFieldSet { n, v })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &VectorField {
        &self.v[i * self.n + j]
    }

    pub fn grid(&self) -> &Grid {
        self.v[0].grid()
    }

    /// Largest Euclidean difference over all pairs and nodes.
    pub fn max_difference(&self, other: &VFieldSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in self.v.iter().zip(&other.v) {
            worst = worst.max(a.sub(b)?.max_norm());
        }
        Ok(worst)
    }
}

/// Generic V fields from stencil gradients of the `T` entries.
pub fn build_v(t: &TransitionField) -> Result<VFieldSet> {
    let n = t.n();
    let grid = t.grid();
    let dim = grid.dim();
    let nn = n * n;
    let d = gradient_components(grid, t.t.values(), nn);
    let mut v = Vec::with_capacity(nn);
    for i in 0..n {
        for j in 0..n {
            let mut vals = vec![0.0; dim * grid.len()];
            for node in 0..grid.len() {
                for k in 0..n {
                    let w = t.tinv.entry(node, k, j);
                    let base = (node * nn + i * n + k) * dim;
                    for a in 0..dim {
                        vals[node * dim + a] += d[base + a] * w;
                    }
                }
            }
            v.push(VectorField::new(grid.clone(), vals)?);
        }
    }
    VFieldSet::new(n, v)
}

/// Closed-form V fields of the Gram-Schmidt construction; zero above the diagonal.
pub fn build_v_gram_schmidt(t: &TransitionField) -> Result<VFieldSet> {
    if t.construction != Construction::GramSchmidt {
        return Err(Error::InvalidArgument(
            "closed-form V fields exist only for the Gram-Schmidt construction".into(),
        ));
    }
    let n = t.n();
    let grid = t.grid();
    let e = |i: usize, j: usize| t.t.entry_field(i, j);
    let grad_log = |i: usize| gradient(&e(i, i).map(f64::ln).expect("positive diagonal"));
    let grad_ratio = |i: usize, j: usize, k: usize| {
        gradient(&e(i, j).zip_map(&e(k, k), |a, b| a / b).expect("finite ratio"))
    };
    let scaled = |f: &VectorField, w: &dyn Fn(usize) -> f64| -> Result<VectorField> {
        let dim = f.dim();
        let vals = f
            .values()
            .iter()
            .enumerate()
            .map(|(k, x)| w(k / dim) * x)
            .collect();
        VectorField::new(grid.clone(), vals)
    };
    let tt = |node: usize, i: usize, j: usize| t.t.entry(node, i, j);
    let zero = VectorField::zeros(grid);
    let mut v = vec![zero; n * n];
    v[0] = grad_log(0);
    v[n] = scaled(&grad_ratio(1, 0, 1), &|k| tt(k, 1, 1) / tt(k, 0, 0))?;
    v[n + 1] = grad_log(1);
    if n == 3 {
        let g31 = grad_ratio(2, 0, 2);
        let g32 = grad_ratio(2, 1, 2);
        let a = scaled(&g31, &|k| tt(k, 2, 2) / tt(k, 0, 0))?;
        let b = scaled(&g32, &|k| {
            tt(k, 1, 0) * tt(k, 2, 2) / (tt(k, 0, 0) * tt(k, 1, 1))
        })?;
        v[6] = a.sub(&b)?;
        v[7] = scaled(&g32, &|k| tt(k, 2, 2) / tt(k, 1, 1))?;
        v[8] = grad_log(2);
    }
    VFieldSet::new(n, v)
}

/// Residuals of the pointwise identities satisfied by exact data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    /// Max norm of `sum_i V_ii + grad log sqrt(det H)`.
    pub liouville: f64,
    /// Max norm of `grad log sqrt(det H)`, for scaling.
    pub liouville_scale: f64,
    /// Max entry of `T^T T H - I`.
    pub tmatrix: f64,
    pub gramian: GramianReport,
}

impl IdentityReport {
    pub fn passes(&self, liouville_tol: f64, tmatrix_tol: f64, gramian_tol: f64) -> bool {
        self.liouville <= liouville_tol
            && self.tmatrix <= tmatrix_tol
            && self.gramian.passes(gramian_tol)
    }
}

pub fn check_identities(
    v: &VFieldSet,
    t: &TransitionField,
    h: &PowerDensityData,
) -> Result<IdentityReport> {
    let n = v.n();
    let block: Vec<usize> = (0..n).collect();
    let ones = vec![1.0; n];
    let hb = h.block(&block, &block, &ones, &ones)?;
    let log_d = t.sqrt_det.map(f64::ln)?;
    let grad_log_d = gradient(&log_d);
    let mut sum = grad_log_d.clone();
    for i in 0..n {
        let vals = sum
            .values()
            .iter()
            .zip(v.get(i, i).values())
            .map(|(a, b)| a + b)
            .collect();
        sum = VectorField::new(sum.grid().clone(), vals)?;
    }
    let sub = PowerDensityData::from_field(hb.clone())?;
    Ok(IdentityReport {
        liouville: sum.max_norm(),
        liouville_scale: grad_log_d.max_norm(),
        tmatrix: t.tmatrix_residual(&hb),
        gramian: gramian_chain(&sub),
    })
}

/// Orthonormal frames at every node; column `i` of each matrix is `R_i`.
#[derive(Debug, Clone)]
pub struct RotationField {
    pub r: MatrixField,
}

impl RotationField {
    pub fn n(&self) -> usize {
        self.r.rows()
    }

    pub fn column(&self, node: usize, i: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.n() {
            c[a] = self.r.entry(node, a, i);
        }
        c
    }

    /// Angle of `R_1` in two dimensions.
    pub fn theta(&self) -> Result<ScalarField> {
        if self.n() != 2 {
            return Err(Error::UnsupportedDimension(self.n()));
        }
        let vals = (0..self.r.grid().len())
            .map(|n| self.r.entry(n, 1, 0).atan2(self.r.entry(n, 0, 0)))
            .collect();
        ScalarField::new(self.r.grid().clone(), vals)
    }

    /// The stacked columns `(R_1, R_2, R_3)` at a node.
    pub fn flat(&self, node: usize) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            let c = self.column(node, i);
            out[3 * i..3 * i + 3].copy_from_slice(&c);
        }
        out
    }

    /// Largest `|R^T R - I|` entry.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n();
        (0..self.r.grid().len())
            .map(|node| {
                let m = self.r.matrix(node);
                (m.transpose() * &m - DMatrix::identity(n, n)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// `R = S T^T`, i.e. `R_i = t_ij S_j`, for ground truth and anchors.
pub fn rotation_from_s(s: &[VectorField], t: &TransitionField) -> Result<RotationField> {
    let n = t.n();
    if s.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} fluxes for a {n}x{n} transition field",
            s.len()
        )));
    }
    let grid = t.grid();
    if s.iter().any(|f| f.grid() != grid) || grid.dim() != n {
        return Err(Error::GridMismatch);
    }
    let mut vals = Vec::with_capacity(n * n * grid.len());
    let mut worst: f64 = 0.0;
    for node in 0..grid.len() {
        let smat = DMatrix::from_fn(n, n, |a, j| s[j].at(node)[a]);
        let det = smat.determinant();
        if !(det > 0.0) {
            return Err(Error::Singular {
                det,
                threshold: 0.0,
                node,
                count: 1,
            });
        }
        let r = &smat * t.t.matrix(node).transpose();
        worst = worst.max((r.transpose() * &r - DMatrix::identity(n, n)).amax());
        vals.extend(r.transpose().iter());
    }
    if worst > FRAME_TOL {
        return Err(Error::NotOrthonormal { deviation: worst });
    }
    Ok(RotationField {
        r: MatrixField::new(grid.clone(), n, n, vals, false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::synthesize_h;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn gram_schmidt_hand_values() {
        let t = gram_schmidt_t(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_relative_eq!(t, DMatrix::identity(3, 3));
        let t = gram_schmidt_t(&mat(&[&[4.0, 0.0], &[0.0, 9.0]]), 0.0).unwrap();
        assert_relative_eq!(t, mat(&[&[0.5, 0.0], &[0.0, 1.0 / 3.0]]), epsilon = 1e-15);
        let h = mat(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let t = gram_schmidt_t(&h, 0.0).unwrap();
        assert_relative_eq!(t[(0, 0)], 1.0);
        assert_relative_eq!(t[(1, 0)], -1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(t[(1, 1)], 2.0 / 3f64.sqrt(), epsilon = 1e-12);
        let inv = h.try_inverse().unwrap();
        assert!((t.transpose() * &t - inv).amax() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let h = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(gram_schmidt_t(&h, 0.0), Err(Error::Singular { .. })));
        let h = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            gram_schmidt_t(&h, 2.0),
            Err(Error::Singular { det, threshold, .. }) if det == 1.0 && threshold == 4.0
        ));
    }

    fn spd(entries: [f64; 6], n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| entries[(i * 3 + j) % 6]);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    proptest! {
        #[test]
        fn transition_matrices_invert_h(
            e in prop::array::uniform6(-2.0f64..2.0),
            n in 2usize..=3,
        ) {
            let h = spd(e, n);
            let inv = h.clone().try_inverse().unwrap();
            let scale = inv.amax();
            for t in [gram_schmidt_t(&h, 0.0).unwrap(), symmetric_inverse_sqrt(&h, 0.0).unwrap()] {
                prop_assert!((t.transpose() * &t - &inv).amax() <= 1e-10 * scale);
                let det = t.determinant();
                prop_assert!((det - h.determinant().powf(-0.5)).abs() <= 1e-10 * det.abs());
            }
            let t = gram_schmidt_t(&h, 0.0).unwrap();
            for i in 0..n {
                for j in i + 1..n {
                    prop_assert_eq!(t[(i, j)], 0.0);
                }
            }
        }
    }

    fn smooth_h(grid: &Grid, n: usize) -> MatrixField {
        let s: Vec<VectorField> = (0..n)
            .map(|i| {
                VectorField::from_fn(grid, |p| {
                    let mut v = [0.0; 3];
                    for a in 0..n {
                        let base = if a == i { 1.5 } else { 0.0 };
                        v[a] = base + 0.3 * ((i + 1) as f64 * p[0] + (a + 2) as f64 * p[1] - p[2]).sin();
                    }
                    v
                })
                .unwrap()
            })
            .collect();
        synthesize_h(&s).unwrap().h
    }

    #[test]
    fn constant_h_has_vanishing_v() {
        let g = Grid::unit(3, 5).unwrap();
        let h = MatrixField::new(
            g.clone(),
            3,
            3,
            (0..g.len()).flat_map(|_| [2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]).collect(),
            true,
        )
        .unwrap();
        let t = TransitionField::build(&h, Construction::GramSchmidt, 0.0).unwrap();
        let v = build_v(&t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(v.get(i, j).max_norm() < 1e-12);
            }
        }
        let data = PowerDensityData::from_field(h).unwrap();
        let rep = check_identities(&v, &t, &data).unwrap();
        assert!(rep.liouville < 1e-12);
        assert!(rep.tmatrix < 1e-12);
    }

    #[test]
    fn exponential_diagonal_v() {
        let g = Grid::unit(2, 33).unwrap();
        let vals = (0..g.len())
            .flat_map(|n| [(2.0 * g.point(n)[0]).exp(), 0.0, 0.0, 1.0])
            .collect();
        let h = MatrixField::new(g.clone(), 2, 2, vals, true).unwrap();
        let t = TransitionField::build(&h, Construction::GramSchmidt, 0.0).unwrap();
        let v = build_v(&t).unwrap();
        let v11 = v.get(0, 0);
        for n in 0..g.len() {
            assert!((v11.at(n)[0] + 1.0).abs() < 2e-3);
            assert!(v11.at(n)[1].abs() < 1e-12);
        }
        let data = PowerDensityData::from_field(h).unwrap();
        let rep = check_identities(&v, &t, &data).unwrap();
        assert!(rep.liouville < 2e-3, "{}", rep.liouville);
    }

    #[test]
    fn generic_and_closed_form_v_agree_at_second_order() {
        let diff = |n: usize| {
            let g = Grid::unit(3, n).unwrap();
            let t = TransitionField::build(&smooth_h(&g, 3), Construction::GramSchmidt, 0.0).unwrap();
            let a = build_v(&t).unwrap();
            let b = build_v_gram_schmidt(&t).unwrap();
            for i in 0..3 {
                for j in i + 1..3 {
                    assert!(a.get(i, j).max_norm() < 1e-12);
                }
            }
            a.max_difference(&b).unwrap()
        };
        let (d1, d2) = (diff(9), diff(17));
        assert!(d2 < d1 / 3.5, "{d1:e} {d2:e}");
    }

    #[test]
    fn rotations_from_fluxes() {
        let g = Grid::unit(2, 5).unwrap();
        let (c, s) = ((std::f64::consts::PI / 6.0).cos(), (std::f64::consts::PI / 6.0).sin());
        let s1 = VectorField::from_fn(&g, |_| [2.0 * c, 2.0 * s, 0.0]).unwrap();
        let s2 = VectorField::from_fn(&g, |_| [-2.0 * s, 2.0 * c, 0.0]).unwrap();
        let data = synthesize_h(&[s1.clone(), s2.clone()]).unwrap();
        let t = TransitionField::build(&data.h, Construction::GramSchmidt, 0.0).unwrap();
        assert!((t.t.matrix(3) - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        let r = rotation_from_s(&[s1.clone(), s2.clone()], &t).unwrap();
        let theta = r.theta().unwrap();
        assert!(theta.values().iter().all(|v| (v - std::f64::consts::PI / 6.0).abs() < 1e-14));
        assert!(r.orthonormality_defect() < 1e-14);
        // reversed orientation has det S < 0
        assert!(rotation_from_s(&[s2, s1], &t).is_err());
    }

    #[test]
    fn inconsistent_transition_is_not_orthonormal() {
        let g = Grid::unit(2, 5).unwrap();
        let s1 = VectorField::from_fn(&g, |_| [1.0, 0.0, 0.0]).unwrap();
        let s2 = VectorField::from_fn(&g, |_| [0.0, 1.0, 0.0]).unwrap();
        let h = MatrixField::new(
            g.clone(),
            2,
            2,
            (0..g.len()).flat_map(|_| [4.0, 0.0, 0.0, 1.0]).collect(),
            true,
        )
        .unwrap();
        let t = TransitionField::build(&h, Construction::GramSchmidt, 0.0).unwrap();
        assert!(matches!(
            rotation_from_s(&[s1, s2], &t),
            Err(Error::NotOrthonormal { .. })
        ));
    }
}

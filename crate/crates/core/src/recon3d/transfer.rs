//! Moving the frame from one flux triple to another at a waypoint.

use nalgebra::{DMatrix, Matrix3};

use super::covering::Subdomain;
use super::rotation_ode::{from_matrix, project_to_rotation, to_matrix, Frame};
use crate::algebra::{gram_schmidt_t, symmetric_inverse_sqrt, Construction};
use crate::error::{Error, Result};

/// Largest projection distance accepted after a transfer; beyond it the data are inconsistent.
pub const MAX_TRANSFER_PROJECTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOutcome {
    pub frame: Frame,
    /// Distance moved by the projection back onto the rotations.
    pub projection: f64,
}

/// `R_next = R_prev T_prev H_cross T_next^T`, projected onto the rotations.
pub fn transfer_r(
    r_prev: &Frame,
    t_prev: &Matrix3<f64>,
    h_cross: &Matrix3<f64>,
    t_next: &Matrix3<f64>,
) -> Result<TransferOutcome> {
    apply_transfer(r_prev, &transfer_matrix(t_prev, h_cross, t_next))
}

/// `M = T_prev H_cross T_next^T`; orthogonal for exact data.
pub fn transfer_matrix(t_prev: &Matrix3<f64>, h_cross: &Matrix3<f64>, t_next: &Matrix3<f64>) -> Matrix3<f64> {
    t_prev * h_cross * t_next.transpose()
}

/// `R_prev M`, projected onto the rotations.
pub fn apply_transfer(r_prev: &Frame, m: &Matrix3<f64>) -> Result<TransferOutcome> {
    let raw = from_matrix(&(to_matrix(r_prev) * m));
    let (frame, projection) = project_to_rotation(&raw)?;
    if projection > MAX_TRANSFER_PROJECTION {
        return Err(Error::NotOrthonormal {
            deviation: projection,
        });
    }
    Ok(TransferOutcome { frame, projection })
}

/// Signed 3x3 block `eps_a eps_b H[tau_a][tau_b]` of a full power-density matrix.
pub fn signed_block(h: &DMatrix<f64>, a: &Subdomain, b: &Subdomain) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a.signs[r] * b.signs[c] * h[(a.triple[r], b.triple[c])])
}

/// Transition matrix of a signed block.
pub fn transition(block: &Matrix3<f64>, construction: Construction) -> Result<Matrix3<f64>> {
    let d = DMatrix::from_fn(3, 3, |r, c| block[(r, c)]);
    let t = match construction {
        Construction::GramSchmidt => gram_schmidt_t(&d, 0.0)?,
        Construction::SymmetricInverseSqrt => symmetric_inverse_sqrt(&d, 0.0)?,
    };
    Ok(Matrix3::from_fn(|r, c| t[(r, c)]))
}

/// Transfer between two subdomains given the full power densities at the waypoint.
pub fn transfer_between(
    r_prev: &Frame,
    h: &DMatrix<f64>,
    prev: &Subdomain,
    next: &Subdomain,
    construction: Construction,
) -> Result<TransferOutcome> {
    apply_transfer(r_prev, &transfer_between_matrix(h, prev, next, construction)?)
}

/// Transfer matrix between two subdomains from the full power densities at a point.
pub fn transfer_between_matrix(
    h: &DMatrix<f64>,
    prev: &Subdomain,
    next: &Subdomain,
    construction: Construction,
) -> Result<Matrix3<f64>> {
    let t_prev = transition(&signed_block(h, prev, prev), construction)?;
    let t_next = transition(&signed_block(h, next, next), construction)?;
    Ok(transfer_matrix(&t_prev, &signed_block(h, prev, next), &t_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(triple: [usize; 3], signs: [f64; 3]) -> Subdomain {
        Subdomain {
            lower: [0.0; 3],
            upper: [1.0; 3],
            triple,
            signs,
        }
    }

    fn fluxes() -> DMatrix<f64> {
        // columns are four flux vectors in general position
        DMatrix::from_row_slice(3, 4, &[1.0, 0.2, 0.1, 0.4, 0.1, 1.3, -0.2, 0.5, 0.3, 0.1, 0.9, -0.7])
    }

    /// Oracle: the frame built directly from the fluxes of a triple.
    fn frame_of(s: &DMatrix<f64>, d: &Subdomain) -> Frame {
        let sm = Matrix3::from_fn(|r, c| d.signs[c] * s[(r, d.triple[c])]);
        let t = transition(&(sm.transpose() * sm), Construction::GramSchmidt).unwrap();
        from_matrix(&(sm * t.transpose()))
    }

    #[test]
    fn identical_triples_leave_the_frame() {
        let s = fluxes();
        let h = s.transpose() * &s;
        let a = sub([0, 1, 2], [1.0, 1.0, 1.0]);
        let r = frame_of(&s, &a);
        let out = transfer_between(&r, &h, &a, &a, Construction::GramSchmidt).unwrap();
        assert!((0..9).all(|x| (out.frame[x] - r[x]).abs() < 1e-12));
    }

    #[test]
    fn transfer_reproduces_the_frame_of_the_next_triple() {
        let s = fluxes();
        let h = s.transpose() * &s;
        let a = sub([0, 1, 2], [1.0, 1.0, 1.0]);
        for b in [sub([0, 1, 3], [1.0, 1.0, 1.0]), sub([0, 1, 2], [1.0, 1.0, -1.0])] {
            if (Matrix3::from_fn(|r, c| b.signs[c] * s[(r, b.triple[c])])).determinant() <= 0.0 {
                continue;
            }
            let out = transfer_between(&frame_of(&s, &a), &h, &a, &b, Construction::GramSchmidt).unwrap();
            let want = frame_of(&s, &b);
            assert!((0..9).all(|x| (out.frame[x] - want[x]).abs() < 1e-12), "{out:?} {want:?}");
            assert!(out.projection < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transfer_matrix_is_orthogonal_for_exact_data(
                e in prop::array::uniform12(-1.0f64..1.0),
                sa in prop::bool::ANY,
                sb in prop::bool::ANY,
            ) {
                let s = DMatrix::from_row_slice(3, 4, &e) + DMatrix::from_fn(3, 4, |r, c| if r == c { 2.0 } else { 0.0 });
                let h = s.transpose() * &s;
                let sign = |b: bool| if b { 1.0 } else { -1.0 };
                let a = sub([0, 1, 2], [1.0, sign(sa), 1.0]);
                let b = sub([0, 1, 3], [1.0, 1.0, sign(sb)]);
                for d in [&a, &b] {
                    let m = Matrix3::from_fn(|r, c| d.signs[c] * s[(r, d.triple[c])]);
                    prop_assume!(m.determinant() > 0.05);
                }
                let m = transfer_between_matrix(&h, &a, &b, Construction::GramSchmidt).unwrap();
                prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
                let same = transfer_between_matrix(&h, &a, &a, Construction::GramSchmidt).unwrap();
                prop_assert!((same - Matrix3::identity()).amax() < 1e-12);
            }
        }
    }
}

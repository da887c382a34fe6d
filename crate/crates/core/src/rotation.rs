//! Continuous 6D rotation representation.
//!
//! A rotation is stored as the first two columns of its matrix. Decoding
//! runs Gram-Schmidt on the two triples and completes the frame with a cross
//! product, so any pair of non-parallel vectors maps to a proper rotation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Rot6 = [f64; 6];

pub const IDENTITY_6D: Rot6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const PARALLEL_TOL: f64 = 1e-8;

struct Frame {
    a2: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    n1: f64,
    n2: f64,
}

fn frame(r: &Rot6) -> Result<Frame> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    let na2 = a2.norm();
    if !(n1 > 0.0 && na2 > 0.0) || !n1.is_finite() || !na2.is_finite() {
        return Err(Error::DegenerateRotation(format!(
            "zero or non-finite column in {r:?}"
        )));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 <= PARALLEL_TOL * na2 {
        return Err(Error::DegenerateRotation(format!(
            "columns of {r:?} are parallel"
        )));
    }
    Ok(Frame {
        a2,
        b1,
        b2: u2 / n2,
        n1,
        n2,
    })
}

/// Decodes a 6D representation into a rotation matrix with columns
/// `(b1, b2, b1 x b2)`.
pub fn rot6d_to_matrix(r: &Rot6) -> Result<Matrix3<f64>> {
    let f = frame(r)?;
    let b3 = f.b1.cross(&f.b2);
    Ok(Matrix3::from_columns(&[f.b1, f.b2, b3]))
}

/// Inverse of [`rot6d_to_matrix`] for proper rotations: the first two columns.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Rot6 {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Decoded matrix together with its partial derivatives `dR/dr_k`.
pub fn rot6d_jacobian(r: &Rot6) -> Result<(Matrix3<f64>, [Matrix3<f64>; 6])> {
    let f = frame(r)?;
    let b3 = f.b1.cross(&f.b2);
    let eye = Matrix3::identity();
    let p1 = (eye - f.b1 * f.b1.transpose()) / f.n1;
    let p2 = (eye - f.b2 * f.b2.transpose()) / f.n2;
    let b1_dot_a2 = f.b1.dot(&f.a2);

    let mut out = [Matrix3::zeros(); 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let e = Vector3::ith(k % 3, 1.0);
        let (db1, du2) = if k < 3 {
            let db1 = p1 * e;
            let du2 = -(f.b1 * db1.dot(&f.a2)) - db1 * b1_dot_a2;
            (db1, du2)
        } else {
            (Vector3::zeros(), e - f.b1 * f.b1.dot(&e))
        };
        let db2 = p2 * du2;
        let db3 = db1.cross(&f.b2) + f.b1.cross(&db2);
        *slot = Matrix3::from_columns(&[db1, db2, db3]);
    }
    Ok((Matrix3::from_columns(&[f.b1, f.b2, b3]), out))
}

/// Chain rule from a gradient w.r.t. the decoded matrix to the 6D input.
pub fn rot6d_backward(jac: &[Matrix3<f64>; 6], grad_matrix: &Matrix3<f64>) -> Rot6 {
    let mut g = [0.0; 6];
    for (k, j) in jac.iter().enumerate() {
        g[k] = j.component_mul(grad_matrix).sum();
    }
    g
}

/// Rotation about `axis` (need not be normalized) by `angle` radians.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Largest deviation of `m` from a proper rotation: `max(|m^T m - I|, |det - 1|)`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    let g = m.transpose() * m - Matrix3::identity();
    g.abs().max().max((m.determinant() - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_input_is_identity() {
        let m = rot6d_to_matrix(&IDENTITY_6D).unwrap();
        assert_eq!(m, Matrix3::identity());
    }

    #[test]
    fn parallel_columns_rejected() {
        assert!(rot6d_to_matrix(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).is_err());
        assert!(rot6d_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn round_trip_through_columns() {
        let m = axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.7);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&m)).unwrap();
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let r = [0.9, 0.2, -0.3, 0.1, 1.1, 0.4];
        let (_, jac) = rot6d_jacobian(&r).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut rp = r;
            let mut rm = r;
            rp[k] += h;
            rm[k] -= h;
            let fd = (rot6d_to_matrix(&rp).unwrap() - rot6d_to_matrix(&rm).unwrap()) / (2.0 * h);
            assert!((fd - jac[k]).abs().max() < 1e-8, "component {k}");
        }
    }

    proptest! {
        #[test]
        fn decoded_matrix_is_proper(r in prop::array::uniform6(-3.0f64..3.0)) {
            prop_assume!(rot6d_to_matrix(&r).is_ok());
            let a1 = Vector3::new(r[0], r[1], r[2]);
            let a2 = Vector3::new(r[3], r[4], r[5]);
            prop_assume!(a1.normalize().cross(&a2.normalize()).norm() > 1e-3);
            let m = rot6d_to_matrix(&r).unwrap();
            prop_assert!(orthonormality_error(&m) < 1e-6);
        }

        #[test]
        fn positive_scaling_is_invariant(r in prop::array::uniform6(-3.0f64..3.0), k in 0.01f64..100.0) {
            let a1 = Vector3::new(r[0], r[1], r[2]);
            let a2 = Vector3::new(r[3], r[4], r[5]);
            prop_assume!(a1.norm() > 1e-3 && a2.norm() > 1e-3);
            prop_assume!(a1.normalize().cross(&a2.normalize()).norm() > 1e-3);
            let scaled: Rot6 = std::array::from_fn(|i| r[i] * k);
            let m = rot6d_to_matrix(&r).unwrap();
            let ms = rot6d_to_matrix(&scaled).unwrap();
            prop_assert!((m - ms).abs().max() < 1e-6);
        }
    }
}

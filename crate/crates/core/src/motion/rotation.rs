use nalgebra::{Matrix3, Unit, Vector3};

use crate::{Error, Result};

/// First two columns of a rotation matrix, column-major: `[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]`.
pub type Rot6d = [f64; 6];

pub const IDENTITY_6D: Rot6d = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const MIN_NORM: f64 = 1e-8;

/// Gram–Schmidt reconstruction of a rotation from its 6D encoding.
pub fn rot6d_to_matrix(r: &Rot6d) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if n1 < MIN_NORM {
        return Err(Error::DegenerateRotation(format!("first column norm {n1:e}")));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if n2 < MIN_NORM {
        return Err(Error::DegenerateRotation(format!("residual norm {n2:e}")));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rot6d> {
    let orth = (m.transpose() * m - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if orth > 1e-4 || (det - 1.0).abs() > 1e-4 {
        return Err(Error::NotARotation(format!(
            "orthogonality residual {orth:e}, determinant {det}"
        )));
    }
    Ok([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

pub fn axis_angle_to_matrix(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let v = Vector3::new(axis[0], axis[1], axis[2]);
    if v.norm() == 0.0 {
        return Matrix3::identity();
    }
    *nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(v), angle).matrix()
}

//! Homogeneous rigid transforms.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A proper rigid motion `p -> R p + t` (lengths in mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Builds a transform from a position and a unit quaternion given as `[w, x, y, z]`.
    /// The quaternion is normalized.
    pub fn from_position_quaternion(position: [f64; 3], wxyz: [f64; 4]) -> Self {
        let q =
            UnitQuaternion::from_quaternion(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
        Self::new(q.to_rotation_matrix().into_inner(), Vector3::from(position))
    }

    /// Returns `[w, x, y, z]` of the rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Vector3::zeros(),
        )
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            Vector3::zeros(),
        )
    }

    pub fn trans_x(distance: f64) -> Self {
        Self::from_translation(Vector3::new(distance, 0.0, 0.0))
    }

    pub fn trans_z(distance: f64) -> Self {
        Self::from_translation(Vector3::new(0.0, 0.0, distance))
    }

    /// Modified (proximal) Denavit-Hartenberg link transform:
    /// `RotX(alpha) * TransX(a) * RotZ(theta) * TransZ(d)`.
    pub fn dh_modified(a: f64, alpha: f64, d: f64, theta: f64) -> Self {
        Self::rot_x(alpha) * Self::trans_x(a) * Self::rot_z(theta) * Self::trans_z(d)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// True when the rotation is orthonormal with determinant +1 to within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &'a RigidTransform) -> RigidTransform {
        *self * *rhs
    }
}

/// Cross-product (skew-symmetric) matrix of `w`.
pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::from_position_quaternion([1.0, -2.0, 3.0], [0.9, 0.1, -0.3, 0.2]);
        let id = t * t.inverse();
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        assert!(t.is_proper(1e-9));
    }

    #[test]
    fn twist_pair_is_a_rotation_about_y() {
        // RotX(-pi/2) RotZ(q) RotX(pi/2) == RotY(q)
        let q = 0.37;
        let m = RigidTransform::rot_x(-FRAC_PI_2)
            * RigidTransform::rot_z(q)
            * RigidTransform::rot_x(FRAC_PI_2);
        let (s, c) = q.sin_cos();
        let ry = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        assert!((m.rotation - ry).abs().max() < 1e-15);
    }

    #[test]
    fn quaternion_round_trip() {
        let t = RigidTransform::from_position_quaternion([0.0; 3], [0.5, 0.5, 0.5, 0.5]);
        let q = t.quaternion();
        let back = RigidTransform::from_position_quaternion([0.0; 3], q);
        assert!((back.rotation - t.rotation).abs().max() < 1e-12);
    }
}

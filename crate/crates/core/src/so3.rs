//! Hamilton-convention quaternions and the rotation primitives the filter needs.
//!
//! Quaternions are stored scalar-first `(w, x, y, z)`. `q_AB` maps vectors
//! expressed in frame `B` into frame `A`, and attitude errors are applied on
//! the right (local frame): `q = q_hat ⊗ q_err`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

/// A 3x3 rotation matrix in SO(3).
pub type RotationMatrix = Matrix3<f64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vector_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector4().norm()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis * (s / n);
        Self::new(c, a.x, a.y, a.z)
    }

    /// Exact exponential map of a rotation vector.
    pub fn exp(theta: &Vector3<f64>) -> Self {
        let angle = theta.norm();
        if angle < 1e-12 {
            return small_angle_quat(theta);
        }
        Self::from_axis_angle(theta, angle)
    }

    /// Rotation vector of this quaternion, with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = if self.w < 0.0 { -*self } else { *self };
        let v = q.vector_part();
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v / q.w;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    /// Raw Hamilton product without renormalisation.
    pub fn hamilton(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        quat_to_rot(self)
    }

    /// Rotates `v` by this (unit) quaternion.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        quat_to_rot(self) * v
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit quaternion of a rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(r: &RotationMatrix) -> Self {
        let tr = r.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalize()
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Quaternion) -> Quaternion {
        quat_multiply(&self, &rhs)
    }
}

/// Hamilton product `a ⊗ b`, renormalised.
pub fn quat_multiply(a: &Quaternion, b: &Quaternion) -> Quaternion {
    a.hamilton(b).normalize()
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rot(q: &Quaternion) -> RotationMatrix {
    let Quaternion { w, x, y, z } = *q;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Matrix3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `Ω(ω)` such that `q̇ = ½ Ω(ω) q` for a body-frame rate `ω`.
pub fn omega_matrix(w: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-w.transpose()));
    m.fixed_view_mut::<3, 1>(1, 0).copy_from(w);
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&(-skew(w)));
    m
}

/// First-order error quaternion `[1, θ/2]`, normalised.
pub fn small_angle_quat(theta: &Vector3<f64>) -> Quaternion {
    Quaternion::new(1.0, 0.5 * theta.x, 0.5 * theta.y, 0.5 * theta.z).normalize()
}

/// Geodesic angle of a rotation matrix in radians. Same value as the clamped
/// `acos((tr - 1) / 2)`, but taking the sine from the skew part keeps small
/// angles accurate and an exactly symmetric product at zero.
pub fn rotation_angle(r: &RotationMatrix) -> f64 {
    let cos = (r.trace() - 1.0) * 0.5;
    let sin = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos)
}

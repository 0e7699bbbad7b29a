//! Hamilton quaternions stored scalar-first `(w, x, y, z)`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};

/// Quaternion with scalar part `w` and vector part `(x, y, z)`.
///
/// Rotation quaternions are kept unit-norm and, after [`Quat::canonical`],
/// have `w >= 0` so that `q` and `-q` map to one representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);
    pub const ZERO: Quat = Quat::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: &Vector3<f64>) -> Self {
        Self::new(0.0, v.x, v.y, v.z)
    }

    pub fn from_scalar_vector(w: f64, v: &Vector3<f64>) -> Self {
        Self::new(w, v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalize(&self) -> Self {
        self.scale(1.0 / self.norm())
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Whether this quaternion is already the canonical representative of `±q`.
    pub fn is_canonical(&self) -> bool {
        if self.w != 0.0 {
            return self.w > 0.0;
        }
        for c in [self.x, self.y, self.z] {
            if c != 0.0 {
                return c > 0.0;
            }
        }
        true
    }

    /// Resolves the double cover: `w >= 0`, ties broken by the first nonzero
    /// vector component being positive.
    pub fn canonical(&self) -> Self {
        if self.is_canonical() {
            *self
        } else {
            -*self
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Self::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Exponential map from a rotation vector (axis * angle, rad).
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        let theta_sq = rotvec.norm_squared();
        let theta = theta_sq.sqrt();
        let half = 0.5 * theta;
        let (w, k) = if theta < 1e-6 {
            // sin(θ/2)/θ series
            (1.0 - theta_sq / 8.0, 0.5 - theta_sq / 48.0)
        } else {
            (half.cos(), half.sin() / theta)
        };
        let q = Self::new(w, rotvec.x * k, rotvec.y * k, rotvec.z * k);
        if theta < 1e-6 {
            q.normalize()
        } else {
            q
        }
    }

    /// Logarithm map onto the shortest-arc rotation vector, angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = if self.w < 0.0 { -*self } else { *self };
        let v = q.vector();
        let vn = v.norm();
        if vn < 1e-9 {
            // θ ≈ 2|v|/w with a cubic correction
            let w = q.w.max(f64::MIN_POSITIVE);
            return v * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w));
        }
        let angle = 2.0 * vn.atan2(q.w);
        v * (angle / vn)
    }

    /// Rotation angle in `[0, π]`.
    ///
    /// Equal to `2 acos(|w|)` for unit quaternions; evaluated through `atan2`
    /// so it stays accurate for tiny angles and never leaves the acos domain.
    pub fn angle(&self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
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

    /// Unit quaternion from an orthonormal rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalize().canonical()
    }

    /// Shortest-arc spherical interpolation; `s = 0` gives `self`, `s = 1` gives `other`.
    pub fn slerp(&self, other: &Quat, s: f64) -> Self {
        let mut rel = self.conjugate() * *other;
        if rel.w < 0.0 {
            rel = -rel;
        }
        *self * Quat::exp(&(rel.log() * s))
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Add for Quat {
    type Output = Quat;

    fn add(self, b: Quat) -> Quat {
        Quat::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for Quat {
    type Output = Quat;

    fn sub(self, b: Quat) -> Quat {
        Quat::new(self.w - b.w, self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

use std::ops::Mul;

use nalgebra::{Matrix4, Vector3};

use super::{AlgebraError, Quat};

/// Rotations below this angle (rad) have no reliable screw axis.
pub const DEGENERATE_SCREW_ANGLE: f64 = 1e-6;

/// Tolerance on `| |q| - 1 |` accepted by [`DualQuat::from_rt`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Unit dual quaternion `q + ε q'` encoding a rigid transform.
///
/// `real` is the rotation (standard part); `dual = ½ t ⊗ real` carries the
/// translation `t`. Values are kept canonical (`real.w >= 0`) and satisfy the
/// Plücker condition `real · dual = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuat {
    pub real: Quat,
    pub dual: Quat,
}

/// Screw (Chasles) parameters of a rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrewParams {
    /// Rotation angle about the screw axis, rad, in `[0, π]`.
    pub theta: f64,
    /// Translation along the screw axis, m.
    pub d: f64,
    pub axis: Vector3<f64>,
    /// Moment of the axis line (`point × axis`).
    pub moment: Vector3<f64>,
    /// Set when `theta` is below [`DEGENERATE_SCREW_ANGLE`]; `axis`, `d` and
    /// `moment` then describe the pure translation instead of a screw.
    pub degenerate: bool,
}

impl Default for DualQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl DualQuat {
    pub const IDENTITY: DualQuat = DualQuat {
        real: Quat::IDENTITY,
        dual: Quat::ZERO,
    };

    /// Builds a transform from a rotation quaternion and translation.
    ///
    /// The rotation is renormalized when it is within [`UNIT_TOLERANCE`] of
    /// unit norm and rejected otherwise.
    pub fn from_rt(rotation: &Quat, translation: &Vector3<f64>) -> Result<Self, AlgebraError> {
        let n = rotation.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(AlgebraError::NonUnitRotation { norm: n });
        }
        Ok(Self::from_rt_unchecked(&rotation.scale(1.0 / n), translation))
    }

    pub(crate) fn from_rt_unchecked(rotation: &Quat, translation: &Vector3<f64>) -> Self {
        let real = rotation.canonical();
        let dual = (Quat::pure(translation) * real).scale(0.5);
        Self { real, dual }
    }

    pub fn from_translation(t: &Vector3<f64>) -> Self {
        Self::from_rt_unchecked(&Quat::IDENTITY, t)
    }

    pub fn from_rotation(rotation: &Quat) -> Self {
        Self::from_rt_unchecked(&rotation.normalize(), &Vector3::zeros())
    }

    /// Rotation and translation; inverse of [`DualQuat::from_rt`].
    pub fn to_rt(&self) -> (Quat, Vector3<f64>) {
        (self.real, self.translation())
    }

    pub fn rotation(&self) -> Quat {
        self.real
    }

    pub fn translation(&self) -> Vector3<f64> {
        (self.dual * self.real.conjugate()).vector() * 2.0
    }

    /// Restores `|real| = 1`, the Plücker condition and the canonical sign.
    pub fn normalized(&self) -> Self {
        let n = self.real.norm();
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        let dual = dual - real.scale(real.dot(&dual));
        let out = Self { real, dual };
        if real.is_canonical() {
            out
        } else {
            out.negated()
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            real: -self.real,
            dual: -self.dual,
        }
    }

    /// Product `self ⊗ other`: apply `other` in the frame reached by `self`.
    pub fn compose(&self, other: &DualQuat) -> DualQuat {
        let real = self.real * other.real;
        let dual = self.real * other.dual + self.dual * other.real;
        DualQuat { real, dual }.normalized()
    }

    /// Full dual-quaternion inverse; equals the conjugate `(q*, q'*)` under the
    /// unit invariants, which is what is computed here.
    pub fn inverse(&self) -> DualQuat {
        DualQuat {
            real: self.real.conjugate(),
            dual: self.dual.conjugate(),
        }
        .normalized()
    }

    /// `(ω, ω')`: scalar parts of the standard and dual quaternions,
    /// `ω = cos(θ/2)` and `ω' = -(d/2) sin(θ/2)`.
    pub fn scalar_part(&self) -> (f64, f64) {
        (self.real.w, self.dual.w)
    }

    pub fn rotation_angle(&self) -> f64 {
        self.real.angle()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation().norm()
    }

    pub fn screw_decompose(&self) -> ScrewParams {
        let dq = self.normalized();
        let theta = dq.real.angle();
        if theta < DEGENERATE_SCREW_ANGLE {
            let t = dq.translation();
            let d = t.norm();
            let axis = if d > 0.0 { t / d } else { Vector3::z() };
            return ScrewParams {
                theta,
                d,
                axis,
                moment: Vector3::zeros(),
                degenerate: true,
            };
        }
        let v = dq.real.vector();
        let sin_half = v.norm();
        let cos_half = dq.real.w;
        let axis = v / sin_half;
        let d = -2.0 * dq.dual.w / sin_half;
        let moment = (dq.dual.vector() - axis * (0.5 * d * cos_half)) / sin_half;
        ScrewParams {
            theta,
            d,
            axis,
            moment,
            degenerate: false,
        }
    }

    pub fn from_screw(s: &ScrewParams) -> DualQuat {
        if s.degenerate {
            return DualQuat::from_translation(&(s.axis * s.d));
        }
        let (sin_half, cos_half) = (0.5 * s.theta).sin_cos();
        let real = Quat::from_scalar_vector(cos_half, &(s.axis * sin_half));
        let dual = Quat::from_scalar_vector(
            -0.5 * s.d * sin_half,
            &(s.moment * sin_half + s.axis * (0.5 * s.d * cos_half)),
        );
        DualQuat { real, dual }.normalized()
    }

    /// Layout `[w, x, y, z, w', x', y', z']` used as the linear-system unknown.
    pub fn to_array8(&self) -> [f64; 8] {
        let (r, d) = (self.real, self.dual);
        [r.w, r.x, r.y, r.z, d.w, d.x, d.y, d.z]
    }

    pub fn from_array8(a: &[f64; 8]) -> DualQuat {
        DualQuat {
            real: Quat::new(a[0], a[1], a[2], a[3]),
            dual: Quat::new(a[4], a[5], a[6], a[7]),
        }
        .normalized()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.real.rotate(p) + self.translation()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.real.to_rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        m
    }

    /// Checks the unit and Plücker invariants within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        (self.real.norm() - 1.0).abs() <= tol && self.real.dot(&self.dual).abs() <= tol
    }

    /// Component-wise distance to `other`, taking the double cover into account.
    pub fn distance_up_to_sign(&self, other: &DualQuat) -> f64 {
        let a = self.to_array8();
        let b = other.to_array8();
        let plus = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let minus = a.iter().zip(&b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        plus.min(minus)
    }
}

impl Mul for DualQuat {
    type Output = DualQuat;

    fn mul(self, rhs: DualQuat) -> DualQuat {
        self.compose(&rhs)
    }
}

impl Mul<&DualQuat> for &DualQuat {
    type Output = DualQuat;

    fn mul(self, rhs: &DualQuat) -> DualQuat {
        self.compose(rhs)
    }
}

use std::ops::Mul;

use nalgebra::{Matrix4, Vector3};

use super::{DualQuat, Quat};

/// Rigid transform as a unit rotation quaternion plus a translation (m).
///
/// Same group as [`DualQuat`]; this form is cheaper inside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.conjugate();
        Self::new(r, -r.rotate(&self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn to_dual_quat(&self) -> DualQuat {
        DualQuat::from_rt_unchecked(&self.rotation, &self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            (self.rotation * rhs.rotation).normalize(),
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

impl From<DualQuat> for Pose {
    fn from(dq: DualQuat) -> Self {
        let (r, t) = dq.to_rt();
        Pose::new(r, t)
    }
}

impl From<Pose> for DualQuat {
    fn from(p: Pose) -> Self {
        p.to_dual_quat()
    }
}

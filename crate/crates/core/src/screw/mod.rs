//! Quaternion, dual-quaternion and screw-parameter algebra.
//!
//! Every transform in the crate is ultimately one of these values. Layout is
//! scalar-first with the Hamilton product; dual quaternions are kept in the
//! canonical sign `real.w >= 0`.

mod dual_quat;
mod pose;
mod quat;
pub mod so3;

pub use dual_quat::{DualQuat, ScrewParams, DEGENERATE_SCREW_ANGLE, UNIT_TOLERANCE};
pub use pose::Pose;
pub use quat::Quat;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("rotation quaternion is not unit length (norm {norm})")]
    NonUnitRotation { norm: f64 },
}

pub fn deg2rad(deg: f64) -> f64 {
    deg.to_radians()
}

pub fn rad2deg(rad: f64) -> f64 {
    rad.to_degrees()
}

//! SO(3) tangent-space helpers used by the spline and residual Jacobians.

use nalgebra::{Matrix3, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian: `Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta_sq < 1e-10 {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse right Jacobian: `Log(Exp(φ) Exp(δ)) ≈ φ + Jr⁻¹(φ) δ`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let k = skew(phi);
    let c = if theta_sq < 1e-10 {
        1.0 / 12.0 + theta_sq / 720.0
    } else {
        let theta = theta_sq.sqrt();
        let half = 0.5 * theta;
        1.0 / theta_sq - half.cos() / (half.sin() * 2.0 * theta)
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

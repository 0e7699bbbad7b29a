//! Relative-motion residual between a modelled pose pair and an observed
//! pose pair.
//!
//! With model motion `M = Ta⁻¹ Tb` and observed motion `O = Oa⁻¹ Ob`, the
//! discrepancy `Z = M O⁻¹` is mapped to `[Log(R_Z); p_Z]`. A transform
//! applied on the left of both observations cancels in `O`.
//!
//! Pose perturbations are `R ← R Exp(δθ)`, `p ← p + δp`, ordered
//! `[δθ; δp]`.

use nalgebra::{Matrix3, Matrix6, Vector6};

use crate::screw::so3::{right_jacobian_inv, skew};
use crate::screw::Pose;

pub fn relative_residual(ta: &Pose, tb: &Pose, oa: &Pose, ob: &Pose) -> Vector6<f64> {
    let z = (ta.inverse() * *tb) * (oa.inverse() * *ob).inverse();
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&z.rotation.log());
    r.fixed_rows_mut::<3>(3).copy_from(&z.translation);
    r
}

/// Residual with its Jacobians with respect to `Ta` and `Tb`.
pub fn relative_residual_with_jacobians(
    ta: &Pose,
    tb: &Pose,
    oa: &Pose,
    ob: &Pose,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let m = ta.inverse() * *tb;
    let o = oa.inverse() * *ob;
    let z = m * o.inverse();
    let rot = z.rotation.log();

    let r_a = ta.rotation.to_rotation_matrix();
    let r_m = m.rotation.to_rotation_matrix();
    let r_o = o.rotation.to_rotation_matrix();
    let r_z = z.rotation.to_rotation_matrix();
    let jr_inv = right_jacobian_inv(&rot);

    let mut j_a = Matrix6::zeros();
    j_a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * r_z.transpose()));
    j_a.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&z.translation));
    j_a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r_a.transpose()));

    let mut j_b = Matrix6::zeros();
    j_b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr_inv * r_o));
    j_b.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(r_m * skew(&(r_o.transpose() * o.translation))));
    j_b.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_a.transpose());

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&rot);
    r.fixed_rows_mut::<3>(3).copy_from(&z.translation);
    (r, j_a, j_b)
}

/// Jacobians of `E = H X` with respect to `H` and to `X`.
pub fn compose_jacobians(h: &Pose, x: &Pose) -> (Matrix6<f64>, Matrix6<f64>) {
    let r_h = h.rotation.to_rotation_matrix();
    let r_x = x.rotation.to_rotation_matrix();
    let mut d_h = Matrix6::zeros();
    d_h.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_x.transpose());
    d_h.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-r_h * skew(&x.translation)));
    d_h.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
    let mut d_x = Matrix6::zeros();
    d_x.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    d_x.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_h);
    (d_h, d_x)
}

/// Applies a `[δθ; δp]` perturbation to a pose.
pub fn retract(p: &Pose, delta: &Vector6<f64>) -> Pose {
    let dr = delta.fixed_rows::<3>(0).into_owned();
    let dp = delta.fixed_rows::<3>(3).into_owned();
    Pose::new(
        (p.rotation * crate::screw::Quat::exp(&dr)).normalize(),
        p.translation + dp,
    )
}

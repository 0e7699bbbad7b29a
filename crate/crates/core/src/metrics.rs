//! Trajectory alignment and accuracy metrics.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::screw::{rad2deg, DualQuat, Quat};
use crate::trajectory::Trajectory;

/// Default association window for [`compute_ape_are`] (s).
pub const DEFAULT_MAX_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point sets are collinear or coincident")]
    DegenerateGeometry,
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no timestamps matched within {max_dt} s")]
    NoMatches { max_dt: f64 },
}

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentSE3 {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for AlignmentSE3 {
    fn default() -> Self {
        Self {
            rotation: Quat::IDENTITY,
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }
}

impl AlignmentSE3 {
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Maps every pose into the target frame; positions are scaled,
    /// orientations only rotated.
    pub fn apply(&self, traj: &Trajectory) -> Trajectory {
        traj.map_poses(|p| {
            let (q, t) = p.to_rt();
            DualQuat::from_rt(&(self.rotation * q), &self.apply_point(&t)).expect("unit rotation")
        })
    }
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// taking `src` onto `dst`.
pub fn umeyama_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<AlignmentSE3, MetricsError> {
    if src.len() != dst.len() {
        return Err(MetricsError::LengthMismatch(src.len(), dst.len()));
    }
    let n = src.len();
    if n < 3 {
        return Err(MetricsError::TooFewPoints(n));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = s - mu_s;
        cov += (d - mu_d) * cs.transpose();
        scatter += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    // the rotation about a line through collinear points is undetermined
    let sv = scatter.singular_values();
    let (mut s_max, mut s_mid) = (0.0f64, 0.0f64);
    for v in sv.iter() {
        if *v > s_max {
            s_mid = s_max;
            s_max = *v;
        } else if *v > s_mid {
            s_mid = *v;
        }
    }
    if !(s_max > 0.0) || s_mid <= 1e-12 * s_max {
        return Err(MetricsError::DegenerateGeometry);
    }

    let svd = cov.svd(true, true);
    // the reflection fix must flip the smallest singular direction
    let (u, d, v_t) = sorted_svd(
        svd.u.expect("requested U"),
        svd.singular_values,
        svd.v_t.expect("requested Vᵀ"),
    );
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let scale = if with_scale {
        (d[0] + d[1] + sign[(2, 2)] * d[2]) / var_s
    } else {
        1.0
    };
    let rotation = Quat::from_rotation_matrix(&r);
    Ok(AlignmentSE3 {
        rotation,
        translation: mu_d - rotation.rotate(&mu_s) * scale,
        scale,
    })
}

fn sorted_svd(u: Matrix3<f64>, d: Vector3<f64>, v_t: Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let v_t = Matrix3::from_rows(&[v_t.row(idx[0]), v_t.row(idx[1]), v_t.row(idx[2])]);
    (u, Vector3::new(d[idx[0]], d[idx[1]], d[idx[2]]), v_t)
}

/// Hand poses expressed as eye poses on the eye clock: `pose ⊗ X`, with
/// timestamps moved by `-dt`. The eye world frame is left to a later
/// alignment.
pub fn transform_ground_truth(hand: &Trajectory, extrinsic: &DualQuat, dt: f64) -> Trajectory {
    hand.right_multiplied(extrinsic).shift_time(-dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Root-mean-square position error (m).
    pub ape_rmse: f64,
    /// Root-mean-square rotation error (deg).
    pub are_rmse: f64,
    /// Estimate timestamps of the matched samples.
    pub times: Vec<f64>,
    pub position_errors: Vec<f64>,
    pub rotation_errors_deg: Vec<f64>,
    pub matched_count: usize,
    /// Estimate samples without a reference sample within the window.
    pub unmatched_count: usize,
}

/// Nearest-timestamp pairs `(est index, gt index)` within `max_dt`.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    est.samples()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let j = gt.nearest_index(s.t);
            ((gt.samples()[j].t - s.t).abs() <= max_dt).then_some((i, j))
        })
        .collect()
}

/// APE and ARE of `est` against `gt`, both already in the same frame and on
/// the same clock.
pub fn compute_ape_are(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<MetricReport, MetricsError> {
    let matches = associate(est, gt, max_dt);
    if matches.is_empty() {
        return Err(MetricsError::NoMatches { max_dt });
    }
    let mut report = MetricReport {
        ape_rmse: 0.0,
        are_rmse: 0.0,
        times: Vec::with_capacity(matches.len()),
        position_errors: Vec::with_capacity(matches.len()),
        rotation_errors_deg: Vec::with_capacity(matches.len()),
        matched_count: matches.len(),
        unmatched_count: est.len() - matches.len(),
    };
    for (i, j) in matches {
        let e = &est.samples()[i];
        let (qe, pe) = e.pose.to_rt();
        let (qg, pg) = gt.samples()[j].pose.to_rt();
        report.times.push(e.t);
        report.position_errors.push((pe - pg).norm());
        report.rotation_errors_deg.push(rad2deg((qe.conjugate() * qg).angle()));
    }
    let n = report.matched_count as f64;
    report.ape_rmse = (report.position_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    report.are_rmse = (report.rotation_errors_deg.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    Ok(report)
}

/// Aligns `gt` onto `est` over the matched samples, then evaluates.
pub fn align_and_evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
    with_scale: bool,
) -> Result<(AlignmentSE3, MetricReport), MetricsError> {
    let matches = associate(est, gt, max_dt);
    if matches.is_empty() {
        return Err(MetricsError::NoMatches { max_dt });
    }
    let src: Vec<Vector3<f64>> = matches
        .iter()
        .map(|&(_, j)| gt.samples()[j].pose.translation())
        .collect();
    let dst: Vec<Vector3<f64>> = matches
        .iter()
        .map(|&(i, _)| est.samples()[i].pose.translation())
        .collect();
    let align = umeyama_align(&src, &dst, with_scale)?;
    let report = compute_ape_are(est, &align.apply(gt), max_dt)?;
    Ok((align, report))
}

/// Translation error (m) and rotation error (deg) of the left residual
/// `est ⊗ ref⁻¹`.
pub fn extrinsic_error(est: &DualQuat, reference: &DualQuat) -> (f64, f64) {
    // composing with the inverse leaves roundoff, so identical inputs are
    // reported as exactly zero
    if est.distance_up_to_sign(reference) == 0.0 {
        return (0.0, 0.0);
    }
    let residual = est * &reference.inverse();
    (residual.translation_norm(), rad2deg(residual.rotation_angle()))
}

/// Norm of the translation of `a ⊗ b⁻¹`; compared against a measured
/// displacement of the hand marker between two calibrations.
pub fn relative_translation_check(a: &DualQuat, b: &DualQuat) -> f64 {
    (a * &b.inverse()).translation_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screw::deg2rad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect()
    }

    fn random_rotation(rng: &mut impl Rng) -> Quat {
        Quat::exp(&Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ))
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 20);
        let a = umeyama_align(&p, &p, true).unwrap();
        assert!(a.rotation.angle() < 1e-12);
        assert!(a.translation.norm() < 1e-12);
        assert!((a.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let src = cloud(&mut rng, 30);
            let q = random_rotation(&mut rng);
            let t = Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), 1.0);
            let dst: Vec<_> = src.iter().map(|p| q.rotate(p) + t).collect();
            let a = umeyama_align(&src, &dst, false).unwrap();
            assert!((a.rotation.conjugate() * q).angle() < 1e-9);
            assert!((a.translation - t).norm() < 1e-9);
        }
    }

    #[test]
    fn recovers_pure_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = cloud(&mut rng, 10);
        let dst: Vec<_> = src.iter().map(|p| p * 2.0).collect();
        let a = umeyama_align(&src, &dst, true).unwrap();
        assert!((a.scale - 2.0).abs() < 1e-12);
        assert!(a.rotation.angle() < 1e-12);
    }

    #[test]
    fn mirrored_points_still_give_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = cloud(&mut rng, 25);
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let a = umeyama_align(&src, &dst, false).unwrap();
        let r = a.rotation.to_rotation_matrix();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        assert_eq!(umeyama_align(&src, &src, false), Err(MetricsError::DegenerateGeometry));
        assert_eq!(
            umeyama_align(&src[..2], &src[..2], false),
            Err(MetricsError::TooFewPoints(2))
        );
    }

    fn line_trajectory(n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        let poses: Vec<DualQuat> = times
            .iter()
            .map(|&t| {
                DualQuat::from_rt(
                    &Quat::exp(&Vector3::new(0.1 * t, (0.3 * t).sin(), 0.2)),
                    &Vector3::new(t.cos(), (2.0 * t).sin(), 0.1 * t),
                )
                .unwrap()
            })
            .collect();
        Trajectory::from_parts(&times, &poses, "t").unwrap()
    }

    #[test]
    fn single_displaced_pose_gives_expected_rmse() {
        let gt = line_trajectory(1000);
        let mut poses = gt.poses();
        let (q, p) = poses[500].to_rt();
        poses[500] = DualQuat::from_rt(&q, &(p + Vector3::new(0.1, 0.0, 0.0))).unwrap();
        let est = Trajectory::from_parts(&gt.times(), &poses, "est").unwrap();
        let r = compute_ape_are(&est, &gt, DEFAULT_MAX_DT).unwrap();
        assert!((r.ape_rmse - 0.1 / 1000f64.sqrt()).abs() < 1e-12);
        assert!(r.are_rmse < 1e-9);
        assert_eq!(r.matched_count, 1000);
    }

    #[test]
    fn constant_offset_is_absorbed_by_alignment() {
        let gt = line_trajectory(200);
        let est = gt.map_poses(|p| &DualQuat::from_translation(&Vector3::new(0.4, -1.0, 2.0)) * p);
        let (_, r) = align_and_evaluate(&est, &gt, DEFAULT_MAX_DT, false).unwrap();
        assert!(r.ape_rmse < 1e-9);
        assert!(r.are_rmse < 1e-9);
    }

    #[test]
    fn unmatched_samples_are_counted() {
        let gt = line_trajectory(100);
        let est = gt.shift_time(0.02);
        assert!(matches!(
            compute_ape_are(&est, &gt, DEFAULT_MAX_DT),
            Err(MetricsError::NoMatches { .. })
        ));
        let partial = line_trajectory(200);
        let r = compute_ape_are(&partial, &gt, DEFAULT_MAX_DT).unwrap();
        assert_eq!(r.matched_count, 100);
        assert_eq!(r.unmatched_count, 100);
    }

    #[test]
    fn ground_truth_transform_identity_and_inverse() {
        let hand = line_trajectory(50);
        let same = transform_ground_truth(&hand, &DualQuat::IDENTITY, 0.0);
        for (a, b) in same.samples().iter().zip(hand.samples()) {
            assert_eq!(a.t, b.t);
            assert!(a.pose.distance_up_to_sign(&b.pose) < 1e-15);
        }
        let x = DualQuat::from_rt(&Quat::exp(&Vector3::new(0.4, 0.2, -1.0)), &Vector3::new(0.1, 0.0, 0.3)).unwrap();
        let back = transform_ground_truth(&transform_ground_truth(&hand, &x, 0.3), &x.inverse(), -0.3);
        for (a, b) in back.samples().iter().zip(hand.samples()) {
            assert!((a.t - b.t).abs() < 1e-12);
            assert!(a.pose.distance_up_to_sign(&b.pose) < 1e-12);
        }
    }

    #[test]
    fn extrinsic_error_examples() {
        let r = DualQuat::from_rt(&Quat::exp(&Vector3::new(0.3, -0.2, 0.9)), &Vector3::new(0.2, 0.1, -0.4)).unwrap();
        assert_eq!(extrinsic_error(&r, &r), (0.0, 0.0));
        let shifted = &DualQuat::from_translation(&Vector3::new(0.01, 0.0, 0.0)) * &r;
        let (t, a) = extrinsic_error(&shifted, &r);
        assert!((t - 0.01).abs() < 1e-12 && a < 1e-9);
        let turned = &DualQuat::from_rotation(&Quat::from_axis_angle(&Vector3::z(), deg2rad(0.5))) * &r;
        let (t, a) = extrinsic_error(&turned, &r);
        assert!(t < 1e-12);
        assert!((a - 0.5).abs() < 1e-9);
    }

    #[test]
    fn relative_translation_of_shifted_marker() {
        let x = DualQuat::from_rt(
            &Quat::exp(&Vector3::new(0.3, 0.5, -0.2)),
            &Vector3::new(0.05, -0.1, 0.2),
        )
        .unwrap();
        assert_eq!(relative_translation_check(&x, &x), 0.0);
        // moving the hand marker by s in the hand frame changes X to S⁻¹ X
        let s = DualQuat::from_translation(&Vector3::new(0.0, 0.1, 0.0));
        let moved = &s.inverse() * &x;
        assert!((relative_translation_check(&x, &moved) - 0.1).abs() < 1e-12);
    }
}

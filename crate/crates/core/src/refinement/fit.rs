//! Least-squares initialization of a pose spline from sampled poses.

use nalgebra::Vector3;

use super::banded::BandedSym;
use super::spline::{SplineError, SplinePose};
use crate::screw::so3::right_jacobian_inv;
use crate::screw::Quat;
use crate::trajectory::Trajectory;

/// Gauss-Newton sweeps on the rotation vertices.
pub const ROTATION_SWEEPS: usize = 5;

/// Diagonal floor, relative to the largest diagonal entry, that keeps
/// vertices without nearby samples at their initial value.
const DIAG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SplineFit {
    pub spline: SplinePose,
    /// Largest position error at the fitted samples (m).
    pub max_position_residual: f64,
    /// Largest rotation error at the fitted samples (rad).
    pub max_rotation_residual: f64,
}

/// Fits a spline with uniform knots of `spacing` whose domain starts at the
/// first sample and covers the last one.
pub fn fit_spline(traj: &Trajectory, order: usize, spacing: f64) -> Result<SplineFit, SplineError> {
    if order < 2 {
        return Err(SplineError::InvalidOrder(order));
    }
    let span = traj.duration();
    let required = 2.0 * order as f64 * spacing;
    if !(spacing > 0.0) || span < required {
        return Err(SplineError::SpanTooShort { span, required });
    }
    let t0 = traj.start_time();
    let segments = ((span / spacing) - 1e-6).ceil().max(1.0) as usize;
    let knots = SplinePose::uniform_knots(order, t0, spacing, segments);
    let m = knots.len() - order;

    // start every vertex at the sample nearest the centre of its support
    let mut rot = Vec::with_capacity(m);
    let mut trans = Vec::with_capacity(m);
    for j in 0..m {
        let centre = 0.5 * (knots[j] + knots[j + order]);
        let s = traj.samples()[traj.nearest_index(centre)];
        let (q, p) = s.pose.to_rt();
        rot.push(q);
        trans.push(p);
    }
    let mut spline = SplinePose::new(order, knots, rot, trans)?;

    let samples = traj.samples();
    let segs: Vec<(usize, Vec<f64>)> = samples
        .iter()
        .map(|s| {
            let i = spline.segment(s.t)?;
            Ok((i, spline.basis(i, s.t)))
        })
        .collect::<Result<_, SplineError>>()?;

    fit_translation(&mut spline, traj, &segs)?;
    for _ in 0..ROTATION_SWEEPS {
        let step = rotation_sweep(&mut spline, traj)?;
        if step < 1e-15 {
            break;
        }
    }

    let mut max_p: f64 = 0.0;
    let mut max_r: f64 = 0.0;
    for s in samples {
        let p = spline.eval(s.t)?;
        let (q, t) = s.pose.to_rt();
        max_p = max_p.max((p.translation - t).norm());
        max_r = max_r.max((q.conjugate() * p.rotation).angle());
    }
    Ok(SplineFit {
        spline,
        max_position_residual: max_p,
        max_rotation_residual: max_r,
    })
}

fn floor_diagonal(a: &mut BandedSym) {
    let diag = a.diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max).max(1.0);
    for (i, d) in diag.iter().enumerate() {
        a.add_diagonal(i, DIAG_FLOOR * max.max(*d));
    }
}

fn fit_translation(spline: &mut SplinePose, traj: &Trajectory, segs: &[(usize, Vec<f64>)]) -> Result<(), SplineError> {
    let k = spline.order();
    let m = spline.vertex_count();
    let mut a = BandedSym::zeros(m, k - 1);
    let mut rhs = vec![Vector3::zeros(); m];
    let c0: Vec<Vector3<f64>> = spline.trans_vertices().to_vec();
    for (s, (i, b)) in traj.samples().iter().zip(segs) {
        let first = i + 1 - k;
        let predicted: Vector3<f64> = b.iter().enumerate().map(|(r, w)| c0[first + r] * *w).sum();
        let resid = s.pose.translation() - predicted;
        for (r, wr) in b.iter().enumerate() {
            rhs[first + r] += resid * *wr;
            for (c, wc) in b.iter().enumerate().take(r + 1) {
                a.add(first + r, first + c, wr * wc);
            }
        }
    }
    floor_diagonal(&mut a);
    let chol = a
        .cholesky()
        .map_err(|e| SplineError::FitFailed(format!("translation system singular at row {}", e.row)))?;
    for axis in 0..3 {
        let mut col: Vec<f64> = rhs.iter().map(|v| v[axis]).collect();
        chol.solve_in_place(&mut col);
        for (j, d) in col.iter().enumerate() {
            let mut delta = Vector3::zeros();
            delta[axis] = *d;
            spline.retract_vertex(j, &Vector3::zeros(), &delta);
        }
    }
    Ok(())
}

/// One Gauss-Newton step on all rotation vertices; returns the largest
/// update norm.
fn rotation_sweep(spline: &mut SplinePose, traj: &Trajectory) -> Result<f64, SplineError> {
    let k = spline.order();
    let m = spline.vertex_count();
    let mut a = BandedSym::zeros(3 * m, 3 * k - 1);
    let mut g = vec![0.0; 3 * m];
    for s in traj.samples() {
        let ev = spline.eval_with_jacobian(s.t)?;
        let obs: Quat = s.pose.real;
        let r = (obs.conjugate() * ev.pose.rotation).log();
        let jr_inv = right_jacobian_inv(&r);
        let blocks: Vec<_> = ev.rot_jacobians.iter().map(|j| jr_inv * j).collect();
        for (li, ji) in blocks.iter().enumerate() {
            let gi = 3 * (ev.first + li);
            let jtr = ji.transpose() * r;
            for u in 0..3 {
                g[gi + u] += jtr[u];
            }
            for (lj, jj) in blocks.iter().enumerate().take(li + 1) {
                let gj = 3 * (ev.first + lj);
                let h = ji.transpose() * jj;
                for u in 0..3 {
                    for v in 0..3 {
                        if gi + u >= gj + v {
                            a.add(gi + u, gj + v, h[(u, v)]);
                        }
                    }
                }
            }
        }
    }
    floor_diagonal(&mut a);
    let chol = a
        .cholesky()
        .map_err(|e| SplineError::FitFailed(format!("rotation system singular at row {}", e.row)))?;
    for v in g.iter_mut() {
        *v = -*v;
    }
    chol.solve_in_place(&mut g);
    let mut max_step: f64 = 0.0;
    for j in 0..m {
        let d = Vector3::new(g[3 * j], g[3 * j + 1], g[3 * j + 2]);
        max_step = max_step.max(d.norm());
        spline.retract_vertex(j, &d, &Vector3::zeros());
    }
    spline.align_signs();
    Ok(max_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screw::DualQuat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(spline: &SplinePose, rate: f64) -> Trajectory {
        let (a, b) = spline.domain();
        let n = ((b - a) * rate + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..n).map(|i| a + i as f64 / rate).collect();
        let poses: Vec<DualQuat> = times.iter().map(|&t| spline.eval(t).unwrap().to_dual_quat()).collect();
        Trajectory::from_parts(&times, &poses, "spline").unwrap()
    }

    #[test]
    fn constant_trajectory_fits_exactly() {
        let p = DualQuat::from_rt(&Quat::exp(&Vector3::new(0.2, 0.4, -0.1)), &Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let traj = Trajectory::from_parts(&times, &vec![p; 200], "c").unwrap();
        let fit = fit_spline(&traj, 4, 0.1).unwrap();
        assert!(fit.max_position_residual < 1e-12);
        assert!(fit.max_rotation_residual < 1e-12);
        for q in fit.spline.rot_vertices() {
            assert!(q.dot(&p.real).abs() > 1.0 - 1e-14);
        }
    }

    #[test]
    fn recovers_generating_spline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let knots = SplinePose::uniform_knots(4, 1.0, 0.1, 30);
        let m = knots.len() - 4;
        let mut q = Quat::IDENTITY;
        let mut rot = Vec::new();
        let mut trans = Vec::new();
        for _ in 0..m {
            q = q * Quat::exp(&Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ));
            rot.push(q);
            trans.push(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            ));
        }
        let truth = SplinePose::new(4, knots, rot, trans).unwrap();
        let fit = fit_spline(&sample(&truth, 100.0), 4, 0.1).unwrap();
        assert_eq!(fit.spline.vertex_count(), truth.vertex_count());
        for (a, b) in fit.spline.knots().iter().zip(truth.knots()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fit.spline.rot_vertices().iter().zip(truth.rot_vertices()) {
            assert!((a.conjugate() * *b).angle() < 1e-6);
        }
        for (a, b) in fit.spline.trans_vertices().iter().zip(truth.trans_vertices()) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(fit.max_position_residual < 1e-9);
    }

    #[test]
    fn smooth_motion_fits_held_out_samples() {
        let f = |t: f64| {
            DualQuat::from_rt(
                &Quat::exp(&Vector3::new(
                    (0.9 * t).sin(),
                    0.5 * (1.3 * t).cos(),
                    0.3 * (0.5 * t).sin(),
                )),
                &Vector3::new(1.5 * (0.6 * t).sin(), (1.2 * t).sin() * 0.75, 0.2 * (0.8 * t).cos()),
            )
            .unwrap()
        };
        let times: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let poses: Vec<DualQuat> = times.iter().map(|&t| f(t)).collect();
        let traj = Trajectory::from_parts(&times, &poses, "smooth").unwrap();
        let fit = fit_spline(&traj, 4, 0.1).unwrap();
        for k in 0..900 {
            let t = 0.005 + k as f64 * 0.011;
            let p = fit.spline.eval(t).unwrap();
            assert!((p.translation - f(t).translation()).norm() < 1e-3);
        }
    }

    #[test]
    fn short_span_is_rejected() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let traj = Trajectory::from_parts(&times, &[DualQuat::IDENTITY; 50], "s").unwrap();
        assert!(matches!(
            fit_spline(&traj, 4, 0.1),
            Err(SplineError::SpanTooShort { .. })
        ));
    }
}

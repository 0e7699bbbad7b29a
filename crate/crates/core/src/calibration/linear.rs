//! Per-pair coefficient blocks, screw-consistency weighting and the
//! two-dimensional null-space solve of the stacked system.

use nalgebra::{DMatrix, SMatrix, Vector3, Vector4};

use super::{CalibrationError, RelativePosePair};
use crate::screw::so3::skew;
use crate::screw::DualQuat;

pub type Block = SMatrix<f64, 6, 8>;

/// Magnitudes below this are treated as zero in the consistency score.
pub const DEGENERATE_SCALAR: f64 = 1e-12;

/// Smallest weight handed out by [`robust_weight`], keeping weights positive.
pub const MIN_WEIGHT: f64 = f64::MIN_POSITIVE;

/// 6×8 block of `hand_rel ⊗ x = x ⊗ eye_rel` in the unknown
/// `[q.w, q.xyz, q'.w, q'.xyz]`.
pub fn coefficient_block(pair: &RelativePosePair) -> Block {
    let a = pair.hand_rel;
    let b = pair.eye_rel;
    let (r, rp) = (a.real.vector(), a.dual.vector());
    let (s, sp) = (b.real.vector(), b.dual.vector());
    let mut m = Block::zeros();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&(r - s));
    m.fixed_view_mut::<3, 3>(0, 1).copy_from(&skew(&(r + s)));
    m.fixed_view_mut::<3, 1>(3, 0).copy_from(&(rp - sp));
    m.fixed_view_mut::<3, 3>(3, 1).copy_from(&skew(&(rp + sp)));
    m.fixed_view_mut::<3, 1>(3, 4).copy_from(&(r - s));
    m.fixed_view_mut::<3, 3>(3, 5).copy_from(&skew(&(r + s)));
    m
}

/// Screw-consistency score `E >= 1`; equals 1 when both scalar parts of the
/// pair agree in magnitude.
pub fn screw_consistency(pair: &RelativePosePair) -> Result<f64, CalibrationError> {
    let (w_h, wp_h) = pair.hand_rel.scalar_part();
    let (w_e, wp_e) = pair.eye_rel.scalar_part();
    let (w_h, w_e) = (w_h.abs(), w_e.abs());
    if w_h.min(w_e) < DEGENERATE_SCALAR {
        return Err(CalibrationError::DegeneratePair { i: pair.i, j: pair.j });
    }
    let rot_ratio = w_h.max(w_e) / w_h.min(w_e);
    let (wp_h, wp_e) = (wp_h.abs(), wp_e.abs());
    let dual_ratio = if wp_h.min(wp_e) < DEGENERATE_SCALAR {
        1.0
    } else {
        wp_h.max(wp_e) / wp_h.min(wp_e)
    };
    Ok(0.5 * (rot_ratio + dual_ratio))
}

/// Exponential kernel `exp(mu (1 - E²))`, in `(0, 1]` for `E >= 1`.
pub fn robust_weight(e: f64, mu: f64) -> f64 {
    (mu * (1.0 - e * e)).exp().max(MIN_WEIGHT)
}

/// Residual motion `x ⊗ eye_rel ⊗ x⁻¹ ⊗ hand_rel⁻¹`; identity for a
/// perfectly consistent pair.
pub fn pair_residual(x: &DualQuat, pair: &RelativePosePair) -> DualQuat {
    x * &pair.eye_rel * x.inverse() * pair.hand_rel.inverse()
}

pub fn inlier_check(x: &DualQuat, pair: &RelativePosePair, phi: f64, psi: f64) -> bool {
    let r = pair_residual(x, pair);
    r.rotation_angle() < phi && r.translation_norm() < psi
}

/// Stacks `w_k S_k` for the given pairs. `weights` of `None` means unit weights.
pub fn stack(pairs: &[&RelativePosePair], weights: Option<&[f64]>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(6 * pairs.len(), 8);
    for (k, pair) in pairs.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        m.view_mut((6 * k, 0), (6, 8)).copy_from(&(coefficient_block(pair) * w));
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolution {
    pub extrinsic: DualQuat,
    /// `σ7 / σ6` of the stacked system.
    pub quality: f64,
    pub singular_values: [f64; 8],
}

/// Extrinsic from the two-dimensional null space of `m` (6n×8), subject to
/// the unit and Plücker constraints.
pub fn solve_dq_svd(m: &DMatrix<f64>) -> Result<LinearSolution, CalibrationError> {
    if m.nrows() < 12 || m.ncols() != 8 {
        return Err(CalibrationError::NoPairs { found: m.nrows() / 6 });
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut sigma = [0.0; 8];
    for (k, &i) in order.iter().enumerate() {
        sigma[k] = svd.singular_values[i];
    }
    if !sigma.iter().all(|s| s.is_finite()) {
        return Err(CalibrationError::IllConditioned { sigma6: f64::NAN });
    }
    if sigma[5] < 1e-12 * sigma[0].max(1.0) {
        return Err(CalibrationError::IllConditioned { sigma6: sigma[5] });
    }
    let v7 = v_t.row(order[6]).transpose();
    let v8 = v_t.row(order[7]).transpose();
    let split = |v: &nalgebra::DVector<f64>| {
        (
            Vector4::new(v[0], v[1], v[2], v[3]),
            Vector4::new(v[4], v[5], v[6], v[7]),
        )
    };
    let (u1, w1) = split(&v7);
    let (u2, w2) = split(&v8);

    // Plücker: a λ1² + b λ1λ2 + c λ2² = 0
    let a = u1.dot(&w1);
    let b = u1.dot(&w2) + u2.dot(&w1);
    let c = u2.dot(&w2);
    let roots = homogeneous_quadratic_roots(a, b, c).ok_or(CalibrationError::QuadraticDegenerate)?;

    // Both candidate directions are unit in (λ1, λ2); keep the one with the
    // larger rotation part.
    let real_norm_sq = |l1: f64, l2: f64| (u1 * l1 + u2 * l2).norm_squared();
    let (l1, l2) = roots
        .into_iter()
        .max_by(|p, q| real_norm_sq(p.0, p.1).total_cmp(&real_norm_sq(q.0, q.1)))
        .expect("two roots");
    let val = real_norm_sq(l1, l2);
    if !(val > 1e-24) {
        return Err(CalibrationError::QuadraticDegenerate);
    }
    let scale = 1.0 / val.sqrt();
    let x = (&v7 * l1 + &v8 * l2) * scale;
    let arr: [f64; 8] = std::array::from_fn(|i| x[i]);
    Ok(LinearSolution {
        extrinsic: DualQuat::from_array8(&arr),
        quality: sigma[6] / sigma[5],
        singular_values: sigma,
    })
}

/// Unit directions `(λ1, λ2)` solving `a λ1² + b λ1 λ2 + c λ2² = 0`.
fn homogeneous_quadratic_roots(a: f64, b: f64, c: f64) -> Option<[(f64, f64); 2]> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if !(scale > 0.0) {
        return None;
    }
    let (a, b, c) = (a / scale, b / scale, c / scale);
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // noise can push a double root slightly negative
        if disc < -1e-6 {
            return None;
        }
        disc = 0.0;
    }
    let sq = disc.sqrt();
    let unit = |l1: f64, l2: f64| {
        let n = l1.hypot(l2);
        (l1 / n, l2 / n)
    };
    // Solve for whichever ratio keeps the leading coefficient large.
    if a.abs() >= c.abs() {
        // s = λ1/λ2
        let q = -0.5 * (b + b.signum() * sq);
        let s1 = q / a;
        let s2 = if q != 0.0 { c / q } else { s1 };
        Some([unit(s1, 1.0), unit(s2, 1.0)])
    } else {
        // t = λ2/λ1
        let q = -0.5 * (b + b.signum() * sq);
        let t1 = q / c;
        let t2 = if q != 0.0 { a / q } else { t1 };
        Some([unit(1.0, t1), unit(1.0, t2)])
    }
}

/// Unit rotation axis of a relative motion; zero for a negligible rotation.
pub fn rotation_axis(dq: &DualQuat) -> Vector3<f64> {
    let v = dq.real.vector();
    let n = v.norm();
    if n < 1e-12 {
        Vector3::zeros()
    } else {
        v / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screw::Quat;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dq(rng: &mut impl Rng, rot: f64, trans: f64) -> DualQuat {
        let rv = Vector3::new(
            rng.random_range(-rot..rot),
            rng.random_range(-rot..rot),
            rng.random_range(-rot..rot),
        );
        let t = Vector3::new(
            rng.random_range(-trans..trans),
            rng.random_range(-trans..trans),
            rng.random_range(-trans..trans),
        );
        DualQuat::from_rt(&Quat::exp(&rv), &t).unwrap()
    }

    fn pair(hand: DualQuat, eye: DualQuat) -> RelativePosePair {
        RelativePosePair::new(hand, eye, 0, 1, 0.0, 1.0)
    }

    fn consistent_pair(x: &DualQuat, hand: DualQuat) -> RelativePosePair {
        pair(hand, x.inverse() * hand * *x)
    }

    #[test]
    fn identity_is_in_null_space_of_equal_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_dq(&mut rng, 1.0, 1.0);
        let s = coefficient_block(&pair(a, a));
        for r in 0..6 {
            assert_eq!(s[(r, 0)], 0.0);
        }
        assert_eq!(s.column(4).norm(), 0.0);
        let x = DualQuat::IDENTITY.to_array8();
        let x = nalgebra::SVector::<f64, 8>::from_column_slice(&x);
        assert!((s * x).norm() < 1e-15);
    }

    #[test]
    fn true_extrinsic_satisfies_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let x = random_dq(&mut rng, 2.0, 1.0);
            let p = consistent_pair(&x, random_dq(&mut rng, 1.5, 2.0));
            let v = nalgebra::SVector::<f64, 8>::from_column_slice(&x.to_array8());
            assert!((coefficient_block(&p) * v).norm() < 1e-12);
            // oracle: the real and dual equations written out directly
            let (a, b) = (p.hand_rel, p.eye_rel);
            let real = a.real * x.real - x.real * b.real;
            let dual = a.real * x.dual + a.dual * x.real - x.real * b.dual - x.dual * b.real;
            assert!(real.norm() < 1e-12 && dual.norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_block_loses_rotation_rows() {
        let t = DualQuat::from_translation(&Vector3::new(0.1, 0.2, 0.3));
        let s = coefficient_block(&pair(t, t));
        assert_eq!(s.fixed_view::<3, 4>(0, 0).norm(), 0.0);
    }

    #[test]
    fn consistency_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let x = random_dq(&mut rng, 2.0, 1.0);
            let p = consistent_pair(&x, random_dq(&mut rng, 1.5, 2.0));
            assert_relative_eq!(screw_consistency(&p).unwrap(), 1.0, epsilon = 1e-9);
        }
        // oracle: hand-set scalar parts
        // valid dual quaternions with prescribed scalar parts
        let mk = |w: f64, wp: f64| {
            let s = (1.0 - w * w).sqrt();
            DualQuat {
                real: Quat::new(w, s, 0.0, 0.0),
                dual: Quat::new(wp, -w * wp / s, 0.0, 0.0),
            }
        };
        let p = pair(mk(0.96, 0.01), mk(0.8, 0.01));
        assert_relative_eq!(screw_consistency(&p).unwrap(), 1.1, epsilon = 1e-12);
        let p = pair(mk(0.9, 0.02), mk(0.45, 0.01));
        assert_relative_eq!(screw_consistency(&p).unwrap(), 2.0, epsilon = 1e-12);
        let p = pair(mk(0.9, 0.0), mk(0.45, 0.01));
        assert_relative_eq!(screw_consistency(&p).unwrap(), 1.5, epsilon = 1e-12);
        let p = pair(mk(0.0, 0.0), mk(0.45, 0.01));
        assert!(matches!(
            screw_consistency(&p),
            Err(CalibrationError::DegeneratePair { .. })
        ));
    }

    #[test]
    fn consistency_invariant_under_eye_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let p = pair(random_dq(&mut rng, 1.5, 1.0), random_dq(&mut rng, 1.5, 1.0));
            let c = random_dq(&mut rng, 3.0, 2.0);
            let q = pair(p.hand_rel, c * p.eye_rel * c.inverse());
            assert_relative_eq!(
                screw_consistency(&p).unwrap(),
                screw_consistency(&q).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(robust_weight(1.0, 5.0), 1.0);
        assert_relative_eq!(robust_weight(1.2, 5.0), (-2.2f64).exp(), epsilon = 1e-15);
        let mut prev = 1.0;
        for k in 1..200 {
            let w = robust_weight(1.0 + 0.01 * k as f64, 5.0);
            assert!(w < prev && w > 0.0);
            prev = w;
        }
    }

    #[test]
    fn inlier_check_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_dq(&mut rng, 2.0, 0.5);
        let hand = random_dq(&mut rng, 1.0, 1.0);
        let p = consistent_pair(&x, hand);
        let phi = 0.5f64.to_radians();
        assert!(inlier_check(&x, &p, phi, 0.02));

        let rot = DualQuat::from_rotation(&Quat::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 1f64.to_radians()));
        let bad = RelativePosePair {
            hand_rel: hand * rot,
            ..p
        };
        let e1 = pair_residual(&x, &bad).rotation_angle();
        assert_relative_eq!(e1, 1f64.to_radians(), epsilon = 1e-9);
        assert!(!inlier_check(&x, &bad, phi, 0.02));

        let shift = DualQuat::from_translation(&Vector3::new(0.0, 0.01, 0.0));
        let ok = RelativePosePair {
            hand_rel: shift * hand,
            ..p
        };
        let r = pair_residual(&x, &ok);
        assert!(r.rotation_angle() < 1e-9);
        assert_relative_eq!(r.translation_norm(), 0.01, epsilon = 1e-9);
        assert!(inlier_check(&x, &ok, phi, 0.02));
    }

    #[test]
    fn solve_recovers_identity_and_random_extrinsics() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let hands: Vec<DualQuat> = (0..10).map(|_| random_dq(&mut rng, 1.5, 1.0)).collect();
        let pairs: Vec<RelativePosePair> = hands.iter().map(|&h| consistent_pair(&DualQuat::IDENTITY, h)).collect();
        let refs: Vec<&RelativePosePair> = pairs.iter().collect();
        let sol = solve_dq_svd(&stack(&refs, None)).unwrap();
        assert!(sol.extrinsic.distance_up_to_sign(&DualQuat::IDENTITY) < 1e-9);
        assert!(sol.quality < 1e-10);

        for _ in 0..50 {
            let x = random_dq(&mut rng, 2.5, 1.0);
            let pairs: Vec<RelativePosePair> = (0..4)
                .map(|_| consistent_pair(&x, random_dq(&mut rng, 1.5, 1.0)))
                .collect();
            let refs: Vec<&RelativePosePair> = pairs.iter().collect();
            let sol = solve_dq_svd(&stack(&refs, None)).unwrap();
            let err = sol.extrinsic * x.inverse();
            assert!(err.rotation_angle() < 1e-9, "rot {}", err.rotation_angle());
            assert!(err.translation_norm() < 1e-9);
            assert!(sol.extrinsic.real.is_canonical());
        }
    }

    #[test]
    fn parallel_axes_are_ill_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_dq(&mut rng, 1.0, 0.5);
        let axis = Vector3::new(0.2, 0.5, -1.0);
        let pairs: Vec<RelativePosePair> = (1..6)
            .map(|k| {
                let h = DualQuat::from_rt(
                    &Quat::from_axis_angle(&axis, 0.2 * k as f64),
                    &Vector3::new(0.1 * k as f64, -0.3, 0.05),
                )
                .unwrap();
                consistent_pair(&x, h)
            })
            .collect();
        let refs: Vec<&RelativePosePair> = pairs.iter().collect();
        assert!(matches!(
            solve_dq_svd(&stack(&refs, None)),
            Err(CalibrationError::IllConditioned { .. })
        ));
    }

    #[test]
    fn quadratic_roots_solve_both_forms() {
        for (a, b, c) in [(1.0, -3.0, 2.0), (0.0, 1.0, -2.0), (2.0, 1.0, 0.0), (1e-20, 1.0, 1.0)] {
            let roots = homogeneous_quadratic_roots(a, b, c).unwrap();
            for (l1, l2) in roots {
                assert_relative_eq!(l1.hypot(l2), 1.0, epsilon = 1e-15);
                assert!((a * l1 * l1 + b * l1 * l2 + c * l2 * l2).abs() < 1e-12);
            }
        }
        assert!(homogeneous_quadratic_roots(1.0, 0.0, 1.0).is_none());
    }
}

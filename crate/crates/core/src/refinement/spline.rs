//! Continuous-time pose spline: a cumulative B-spline on SO(3) for rotation
//! and an ordinary vector-space B-spline for translation, sharing one knot
//! vector and order.
//!
//! With knots `τ_0..τ_{N-1}` and order `k`, there are `N - k` control
//! vertices and the valid domain is `[τ_{k-1}, τ_{N-k}]`. On segment
//! `[τ_i, τ_{i+1})` the active vertices are `i-k+1 ..= i`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::screw::so3::{right_jacobian, right_jacobian_inv};
use crate::screw::{Pose, Quat};

/// Tolerance (s) for evaluating just outside the domain edges.
pub const DOMAIN_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("{knots} knots and {vertices} vertices do not match order {order}")]
    Shape {
        order: usize,
        knots: usize,
        vertices: usize,
    },
    #[error("knot vector must be nondecreasing with a nonempty domain")]
    BadKnots,
    #[error("time {t:.6} s is outside the spline domain [{start:.6}, {end:.6}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("trajectory spans {span:.3} s, at least {required:.3} s needed for the knot layout")]
    SpanTooShort { span: f64, required: f64 },
    #[error("spline fit failed: {0}")]
    FitFailed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplinePose {
    order: usize,
    knots: Vec<f64>,
    rot_vertices: Vec<Quat>,
    trans_vertices: Vec<Vector3<f64>>,
}

/// Spline pose at one time together with its sensitivity to the active
/// control vertices.
#[derive(Debug, Clone)]
pub struct SplineEval {
    /// Index of the first active vertex.
    pub first: usize,
    pub pose: Pose,
    /// `∂ε/∂δ_j` for right perturbations `q_j ← q_j Exp(δ_j)` of each active
    /// vertex, where `ε` is the right perturbation of the evaluated rotation.
    pub rot_jacobians: Vec<Matrix3<f64>>,
    /// Basis weight of each active translation vertex.
    pub trans_weights: Vec<f64>,
}

impl SplinePose {
    pub fn new(
        order: usize,
        knots: Vec<f64>,
        rot_vertices: Vec<Quat>,
        trans_vertices: Vec<Vector3<f64>>,
    ) -> Result<Self, SplineError> {
        if order < 2 {
            return Err(SplineError::InvalidOrder(order));
        }
        let n = knots.len();
        if n < 2 * order || rot_vertices.len() != n - order || trans_vertices.len() != n - order {
            return Err(SplineError::Shape {
                order,
                knots: n,
                vertices: rot_vertices.len(),
            });
        }
        if knots.windows(2).any(|w| !(w[1] >= w[0])) || !(knots[n - order] > knots[order - 1]) {
            return Err(SplineError::BadKnots);
        }
        let mut s = Self {
            order,
            knots,
            rot_vertices: rot_vertices.iter().map(|q| q.normalize()).collect(),
            trans_vertices,
        };
        s.align_signs();
        Ok(s)
    }

    /// Uniform knots with the domain starting at `start` and covering
    /// `segments` intervals of `spacing`.
    pub fn uniform_knots(order: usize, start: f64, spacing: f64, segments: usize) -> Vec<f64> {
        let n = segments + 2 * order - 1;
        (0..n)
            .map(|j| start + (j as f64 - (order as f64 - 1.0)) * spacing)
            .collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn vertex_count(&self) -> usize {
        self.rot_vertices.len()
    }

    pub fn rot_vertices(&self) -> &[Quat] {
        &self.rot_vertices
    }

    pub fn trans_vertices(&self) -> &[Vector3<f64>] {
        &self.trans_vertices
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.order - 1], self.knots[self.vertex_count()])
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = self.domain();
        t >= a - DOMAIN_EPS && t <= b + DOMAIN_EPS
    }

    /// Applies `q_j ← q_j Exp(δθ)` and `c_j ← c_j + δp`.
    pub fn retract_vertex(&mut self, j: usize, d_rot: &Vector3<f64>, d_trans: &Vector3<f64>) {
        self.rot_vertices[j] = (self.rot_vertices[j] * Quat::exp(d_rot)).normalize();
        self.trans_vertices[j] += d_trans;
    }

    pub fn set_vertex(&mut self, j: usize, rot: Quat, trans: Vector3<f64>) {
        self.rot_vertices[j] = rot.normalize();
        self.trans_vertices[j] = trans;
    }

    /// Flips vertex signs so consecutive quaternions have nonnegative dot.
    pub fn align_signs(&mut self) {
        for j in 1..self.rot_vertices.len() {
            if self.rot_vertices[j].dot(&self.rot_vertices[j - 1]) < 0.0 {
                self.rot_vertices[j] = -self.rot_vertices[j];
            }
        }
    }

    /// Segment index `i` with `τ_i <= t < τ_{i+1}`, clamped to the domain.
    pub fn segment(&self, t: f64) -> Result<usize, SplineError> {
        let (a, b) = self.domain();
        if !(t >= a - DOMAIN_EPS && t <= b + DOMAIN_EPS) {
            return Err(SplineError::OutOfDomain { t, start: a, end: b });
        }
        let k = self.order;
        let last = self.vertex_count() - 1;
        let idx = self.knots.partition_point(|&x| x <= t);
        Ok(idx.saturating_sub(1).clamp(k - 1, last))
    }

    /// Nonzero basis values `B_{i-k+1..=i}(t)` on segment `i` (Cox–de Boor).
    pub fn basis(&self, i: usize, t: f64) -> Vec<f64> {
        let p = self.order - 1;
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Cumulative weights `λ_j = Σ_{r>=j} B_r` for the active vertices.
    pub fn cumulative_basis(&self, i: usize, t: f64) -> Vec<f64> {
        cumulative(&self.basis(i, t))
    }

    pub fn eval(&self, t: f64) -> Result<Pose, SplineError> {
        let i = self.segment(t)?;
        let k = self.order;
        let first = i + 1 - k;
        let b = self.basis(i, t);
        let lam = cumulative(&b);
        let q = &self.rot_vertices[first..first + k];
        let mut rot = q[0];
        for j in 1..k {
            let d = (q[j - 1].conjugate() * q[j]).log();
            rot = rot * Quat::exp(&(d * lam[j]));
        }
        let trans = b
            .iter()
            .zip(&self.trans_vertices[first..first + k])
            .fold(Vector3::zeros(), |acc, (w, c)| acc + c * *w);
        Ok(Pose::new(rot.normalize(), trans))
    }

    pub fn eval_with_jacobian(&self, t: f64) -> Result<SplineEval, SplineError> {
        let i = self.segment(t)?;
        let k = self.order;
        let first = i + 1 - k;
        let b = self.basis(i, t);
        let lam = cumulative(&b);
        let q = &self.rot_vertices[first..first + k];

        let mut d = vec![Vector3::zeros(); k];
        let mut d_mat = vec![Matrix3::identity(); k];
        let mut a_q = vec![Quat::IDENTITY; k];
        let mut a_mat = vec![Matrix3::identity(); k];
        let mut rot = q[0];
        for j in 1..k {
            let rel = q[j - 1].conjugate() * q[j];
            d[j] = rel.log();
            d_mat[j] = rel.to_rotation_matrix();
            a_q[j] = Quat::exp(&(d[j] * lam[j]));
            a_mat[j] = a_q[j].to_rotation_matrix();
            rot = rot * a_q[j];
        }

        // P_j = A_{j+1} ⋯ A_{k-1}
        let mut p = vec![Matrix3::identity(); k];
        for j in (0..k - 1).rev() {
            p[j] = a_mat[j + 1] * p[j + 1];
        }
        let mut jac = vec![Matrix3::zeros(); k];
        jac[0] = p[0].transpose();
        for j in 1..k {
            let m = right_jacobian(&(d[j] * lam[j])) * right_jacobian_inv(&d[j]) * lam[j];
            let t_j = p[j].transpose() * m;
            jac[j] += t_j;
            jac[j - 1] -= t_j * d_mat[j].transpose();
        }

        let trans = b
            .iter()
            .zip(&self.trans_vertices[first..first + k])
            .fold(Vector3::zeros(), |acc, (w, c)| acc + c * *w);
        Ok(SplineEval {
            first,
            pose: Pose::new(rot.normalize(), trans),
            rot_jacobians: jac,
            trans_weights: b,
        })
    }
}

fn cumulative(b: &[f64]) -> Vec<f64> {
    let mut lam = vec![0.0; b.len()];
    let mut acc = 0.0;
    for r in (0..b.len()).rev() {
        acc += b[r];
        lam[r] = acc;
    }
    lam
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spline(rng: &mut impl Rng, order: usize, segments: usize) -> SplinePose {
        let knots = SplinePose::uniform_knots(order, 0.0, 0.1, segments);
        let m = knots.len() - order;
        let mut rot = Vec::with_capacity(m);
        let mut q = Quat::IDENTITY;
        for _ in 0..m {
            let step = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            q = q * Quat::exp(&step);
            rot.push(q);
        }
        let trans = (0..m)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        SplinePose::new(order, knots, rot, trans).unwrap()
    }

    #[test]
    fn shape_validation() {
        let knots = SplinePose::uniform_knots(4, 0.0, 0.1, 3);
        assert_eq!(knots.len(), 10);
        assert!(SplinePose::new(4, knots.clone(), vec![Quat::IDENTITY; 6], vec![Vector3::zeros(); 6]).is_ok());
        assert!(matches!(
            SplinePose::new(4, knots.clone(), vec![Quat::IDENTITY; 5], vec![Vector3::zeros(); 5]),
            Err(SplineError::Shape { .. })
        ));
        assert!(matches!(
            SplinePose::new(1, knots, vec![Quat::IDENTITY; 6], vec![Vector3::zeros(); 6]),
            Err(SplineError::InvalidOrder(1))
        ));
    }

    #[test]
    fn domain_matches_layout() {
        let s = random_spline(&mut ChaCha8Rng::seed_from_u64(1), 4, 5);
        let (a, b) = s.domain();
        assert_relative_eq!(a, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b, 0.5, epsilon = 1e-15);
        assert!(s.eval(b).is_ok());
        assert!(matches!(s.eval(0.6), Err(SplineError::OutOfDomain { .. })));
    }

    #[test]
    fn constant_vertices_give_constant_pose() {
        let q = Quat::exp(&Vector3::new(0.3, -0.2, 1.1));
        let c = Vector3::new(1.0, -2.0, 0.5);
        let knots = SplinePose::uniform_knots(4, 2.0, 0.1, 6);
        let m = knots.len() - 4;
        let s = SplinePose::new(4, knots, vec![q; m], vec![c; m]).unwrap();
        for k in 0..=60 {
            let p = s.eval(2.0 + 0.01 * k as f64).unwrap();
            assert!(p.rotation.dot(&q).abs() > 1.0 - 1e-15);
            assert_relative_eq!(p.translation, c, epsilon = 1e-14);
        }
    }

    #[test]
    fn order_two_is_geodesic_interpolation() {
        let a = Quat::exp(&Vector3::new(0.1, 0.2, -0.3));
        let b = Quat::exp(&Vector3::new(-0.5, 0.9, 0.4));
        let knots = vec![0.0, 1.0, 2.0, 3.0];
        let s = SplinePose::new(2, knots, vec![a, b], vec![Vector3::zeros(), Vector3::x()]).unwrap();
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            let p = s.eval(1.0 + u).unwrap();
            // oracle: closed-form geodesic a Exp(u Log(a⁻¹ b))
            let g = a * Quat::exp(&((a.conjugate() * b).log() * u));
            assert!((p.rotation.to_rotation_matrix() - g.to_rotation_matrix()).abs().max() < 1e-12);
            assert_relative_eq!(p.translation, Vector3::x() * u, epsilon = 1e-12);
        }
    }

    #[test]
    fn collinear_vertices_stay_on_line() {
        let knots = SplinePose::uniform_knots(4, 0.0, 0.1, 8);
        let m = knots.len() - 4;
        let dir = Vector3::new(1.0, 2.0, -0.5);
        let trans = (0..m).map(|j| Vector3::new(0.3, 0.0, 1.0) + dir * j as f64).collect();
        let s = SplinePose::new(4, knots, vec![Quat::IDENTITY; m], trans).unwrap();
        for k in 0..=80 {
            let p = s.eval(0.01 * k as f64).unwrap().translation - Vector3::new(0.3, 0.0, 1.0);
            assert!(p.cross(&dir).norm() < 1e-12);
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for order in 2..=6 {
            let s = random_spline(&mut rng, order, 12);
            let (a, b) = s.domain();
            for _ in 0..1000 {
                let t = rng.random_range(a..b);
                let i = s.segment(t).unwrap();
                let sum: f64 = s.basis(i, t).iter().sum();
                assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
                assert!(s.basis(i, t).iter().all(|&w| w >= -1e-15));
            }
        }
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let s = random_spline(&mut rng, 4, 6);
            let (a, b) = s.domain();
            let t = rng.random_range(a..b);
            let ev = s.eval_with_jacobian(t).unwrap();
            let r0 = ev.pose.rotation;
            for (local, jac) in ev.rot_jacobians.iter().enumerate() {
                for axis in 0..3 {
                    let mut delta = Vector3::zeros();
                    delta[axis] = h;
                    let mut sp = s.clone();
                    sp.retract_vertex(ev.first + local, &delta, &Vector3::zeros());
                    let mut sm = s.clone();
                    sm.retract_vertex(ev.first + local, &(-delta), &Vector3::zeros());
                    let rp = (r0.conjugate() * sp.eval(t).unwrap().rotation).log();
                    let rm = (r0.conjugate() * sm.eval(t).unwrap().rotation).log();
                    let fd = (rp - rm) / (2.0 * h);
                    let an = jac.column(axis);
                    let scale = fd.norm().max(an.norm()).max(1e-3);
                    assert!((fd - an).norm() / scale < 1e-5, "fd {fd:?} analytic {an:?}");
                }
            }
        }
    }
}

//! Cost function of the batch refinement and its Gauss-Newton linearization.
//!
//! Parameters are the spline vertices (vertex 0 held fixed to remove the
//! gauge freedom), the extrinsic `X` and the clock offset `dt`. The eye pose
//! predicted at eye time `t` is `S(t + dt) X`. Consecutive hand samples and
//! consecutive eye samples each contribute one relative-motion residual,
//! whitened per rotation/translation sub-block and passed through a Huber
//! loss.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::banded::ArrowSystem;
use super::residual::{compose_jacobians, relative_residual, relative_residual_with_jacobians, retract};
use super::spline::{SplineError, SplineEval, SplinePose};
use crate::screw::{deg2rad, Pose};
use crate::trajectory::Trajectory;

/// Step used for the central-difference `dt` column.
pub const DT_JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RefinementError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("{dropped} of {total} eye observations fall outside the spline domain (limit {limit:.1}%)")]
    TooManyDropped { dropped: usize, total: usize, limit: f64 },
    #[error("need at least two hand and two eye observations, got {hand} and {eye}")]
    TooFewObservations { hand: usize, eye: usize },
    #[error("optimization diverged or stalled after {iterations} iterations: {reason}")]
    DivergedOrStalled { iterations: usize, reason: String },
    #[error("invalid refinement config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub spline_order: usize,
    /// Knot spacing in seconds.
    pub knot_spacing: f64,
    pub hand_sigma_rot_deg: f64,
    pub hand_sigma_trans: f64,
    pub eye_sigma_rot_deg: f64,
    pub eye_sigma_trans: f64,
    pub robust: bool,
    pub huber_rot_deg: f64,
    pub huber_trans: f64,
    pub estimate_dt: bool,
    /// Half-width of the admissible `dt` interval, in eye periods.
    pub dt_trust_periods: f64,
    pub max_iterations: usize,
    /// Relative cost decrease below which the solver stops.
    pub cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Largest fraction of eye samples that may lie outside the spline.
    pub max_dropped_fraction: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            spline_order: 4,
            knot_spacing: 0.1,
            hand_sigma_rot_deg: 0.01,
            hand_sigma_trans: 0.0002,
            eye_sigma_rot_deg: 0.1,
            eye_sigma_trans: 0.002,
            robust: true,
            huber_rot_deg: 0.5,
            huber_trans: 0.02,
            estimate_dt: true,
            dt_trust_periods: 0.5,
            max_iterations: 100,
            cost_tolerance: 1e-9,
            gradient_tolerance: 1e-10,
            max_dropped_fraction: 0.02,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), RefinementError> {
        let positive = [
            ("knot_spacing", self.knot_spacing),
            ("hand_sigma_rot_deg", self.hand_sigma_rot_deg),
            ("hand_sigma_trans", self.hand_sigma_trans),
            ("eye_sigma_rot_deg", self.eye_sigma_rot_deg),
            ("eye_sigma_trans", self.eye_sigma_trans),
            ("huber_rot_deg", self.huber_rot_deg),
            ("huber_trans", self.huber_trans),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RefinementError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.spline_order < 2 {
            return Err(RefinementError::InvalidConfig(format!(
                "spline_order must be at least 2, got {}",
                self.spline_order
            )));
        }
        if !(self.dt_trust_periods >= 0.0) || !(0.0..=1.0).contains(&self.max_dropped_fraction) {
            return Err(RefinementError::InvalidConfig(
                "dt_trust_periods or max_dropped_fraction out of range".into(),
            ));
        }
        Ok(())
    }

    fn hand_scale(&self) -> BlockScale {
        BlockScale::new(
            deg2rad(self.hand_sigma_rot_deg),
            self.hand_sigma_trans,
            deg2rad(self.huber_rot_deg),
            self.huber_trans,
            self.robust,
        )
    }

    fn eye_scale(&self) -> BlockScale {
        BlockScale::new(
            deg2rad(self.eye_sigma_rot_deg),
            self.eye_sigma_trans,
            deg2rad(self.huber_rot_deg),
            self.huber_trans,
            self.robust,
        )
    }
}

/// Whitening and Huber thresholds (in whitened units) of one residual kind.
#[derive(Debug, Clone, Copy)]
struct BlockScale {
    sigma: [f64; 2],
    delta: [f64; 2],
    robust: bool,
}

impl BlockScale {
    fn new(sigma_rot: f64, sigma_trans: f64, huber_rot: f64, huber_trans: f64, robust: bool) -> Self {
        Self {
            sigma: [sigma_rot, sigma_trans],
            delta: [huber_rot / sigma_rot, huber_trans / sigma_trans],
            robust,
        }
    }

    /// Robust cost of a raw residual and the IRLS row scale of each
    /// sub-block (whitening times square-root weight).
    fn apply(&self, r: &Vector6<f64>) -> (f64, [f64; 2]) {
        let mut cost = 0.0;
        let mut scale = [0.0; 2];
        for b in 0..2 {
            let n = r.fixed_rows::<3>(3 * b).norm() / self.sigma[b];
            let d = self.delta[b];
            if !self.robust || n <= d {
                cost += n * n;
                scale[b] = 1.0 / self.sigma[b];
            } else {
                cost += 2.0 * d * n - d * d;
                scale[b] = (d / n).sqrt() / self.sigma[b];
            }
        }
        (cost, scale)
    }
}

/// Current estimate of all refined quantities.
#[derive(Debug, Clone)]
pub struct RefinementState {
    pub spline: SplinePose,
    pub extrinsic: Pose,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub hand: f64,
    pub eye: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.hand + self.eye
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Hand(usize),
    Eye(usize),
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed,
    Band(usize),
    Border(usize),
}

struct Linearized {
    slots: Vec<Slot>,
    jac: DMatrix<f64>,
    r: Vector6<f64>,
}

/// Normal equations `H δ = -g` of the current linearization.
pub struct NormalEquations {
    pub system: ArrowSystem,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct RefinementProblem {
    cfg: RefinementConfig,
    hand: Vec<(f64, Pose)>,
    eye: Vec<(f64, Pose)>,
    vertex_count: usize,
    dt_center: f64,
    dt_radius: f64,
    dropped_eye: usize,
}

impl RefinementProblem {
    /// Selects the observations usable with `spline` for any `dt` within the
    /// trust interval around `dt0`.
    pub fn new(
        hand: &Trajectory,
        eye: &Trajectory,
        spline: &SplinePose,
        dt0: f64,
        cfg: &RefinementConfig,
    ) -> Result<Self, RefinementError> {
        cfg.validate()?;
        let (a, b) = spline.domain();
        let hand_obs: Vec<(f64, Pose)> = hand
            .samples()
            .iter()
            .filter(|s| spline.contains(s.t))
            .map(|s| (s.t, Pose::from(s.pose)))
            .collect();
        let dt_radius = if cfg.estimate_dt {
            cfg.dt_trust_periods * eye.median_period()
        } else {
            0.0
        };
        let margin = 2.0 * DT_JACOBIAN_STEP;
        let lo = a - (dt0 - dt_radius) + margin;
        let hi = b - (dt0 + dt_radius) - margin;
        let eye_obs: Vec<(f64, Pose)> = eye
            .samples()
            .iter()
            .filter(|s| s.t >= lo && s.t <= hi)
            .map(|s| (s.t, Pose::from(s.pose)))
            .collect();
        let total = eye.samples().len();
        let dropped = total - eye_obs.len();
        if dropped as f64 > cfg.max_dropped_fraction * total as f64 {
            return Err(RefinementError::TooManyDropped {
                dropped,
                total,
                limit: 100.0 * cfg.max_dropped_fraction,
            });
        }
        if hand_obs.len() < 2 || eye_obs.len() < 2 {
            return Err(RefinementError::TooFewObservations {
                hand: hand_obs.len(),
                eye: eye_obs.len(),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            hand: hand_obs,
            eye: eye_obs,
            vertex_count: spline.vertex_count(),
            dt_center: dt0,
            dt_radius,
            dropped_eye: dropped,
        })
    }

    pub fn config(&self) -> &RefinementConfig {
        &self.cfg
    }

    pub fn dropped_eye_observations(&self) -> usize {
        self.dropped_eye
    }

    pub fn hand_block_count(&self) -> usize {
        self.hand.len() - 1
    }

    pub fn eye_block_count(&self) -> usize {
        self.eye.len() - 1
    }

    pub fn dt_interval(&self) -> (f64, f64) {
        (self.dt_center - self.dt_radius, self.dt_center + self.dt_radius)
    }

    fn band_dim(&self) -> usize {
        6 * (self.vertex_count - 1)
    }

    fn border_dim(&self) -> usize {
        if self.cfg.estimate_dt {
            7
        } else {
            6
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.band_dim() + self.border_dim()
    }

    fn blocks(&self) -> impl IndexedParallelIterator<Item = Block> + '_ {
        let nh = self.hand_block_count();
        let ne = self.eye_block_count();
        (0..nh + ne)
            .into_par_iter()
            .map(move |i| if i < nh { Block::Hand(i) } else { Block::Eye(i - nh) })
    }

    fn eye_model(&self, state: &RefinementState, t: f64) -> Result<Pose, SplineError> {
        Ok(state.spline.eval(t + state.dt)? * state.extrinsic)
    }

    fn raw_residual(&self, state: &RefinementState, block: Block) -> Result<Vector6<f64>, SplineError> {
        match block {
            Block::Hand(h) => {
                let (ta, oa) = &self.hand[h];
                let (tb, ob) = &self.hand[h + 1];
                Ok(relative_residual(
                    &state.spline.eval(*ta)?,
                    &state.spline.eval(*tb)?,
                    oa,
                    ob,
                ))
            }
            Block::Eye(e) => {
                let (ta, oa) = &self.eye[e];
                let (tb, ob) = &self.eye[e + 1];
                Ok(relative_residual(
                    &self.eye_model(state, *ta)?,
                    &self.eye_model(state, *tb)?,
                    oa,
                    ob,
                ))
            }
        }
    }

    fn scale(&self, block: Block) -> BlockScale {
        match block {
            Block::Hand(_) => self.cfg.hand_scale(),
            Block::Eye(_) => self.cfg.eye_scale(),
        }
    }

    pub fn cost_terms(&self, state: &RefinementState) -> Result<CostTerms, SplineError> {
        let costs: Vec<(bool, f64)> = self
            .blocks()
            .map(|b| {
                let r = self.raw_residual(state, b)?;
                Ok((matches!(b, Block::Hand(_)), self.scale(b).apply(&r).0))
            })
            .collect::<Result<_, SplineError>>()?;
        let mut terms = CostTerms { hand: 0.0, eye: 0.0 };
        for (is_hand, c) in costs {
            if is_hand {
                terms.hand += c;
            } else {
                terms.eye += c;
            }
        }
        Ok(terms)
    }

    pub fn cost(&self, state: &RefinementState) -> Result<f64, SplineError> {
        Ok(self.cost_terms(state)?.total())
    }

    /// Unweighted residuals of every block, hand blocks first.
    pub fn residuals(&self, state: &RefinementState) -> Result<Vec<Vector6<f64>>, SplineError> {
        self.blocks().map(|b| self.raw_residual(state, b)).collect()
    }

    fn vertex_slots(&self, first: usize, nv: usize) -> Vec<Slot> {
        (first..first + nv)
            .flat_map(|v| {
                (0..6).map(move |c| {
                    if v == 0 {
                        Slot::Fixed
                    } else {
                        Slot::Band(6 * (v - 1) + c)
                    }
                })
            })
            .collect()
    }

    fn linearize_block(&self, state: &RefinementState, block: Block) -> Result<Linearized, SplineError> {
        let (ta, tb, oa, ob, shift) = match block {
            Block::Hand(h) => (
                self.hand[h].0,
                self.hand[h + 1].0,
                &self.hand[h].1,
                &self.hand[h + 1].1,
                0.0,
            ),
            Block::Eye(e) => (
                self.eye[e].0,
                self.eye[e + 1].0,
                &self.eye[e].1,
                &self.eye[e + 1].1,
                state.dt,
            ),
        };
        let ev_a = state.spline.eval_with_jacobian(ta + shift)?;
        let ev_b = state.spline.eval_with_jacobian(tb + shift)?;
        let first = ev_a.first.min(ev_b.first);
        let k = state.spline.order();
        let nv = ev_a.first.max(ev_b.first) + k - first;
        let mut slots = self.vertex_slots(first, nv);

        let (r, d_a, d_b) = match block {
            Block::Hand(_) => relative_residual_with_jacobians(&ev_a.pose, &ev_b.pose, oa, ob),
            Block::Eye(_) => {
                let x = &state.extrinsic;
                let (r, j_a, j_b) = relative_residual_with_jacobians(&(ev_a.pose * *x), &(ev_b.pose * *x), oa, ob);
                let (dh_a, dx_a) = compose_jacobians(&ev_a.pose, x);
                let (dh_b, dx_b) = compose_jacobians(&ev_b.pose, x);
                let j_x = j_a * dx_a + j_b * dx_b;
                slots.extend((0..self.border_dim()).map(Slot::Border));
                let mut jac = DMatrix::zeros(6, slots.len());
                chain_spline(&mut jac, first, &ev_a, &(j_a * dh_a));
                chain_spline(&mut jac, first, &ev_b, &(j_b * dh_b));
                jac.view_mut((0, 6 * nv), (6, 6)).copy_from(&j_x);
                if self.cfg.estimate_dt {
                    let col = self.dt_column(state, block)?;
                    jac.view_mut((0, 6 * nv + 6), (6, 1)).copy_from(&col);
                }
                return Ok(self.finish(block, slots, jac, r));
            }
        };
        let mut jac = DMatrix::zeros(6, slots.len());
        chain_spline(&mut jac, first, &ev_a, &d_a);
        chain_spline(&mut jac, first, &ev_b, &d_b);
        Ok(self.finish(block, slots, jac, r))
    }

    fn dt_column(&self, state: &RefinementState, block: Block) -> Result<Vector6<f64>, SplineError> {
        let h = DT_JACOBIAN_STEP;
        let mut plus = state.clone();
        plus.dt += h;
        let mut minus = state.clone();
        minus.dt -= h;
        Ok((self.raw_residual(&plus, block)? - self.raw_residual(&minus, block)?) / (2.0 * h))
    }

    fn finish(&self, block: Block, slots: Vec<Slot>, mut jac: DMatrix<f64>, mut r: Vector6<f64>) -> Linearized {
        let (_, scale) = self.scale(block).apply(&r);
        for row in 0..6 {
            let s = scale[row / 3];
            r[row] *= s;
            jac.row_mut(row).scale_mut(s);
        }
        Linearized { slots, jac, r }
    }

    /// Builds the damped-free normal equations at `state`.
    pub fn linearize(&self, state: &RefinementState) -> Result<NormalEquations, SplineError> {
        let blocks: Vec<Linearized> = self
            .blocks()
            .map(|b| self.linearize_block(state, b))
            .collect::<Result<_, SplineError>>()?;
        let cost = self.cost(state)?;

        let nb = self.band_dim();
        let bw = blocks
            .iter()
            .map(|l| {
                let band: Vec<usize> = l
                    .slots
                    .iter()
                    .filter_map(|s| if let Slot::Band(i) = s { Some(*i) } else { None })
                    .collect();
                match (band.iter().min(), band.iter().max()) {
                    (Some(lo), Some(hi)) => hi - lo,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0);
        let mut system = ArrowSystem::zeros(nb, bw, self.border_dim());
        let mut gradient = DVector::zeros(self.parameter_count());
        for l in &blocks {
            let h = l.jac.transpose() * &l.jac;
            let g = l.jac.transpose() * l.r;
            for (a, sa) in l.slots.iter().enumerate() {
                let ia = match sa {
                    Slot::Fixed => continue,
                    Slot::Band(i) => *i,
                    Slot::Border(i) => nb + i,
                };
                gradient[ia] += g[a];
                for (b, sb) in l.slots.iter().enumerate() {
                    match (sa, sb) {
                        (Slot::Band(i), Slot::Band(j)) if i >= j => system.band.add(*i, *j, h[(a, b)]),
                        (Slot::Band(i), Slot::Border(j)) => system.border[(*i, *j)] += h[(a, b)],
                        (Slot::Border(i), Slot::Border(j)) => system.corner[(*i, *j)] += h[(a, b)],
                        _ => {}
                    }
                }
            }
        }
        Ok(NormalEquations { system, gradient, cost })
    }

    /// Applies a parameter step; `dt` is clamped to the trust interval.
    pub fn retract(&self, state: &RefinementState, delta: &DVector<f64>) -> RefinementState {
        let mut out = state.clone();
        for v in 1..self.vertex_count {
            let o = 6 * (v - 1);
            let dr = Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
            let dp = Vector3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
            out.spline.retract_vertex(v, &dr, &dp);
        }
        let nb = self.band_dim();
        let dx = Vector6::from_iterator((0..6).map(|c| delta[nb + c]));
        out.extrinsic = retract(&state.extrinsic, &dx);
        if self.cfg.estimate_dt {
            let (lo, hi) = self.dt_interval();
            out.dt = (state.dt + delta[nb + 6]).clamp(lo, hi);
        }
        out
    }
}

fn chain_spline(jac: &mut DMatrix<f64>, first: usize, ev: &SplineEval, d_pose: &Matrix6<f64>) {
    let d_rot = d_pose.fixed_view::<6, 3>(0, 0);
    let d_trans = d_pose.fixed_view::<6, 3>(0, 3);
    for (l, (jr, w)) in ev.rot_jacobians.iter().zip(&ev.trans_weights).enumerate() {
        let c = 6 * (ev.first + l - first);
        let mut rot = jac.view_mut((0, c), (6, 3));
        rot += d_rot * jr;
        let mut trans = jac.view_mut((0, c + 3), (6, 3));
        trans += d_trans * *w;
    }
}

//! Synthetic hand/eye trajectory pairs with known extrinsic, clock offset and
//! eye drift.
//!
//! A cubic pose spline is the motion model. The hand is sampled from it
//! directly; the eye is `G ⊗ S(t_e + dt) ⊗ X` on its own clock, with a fixed
//! nontrivial world offset `G`, and then corrupted by cumulative drift.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refinement::{fit_spline, SplineError, SplinePose};
use crate::screw::{deg2rad, DualQuat, Quat};
use crate::trajectory::Trajectory;

pub const MODEL_ORDER: usize = 4;
pub const MODEL_KNOT_SPACING: f64 = 0.1;
/// Length of the preset motions (s).
pub const PRESET_DURATION: f64 = 30.0;
/// Eye samples stay this far (s) from either end of the model domain.
pub const EYE_MARGIN: f64 = 0.5;
pub const MIN_SEED_SPAN: f64 = 10.0;
pub const MAX_LEVEL: u32 = 10;
/// Per-frame translation standard deviation per noise level (m).
pub const TRANS_SIGMA_PER_LEVEL: f64 = 0.0005;
/// Per-frame rotation standard deviation per noise level (deg).
pub const ROT_SIGMA_DEG_PER_LEVEL: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("seed trajectory spans {span:.2} s, need at least {required:.2} s")]
    SpanTooShort { span: f64, required: f64 },
    #[error("motion rotates about fewer than two axes (axis strengths {strengths:?})")]
    InsufficientRotation { strengths: [f64; 3] },
    #[error("noise level {0} outside 0..={MAX_LEVEL}")]
    InvalidLevel(u32),
    #[error("invalid sampling: {0}")]
    InvalidSampling(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Figure8,
    RandomWalk,
    SpinRich,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Figure8, Preset::RandomWalk, Preset::SpinRich];
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Figure8 => "figure8",
            Preset::RandomWalk => "random_walk",
            Preset::SpinRich => "spin_rich",
        })
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "figure8" => Ok(Preset::Figure8),
            "random_walk" => Ok(Preset::RandomWalk),
            "spin_rich" => Ok(Preset::SpinRich),
            _ => Err(format!("unknown preset '{s}' (figure8, random_walk, spin_rich)")),
        }
    }
}

/// How per-frame errors accumulate along the eye trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftModel {
    /// Odometry-style: each observed relative motion carries one fresh
    /// error, `E'_k = E'_{k-1} (E_{k-1}⁻¹ E_k) δ_k`.
    #[default]
    Incremental,
    /// Accumulated error attached to the body frame, `E'_k = E_k D_k` with
    /// `D_k = D_{k-1} δ_k`.
    Body,
}

impl fmt::Display for DriftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftModel::Incremental => "incremental",
            DriftModel::Body => "body",
        })
    }
}

impl FromStr for DriftModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incremental" => Ok(DriftModel::Incremental),
            "body" => Ok(DriftModel::Body),
            _ => Err(format!("unknown drift model '{s}' (incremental, body)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub level: u32,
    /// Per-frame translation standard deviation per axis (m).
    pub trans_sigma: f64,
    /// Per-frame rotation angle standard deviation (deg).
    pub rot_sigma_deg: f64,
    pub rng_seed: u64,
    pub model: DriftModel,
}

impl NoiseLevels {
    pub fn from_level(level: u32, rng_seed: u64) -> Result<Self, SyntheticError> {
        if level > MAX_LEVEL {
            return Err(SyntheticError::InvalidLevel(level));
        }
        Ok(Self {
            level,
            trans_sigma: level as f64 * TRANS_SIGMA_PER_LEVEL,
            rot_sigma_deg: level as f64 * ROT_SIGMA_DEG_PER_LEVEL,
            rng_seed,
            model: DriftModel::default(),
        })
    }

    pub fn with_model(mut self, model: DriftModel) -> Self {
        self.model = model;
        self
    }
}

/// Extrinsic used by the simulator unless told otherwise.
pub fn default_extrinsic() -> DualQuat {
    DualQuat::from_rt(
        &Quat::exp(&Vector3::new(0.35, -0.6, 1.05)),
        &Vector3::new(0.08, -0.15, 0.12),
    )
    .expect("unit rotation")
}

/// Offset between the hand world frame and the eye world frame.
pub fn default_global_offset() -> DualQuat {
    DualQuat::from_rt(
        &Quat::exp(&Vector3::new(-0.3, 0.8, 0.45)),
        &Vector3::new(3.0, -1.5, 0.8),
    )
    .expect("unit rotation")
}

#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub model: SplinePose,
    pub hand: Trajectory,
    pub eye_clean: Trajectory,
    pub eye_noisy: Trajectory,
    pub extrinsic_gt: DualQuat,
    pub dt_gt: f64,
    pub global_offset: DualQuat,
    pub noise: Option<NoiseLevels>,
}

impl GroundTruthBundle {
    /// Replaces the noisy eye trajectory with a drifted copy of the clean
    /// one.
    pub fn with_noise(mut self, noise: &NoiseLevels) -> Self {
        self.eye_noisy = inject_drift(&self.eye_clean, noise);
        self.noise = Some(*noise);
        self
    }

    /// Same motion with the hand marker displaced by `offset` in the hand
    /// frame: hand poses become `H S` and the extrinsic `S⁻¹ X`, while the
    /// eye is untouched.
    pub fn with_marker_shift(&self, offset: &Vector3<f64>) -> Self {
        let s = DualQuat::from_translation(offset);
        let mut out = self.clone();
        out.hand = self.hand.right_multiplied(&s);
        out.extrinsic_gt = &s.inverse() * &self.extrinsic_gt;
        out
    }
}

fn greville(knots: &[f64], order: usize, j: usize) -> f64 {
    knots[j + 1..j + order].iter().sum::<f64>() / (order - 1) as f64
}

/// Spline whose vertices sample `f` at their Greville abscissae.
fn spline_from_fn(duration: f64, f: impl Fn(f64) -> (Vector3<f64>, Vector3<f64>)) -> SplinePose {
    let segments = (duration / MODEL_KNOT_SPACING).round() as usize;
    let knots = SplinePose::uniform_knots(MODEL_ORDER, 0.0, MODEL_KNOT_SPACING, segments);
    let m = knots.len() - MODEL_ORDER;
    let (rot, trans): (Vec<Quat>, Vec<Vector3<f64>>) = (0..m)
        .map(|j| {
            let (r, p) = f(greville(&knots, MODEL_ORDER, j));
            (Quat::exp(&r), p)
        })
        .unzip();
    let mut s = SplinePose::new(MODEL_ORDER, knots, rot, trans).expect("consistent preset layout");
    s.align_signs();
    s
}

/// Procedural motion model. Only `RandomWalk` depends on `seed`.
pub fn preset_model(preset: Preset, seed: u64) -> SplinePose {
    match preset {
        Preset::Figure8 => spline_from_fn(PRESET_DURATION, |t| {
            let w = std::f64::consts::TAU / 10.0;
            let p = Vector3::new(
                1.2 * (w * t).sin(),
                0.6 * (2.0 * w * t).sin(),
                1.4 + 0.25 * (0.5 * w * t).sin(),
            );
            let r = Vector3::new(
                0.5 * (0.9 * t).sin(),
                0.45 * (1.3 * t + 0.5).sin(),
                0.8 * (0.7 * t + 1.0).sin() + 0.3 * (2.0 * w * t).cos(),
            );
            (r, p)
        }),
        Preset::SpinRich => spline_from_fn(PRESET_DURATION, |t| {
            let p = Vector3::new(
                0.4 * (0.8 * t).sin(),
                0.35 * (1.1 * t + 0.4).sin(),
                1.5 + 0.2 * (0.6 * t).cos(),
            );
            let r = Vector3::new(
                1.1 * (1.7 * t).sin(),
                0.9 * (2.3 * t + 0.3).sin(),
                1.2 * (1.1 * t + 0.9).sin(),
            );
            (r, p)
        }),
        Preset::RandomWalk => {
            // mean-reverting random walk on the vertices keeps the motion
            // bounded without a dominant period
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let segments = (PRESET_DURATION / MODEL_KNOT_SPACING).round() as usize;
            let knots = SplinePose::uniform_knots(MODEL_ORDER, 0.0, MODEL_KNOT_SPACING, segments);
            let m = knots.len() - MODEL_ORDER;
            let rot_step = Normal::new(0.0, 0.06).expect("valid sigma");
            let trans_step = Normal::new(0.0, 0.03).expect("valid sigma");
            let mut r = Vector3::zeros();
            let mut v = Vector3::zeros();
            let mut p = Vector3::new(0.0, 0.0, 1.4);
            let mut rot = Vec::with_capacity(m);
            let mut trans = Vec::with_capacity(m);
            for _ in 0..m {
                v = 0.9 * v + Vector3::from_fn(|_, _| rot_step.sample(&mut rng));
                r = 0.97 * r + v;
                p = Vector3::new(0.0, 0.0, 1.4)
                    + 0.97 * (p - Vector3::new(0.0, 0.0, 1.4))
                    + Vector3::from_fn(|_, _| trans_step.sample(&mut rng));
                rot.push(Quat::exp(&r));
                trans.push(p);
            }
            let mut s = SplinePose::new(MODEL_ORDER, knots, rot, trans).expect("consistent preset layout");
            s.align_signs();
            s
        }
    }
}

/// Singular values (descending) of the scatter of rotation increments over
/// `step`-second intervals; one dominant value means single-axis rotation.
pub fn rotation_excitation(traj: &Trajectory, step: f64) -> [f64; 3] {
    let mut scatter = Matrix3::zeros();
    let samples = traj.samples();
    let mut j = 0;
    for i in 0..samples.len() {
        while j < samples.len() && samples[j].t < samples[i].t + step {
            j += 1;
        }
        if j >= samples.len() {
            break;
        }
        let w = (samples[i].pose.real.conjugate() * samples[j].pose.real).log();
        scatter += w * w.transpose();
    }
    let mut sv: Vec<f64> = scatter.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    [sv[0], sv[1], sv[2]]
}

fn check_excitation(strengths: [f64; 3]) -> Result<(), SyntheticError> {
    if !(strengths[0] > 1e-12) || strengths[1] < 1e-3 * strengths[0] {
        return Err(SyntheticError::InsufficientRotation { strengths });
    }
    Ok(())
}

/// Motion model fitted to a recorded trajectory.
pub fn build_motion_model(seed_traj: &Trajectory) -> Result<SplinePose, SyntheticError> {
    let span = seed_traj.duration();
    if span < MIN_SEED_SPAN {
        return Err(SyntheticError::SpanTooShort {
            span,
            required: MIN_SEED_SPAN,
        });
    }
    check_excitation(rotation_excitation(seed_traj, MODEL_KNOT_SPACING))?;
    Ok(fit_spline(seed_traj, MODEL_ORDER, MODEL_KNOT_SPACING)?.spline)
}

/// Noise-free hand and eye trajectories from `model`.
///
/// The hand is sampled at `hand_rate` over the whole model domain. Eye
/// samples sit on a `eye_rate` grid of model times at least [`EYE_MARGIN`]
/// inside the domain; eye timestamps are those model times minus `dt`.
pub fn sample_hand_eye(
    model: &SplinePose,
    extrinsic: &DualQuat,
    dt: f64,
    hand_rate: f64,
    eye_rate: f64,
    global_offset: &DualQuat,
) -> Result<GroundTruthBundle, SyntheticError> {
    if !(hand_rate > 0.0 && eye_rate > 0.0 && dt.is_finite()) {
        return Err(SyntheticError::InvalidSampling(format!(
            "rates {hand_rate}/{eye_rate} Hz, dt {dt}"
        )));
    }
    let (a, b) = model.domain();
    if b - a <= 2.0 * EYE_MARGIN + 2.0 / eye_rate {
        return Err(SyntheticError::InvalidSampling(format!(
            "model span {:.3} s too short",
            b - a
        )));
    }
    let nh = ((b - a) * hand_rate + 1e-9).floor() as usize + 1;
    let hand_t: Vec<f64> = (0..nh).map(|i| a + i as f64 / hand_rate).collect();
    let hand_p = hand_t
        .iter()
        .map(|&t| Ok(model.eval(t)?.to_dual_quat()))
        .collect::<Result<Vec<_>, SplineError>>()?;

    let ne = ((b - a - 2.0 * EYE_MARGIN) * eye_rate + 1e-9).floor() as usize + 1;
    let model_t: Vec<f64> = (0..ne).map(|j| a + EYE_MARGIN + j as f64 / eye_rate).collect();
    let eye_p = model_t
        .iter()
        .map(|&t| Ok(&(global_offset * &model.eval(t)?.to_dual_quat()) * extrinsic))
        .collect::<Result<Vec<_>, SplineError>>()?;
    let eye_t: Vec<f64> = model_t.iter().map(|t| t - dt).collect();

    let hand = Trajectory::from_parts(&hand_t, &hand_p, "hand").expect("increasing grid");
    let eye = Trajectory::from_parts(&eye_t, &eye_p, "eye").expect("increasing grid");
    Ok(GroundTruthBundle {
        model: model.clone(),
        hand,
        eye_noisy: eye.clone(),
        eye_clean: eye,
        extrinsic_gt: *extrinsic,
        dt_gt: dt,
        global_offset: *global_offset,
        noise: None,
    })
}

fn draw_error(rng: &mut ChaCha8Rng, trans: &Normal<f64>, rot: &Normal<f64>) -> DualQuat {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rot.sample(rng);
    let dq = Quat::exp(&(Vector3::from(axis) * angle));
    let dp = Vector3::from_fn(|_, _| trans.sample(rng));
    DualQuat::from_rt(&dq, &dp).expect("unit rotation")
}

/// Adds frame-wise cumulative error. The first pose is left unchanged and
/// the output is a pure function of the inputs and `noise.rng_seed`.
pub fn inject_drift(traj: &Trajectory, noise: &NoiseLevels) -> Trajectory {
    if noise.trans_sigma == 0.0 && noise.rot_sigma_deg == 0.0 {
        return traj.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let trans = Normal::new(0.0, noise.trans_sigma).expect("finite sigma");
    let rot = Normal::new(0.0, deg2rad(noise.rot_sigma_deg)).expect("finite sigma");
    let clean = traj.samples();
    let mut out = Vec::with_capacity(clean.len());
    out.push(clean[0].pose);
    let mut drift = DualQuat::IDENTITY;
    for k in 1..clean.len() {
        let delta = draw_error(&mut rng, &trans, &rot);
        let pose = match noise.model {
            DriftModel::Incremental => {
                let rel = &clean[k - 1].pose.inverse() * &clean[k].pose;
                &(&out[k - 1] * &rel) * &delta
            }
            DriftModel::Body => {
                drift = &drift * &delta;
                &clean[k].pose * &drift
            }
        };
        out.push(pose);
    }
    let times = traj.times();
    Trajectory::from_parts(&times, &out, traj.frame_label()).expect("same timestamps")
}

/// Everything needed to reproduce one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub preset: Preset,
    pub level: u32,
    pub seed: u64,
    pub dt: f64,
    pub hand_rate: f64,
    pub eye_rate: f64,
    pub drift_model: DriftModel,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Figure8,
            level: 0,
            seed: 0,
            dt: 0.0,
            hand_rate: 100.0,
            eye_rate: 20.0,
            drift_model: DriftModel::default(),
        }
    }
}

/// Preset motion, default extrinsic and world offset, drifted eye.
pub fn simulate(cfg: &SimulationConfig) -> Result<GroundTruthBundle, SyntheticError> {
    let noise = NoiseLevels::from_level(cfg.level, cfg.seed)?.with_model(cfg.drift_model);
    let model = preset_model(cfg.preset, cfg.seed);
    let bundle = sample_hand_eye(
        &model,
        &default_extrinsic(),
        cfg.dt,
        cfg.hand_rate,
        cfg.eye_rate,
        &default_global_offset(),
    )?;
    Ok(bundle.with_noise(&noise))
}

/// Uniform random offset in `[-max, max]` drawn from `seed`.
pub fn random_offset(seed: u64, max: f64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5).random_range(-max..=max)
}

//! Robust linear hand-eye calibration on dual quaternions.
//!
//! Relative motions of the hand and eye are paired, each pair contributes a
//! 6×8 block of the homogeneous system `hand_rel ⊗ X = X ⊗ eye_rel`, and
//! RANSAC over two-pair minimal samples selects the model whose weighted
//! inlier system has the cleanest two-dimensional null space (smallest
//! `σ7/σ6`).

pub mod linear;
pub mod pairs;
mod ransac;

use thiserror::Error;

use crate::screw::DualQuat;
use crate::trajectory::Trajectory;

pub use linear::{
    coefficient_block, inlier_check, pair_residual, robust_weight, screw_consistency, solve_dq_svd, stack,
    LinearSolution,
};
pub use pairs::{associate, build_pairs, build_relative_pairs, AlignedSample, Association, PairOptions, PairStrategy};
pub use ransac::ransac_calibrate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("only {found} relative-motion pairs; the motion lacks rotational excitation")]
    NoPairs { found: usize },
    #[error("pair ({i}, {j}) has a near-zero rotation scalar part")]
    DegeneratePair { i: usize, j: usize },
    #[error("stacked system is ill-conditioned (σ6 = {sigma6:.3e}); rotation axes are not diverse enough")]
    IllConditioned { sigma6: f64 },
    #[error("unit/Plücker constraint has no real solution in the null space")]
    QuadraticDegenerate,
    #[error("best consensus has {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("invalid calibration configuration: {0}")]
    InvalidConfig(String),
}

/// Corresponding relative motions of hand and eye between samples `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePosePair {
    pub hand_rel: DualQuat,
    pub eye_rel: DualQuat,
    /// Eye sample indices.
    pub i: usize,
    pub j: usize,
    /// Eye timestamps of the two samples (s).
    pub t_i: f64,
    pub t_j: f64,
    /// Robust weight in `(0, 1]`.
    pub weight: f64,
}

impl RelativePosePair {
    pub fn new(hand_rel: DualQuat, eye_rel: DualQuat, i: usize, j: usize, t_i: f64, t_j: f64) -> Self {
        Self {
            hand_rel: hand_rel.normalized(),
            eye_rel: eye_rel.normalized(),
            i,
            j,
            t_i,
            t_j,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Minimum hand rotation per pair (rad).
    pub eta: f64,
    /// Kernel gain.
    pub mu: f64,
    /// Inlier rotation threshold (rad).
    pub phi: f64,
    /// Inlier translation threshold (m).
    pub psi: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub min_inliers: usize,
    pub strategy: PairStrategy,
    pub robust_kernel: bool,
    pub overlapping: bool,
    pub association: Association,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            eta: 5f64.to_radians(),
            mu: 5.0,
            phi: 0.5f64.to_radians(),
            psi: 0.02,
            max_iterations: 200,
            rng_seed: 0,
            min_inliers: 10,
            strategy: PairStrategy::RotConstr,
            robust_kernel: true,
            overlapping: false,
            association: Association::Nearest,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let positive = [("eta", self.eta), ("mu", self.mu), ("phi", self.phi), ("psi", self.psi)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CalibrationError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(CalibrationError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn pair_options(&self) -> PairOptions {
        PairOptions {
            strategy: self.strategy,
            eta: self.eta,
            overlapping: self.overlapping,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub extrinsic: DualQuat,
    /// Clock offset the pairs were built with (s).
    pub dt: f64,
    /// Inlier flags over `pairs`, judged with the returned extrinsic.
    pub inlier_mask: Vec<bool>,
    /// `σ7/σ6` of the winning weighted system.
    pub quality: f64,
    pub iterations_used: usize,
    pub best_iteration: usize,
    pub pairs: Vec<RelativePosePair>,
    /// Pairs removed because their consistency score was undefined.
    pub dropped_pairs: usize,
}

impl CalibrationResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Per-pair quantities for the diagnostics report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDiagnostic {
    pub i: usize,
    pub j: usize,
    pub t_i: f64,
    pub t_j: f64,
    pub hand_angle: f64,
    pub eye_angle: f64,
    pub consistency: Option<f64>,
    pub weight: f64,
    pub inlier: bool,
    pub residual_angle: f64,
    pub residual_translation: f64,
}

pub fn pair_diagnostics(result: &CalibrationResult) -> Vec<PairDiagnostic> {
    result
        .pairs
        .iter()
        .zip(&result.inlier_mask)
        .map(|(p, &inlier)| {
            let r = pair_residual(&result.extrinsic, p);
            PairDiagnostic {
                i: p.i,
                j: p.j,
                t_i: p.t_i,
                t_j: p.t_j,
                hand_angle: p.hand_rel.rotation_angle(),
                eye_angle: p.eye_rel.rotation_angle(),
                consistency: screw_consistency(p).ok(),
                weight: p.weight,
                inlier,
                residual_angle: r.rotation_angle(),
                residual_translation: r.translation_norm(),
            }
        })
        .collect()
}

/// Sets robust weights in place and drops pairs whose score is undefined.
/// Returns the number of dropped pairs.
pub fn apply_robust_weights(pairs: &mut Vec<RelativePosePair>, mu: f64) -> usize {
    let before = pairs.len();
    pairs.retain_mut(|p| match screw_consistency(p) {
        Ok(e) => {
            p.weight = robust_weight(e, mu);
            true
        }
        Err(_) => false,
    });
    before - pairs.len()
}

/// Full linear stage: associate at `dt`, build pairs, weight them and run
/// RANSAC.
pub fn linear_calibrate(
    hand: &Trajectory,
    eye: &Trajectory,
    dt: f64,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult, CalibrationError> {
    cfg.validate()?;
    let mut pairs = build_relative_pairs(hand, eye, dt, cfg.association, &cfg.pair_options())?;
    let dropped = if cfg.robust_kernel {
        apply_robust_weights(&mut pairs, cfg.mu)
    } else {
        0
    };
    if pairs.len() < 2 {
        return Err(CalibrationError::NoPairs { found: pairs.len() });
    }
    let mut result = ransac_calibrate(pairs, cfg)?;
    result.dt = dt;
    result.dropped_pairs = dropped;
    Ok(result)
}

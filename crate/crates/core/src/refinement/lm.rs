//! Levenberg-Marquardt loop over the refinement problem.

use log::debug;
use nalgebra::DVector;
use serde::Serialize;

use super::fit::fit_spline;
use super::problem::{RefinementConfig, RefinementError, RefinementProblem, RefinementState};
use super::spline::SplinePose;
use crate::screw::{DualQuat, Pose};
use crate::trajectory::Trajectory;

const INITIAL_LAMBDA: f64 = 1e-4;
const MAX_LAMBDA: f64 = 1e12;
const MIN_LAMBDA: f64 = 1e-15;
const DAMPING_FLOOR: f64 = 1e-9;
/// Accepted steps whose largest component (rad, m or s) is below this end
/// the iterations.
const STEP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient infinity norm below tolerance.
    Gradient,
    /// Relative cost decrease below tolerance.
    CostDecrease,
    /// No damping level produced a lower cost; the estimate is a local
    /// minimum to working precision.
    NoImprovingStep,
    /// Accepted step below working precision.
    SmallStep,
    MaxIterations,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Gradient => "gradient",
            Termination::CostDecrease => "cost_decrease",
            Termination::NoImprovingStep => "no_improving_step",
            Termination::SmallStep => "small_step",
            Termination::MaxIterations => "max_iterations",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub iterations: usize,
    pub rejected_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
    /// The `dt` column of the Jacobian comes from central differences.
    pub numeric_dt_jacobian: bool,
    pub dropped_eye_observations: usize,
    pub hand_residuals: usize,
    pub eye_residuals: usize,
    pub spline_vertices: usize,
    /// Largest hand position error of the initial spline fit (m).
    pub spline_fit_position_residual: f64,
    /// Largest hand rotation error of the initial spline fit (rad).
    pub spline_fit_rotation_residual: f64,
}

#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub extrinsic: DualQuat,
    pub dt: f64,
    pub spline: SplinePose,
    pub report: RefinementReport,
}

/// Fits a spline to the hand trajectory and jointly refines it with the
/// extrinsic and clock offset, starting from a linear estimate.
pub fn refine(
    hand: &Trajectory,
    eye: &Trajectory,
    extrinsic: &DualQuat,
    dt: f64,
    cfg: &RefinementConfig,
) -> Result<RefinementResult, RefinementError> {
    cfg.validate()?;
    let fit = fit_spline(hand, cfg.spline_order, cfg.knot_spacing)?;
    let mut result = refine_with_spline(hand, eye, fit.spline, extrinsic, dt, cfg)?;
    result.report.spline_fit_position_residual = fit.max_position_residual;
    result.report.spline_fit_rotation_residual = fit.max_rotation_residual;
    Ok(result)
}

/// Refinement from a caller-supplied initial spline.
pub fn refine_with_spline(
    hand: &Trajectory,
    eye: &Trajectory,
    spline: SplinePose,
    extrinsic: &DualQuat,
    dt: f64,
    cfg: &RefinementConfig,
) -> Result<RefinementResult, RefinementError> {
    let problem = RefinementProblem::new(hand, eye, &spline, dt, cfg)?;
    let state = RefinementState {
        spline,
        extrinsic: Pose::from(*extrinsic),
        dt,
    };
    let (state, mut report) = solve(&problem, state)?;
    report.spline_vertices = state.spline.vertex_count();
    Ok(RefinementResult {
        extrinsic: state.extrinsic.to_dual_quat(),
        dt: state.dt,
        spline: state.spline,
        report,
    })
}

fn stalled(iterations: usize, reason: impl Into<String>) -> RefinementError {
    RefinementError::DivergedOrStalled {
        iterations,
        reason: reason.into(),
    }
}

/// Runs the damped Gauss-Newton iterations. The cost never increases
/// between accepted iterations.
pub fn solve(
    problem: &RefinementProblem,
    mut state: RefinementState,
) -> Result<(RefinementState, RefinementReport), RefinementError> {
    let cfg = problem.config();
    let mut cost = problem.cost(&state)?;
    if !cost.is_finite() {
        return Err(stalled(0, "initial cost is not finite"));
    }
    let mut report = RefinementReport {
        iterations: 0,
        rejected_steps: 0,
        initial_cost: cost,
        final_cost: cost,
        cost_history: vec![cost],
        termination: Termination::MaxIterations,
        numeric_dt_jacobian: cfg.estimate_dt,
        dropped_eye_observations: problem.dropped_eye_observations(),
        hand_residuals: problem.hand_block_count(),
        eye_residuals: problem.eye_block_count(),
        spline_vertices: 0,
        spline_fit_position_residual: 0.0,
        spline_fit_rotation_residual: 0.0,
    };
    let mut lambda = INITIAL_LAMBDA;

    'outer: while report.iterations < cfg.max_iterations {
        let ne = problem.linearize(&state)?;
        let grad_norm = ne.gradient.amax();
        if !grad_norm.is_finite() {
            return Err(stalled(report.iterations, "non-finite gradient"));
        }
        if grad_norm < cfg.gradient_tolerance || cost <= f64::MIN_POSITIVE {
            report.termination = Termination::Gradient;
            break;
        }
        let diag = ne.system.diagonal();
        let max_diag = diag.iter().cloned().fold(0.0, f64::max);
        let floor = DAMPING_FLOOR * max_diag.max(1.0);
        let rhs: DVector<f64> = -&ne.gradient;
        loop {
            let mut damped = ne.system.clone();
            for (i, d) in diag.iter().enumerate() {
                damped.add_diagonal(i, lambda * d.max(floor));
            }
            let step = damped.solve(&rhs).ok().filter(|s| s.iter().all(|v| v.is_finite()));
            if let Some(step) = step {
                let candidate = problem.retract(&state, &step);
                let new_cost = problem.cost(&candidate)?;
                if new_cost.is_finite() && new_cost < cost {
                    let decrease = (cost - new_cost) / cost;
                    state = candidate;
                    cost = new_cost;
                    report.iterations += 1;
                    report.cost_history.push(cost);
                    lambda = (lambda / 10.0).max(MIN_LAMBDA);
                    debug!("iteration {}: cost {cost:.6e}, lambda {lambda:.1e}", report.iterations);
                    if step.amax() < STEP_TOLERANCE {
                        report.termination = Termination::SmallStep;
                        break 'outer;
                    }
                    if decrease < cfg.cost_tolerance {
                        report.termination = Termination::CostDecrease;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            report.rejected_steps += 1;
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                report.termination = Termination::NoImprovingStep;
                break 'outer;
            }
        }
    }
    report.final_cost = cost;
    Ok((state, report))
}

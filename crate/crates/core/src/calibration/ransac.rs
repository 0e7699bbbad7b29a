use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::linear::{inlier_check, rotation_axis, solve_dq_svd, stack, LinearSolution};
use super::{CalibrationConfig, CalibrationError, CalibrationResult, RelativePosePair};

/// Two sampled hand axes closer than this to parallel (sine of 1°) are
/// resampled.
const PARALLEL_SINE: f64 = 0.017_452_406_437_283_512;

const MAX_RESAMPLES: usize = 50;

enum Outcome {
    Model { solution: LinearSolution, inliers: usize },
    TooFewInliers(usize),
    Degenerate,
}

fn draw_sample(rng: &mut ChaCha8Rng, pairs: &[RelativePosePair]) -> Option<(usize, usize)> {
    let n = pairs.len();
    for _ in 0..MAX_RESAMPLES {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let axis_a = rotation_axis(&pairs[a].hand_rel);
        let axis_b = rotation_axis(&pairs[b].hand_rel);
        if axis_a.cross(&axis_b).norm() >= PARALLEL_SINE {
            return Some((a, b));
        }
    }
    None
}

fn run_iteration(iteration: usize, pairs: &[RelativePosePair], cfg: &CalibrationConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(iteration as u64);
    let Some((a, b)) = draw_sample(&mut rng, pairs) else {
        return Outcome::Degenerate;
    };
    let Ok(init) = solve_dq_svd(&stack(&[&pairs[a], &pairs[b]], None)) else {
        return Outcome::Degenerate;
    };
    let inliers: Vec<&RelativePosePair> = pairs
        .iter()
        .filter(|p| inlier_check(&init.extrinsic, p, cfg.phi, cfg.psi))
        .collect();
    if inliers.len() < cfg.min_inliers.max(2) {
        return Outcome::TooFewInliers(inliers.len());
    }
    let weights: Vec<f64> = inliers.iter().map(|p| p.weight).collect();
    match solve_dq_svd(&stack(&inliers, Some(&weights))) {
        Ok(solution) => Outcome::Model {
            solution,
            inliers: inliers.len(),
        },
        Err(_) => Outcome::Degenerate,
    }
}

/// RANSAC over two-pair minimal samples. Iterations are independent (RNG
/// stream = iteration index) and run in parallel; the best model is chosen
/// by `(σ7/σ6, iteration)`, so the result does not depend on scheduling.
pub fn ransac_calibrate(
    pairs: Vec<RelativePosePair>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult, CalibrationError> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(CalibrationError::NoPairs { found: pairs.len() });
    }
    let outcomes: Vec<Outcome> = (0..cfg.max_iterations)
        .into_par_iter()
        .map(|k| run_iteration(k, &pairs, cfg))
        .collect();

    let mut best: Option<(usize, LinearSolution)> = None;
    let mut most_inliers = 0;
    let mut any_consensus_attempt = false;
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Model { solution, inliers } => {
                most_inliers = most_inliers.max(inliers);
                if best.as_ref().is_none_or(|(_, b)| solution.quality < b.quality) {
                    best = Some((k, solution));
                }
            }
            Outcome::TooFewInliers(n) => {
                any_consensus_attempt = true;
                most_inliers = most_inliers.max(n);
            }
            Outcome::Degenerate => {}
        }
    }
    let Some((best_iteration, solution)) = best else {
        if any_consensus_attempt {
            return Err(CalibrationError::NoConsensus {
                best: most_inliers,
                required: cfg.min_inliers,
            });
        }
        return Err(CalibrationError::IllConditioned { sigma6: 0.0 });
    };
    log::debug!(
        "ransac: best iteration {best_iteration}, quality {:.3e}, largest consensus {most_inliers}",
        solution.quality
    );

    let inlier_mask = pairs
        .iter()
        .map(|p| inlier_check(&solution.extrinsic, p, cfg.phi, cfg.psi))
        .collect();
    Ok(CalibrationResult {
        extrinsic: solution.extrinsic,
        dt: 0.0,
        inlier_mask,
        quality: solution.quality,
        iterations_used: cfg.max_iterations,
        best_iteration,
        pairs,
        dropped_pairs: 0,
    })
}

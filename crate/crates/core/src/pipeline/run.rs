//! Stage runners and the end-to-end pipeline with its output files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use super::config::RunConfig;
use super::result_file::ResultFile;
use crate::calibration::{linear_calibrate, pair_diagnostics, CalibrationResult};
use crate::metrics::{align_and_evaluate, compute_ape_are, transform_ground_truth, AlignmentSE3, MetricReport};
use crate::refinement::{refine, RefinementResult};
use crate::screw::{rad2deg, DualQuat};
use crate::time_alignment::{estimate_time_offset, TimeOffsetEstimate, RELIABLE_PEAK};
use crate::trajectory::{read_trajectory, write_tum_file, Trajectory, TrajectoryFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Align,
    Calibrate,
    Refine,
    Evaluate,
}

impl Stage {
    /// Process exit status reported for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Ingest => 1,
            Stage::Align => 2,
            Stage::Calibrate => 3,
            Stage::Refine => 4,
            Stage::Evaluate => 5,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Align => "align",
            Stage::Calibrate => "calibrate",
            Stage::Refine => "refine",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when unset.
/// Results never depend on the thread count.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                warn!("cannot build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}

pub fn load_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory, PipelineError> {
    read_trajectory(path, format).map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", path.display())))
}

/// Reads both inputs and expresses the eye timestamps relative to the hand
/// epoch, so that `dt` is a plain clock offset.
pub fn load_pair(
    hand: &Path,
    hand_format: TrajectoryFormat,
    eye: &Path,
    eye_format: TrajectoryFormat,
) -> Result<(Trajectory, Trajectory), PipelineError> {
    let hand = load_trajectory(hand, hand_format)?;
    let eye = load_trajectory(eye, eye_format)?;
    let eye = eye.rebased(hand.epoch_ns());
    Ok((hand, eye))
}

fn required_path(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
    path.clone()
        .ok_or_else(|| PipelineError::new(Stage::Ingest, format!("no {what} trajectory given")))
}

/// Time alignment with the reliability gate. An unreliable peak is an error
/// unless `force` is set.
pub fn align_stage(hand: &Trajectory, eye: &Trajectory, cfg: &RunConfig) -> Result<TimeOffsetEstimate, PipelineError> {
    let est =
        estimate_time_offset(hand, eye, &cfg.align.to_config()).map_err(|e| PipelineError::new(Stage::Align, e))?;
    if !est.is_reliable() {
        let msg = format!(
            "peak correlation {:.3} is below {RELIABLE_PEAK}; the offset {:.6} s is unreliable",
            est.peak_correlation, est.dt
        );
        if !cfg.align.force {
            return Err(PipelineError::new(
                Stage::Align,
                format!("{msg} (use --force to continue)"),
            ));
        }
        warn!("{msg}; continuing because force is set");
    }
    Ok(est)
}

pub fn calibrate_stage(
    hand: &Trajectory,
    eye: &Trajectory,
    dt: f64,
    cfg: &RunConfig,
) -> Result<CalibrationResult, PipelineError> {
    linear_calibrate(hand, eye, dt, &cfg.calibration.to_config()).map_err(|e| PipelineError::new(Stage::Calibrate, e))
}

pub fn refine_stage(
    hand: &Trajectory,
    eye: &Trajectory,
    extrinsic: &DualQuat,
    dt: f64,
    cfg: &RunConfig,
) -> Result<RefinementResult, PipelineError> {
    refine(hand, eye, extrinsic, dt, &cfg.refinement).map_err(|e| PipelineError::new(Stage::Refine, e))
}

/// Maps the hand trajectory through the calibration and compares it with the
/// eye trajectory.
pub fn evaluate_stage(
    hand: &Trajectory,
    eye: &Trajectory,
    extrinsic: &DualQuat,
    dt: f64,
    cfg: &RunConfig,
) -> Result<(Option<AlignmentSE3>, MetricReport), PipelineError> {
    let gt = transform_ground_truth(hand, extrinsic, dt);
    let max_dt = cfg.evaluation.max_dt_ms * 1e-3;
    let err = |e| PipelineError::new(Stage::Evaluate, e);
    if cfg.evaluation.umeyama {
        let (align, report) = align_and_evaluate(eye, &gt, max_dt, cfg.evaluation.with_scale).map_err(err)?;
        Ok((Some(align), report))
    } else {
        Ok((None, compute_ape_are(eye, &gt, max_dt).map_err(err)?))
    }
}

/// Result file for the linear stage.
pub fn linear_result_file(res: &CalibrationResult, align: Option<&TimeOffsetEstimate>) -> ResultFile {
    let mut f = ResultFile::new(res.extrinsic, res.dt);
    f.set("stage", "linear")
        .set("quality", res.quality)
        .set("inliers", res.inlier_count())
        .set("pairs", res.pairs.len())
        .set("dropped_pairs", res.dropped_pairs)
        .set("ransac_iterations", res.iterations_used)
        .set("best_iteration", res.best_iteration);
    if let Some(a) = align {
        f.set("peak_correlation", a.peak_correlation);
    }
    f
}

/// Result file for the refined stage.
pub fn refined_result_file(res: &RefinementResult) -> ResultFile {
    let r = &res.report;
    let mut f = ResultFile::new(res.extrinsic, res.dt);
    f.set("stage", "refined")
        .set("initial_cost", r.initial_cost)
        .set("final_cost", r.final_cost)
        .set("iterations", r.iterations)
        .set("termination", r.termination)
        .set("dropped_eye_observations", r.dropped_eye_observations);
    f
}

/// Human-readable convergence report of the refinement.
pub fn convergence_text(res: &RefinementResult) -> String {
    let r = &res.report;
    let mut s = String::new();
    s.push_str(&format!("termination: {}\n", r.termination));
    s.push_str(&format!(
        "iterations: {} ({} rejected steps)\n",
        r.iterations, r.rejected_steps
    ));
    s.push_str(&format!("initial cost: {:.9e}\n", r.initial_cost));
    s.push_str(&format!("final cost: {:.9e}\n", r.final_cost));
    s.push_str(&format!(
        "residuals: {} hand, {} eye ({} eye observations outside the spline domain)\n",
        r.hand_residuals, r.eye_residuals, r.dropped_eye_observations
    ));
    s.push_str(&format!(
        "spline: {} vertices, fit residual {:.3e} m / {:.3e} deg\n",
        r.spline_vertices,
        r.spline_fit_position_residual,
        rad2deg(r.spline_fit_rotation_residual)
    ));
    s.push_str(&format!(
        "dt jacobian: {}\n",
        if r.numeric_dt_jacobian {
            "central difference"
        } else {
            "not estimated"
        }
    ));
    s.push_str("cost history:");
    for c in &r.cost_history {
        s.push_str(&format!(" {c:.6e}"));
    }
    s.push('\n');
    s
}

#[derive(Serialize)]
struct PairRow {
    i: usize,
    j: usize,
    t_i: f64,
    t_j: f64,
    hand_angle_deg: f64,
    eye_angle_deg: f64,
    consistency: Option<f64>,
    weight: f64,
    inlier: bool,
    residual_angle_deg: f64,
    residual_translation: f64,
}

pub fn write_pair_diagnostics(res: &CalibrationResult, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for d in pair_diagnostics(res) {
        w.serialize(PairRow {
            i: d.i,
            j: d.j,
            t_i: d.t_i,
            t_j: d.t_j,
            hand_angle_deg: rad2deg(d.hand_angle),
            eye_angle_deg: rad2deg(d.eye_angle),
            consistency: d.consistency,
            weight: d.weight,
            inlier: d.inlier,
            residual_angle_deg: rad2deg(d.residual_angle),
            residual_translation: d.residual_translation,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ErrorRow {
    t: f64,
    position_error: f64,
    rotation_error_deg: f64,
}

pub fn write_sample_errors(report: &MetricReport, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for ((&t, &p), &r) in report
        .times
        .iter()
        .zip(&report.position_errors)
        .zip(&report.rotation_errors_deg)
    {
        w.serialize(ErrorRow {
            t,
            position_error: p,
            rotation_error_deg: r,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_text(report: &MetricReport, align: Option<&AlignmentSE3>) -> String {
    let mut s = String::new();
    s.push_str(&format!("ape_rmse_m = {}\n", report.ape_rmse));
    s.push_str(&format!("are_rmse_deg = {}\n", report.are_rmse));
    s.push_str(&format!("matched = {}\n", report.matched_count));
    s.push_str(&format!("unmatched = {}\n", report.unmatched_count));
    if let Some(a) = align {
        s.push_str(&format!("alignment_scale = {}\n", a.scale));
        let t = a.translation;
        s.push_str(&format!("alignment_translation = {} {} {}\n", t.x, t.y, t.z));
    }
    s
}

/// Configuration echo plus everything needed to repeat a run.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: &'a C,
}

impl<C: Serialize> Manifest<'_, C> {
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }
}

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `manifest.toml` into `out`.
pub fn write_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    cfg: &C,
    inputs: &[&Path],
    outputs: &[&str],
) -> std::io::Result<()> {
    let manifest = Manifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        command,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: cfg,
    };
    let text = manifest.to_toml().map_err(std::io::Error::other)?;
    fs::write(out.join("manifest.toml"), text)
}

fn output_error<E: fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, format!("writing outputs: {e}"))
}

pub fn create_out_dir(out: &Path, stage: Stage) -> Result<(), PipelineError> {
    fs::create_dir_all(out).map_err(|e| PipelineError::new(stage, format!("cannot create {}: {e}", out.display())))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub alignment: Option<TimeOffsetEstimate>,
    pub linear: CalibrationResult,
    pub refined: Option<RefinementResult>,
    pub metrics: Option<MetricReport>,
    /// Final extrinsic and offset (refined when refinement ran).
    pub extrinsic: DualQuat,
    pub dt: f64,
    pub files: Vec<PathBuf>,
}

/// Align, calibrate, optionally refine, optionally evaluate, then write all
/// artifacts under `cfg.out`. Nothing is written unless every stage
/// succeeds.
pub fn run_full_pipeline(cfg: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let hand_path = required_path(&cfg.hand, "hand")?;
    let eye_path = required_path(&cfg.eye, "eye")?;
    let (hand, eye) = load_pair(&hand_path, cfg.hand_format, &eye_path, cfg.eye_format)?;
    info!("loaded {} hand and {} eye poses", hand.len(), eye.len());

    with_jobs(cfg.jobs, || {
        let alignment = match cfg.align.fixed_dt {
            Some(_) => None,
            None => Some(align_stage(&hand, &eye, cfg)?),
        };
        let dt0 = cfg.align.fixed_dt.or(alignment.map(|a| a.dt)).unwrap_or(0.0);
        info!("time offset {dt0:.6} s");

        let linear = calibrate_stage(&hand, &eye, dt0, cfg)?;
        info!(
            "linear extrinsic with {} of {} pairs as inliers, quality {:.3e}",
            linear.inlier_count(),
            linear.pairs.len(),
            linear.quality
        );

        let refined = if cfg.refine {
            let r = refine_stage(&hand, &eye, &linear.extrinsic, dt0, cfg)?;
            info!(
                "refined in {} iterations, cost {:.4e} -> {:.4e}",
                r.report.iterations, r.report.initial_cost, r.report.final_cost
            );
            Some(r)
        } else {
            None
        };
        let (extrinsic, dt) = match &refined {
            Some(r) => (r.extrinsic, r.dt),
            None => (linear.extrinsic, linear.dt),
        };

        let evaluation = if cfg.evaluation.enabled {
            Some(evaluate_stage(&hand, &eye, &extrinsic, dt, cfg)?)
        } else {
            None
        };

        let out = &cfg.out;
        create_out_dir(out, Stage::Evaluate)?;
        let mut names: Vec<&str> = Vec::new();

        let linear_file = linear_result_file(&linear, alignment.as_ref());
        linear_file
            .write(out.join("result_linear.txt"))
            .map_err(output_error(Stage::Calibrate))?;
        write_pair_diagnostics(&linear, &out.join("pairs.csv")).map_err(output_error(Stage::Calibrate))?;
        names.extend(["result_linear.txt", "pairs.csv"]);

        let final_file = match &refined {
            Some(r) => {
                fs::write(out.join("refinement.txt"), convergence_text(r)).map_err(output_error(Stage::Refine))?;
                names.push("refinement.txt");
                refined_result_file(r)
            }
            None => linear_file,
        };
        final_file
            .write(out.join("result.txt"))
            .map_err(output_error(Stage::Refine))?;
        names.push("result.txt");

        let metrics = match evaluation {
            Some((align, report)) => {
                fs::write(out.join("metrics.txt"), metrics_text(&report, align.as_ref()))
                    .map_err(output_error(Stage::Evaluate))?;
                write_sample_errors(&report, &out.join("errors.csv")).map_err(output_error(Stage::Evaluate))?;
                names.extend(["metrics.txt", "errors.csv"]);
                Some(report)
            }
            None => None,
        };
        names.push("manifest.toml");
        write_manifest(out, "run", cfg, &[&hand_path, &eye_path], &names).map_err(output_error(Stage::Evaluate))?;

        Ok(PipelineOutput {
            alignment,
            linear,
            refined,
            metrics,
            extrinsic,
            dt,
            files: names.iter().map(|n| out.join(n)).collect(),
        })
    })
}

/// Writes `traj` in TUM format, mapping failures to `stage`.
pub fn write_trajectory(traj: &Trajectory, path: &Path, stage: Stage) -> Result<(), PipelineError> {
    write_tum_file(traj, path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use handeye::calibration::{Association, PairStrategy};
use handeye::pipeline::ablation::{self, AblationGrid, Variant};
use handeye::pipeline::run::{
    align_stage, calibrate_stage, convergence_text, create_out_dir, evaluate_stage, linear_result_file, load_pair,
    metrics_text, refine_stage, refined_result_file, write_manifest, write_pair_diagnostics, write_sample_errors,
    write_trajectory,
};
use handeye::pipeline::{run_full_pipeline, with_jobs, PipelineError, ResultFile, RunConfig, Stage};
use handeye::synthetic::{random_offset, simulate, DriftModel, Preset, SimulationConfig};
use handeye::TrajectoryFormat;

/// Exit status for malformed command lines.
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "handeye",
    version,
    about = "Spatiotemporal hand-eye calibration of trajectory pairs"
)]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the clock offset between hand and eye.
    Align(AlignCmd),
    /// Time alignment followed by the robust linear calibration.
    Calibrate(CalibrateCmd),
    /// Joint refinement of extrinsic and offset from an initial result.
    Refine(RefineCmd),
    /// APE/ARE of an estimated trajectory against a calibrated reference.
    Evaluate(EvaluateCmd),
    /// Write a simulated hand/eye pair with known calibration.
    Simulate(SimulateCmd),
    /// Monte Carlo comparison of pair strategies on simulated data.
    Ablate(AblateCmd),
    /// Align, calibrate, refine and evaluate in one go.
    Run(RunCmd),
}

#[derive(Args)]
struct InputArgs {
    /// Reference (hand) trajectory.
    #[arg(long, value_name = "FILE")]
    hand: Option<PathBuf>,
    /// Estimated (eye) trajectory.
    #[arg(long, value_name = "FILE")]
    eye: Option<PathBuf>,
    /// Parser for both inputs.
    #[arg(long, value_name = "tum|euroc")]
    format: Option<TrajectoryFormat>,
    #[arg(long, value_name = "tum|euroc")]
    hand_format: Option<TrajectoryFormat>,
    #[arg(long, value_name = "tum|euroc")]
    eye_format: Option<TrajectoryFormat>,
}

#[derive(Args)]
struct AlignArgs {
    /// Correlation rate (Hz); defaults to the slower input rate.
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
    /// Minimum overlap between the trajectories (s).
    #[arg(long, value_name = "S")]
    min_overlap: Option<f64>,
    /// Keep the integer correlation peak.
    #[arg(long)]
    no_peak_refinement: bool,
    /// Continue even if the correlation peak is unreliable.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CalibArgs {
    /// Minimum hand rotation per pair (deg).
    #[arg(long, value_name = "DEG")]
    eta: Option<f64>,
    /// Robust kernel gain.
    #[arg(long, value_name = "F")]
    mu: Option<f64>,
    /// Inlier rotation threshold (deg).
    #[arg(long, value_name = "DEG")]
    phi: Option<f64>,
    /// Inlier translation threshold (m).
    #[arg(long, value_name = "M")]
    psi: Option<f64>,
    /// RANSAC iterations.
    #[arg(long, value_name = "N")]
    iters: Option<usize>,
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    min_inliers: Option<usize>,
    #[arg(long, value_name = "rotconstr|global|interframe")]
    strategy: Option<PairStrategy>,
    #[arg(long)]
    no_robust_kernel: bool,
    /// Advance the rotation-constrained anchor by one sample.
    #[arg(long)]
    overlapping: bool,
    #[arg(long, value_name = "nearest|interpolate")]
    association: Option<Association>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long, value_name = "S")]
    knot_spacing: Option<f64>,
    /// Spline order (4 = cubic).
    #[arg(long, value_name = "K")]
    order: Option<usize>,
    /// Keep the clock offset fixed.
    #[arg(long)]
    fixed_dt: bool,
    #[arg(long, value_name = "N")]
    max_iterations: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimate a scale in the world-frame alignment (monocular VO).
    #[arg(long)]
    with_scale: bool,
    /// Association window (ms).
    #[arg(long, value_name = "MS")]
    max_dt: Option<f64>,
    /// Skip the world-frame alignment (inputs share a world frame).
    #[arg(long)]
    no_alignment: bool,
}

#[derive(Args)]
struct AlignCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Args)]
struct CalibrateCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    align: AlignArgs,
    #[command(flatten)]
    calib: CalibArgs,
    /// Use this clock offset (s) instead of estimating it.
    #[arg(long, value_name = "S", allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineCmd {
    #[command(flatten)]
    input: InputArgs,
    /// Initial result file.
    #[arg(long, value_name = "FILE")]
    init: PathBuf,
    #[command(flatten)]
    refine: RefineArgs,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Estimated trajectory.
    #[arg(long, value_name = "FILE")]
    est: PathBuf,
    /// Raw reference trajectory.
    #[arg(long, value_name = "FILE")]
    gt_raw: PathBuf,
    /// Calibration result file.
    #[arg(long, value_name = "FILE")]
    calib: PathBuf,
    #[arg(long, value_name = "tum|euroc")]
    format: Option<TrajectoryFormat>,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long, default_value = "figure8", value_name = "figure8|random_walk|spin_rich")]
    preset: Preset,
    /// Noise level 0..=10.
    #[arg(long, default_value_t = 0)]
    level: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clock offset (s); defaults to a seeded draw in ±2 s.
    #[arg(long, value_name = "S", allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, default_value = "incremental", value_name = "incremental|body")]
    drift_model: DriftModel,
    #[arg(long, default_value_t = 100.0, value_name = "HZ")]
    hand_rate: f64,
    #[arg(long, default_value_t = 20.0, value_name = "HZ")]
    eye_rate: f64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateCmd {
    /// Noise levels, e.g. `0-10` or `0,5,10`.
    #[arg(long, default_value = "0-10")]
    levels: String,
    /// Seeds 0..N per cell.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Variants to compare; defaults to the four pair strategies.
    #[arg(long, value_delimiter = ',', value_name = "NAME")]
    variants: Vec<String>,
    /// Add rotation-threshold variants (deg) with the kernel on.
    #[arg(long, value_delimiter = ',', value_name = "DEG")]
    eta: Vec<f64>,
    #[arg(long, default_value = "figure8")]
    preset: Preset,
    #[arg(long, default_value = "incremental")]
    drift_model: DriftModel,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    align: AlignArgs,
    #[command(flatten)]
    calib: CalibArgs,
    #[command(flatten)]
    refine: RefineArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// Stop after the linear stage.
    #[arg(long)]
    no_refine: bool,
    /// Skip the metric evaluation.
    #[arg(long)]
    no_evaluate: bool,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Stage(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Stage(e)
    }
}

type CmdResult = Result<(), Failure>;

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    Ok(cfg)
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.hand {
            cfg.hand = Some(p.clone());
        }
        if let Some(p) = &self.eye {
            cfg.eye = Some(p.clone());
        }
        if let Some(f) = self.format {
            cfg.hand_format = f;
            cfg.eye_format = f;
        }
        if let Some(f) = self.hand_format {
            cfg.hand_format = f;
        }
        if let Some(f) = self.eye_format {
            cfg.eye_format = f;
        }
    }
}

impl AlignArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let a = &mut cfg.align;
        if self.rate.is_some() {
            a.rate = self.rate;
        }
        if let Some(v) = self.min_overlap {
            a.min_overlap = v;
        }
        if self.no_peak_refinement {
            a.refine_peak = false;
        }
        if self.force {
            a.force = true;
        }
    }
}

impl CalibArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.calibration;
        if let Some(v) = self.eta {
            c.eta_deg = v;
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.phi {
            c.phi_deg = v;
        }
        if let Some(v) = self.psi {
            c.psi = v;
        }
        if let Some(v) = self.iters {
            c.max_iterations = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.min_inliers {
            c.min_inliers = v;
        }
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if self.no_robust_kernel {
            c.robust_kernel = false;
        }
        if self.overlapping {
            c.overlapping = true;
        }
        if let Some(v) = self.association {
            c.association = v;
        }
    }
}

impl RefineArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let r = &mut cfg.refinement;
        if let Some(v) = self.knot_spacing {
            r.knot_spacing = v;
        }
        if let Some(v) = self.order {
            r.spline_order = v;
        }
        if self.fixed_dt {
            r.estimate_dt = false;
        }
        if let Some(v) = self.max_iterations {
            r.max_iterations = v;
        }
    }
}

impl EvalArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let e = &mut cfg.evaluation;
        if self.with_scale {
            e.with_scale = true;
        }
        if let Some(v) = self.max_dt {
            e.max_dt_ms = v;
        }
        if self.no_alignment {
            e.umeyama = false;
        }
    }
}

fn inputs(cfg: &RunConfig) -> Result<(PathBuf, PathBuf), Failure> {
    match (&cfg.hand, &cfg.eye) {
        (Some(h), Some(e)) => Ok((h.clone(), e.clone())),
        _ => Err(Failure::Usage(
            "both --hand and --eye are required (flag or config)".into(),
        )),
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &mut RunConfig) -> PathBuf {
    if let Some(o) = flag {
        cfg.out = o.clone();
    }
    cfg.out.clone()
}

fn write_failure<E: std::fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, format!("writing outputs: {e}"))
}

fn cmd_align(cli: &Cli, cmd: &AlignCmd) -> CmdResult {
    let mut cfg = base_config(cli)?;
    cmd.input.apply(&mut cfg);
    cmd.align.apply(&mut cfg);
    let (hp, ep) = inputs(&cfg)?;
    let (hand, eye) = load_pair(&hp, cfg.hand_format, &ep, cfg.eye_format)?;
    let est = with_jobs(cfg.jobs, || align_stage(&hand, &eye, &cfg))?;
    println!("dt = {}", est.dt);
    println!("peak_correlation = {}", est.peak_correlation);
    println!("dt_unrefined = {}", est.dt_unrefined);
    println!("rate = {}", est.rate);
    println!("reliable = {}", est.is_reliable());
    Ok(())
}

fn cmd_calibrate(cli: &Cli, cmd: &CalibrateCmd) -> CmdResult {
    let mut cfg = base_config(cli)?;
    cmd.input.apply(&mut cfg);
    cmd.align.apply(&mut cfg);
    cmd.calib.apply(&mut cfg);
    if cmd.dt.is_some() {
        cfg.align.fixed_dt = cmd.dt;
    }
    let out = out_dir(&cmd.out, &mut cfg);
    let (hp, ep) = inputs(&cfg)?;
    let (hand, eye) = load_pair(&hp, cfg.hand_format, &ep, cfg.eye_format)?;
    let (alignment, res) = with_jobs(cfg.jobs, || -> Result<_, PipelineError> {
        let alignment = match cfg.align.fixed_dt {
            Some(_) => None,
            None => Some(align_stage(&hand, &eye, &cfg)?),
        };
        let dt = cfg.align.fixed_dt.or(alignment.map(|a| a.dt)).unwrap_or(0.0);
        Ok((alignment, calibrate_stage(&hand, &eye, dt, &cfg)?))
    })?;
    create_out_dir(&out, Stage::Calibrate)?;
    let file = linear_result_file(&res, alignment.as_ref());
    file.write(out.join("result.txt"))
        .map_err(write_failure(Stage::Calibrate))?;
    write_pair_diagnostics(&res, &out.join("pairs.csv")).map_err(write_failure(Stage::Calibrate))?;
    write_manifest(
        &out,
        "calibrate",
        &cfg,
        &[&hp, &ep],
        &["result.txt", "pairs.csv", "manifest.toml"],
    )
    .map_err(write_failure(Stage::Calibrate))?;
    print!("{}", file.to_text());
    Ok(())
}

fn cmd_refine(cli: &Cli, cmd: &RefineCmd) -> CmdResult {
    let mut cfg = base_config(cli)?;
    cmd.input.apply(&mut cfg);
    cmd.refine.apply(&mut cfg);
    let out = out_dir(&cmd.out, &mut cfg);
    let (hp, ep) = inputs(&cfg)?;
    let (hand, eye) = load_pair(&hp, cfg.hand_format, &ep, cfg.eye_format)?;
    let init = ResultFile::read(&cmd.init)
        .map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", cmd.init.display())))?;
    let res = with_jobs(cfg.jobs, || refine_stage(&hand, &eye, &init.extrinsic, init.dt, &cfg))?;
    create_out_dir(&out, Stage::Refine)?;
    let file = refined_result_file(&res);
    file.write(out.join("result.txt"))
        .map_err(write_failure(Stage::Refine))?;
    let report = convergence_text(&res);
    std::fs::write(out.join("refinement.txt"), &report).map_err(write_failure(Stage::Refine))?;
    write_manifest(
        &out,
        "refine",
        &cfg,
        &[&hp, &ep, &cmd.init],
        &["result.txt", "refinement.txt", "manifest.toml"],
    )
    .map_err(write_failure(Stage::Refine))?;
    print!("{}{report}", file.to_text());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, cmd: &EvaluateCmd) -> CmdResult {
    let mut cfg = base_config(cli)?;
    if let Some(f) = cmd.format {
        cfg.hand_format = f;
        cfg.eye_format = f;
    }
    cmd.eval.apply(&mut cfg);
    let (hand, eye) = load_pair(&cmd.gt_raw, cfg.hand_format, &cmd.est, cfg.eye_format)?;
    let calib = ResultFile::read(&cmd.calib)
        .map_err(|e| PipelineError::new(Stage::Ingest, format!("{}: {e}", cmd.calib.display())))?;
    let (align, report) = evaluate_stage(&hand, &eye, &calib.extrinsic, calib.dt, &cfg)?;
    let text = metrics_text(&report, align.as_ref());
    if let Some(out) = &cmd.out {
        cfg.out = out.clone();
        create_out_dir(out, Stage::Evaluate)?;
        std::fs::write(out.join("metrics.txt"), &text).map_err(write_failure(Stage::Evaluate))?;
        write_sample_errors(&report, &out.join("errors.csv")).map_err(write_failure(Stage::Evaluate))?;
        write_manifest(
            out,
            "evaluate",
            &cfg,
            &[&cmd.est, &cmd.gt_raw, &cmd.calib],
            &["metrics.txt", "errors.csv", "manifest.toml"],
        )
        .map_err(write_failure(Stage::Evaluate))?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_simulate(cmd: &SimulateCmd) -> CmdResult {
    let sim = SimulationConfig {
        preset: cmd.preset,
        level: cmd.level,
        seed: cmd.seed,
        dt: cmd
            .dt
            .unwrap_or_else(|| random_offset(cmd.seed, ablation::DEFAULT_MAX_OFFSET)),
        hand_rate: cmd.hand_rate,
        eye_rate: cmd.eye_rate,
        drift_model: cmd.drift_model,
    };
    let bundle = simulate(&sim).map_err(|e| Failure::Usage(format!("simulate: {e}")))?;
    let out = &cmd.out;
    create_out_dir(out, Stage::Ingest)?;
    write_trajectory(&bundle.hand, &out.join("hand.txt"), Stage::Ingest)?;
    write_trajectory(&bundle.eye_noisy, &out.join("eye.txt"), Stage::Ingest)?;
    let mut truth = ResultFile::new(bundle.extrinsic_gt, bundle.dt_gt);
    truth
        .set("stage", "truth")
        .set("preset", sim.preset)
        .set("level", sim.level)
        .set("seed", sim.seed)
        .set("drift_model", sim.drift_model);
    truth
        .write(out.join("truth.txt"))
        .map_err(write_failure(Stage::Ingest))?;
    write_manifest(
        out,
        "simulate",
        &sim,
        &[],
        &["hand.txt", "eye.txt", "truth.txt", "manifest.toml"],
    )
    .map_err(write_failure(Stage::Ingest))?;
    info!(
        "wrote {} hand and {} eye poses to {}",
        bundle.hand.len(),
        bundle.eye_noisy.len(),
        out.display()
    );
    print!("{}", truth.to_text());
    Ok(())
}

fn parse_levels(list: &str) -> Result<Vec<u32>, String> {
    let mut levels = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || format!("invalid level list `{list}`");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if a > b {
                    return Err(bad());
                }
                levels.extend(a..=b);
            }
            None => levels.push(part.parse().map_err(|_| bad())?),
        }
    }
    if levels.is_empty() {
        return Err(format!("empty level list `{list}`"));
    }
    Ok(levels)
}

fn parse_variant(name: &str) -> Result<Variant, String> {
    let (base, kernel) = match name.strip_suffix("+kernel") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let strategy: PairStrategy = base.parse()?;
    Ok(Variant::new(strategy, kernel, 5.0))
}

fn cmd_ablate(cli: &Cli, cmd: &AblateCmd) -> CmdResult {
    let base = base_config(cli)?;
    let levels = parse_levels(&cmd.levels).map_err(Failure::Usage)?;
    let mut variants = if cmd.variants.is_empty() {
        Variant::strategy_set()
    } else {
        cmd.variants
            .iter()
            .map(|v| parse_variant(v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::Usage)?
    };
    variants.extend(Variant::eta_set(&cmd.eta));
    let grid = AblationGrid {
        variants,
        levels,
        seeds: (0..cmd.seeds).collect(),
        preset: cmd.preset,
        drift_model: cmd.drift_model,
        base: base.calibration.clone(),
        align: base.align.to_config(),
        ..AblationGrid::default()
    };
    let rows = ablation::run_ablation(&grid, base.jobs);
    let summary = ablation::summarize(&rows);
    let out = &cmd.out;
    create_out_dir(out, Stage::Calibrate)?;
    ablation::write_csv(&rows, &out.join("ablation.csv")).map_err(write_failure(Stage::Calibrate))?;
    ablation::write_csv(&summary, &out.join("summary.csv")).map_err(write_failure(Stage::Calibrate))?;
    write_manifest(
        out,
        "ablate",
        &grid,
        &[],
        &["ablation.csv", "summary.csv", "manifest.toml"],
    )
    .map_err(write_failure(Stage::Calibrate))?;
    println!(
        "{:<28} {:>5} {:>5} {:>12} {:>12} {:>12}",
        "variant", "level", "fail", "trans_med_m", "rot_med_deg", "time_mean_s"
    );
    for s in &summary {
        println!(
            "{:<28} {:>5} {:>5} {:>12.6} {:>12.5} {:>12.6}",
            s.strategy, s.level, s.failures, s.trans_median, s.rot_median, s.time_mean
        );
    }
    Ok(())
}

fn cmd_run(cli: &Cli, cmd: &RunCmd) -> CmdResult {
    let mut cfg = base_config(cli)?;
    cmd.input.apply(&mut cfg);
    cmd.align.apply(&mut cfg);
    cmd.calib.apply(&mut cfg);
    cmd.refine.apply(&mut cfg);
    cmd.eval.apply(&mut cfg);
    if cmd.no_refine {
        cfg.refine = false;
    }
    if cmd.no_evaluate {
        cfg.evaluation.enabled = false;
    }
    out_dir(&cmd.out, &mut cfg);
    inputs(&cfg)?;
    let res = run_full_pipeline(&cfg)?;
    let (q, t) = res.extrinsic.to_rt();
    println!("dt = {}", res.dt);
    println!("extrinsic = {} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w);
    if let Some(m) = &res.metrics {
        println!("ape_rmse_m = {}", m.ape_rmse);
        println!("are_rmse_deg = {}", m.are_rmse);
    }
    for f in &res.files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn check_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::new(Stage::Ingest, format!("{}: no such file", path.display())).into())
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Align(c) => cmd_align(cli, c),
        Command::Calibrate(c) => cmd_calibrate(cli, c),
        Command::Refine(c) => {
            check_file(&c.init)?;
            cmd_refine(cli, c)
        }
        Command::Evaluate(c) => cmd_evaluate(cli, c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Ablate(c) => cmd_ablate(cli, c),
        Command::Run(c) => cmd_run(cli, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

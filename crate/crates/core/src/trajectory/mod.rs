//! Time-ordered pose sequences: construction, interpolation, resampling and
//! clock shifts. File formats live in [`io`].

pub mod io;

use thiserror::Error;

use crate::screw::{DualQuat, Quat};

pub use io::{parse_trajectory, read_trajectory, write_tum, write_tum_file, TrajectoryFormat};

/// Sample periods longer than this multiple of the median period are gaps.
pub const GAP_FACTOR: f64 = 5.0;

/// Slack (s) when deciding whether a query time lies inside a trajectory span.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp is not strictly increasing")]
    NonMonotonicTime { line: usize },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("trajectory spans {span:.6} s but at least {required:.6} s is required")]
    SpanTooShort { span: f64, required: f64 },
    #[error("time {t:.9} s lies outside the trajectory span [{start:.9}, {end:.9}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("resampling rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    /// Seconds relative to the owning trajectory's epoch.
    pub t: f64,
    pub pose: DualQuat,
}

impl PoseSample {
    pub fn new(t: f64, pose: DualQuat) -> Self {
        Self { t, pose }
    }
}

/// Pose samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<PoseSample>,
    frame_label: String,
    epoch_ns: i64,
}

impl Trajectory {
    pub fn new(samples: Vec<PoseSample>, frame_label: impl Into<String>) -> Result<Self, TrajectoryError> {
        Self::with_epoch(samples, frame_label, 0)
    }

    /// Like [`Trajectory::new`] with sample times relative to `epoch_ns`.
    pub fn with_epoch(
        samples: Vec<PoseSample>,
        frame_label: impl Into<String>,
        epoch_ns: i64,
    ) -> Result<Self, TrajectoryError> {
        if samples.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(TrajectoryError::NonMonotonicTime { line: i + 2 });
            }
        }
        Ok(Self {
            samples,
            frame_label: frame_label.into(),
            epoch_ns,
        })
    }

    pub fn from_parts(
        times: &[f64],
        poses: &[DualQuat],
        frame_label: impl Into<String>,
    ) -> Result<Self, TrajectoryError> {
        assert_eq!(times.len(), poses.len(), "times and poses differ in length");
        let samples = times
            .iter()
            .zip(poses)
            .map(|(&t, &pose)| PoseSample::new(t, pose))
            .collect();
        Self::new(samples, frame_label)
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn frame_label(&self) -> &str {
        &self.frame_label
    }

    pub fn epoch_ns(&self) -> i64 {
        self.epoch_ns
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn poses(&self) -> Vec<DualQuat> {
        self.samples.iter().map(|s| s.pose).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Median spacing between consecutive samples (s); zero for a single sample.
    pub fn median_period(&self) -> f64 {
        let mut d: Vec<f64> = self.samples.windows(2).map(|w| w[1].t - w[0].t).collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    }

    /// Nominal sample rate (Hz) derived from the median period.
    pub fn nominal_rate(&self) -> f64 {
        1.0 / self.median_period()
    }

    /// Indices `i` such that the interval `(t[i], t[i+1])` is a data gap.
    pub fn gaps(&self) -> Vec<usize> {
        let limit = GAP_FACTOR * self.median_period();
        self.samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].t - w[0].t > limit)
            .map(|(i, _)| i)
            .collect()
    }

    /// Pose at time `t`: geodesic rotation and linear translation between the
    /// bracketing samples. `None` outside the span.
    pub fn interpolate(&self, t: f64) -> Option<DualQuat> {
        if t < self.start_time() - TIME_EPS || t > self.end_time() + TIME_EPS {
            return None;
        }
        let idx = self.samples.partition_point(|s| s.t <= t);
        if idx == 0 {
            return Some(self.samples[0].pose);
        }
        let lo = &self.samples[idx - 1];
        if lo.t == t || idx == self.samples.len() {
            return Some(lo.pose);
        }
        let hi = &self.samples[idx];
        let s = (t - lo.t) / (hi.t - lo.t);
        Some(interpolate_pose(&lo.pose, &hi.pose, s))
    }

    pub fn resample_at(&self, times: &[f64]) -> Result<Trajectory, TrajectoryError> {
        let mut samples = Vec::with_capacity(times.len());
        for &t in times {
            let pose = self.interpolate(t).ok_or(TrajectoryError::OutOfSpan {
                t,
                start: self.start_time(),
                end: self.end_time(),
            })?;
            samples.push(PoseSample::new(t, pose));
        }
        Trajectory::with_epoch(samples, self.frame_label.clone(), self.epoch_ns)
    }

    /// Uniform grid from the first timestamp at `1/rate` spacing, never past
    /// the last timestamp.
    pub fn resample(&self, rate: f64) -> Result<Trajectory, TrajectoryError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(TrajectoryError::InvalidRate(rate));
        }
        let span = self.duration();
        let required = 2.0 / rate;
        if span <= required {
            return Err(TrajectoryError::SpanTooShort { span, required });
        }
        let t0 = self.start_time();
        let count = (span * rate + TIME_EPS).floor() as usize + 1;
        let times: Vec<f64> = (0..count).map(|k| t0 + k as f64 / rate).collect();
        self.resample_at(&times)
    }

    /// Adds `dt` to every timestamp.
    pub fn shift_time(&self, dt: f64) -> Trajectory {
        let samples = self.samples.iter().map(|s| PoseSample::new(s.t + dt, s.pose)).collect();
        Trajectory {
            samples,
            frame_label: self.frame_label.clone(),
            epoch_ns: self.epoch_ns,
        }
    }

    /// Re-expresses timestamps relative to another epoch.
    pub fn rebased(&self, epoch_ns: i64) -> Trajectory {
        let offset = (self.epoch_ns as i128 - epoch_ns as i128) as f64 * 1e-9;
        let mut out = self.shift_time(offset);
        out.epoch_ns = epoch_ns;
        out
    }

    /// Applies `f` to every pose.
    pub fn map_poses(&self, f: impl Fn(&DualQuat) -> DualQuat) -> Trajectory {
        let samples = self.samples.iter().map(|s| PoseSample::new(s.t, f(&s.pose))).collect();
        Trajectory {
            samples,
            frame_label: self.frame_label.clone(),
            epoch_ns: self.epoch_ns,
        }
    }

    /// `g ⊗ pose` for every sample (change of global frame).
    pub fn left_multiplied(&self, g: &DualQuat) -> Trajectory {
        self.map_poses(|p| g * p)
    }

    /// `pose ⊗ x` for every sample (change of local frame).
    pub fn right_multiplied(&self, x: &DualQuat) -> Trajectory {
        self.map_poses(|p| p * x)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Trajectory {
        self.frame_label = label.into();
        self
    }

    /// Index of the sample closest in time to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let idx = self.samples.partition_point(|s| s.t < t);
        if idx == 0 {
            return 0;
        }
        if idx == self.samples.len() {
            return idx - 1;
        }
        if (self.samples[idx].t - t) < (t - self.samples[idx - 1].t) {
            idx
        } else {
            idx - 1
        }
    }
}

/// Shortest-arc rotation interpolation with linear translation, `s ∈ [0, 1]`.
pub fn interpolate_pose(a: &DualQuat, b: &DualQuat, s: f64) -> DualQuat {
    let (ra, ta) = a.to_rt();
    let (rb, tb) = b.to_rt();
    let r: Quat = ra.slerp(&rb, s);
    let t = ta + (tb - ta) * s;
    DualQuat::from_rt(&r, &t).expect("slerp keeps unit norm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn pose(angle: f64, t: [f64; 3]) -> DualQuat {
        DualQuat::from_rt(
            &Quat::from_axis_angle(&Vector3::z(), angle),
            &Vector3::new(t[0], t[1], t[2]),
        )
        .unwrap()
    }

    fn spin(n: usize, dt: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let poses: Vec<DualQuat> = (0..n)
            .map(|i| pose(0.1 * i as f64, [0.01 * i as f64, 0.0, 0.0]))
            .collect();
        Trajectory::from_parts(&times, &poses, "test").unwrap()
    }

    #[test]
    fn rejects_empty_and_non_monotonic() {
        assert!(matches!(
            Trajectory::new(vec![], "x"),
            Err(TrajectoryError::EmptyTrajectory)
        ));
        let s = PoseSample::new(1.0, DualQuat::IDENTITY);
        assert!(matches!(
            Trajectory::new(vec![s, s], "x"),
            Err(TrajectoryError::NonMonotonicTime { line: 2 })
        ));
    }

    #[test]
    fn resample_midpoint_is_geodesic() {
        let traj = Trajectory::from_parts(
            &[0.0, 1.0],
            &[DualQuat::IDENTITY, pose(FRAC_PI_2, [1.0, 0.0, 0.0])],
            "t",
        )
        .unwrap();
        let mid = traj.interpolate(0.5).unwrap();
        assert_relative_eq!(mid.rotation_angle(), FRAC_PI_4, epsilon = 1e-15);
        assert_relative_eq!(mid.real.z, (FRAC_PI_4 / 2.0).sin(), epsilon = 1e-15);
        assert_relative_eq!(mid.translation(), Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn resample_constant_pose() {
        let p = pose(0.3, [1.0, 2.0, 3.0]);
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let traj = Trajectory::from_parts(&times, &vec![p; 11], "c").unwrap();
        let r = traj.resample(7.0).unwrap();
        assert_eq!(r.len(), 8);
        for s in r.samples() {
            assert!(s.pose.distance_up_to_sign(&p) < 1e-15);
        }
        assert!(r.end_time() <= traj.end_time());
    }

    #[test]
    fn resample_at_own_times_is_exact() {
        let traj = spin(50, 0.01);
        let r = traj.resample_at(&traj.times()).unwrap();
        for (a, b) in r.samples().iter().zip(traj.samples()) {
            assert!(a.pose.distance_up_to_sign(&b.pose) < 1e-12);
        }
    }

    #[test]
    fn resample_span_too_short() {
        let traj = spin(3, 0.01);
        assert!(matches!(
            traj.resample(100.0),
            Err(TrajectoryError::SpanTooShort { .. })
        ));
        assert!(matches!(traj.resample(0.0), Err(TrajectoryError::InvalidRate(_))));
    }

    #[test]
    fn shift_time_examples() {
        let traj = Trajectory::from_parts(&[0.0, 1.0, 2.0], &[DualQuat::IDENTITY; 3], "s").unwrap();
        assert_eq!(traj.shift_time(0.0), traj);
        assert_eq!(traj.shift_time(0.5).shift_time(-0.5), traj);
        let shifted = traj.shift_time(0.123);
        assert_eq!(shifted.times(), vec![0.123, 1.123, 2.123]);
    }

    #[test]
    fn shift_preserves_intervals() {
        let traj = spin(20, 0.25);
        let s = traj.shift_time(3.0);
        for (a, b) in traj.samples().windows(2).zip(s.samples().windows(2)) {
            assert_eq!(a[1].t - a[0].t, 0.25);
            assert_eq!(b[1].t - b[0].t, 0.25);
        }
    }

    #[test]
    fn gaps_are_flagged() {
        let times = [0.0, 0.01, 0.02, 0.03, 0.5, 0.51, 0.52];
        let traj = Trajectory::from_parts(&times, &[DualQuat::IDENTITY; 7], "g").unwrap();
        assert_eq!(traj.gaps(), vec![3]);
        assert!(traj.interpolate(0.2).is_some());
    }

    #[test]
    fn nearest_index_picks_closest() {
        let traj = spin(10, 0.1);
        assert_eq!(traj.nearest_index(-1.0), 0);
        assert_eq!(traj.nearest_index(0.34), 3);
        assert_eq!(traj.nearest_index(0.36), 4);
        assert_eq!(traj.nearest_index(9.0), 9);
    }

    #[test]
    fn rebase_moves_epoch() {
        let traj = Trajectory::with_epoch(
            vec![
                PoseSample::new(0.0, DualQuat::IDENTITY),
                PoseSample::new(1.0, DualQuat::IDENTITY),
            ],
            "e",
            2_000_000_000,
        )
        .unwrap();
        let r = traj.rebased(500_000_000);
        assert_eq!(r.epoch_ns(), 500_000_000);
        assert_relative_eq!(r.start_time(), 1.5, epsilon = 1e-15);
    }
}

//! Clock-offset estimation from angular-speed signals.
//!
//! Both trajectories are reduced to angular speed on a common grid, which
//! does not depend on either global frame or on the extrinsic. The offset is
//! the lag maximizing their normalized cross-correlation, refined to
//! sub-sample precision with a three-point parabola.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Trajectory, TrajectoryError};

/// Peak correlation below which an estimate is flagged unreliable.
pub const RELIABLE_PEAK: f64 = 0.6;

/// Signals with variance below this (rad²/s²) carry no timing information.
pub const MIN_SIGNAL_VARIANCE: f64 = 1e-8;

/// Minimum number of overlapping samples for a lag to be considered.
pub const MIN_OVERLAP_SAMPLES: usize = 8;

/// Slack (in samples) when snapping a span onto the absolute grid.
const GRID_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TimeAlignError {
    #[error("cannot build angular-speed signal: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("signal rates differ ({a} Hz vs {b} Hz)")]
    RateMismatch { a: f64, b: f64 },
    #[error("signal has {len} samples, at least {required} needed")]
    SignalTooShort { len: usize, required: usize },
    #[error("correlation peak at index {index} lies on the edge of the lag window")]
    PeakAtBoundary { index: usize },
    #[error("overlap of {overlap:.3} s is below the required {required:.3} s")]
    InsufficientOverlap { overlap: f64, required: f64 },
    #[error("angular-speed variance {variance:.3e} rad²/s² is too small to correlate")]
    NoMotion { variance: f64 },
}

/// Uniformly sampled angular speed (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct AngularSpeedSignal {
    pub rate: f64,
    pub values: Vec<f64>,
    /// Time of the first sample (s).
    pub t0: f64,
}

impl AngularSpeedSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Normalized cross-correlation restricted to lags with enough overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// Integer lags `k`: `values[i]` compares `a[n]` with `b[n + lags[i]]`.
    pub lags: Vec<i64>,
    pub values: Vec<f64>,
}

impl Correlation {
    /// Index of the maximum value; the first one wins on ties.
    pub fn argmax(&self) -> Option<usize> {
        self.argmax_where(|_| true)
    }

    /// Index of the largest value among lags accepted by `keep`.
    pub fn argmax_where(&self, keep: impl Fn(i64) -> bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if keep(self.lags[i]) && best.is_none_or(|b| v > self.values[b]) {
                best = Some(i);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedPeak {
    /// Fractional index into the correlation array.
    pub index: f64,
    pub offset: f64,
    pub curvature_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeAlignConfig {
    /// Common signal rate (Hz); `None` selects the slower native rate.
    pub correlation_rate: Option<f64>,
    /// Minimum trajectory overlap (s).
    pub min_overlap: f64,
    /// Whether to apply the parabolic sub-sample refinement.
    pub refine: bool,
}

impl Default for TimeAlignConfig {
    fn default() -> Self {
        Self {
            correlation_rate: None,
            min_overlap: 5.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeOffsetEstimate {
    /// Offset in seconds, `t_hand = t_eye + dt`.
    pub dt: f64,
    pub peak_correlation: f64,
    pub curvature_ok: bool,
    /// Offset from the integer peak alone.
    pub dt_unrefined: f64,
    /// Rate the signals were correlated at (Hz).
    pub rate: f64,
    /// Sub-sample correction applied to the integer peak, in samples.
    pub peak_offset: f64,
}

impl TimeOffsetEstimate {
    pub fn is_reliable(&self) -> bool {
        self.peak_correlation >= RELIABLE_PEAK
    }
}

/// Angular speed of `traj` on the grid of integer multiples of `1/rate`
/// inside its span, using forward differences of the relative rotation.
/// Anchoring both signals to the same absolute grid makes the integer-lag
/// offset a whole number of samples.
pub fn angular_speed(traj: &Trajectory, rate: f64) -> Result<AngularSpeedSignal, TimeAlignError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(TrajectoryError::InvalidRate(rate).into());
    }
    let k0 = (traj.start_time() * rate - GRID_EPS).ceil() as i64;
    let k1 = (traj.end_time() * rate + GRID_EPS).floor() as i64;
    if k1 - k0 < 2 {
        return Err(TrajectoryError::SpanTooShort {
            span: traj.duration(),
            required: 2.0 / rate,
        }
        .into());
    }
    let times: Vec<f64> = (k0..=k1)
        .map(|k| (k as f64 / rate).clamp(traj.start_time(), traj.end_time()))
        .collect();
    let grid = traj.resample_at(&times)?;
    let values = grid
        .samples()
        .windows(2)
        .map(|w| {
            let rel = w[0].pose.real.conjugate() * w[1].pose.real;
            rel.angle() * rate
        })
        .collect();
    Ok(AngularSpeedSignal {
        rate,
        values,
        t0: k0 as f64 / rate,
    })
}

fn zero_mean(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn prefix_energy(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for x in v {
        acc += x * x;
        out.push(acc);
    }
    out
}

/// Zero-mean cross-correlation of `a` against `b`, each lag normalized by
/// the energies of its own overlap window, computed with zero-padded FFTs.
pub fn cross_correlate(a: &AngularSpeedSignal, b: &AngularSpeedSignal) -> Result<Correlation, TimeAlignError> {
    if (a.rate - b.rate).abs() > 1e-9 * a.rate.max(b.rate) {
        return Err(TimeAlignError::RateMismatch { a: a.rate, b: b.rate });
    }
    for s in [a, b] {
        if s.len() < MIN_OVERLAP_SAMPLES {
            return Err(TimeAlignError::SignalTooShort {
                len: s.len(),
                required: MIN_OVERLAP_SAMPLES,
            });
        }
    }
    let (la, lb) = (a.len(), b.len());
    let za = zero_mean(&a.values);
    let zb = zero_mean(&b.values);

    let n = (la + lb - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (slot, x) in buf.iter_mut().zip(v) {
            slot.re = *x;
        }
        buf
    };
    let mut fa = pad(&za);
    let mut fb = pad(&zb);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);

    let ea = prefix_energy(&za);
    let eb = prefix_energy(&zb);
    let min_overlap = MIN_OVERLAP_SAMPLES.max((0.1 * la.min(lb) as f64).ceil() as usize);

    let mut lags = Vec::new();
    let mut values = Vec::new();
    for k in -(la as i64 - 1)..=(lb as i64 - 1) {
        let n0 = 0.max(-k) as usize;
        let n1 = (la as i64).min(lb as i64 - k) as usize;
        if n1 <= n0 || n1 - n0 < min_overlap {
            continue;
        }
        let raw = prod[k.rem_euclid(n as i64) as usize].re / n as f64;
        let energy_a = ea[n1] - ea[n0];
        let m0 = (n0 as i64 + k) as usize;
        let m1 = (n1 as i64 + k) as usize;
        let energy_b = eb[m1] - eb[m0];
        let denom = (energy_a * energy_b).sqrt();
        lags.push(k);
        values.push(if denom > 0.0 { raw / denom } else { 0.0 });
    }
    Ok(Correlation { lags, values })
}

/// Three-point parabolic refinement around an interior peak.
pub fn refine_peak(corr: &[f64], peak_index: usize) -> Result<RefinedPeak, TimeAlignError> {
    if peak_index == 0 || peak_index + 1 >= corr.len() {
        return Err(TimeAlignError::PeakAtBoundary { index: peak_index });
    }
    let (cm, c0, cp) = (corr[peak_index - 1], corr[peak_index], corr[peak_index + 1]);
    let denom = cm - 2.0 * c0 + cp;
    if denom >= -1e-12 {
        return Ok(RefinedPeak {
            index: peak_index as f64,
            offset: 0.0,
            curvature_ok: false,
        });
    }
    let offset = (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5);
    Ok(RefinedPeak {
        index: peak_index as f64 + offset,
        offset,
        curvature_ok: true,
    })
}

/// Estimates `dt` with `t_hand = t_eye + dt`.
pub fn estimate_time_offset(
    hand: &Trajectory,
    eye: &Trajectory,
    cfg: &TimeAlignConfig,
) -> Result<TimeOffsetEstimate, TimeAlignError> {
    for traj in [hand, eye] {
        if traj.duration() < cfg.min_overlap {
            return Err(TimeAlignError::InsufficientOverlap {
                overlap: traj.duration(),
                required: cfg.min_overlap,
            });
        }
    }
    let rate = cfg
        .correlation_rate
        .unwrap_or_else(|| hand.nominal_rate().min(eye.nominal_rate()));
    let a = angular_speed(hand, rate)?;
    let b = angular_speed(eye, rate)?;
    for s in [&a, &b] {
        let variance = s.variance();
        if variance < MIN_SIGNAL_VARIANCE {
            return Err(TimeAlignError::NoMotion { variance });
        }
    }

    let corr = cross_correlate(&a, &b)?;
    let overlap_at = |dt: f64| hand.end_time().min(eye.end_time() + dt) - hand.start_time().max(eye.start_time() + dt);
    let lag_dt = |lag: f64| a.t0 - b.t0 - lag / rate;
    // short-overlap lags are excluded up front so they cannot outscore the true peak
    let peak = corr
        .argmax_where(|k| overlap_at(lag_dt(k as f64)) >= cfg.min_overlap)
        .ok_or(TimeAlignError::InsufficientOverlap {
            overlap: hand.duration().min(eye.duration()),
            required: cfg.min_overlap,
        })?;
    let refined = if cfg.refine {
        refine_peak(&corr.values, peak)?
    } else {
        if peak == 0 || peak + 1 >= corr.values.len() {
            return Err(TimeAlignError::PeakAtBoundary { index: peak });
        }
        RefinedPeak {
            index: peak as f64,
            offset: 0.0,
            curvature_ok: true,
        }
    };

    let lag = corr.lags[peak] as f64;
    let dt_unrefined = lag_dt(lag);
    let dt = lag_dt(lag + refined.offset);

    let overlap = overlap_at(dt);
    if overlap < cfg.min_overlap {
        return Err(TimeAlignError::InsufficientOverlap {
            overlap,
            required: cfg.min_overlap,
        });
    }

    Ok(TimeOffsetEstimate {
        dt,
        peak_correlation: corr.values[peak],
        curvature_ok: refined.curvature_ok,
        dt_unrefined,
        rate,
        peak_offset: refined.offset,
    })
}

//! TUM text and EuRoC ground-truth CSV ingestion; TUM output.
//!
//! TUM rows are `t tx ty tz qx qy qz qw` (quaternion scalar-last on disk).
//! EuRoC rows are `timestamp_ns,px,py,pz,qw,qx,qy,qz[,...]`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PoseSample, Trajectory, TrajectoryError};
use crate::screw::{DualQuat, Quat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    #[default]
    Tum,
    Euroc,
}

impl FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(Self::Tum),
            "euroc" | "euroc_csv" => Ok(Self::Euroc),
            other => Err(format!("unknown trajectory format `{other}` (expected tum or euroc)")),
        }
    }
}

impl fmt::Display for TrajectoryFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tum => f.write_str("tum"),
            Self::Euroc => f.write_str("euroc"),
        }
    }
}

pub fn parse_trajectory<R: Read>(mut source: R, format: TrajectoryFormat) -> Result<Trajectory, TrajectoryError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|_| TrajectoryError::InvalidUtf8)?;
    match format {
        TrajectoryFormat::Tum => parse_tum(&text),
        TrajectoryFormat::Euroc => parse_euroc(&text),
    }
}

pub fn read_trajectory(path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<Trajectory, TrajectoryError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let traj = parse_trajectory(file, format)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(traj.with_label(label))
}

fn parse_field<T: FromStr>(field: &str, line: usize, what: &str) -> Result<T, TrajectoryError> {
    field.trim().parse::<T>().map_err(|_| TrajectoryError::Parse {
        line,
        message: format!("cannot parse {what} from `{}`", field.trim()),
    })
}

fn make_pose(q: Quat, t: Vector3<f64>, line: usize) -> Result<DualQuat, TrajectoryError> {
    let n = q.norm();
    if !(n > 1e-12) || !n.is_finite() || !t.iter().all(|v| v.is_finite()) {
        return Err(TrajectoryError::Parse {
            line,
            message: "degenerate or non-finite pose".into(),
        });
    }
    Ok(DualQuat::from_rt(&q.scale(1.0 / n), &t).expect("normalized above"))
}

fn push_checked(samples: &mut Vec<PoseSample>, sample: PoseSample, line: usize) -> Result<(), TrajectoryError> {
    if let Some(last) = samples.last() {
        if !(sample.t > last.t) {
            return Err(TrajectoryError::NonMonotonicTime { line });
        }
    }
    samples.push(sample);
    Ok(())
}

fn parse_tum(text: &str) -> Result<Trajectory, TrajectoryError> {
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(TrajectoryError::Parse {
                line,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 8];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = parse_field(f, line, "number")?;
        }
        let q = Quat::new(v[7], v[4], v[5], v[6]);
        let pose = make_pose(q, Vector3::new(v[1], v[2], v[3]), line)?;
        push_checked(&mut samples, PoseSample::new(v[0], pose), line)?;
    }
    if samples.is_empty() {
        return Err(TrajectoryError::EmptyTrajectory);
    }
    Trajectory::new(samples, "")
}

fn parse_euroc(text: &str) -> Result<Trajectory, TrajectoryError> {
    let mut samples = Vec::new();
    let mut epoch: Option<i64> = None;
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if !seen_data && fields[0].trim().parse::<i64>().is_err() {
            // header without a leading '#'
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() < 8 {
            return Err(TrajectoryError::Parse {
                line,
                message: format!("expected at least 8 fields, found {}", fields.len()),
            });
        }
        let stamp: i64 = parse_field(fields[0], line, "timestamp (ns)")?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..8]) {
            *slot = parse_field(f, line, "number")?;
        }
        let first = *epoch.get_or_insert(stamp);
        let t = (stamp as i128 - first as i128) as f64 * 1e-9;
        let q = Quat::new(v[3], v[4], v[5], v[6]);
        let pose = make_pose(q, Vector3::new(v[0], v[1], v[2]), line)?;
        push_checked(&mut samples, PoseSample::new(t, pose), line)?;
    }
    if samples.is_empty() {
        return Err(TrajectoryError::EmptyTrajectory);
    }
    Trajectory::with_epoch(samples, "", epoch.unwrap_or(0))
}

/// Writes TUM rows using the shortest decimal form that round-trips each
/// value exactly. Timestamps are absolute seconds (epoch added back).
pub fn write_tum<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    let epoch = traj.epoch_ns() as f64 * 1e-9;
    if !traj.frame_label().is_empty() {
        writeln!(out, "# frame: {}", traj.frame_label())?;
    }
    writeln!(out, "# timestamp tx ty tz qx qy qz qw")?;
    for s in traj.samples() {
        let (q, t) = s.pose.to_rt();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            epoch + s.t,
            t.x,
            t.y,
            t.z,
            q.x,
            q.y,
            q.z,
            q.w
        )?;
    }
    Ok(())
}

pub fn write_tum_file(traj: &Trajectory, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tum(traj, &mut w)?;
    w.flush()
}

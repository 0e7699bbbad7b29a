//! Plain-text calibration result: one `key = value` per line, `#` comments.
//!
//! The extrinsic line is `tx ty tz qx qy qz qw` (TUM pose order) and gives
//! the eye frame in the hand frame. `dt` follows `t_hand = t_eye + dt`.
//! Numbers are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::screw::{DualQuat, Quat};

#[derive(Debug, Error)]
pub enum ResultFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: invalid value for `{key}`")]
    Value { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("duplicate key `{key}` on line {line}")]
    Duplicate { line: usize, key: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub dt: f64,
    pub extrinsic: DualQuat,
    /// Further keys in file order.
    pub entries: Vec<(String, String)>,
}

impl ResultFile {
    pub fn new(extrinsic: DualQuat, dt: f64) -> Self {
        Self {
            dt,
            extrinsic,
            entries: Vec::new(),
        }
    }

    /// Appends or replaces an entry.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let (q, t) = self.extrinsic.to_rt();
        let mut s = String::new();
        s.push_str("# extrinsic: eye frame in hand frame, tx ty tz qx qy qz qw\n");
        s.push_str("# t_hand = t_eye + dt\n");
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "extrinsic = {} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w);
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ResultFileError> {
        let mut dt = None;
        let mut extrinsic = None;
        let mut entries: Vec<(String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ResultFileError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ResultFileError::Syntax { line });
            }
            let bad = || ResultFileError::Value {
                line,
                key: key.to_string(),
            };
            let duplicate = match key {
                "dt" => dt
                    .replace(value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?)
                    .is_some(),
                "extrinsic" => extrinsic.replace(parse_pose(value).ok_or_else(bad)?).is_some(),
                _ => {
                    let seen = entries.iter().any(|(k, _)| k == key);
                    entries.push((key.to_string(), value.to_string()));
                    seen
                }
            };
            if duplicate {
                return Err(ResultFileError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self {
            dt: dt.ok_or(ResultFileError::Missing("dt"))?,
            extrinsic: extrinsic.ok_or(ResultFileError::Missing("extrinsic"))?,
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ResultFileError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_text())
    }
}

fn parse_pose(value: &str) -> Option<DualQuat> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()?;
    let [tx, ty, tz, qx, qy, qz, qw] = v.as_slice().try_into().ok()?;
    let q = Quat::new(qw, qx, qy, qz);
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return None;
    }
    DualQuat::from_rt(&q.scale(1.0 / norm), &Vector3::new(tx, ty, tz)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultFile {
        let x = DualQuat::from_rt(
            &Quat::from_axis_angle(&Vector3::new(0.2, -0.5, 0.8).normalize(), 0.7),
            &Vector3::new(0.08, -0.15, 0.12),
        )
        .unwrap();
        let mut r = ResultFile::new(x, -0.123_456_789_012_345_6);
        r.set("quality", 1.25e-4).set("inliers", 42);
        r
    }

    #[test]
    fn text_is_stable_through_parse() {
        let r = sample();
        let text = r.to_text();
        let back = ResultFile::parse(&text).unwrap();
        assert_eq!(back.dt, r.dt);
        assert_eq!(back.get("inliers"), Some("42"));
        assert!(back.extrinsic.distance_up_to_sign(&r.extrinsic) < 1e-15);
    }

    #[test]
    fn set_replaces_existing_key() {
        let mut r = sample();
        r.set("inliers", 7);
        assert_eq!(r.get("inliers"), Some("7"));
        assert_eq!(r.entries.len(), 2);
    }

    #[test]
    fn missing_and_malformed_keys() {
        assert!(matches!(
            ResultFile::parse("dt = 0.1\n"),
            Err(ResultFileError::Missing("extrinsic"))
        ));
        assert!(matches!(
            ResultFile::parse("dt = 0\nextrinsic = 0 0 0 0 0 0 2\n"),
            Err(ResultFileError::Value { line: 2, .. })
        ));
        assert!(matches!(
            ResultFile::parse("dt = 0\nextrinsic = 0 0 0 0 0 0\n"),
            Err(ResultFileError::Value { line: 2, .. })
        ));
        assert!(matches!(
            ResultFile::parse("dt 0\n"),
            Err(ResultFileError::Syntax { line: 1 })
        ));
        assert!(matches!(
            ResultFile::parse("dt = 0\ndt = 1\nextrinsic = 0 0 0 0 0 0 1\n"),
            Err(ResultFileError::Duplicate { line: 2, .. })
        ));
    }
}

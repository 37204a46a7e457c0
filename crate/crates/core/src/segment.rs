//! Work-segment windows: trimming series to the frames where the subject is active.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::angles::JointAngleSeries;
use crate::ingest::Recording;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("segment {label:?}: {message}")]
    Invalid { label: String, message: String },
    #[error("segments {first:?} and {second:?} overlap")]
    Overlap { first: String, second: String },
    #[error("bad time value {0:?}")]
    BadTime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SpecError {
    pub fn label(&self) -> Option<&str> {
        match self {
            SpecError::Invalid { label, .. } => Some(label),
            SpecError::Overlap { first, .. } => Some(first),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "s")]
    Seconds,
    #[serde(rename = "frames")]
    Frames,
}

/// A window boundary; seconds may be written as `"m:ss"` or `"h:mm:ss"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

pub fn parse_clock(text: &str) -> Result<f64, SpecError> {
    let bad = || SpecError::BadTime(text.to_string());
    let mut total = 0.0;
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() > 3 {
        return Err(bad());
    }
    for (i, p) in parts.iter().enumerate() {
        let v: f64 = p.trim().parse().map_err(|_| bad())?;
        if !(v >= 0.0 && v.is_finite()) || (i > 0 && v >= 60.0) {
            return Err(bad());
        }
        total = total * 60.0 + v;
    }
    Ok(total)
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bound(v)),
            Raw::Text(t) => parse_clock(&t).map(Bound).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDef {
    pub label: String,
    pub start: Bound,
    pub end: Bound,
    pub unit: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// Name of the recording whose clock the windows refer to.
    #[serde(default)]
    pub clock: String,
    pub segments: Vec<SegmentDef>,
}

/// A window as half-open frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameRange {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn duration_s(&self, rate_hz: f64) -> f64 {
        self.len() as f64 / rate_hz
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}, {})", self.label, self.start, self.end)
    }
}

fn to_frame(b: Bound, unit: Unit, rate_hz: f64, label: &str) -> Result<usize, SpecError> {
    let invalid = |m: String| SpecError::Invalid {
        label: label.to_string(),
        message: m,
    };
    if !(b.0 >= 0.0 && b.0.is_finite()) {
        return Err(invalid(format!("bound {} must be a non-negative number", b.0)));
    }
    match unit {
        Unit::Seconds => Ok((b.0 * rate_hz + 1e-9).floor() as usize),
        Unit::Frames if b.0.fract() == 0.0 => Ok(b.0 as usize),
        Unit::Frames => Err(invalid(format!("frame index {} is not an integer", b.0))),
    }
}

impl SegmentSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Frame ranges for a series of `len` frames at `rate_hz`, in spec order.
    pub fn resolve(&self, rate_hz: f64, len: usize) -> Result<Vec<FrameRange>, SpecError> {
        let mut out = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let invalid = |m: String| SpecError::Invalid {
                label: s.label.clone(),
                message: m,
            };
            if s.label.trim().is_empty() {
                return Err(invalid("empty label".into()));
            }
            if out.iter().any(|r: &FrameRange| r.label == s.label) {
                return Err(invalid("duplicate label".into()));
            }
            let start = to_frame(s.start, s.unit, rate_hz, &s.label)?;
            let end = to_frame(s.end, s.unit, rate_hz, &s.label)?;
            if start >= end {
                return Err(invalid(format!("start frame {start} is not before end frame {end}")));
            }
            if end > len {
                return Err(invalid(format!("end frame {end} is past the series end ({len} frames)")));
            }
            out.push(FrameRange {
                label: s.label.clone(),
                start,
                end,
            });
        }
        let mut sorted: Vec<&FrameRange> = out.iter().collect();
        sorted.sort_by_key(|r| r.start);
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                return Err(SpecError::Overlap {
                    first: w[0].label.clone(),
                    second: w[1].label.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// Cuts `series` into labelled sub-series, each re-timed to start at 0 with
/// the original start kept in `origin_s`.
pub fn apply_segments(series: &JointAngleSeries, spec: &SegmentSpec) -> Result<BTreeMap<String, JointAngleSeries>, SpecError> {
    Ok(spec
        .resolve(series.rate_hz, series.len())?
        .into_iter()
        .map(|r| {
            let mut sub = series.slice(r.start, r.end);
            sub.metadata.insert("segment".into(), r.label.clone());
            (r.label, sub)
        })
        .collect())
}

/// As [`apply_segments`], for raw recordings. Tick indices restart at 0.
pub fn apply_segments_recording(rec: &Recording, spec: &SegmentSpec) -> Result<BTreeMap<String, Recording>, SpecError> {
    Ok(spec
        .resolve(rec.rate_hz, rec.frames.len())?
        .into_iter()
        .map(|r| {
            let frames = rec.frames[r.start..r.end]
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let mut f = f.clone();
                    f.tick_index = i as u64;
                    f.time_s = i as f64 / rec.rate_hz;
                    f
                })
                .collect();
            let sub = Recording {
                rate_hz: rec.rate_hz,
                segment_map: rec.segment_map.clone(),
                calibration: rec.calibration.clone(),
                frames,
            };
            (r.label, sub)
        })
        .collect())
}

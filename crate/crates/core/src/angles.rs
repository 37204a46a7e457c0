//! Joint-angle data model and the angle CSV writer.
//!
//! Channels are named `<joint>_<side>_<axis>`; CSV columns append `_deg`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Joint {
    Elbow,
    Shoulder,
    Trunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "l")]
    Left,
    #[serde(rename = "r")]
    Right,
    #[serde(rename = "c")]
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Flexion,
    Abduction,
    Rotation,
    Pronosupination,
}

impl Joint {
    pub fn as_str(&self) -> &'static str {
        match self {
            Joint::Elbow => "elbow",
            Joint::Shoulder => "shoulder",
            Joint::Trunk => "trunk",
        }
    }

    /// Names of the three Euler slots (Z, X', Y'') for this joint.
    pub fn axes(&self) -> [Axis; 3] {
        match self {
            Joint::Elbow => [Axis::Flexion, Axis::Abduction, Axis::Pronosupination],
            Joint::Shoulder | Joint::Trunk => [Axis::Flexion, Axis::Abduction, Axis::Rotation],
        }
    }
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "l",
            Side::Right => "r",
            Side::Center => "c",
        }
    }
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Flexion => "flexion",
            Axis::Abduction => "abduction",
            Axis::Rotation => "rotation",
            Axis::Pronosupination => "pronosupination",
        }
    }
}

macro_rules! impl_from_str {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($t).to_lowercase())),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

impl_from_str!(Joint, "elbow" => Joint::Elbow, "shoulder" => Joint::Shoulder, "trunk" => Joint::Trunk);
impl_from_str!(Side, "l" => Side::Left, "r" => Side::Right, "c" => Side::Center);
impl_from_str!(Axis, "flexion" => Axis::Flexion, "abduction" => Axis::Abduction,
    "rotation" => Axis::Rotation, "pronosupination" => Axis::Pronosupination);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AngleKey {
    pub joint: Joint,
    pub side: Side,
    pub axis: Axis,
}

impl AngleKey {
    pub const fn new(joint: Joint, side: Side, axis: Axis) -> Self {
        AngleKey { joint, side, axis }
    }

    pub fn column(&self) -> String {
        format!("{self}_deg")
    }

    /// Parses `<joint>_<side>_<axis>_deg`.
    pub fn from_column(name: &str) -> Option<AngleKey> {
        let stem = name.strip_suffix("_deg")?;
        let mut parts = stem.splitn(3, '_');
        let joint = parts.next()?.parse().ok()?;
        let side = parts.next()?.parse().ok()?;
        let axis = parts.next()?.parse().ok()?;
        Some(AngleKey { joint, side, axis })
    }
}

impl fmt::Display for AngleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.joint, self.side, self.axis)
    }
}

impl Serialize for AngleKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AngleKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AngleKey::from_column(&format!("{s}_deg")).ok_or_else(|| serde::de::Error::custom(format!("bad angle key {s:?}")))
    }
}

/// Per-axis markers attached to a solved frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleFlag {
    Gimbal,
    Clamped,
    OutsideLimits,
}

/// Joint angles at one instant, in degrees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointAngleFrame {
    pub time_s: f64,
    pub angles: BTreeMap<AngleKey, f64>,
    pub flags: BTreeMap<AngleKey, BTreeSet<AngleFlag>>,
}

impl JointAngleFrame {
    pub fn get(&self, key: &AngleKey) -> Option<f64> {
        self.angles.get(key).copied()
    }

    pub fn flag(&mut self, key: AngleKey, flag: AngleFlag) {
        self.flags.entry(key).or_default().insert(flag);
    }

    pub fn has_flag(&self, key: &AngleKey, flag: AngleFlag) -> bool {
        self.flags.get(key).is_some_and(|f| f.contains(&flag))
    }
}

/// Uniformly sampled joint-angle trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleSeries {
    pub rate_hz: f64,
    /// Time of sample 0 in the clock the series was cut from.
    pub origin_s: f64,
    pub channels: BTreeMap<AngleKey, Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl JointAngleSeries {
    pub fn new(rate_hz: f64) -> Self {
        JointAngleSeries {
            rate_hz,
            origin_s: 0.0,
            channels: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate_hz
    }

    pub fn time_s(&self, i: usize) -> f64 {
        i as f64 / self.rate_hz
    }

    pub fn channel(&self, key: &AngleKey) -> Option<&[f64]> {
        self.channels.get(key).map(Vec::as_slice)
    }

    pub fn frame(&self, i: usize) -> JointAngleFrame {
        JointAngleFrame {
            time_s: self.time_s(i),
            angles: self.channels.iter().map(|(k, v)| (*k, v[i])).collect(),
            flags: BTreeMap::new(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = JointAngleFrame> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }

    /// Builds a series from frames; channels are the union of keys, missing values are NaN.
    pub fn from_frames(rate_hz: f64, frames: &[JointAngleFrame]) -> Self {
        let keys: BTreeSet<AngleKey> = frames.iter().flat_map(|f| f.angles.keys().copied()).collect();
        let channels = keys
            .into_iter()
            .map(|k| (k, frames.iter().map(|f| f.get(&k).unwrap_or(f64::NAN)).collect()))
            .collect();
        JointAngleSeries {
            rate_hz,
            origin_s: 0.0,
            channels,
            metadata: BTreeMap::new(),
        }
    }

    /// Samples `[start, end)` as a new series re-timed to start at 0.
    pub fn slice(&self, start: usize, end: usize) -> JointAngleSeries {
        JointAngleSeries {
            rate_hz: self.rate_hz,
            origin_s: self.origin_s + start as f64 / self.rate_hz,
            channels: self.channels.iter().map(|(k, v)| (*k, v[start..end].to_vec())).collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Angle CSV with `# key: value` metadata comments.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# ergokin-angles v1\n");
        let _ = writeln!(out, "# rate_hz: {}", self.rate_hz);
        let _ = writeln!(out, "# origin_s: {}", self.origin_s);
        for (k, v) in &self.metadata {
            if !matches!(k.as_str(), "rate_hz" | "origin_s") {
                let _ = writeln!(out, "# {k}: {v}");
            }
        }
        out.push_str("time_s");
        for k in self.channels.keys() {
            let _ = write!(out, ",{}", k.column());
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{}", self.time_s(i));
            for v in self.channels.values() {
                let _ = write!(out, ",{}", v[i]);
            }
            out.push('\n');
        }
        out
    }
}

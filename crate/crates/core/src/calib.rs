//! N-pose boresight calibration and heading reset.
//!
//! Each sensor's mean attitude over a still window is stored; later samples
//! are expressed relative to it, which cancels the unknown sensor-to-segment
//! mounting. A single heading offset, read from the torso sensor, rotates the
//! result so that X points where the subject faced during calibration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Recording, SensorFrame};
use crate::rotmath::{geodesic, quat_mean, UnitQuat};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("subject moved during calibration: {segment} deviates {residual_deg:.2} deg (threshold {threshold_deg} deg)")]
    SubjectMoved {
        segment: String,
        residual_deg: f64,
        threshold_deg: f64,
    },
    #[error("segment {0:?} is not covered by the calibration profile")]
    CalibrationMismatch(String),
    #[error("invalid calibration window {start_s}-{end_s} s for a {duration_s} s recording")]
    BadWindow { start_s: f64, end_s: f64, duration_s: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibWarning {
    /// No torso segment: the heading offset was left at 0.
    HeadingUnavailable,
}

#[derive(Debug, Clone)]
pub struct CalibConfig {
    pub motion_threshold_deg: f64,
    pub heading_segment: String,
    /// Torso sensor attitude, relative to the torso, when mounted as intended.
    pub nominal_torso_mount: UnitQuat,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            motion_threshold_deg: 3.0,
            heading_segment: "torso".into(),
            nominal_torso_mount: UnitQuat::IDENTITY,
        }
    }
}

pub const DEFAULT_WINDOW_S: (f64, f64) = (0.0, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub boresight: BTreeMap<String, UnitQuat>,
    pub heading_offset_deg: f64,
    pub window: (f64, f64),
    pub residual_deg: f64,
    pub motion_threshold_deg: f64,
    pub nominal_torso_mount: UnitQuat,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub profile: CalibrationProfile,
    pub warnings: Vec<CalibWarning>,
}

/// Yaw (degrees, about +Y) of the X axis of `q` projected on the floor plane.
pub fn heading_of(q: &UnitQuat) -> f64 {
    let f = q.rotate([1.0, 0.0, 0.0]);
    (-f[2]).atan2(f[0]).to_degrees()
}

/// Estimates boresight attitudes and heading from the still window `[start, end]` seconds.
pub fn estimate_calibration(
    rec: &Recording,
    window: (f64, f64),
    config: &CalibConfig,
) -> Result<Calibration, CalibError> {
    let (start_s, end_s) = window;
    let duration_s = rec.duration_s();
    let bad = || CalibError::BadWindow {
        start_s,
        end_s,
        duration_s,
    };
    if !(start_s >= 0.0 && end_s > start_s && start_s < duration_s) {
        return Err(bad());
    }
    let frames: Vec<&SensorFrame> = rec
        .frames
        .iter()
        .filter(|f| f.time_s >= start_s - 1e-9 && f.time_s <= end_s + 1e-9)
        .collect();
    if frames.is_empty() {
        return Err(bad());
    }

    let mut boresight = BTreeMap::new();
    let mut residual_deg = 0.0f64;
    let mut worst = String::new();
    for segment in rec.segment_map.values() {
        let samples: Vec<UnitQuat> = frames.iter().map(|f| f.orientations[segment]).collect();
        let mean = quat_mean(&samples).map_err(|e| CalibError::InvalidProfile(e.to_string()))?;
        let r = samples
            .iter()
            .map(|q| geodesic(q, &mean).to_degrees())
            .fold(0.0, f64::max);
        if r > residual_deg {
            residual_deg = r;
            worst = segment.clone();
        }
        boresight.insert(segment.clone(), mean);
    }
    if residual_deg >= config.motion_threshold_deg {
        return Err(CalibError::SubjectMoved {
            segment: worst,
            residual_deg,
            threshold_deg: config.motion_threshold_deg,
        });
    }

    let mut warnings = Vec::new();
    let heading_offset_deg = match boresight.get(&config.heading_segment) {
        Some(torso) => heading_of(&(*torso * config.nominal_torso_mount.inverse())),
        None => {
            warn!("no {:?} segment; heading offset set to 0", config.heading_segment);
            warnings.push(CalibWarning::HeadingUnavailable);
            0.0
        }
    };
    Ok(Calibration {
        profile: CalibrationProfile {
            boresight,
            heading_offset_deg,
            window,
            residual_deg,
            motion_threshold_deg: config.motion_threshold_deg,
            nominal_torso_mount: config.nominal_torso_mount,
        },
        warnings,
    })
}

impl CalibrationProfile {
    fn heading(&self) -> UnitQuat {
        UnitQuat::rot_y(-self.heading_offset_deg)
    }

    /// Segment orientation for one raw sensor attitude: `H ⊗ q ⊗ q̄⁻¹ ⊗ H⁻¹`, `H = Ry(-heading)`.
    pub fn apply_one(&self, segment: &str, q: &UnitQuat) -> Result<UnitQuat, CalibError> {
        let bore = self
            .boresight
            .get(segment)
            .ok_or_else(|| CalibError::CalibrationMismatch(segment.to_string()))?;
        let h = self.heading();
        Ok(h * *q * bore.inverse() * h.inverse())
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.residual_deg < self.motion_threshold_deg) {
            return Err(CalibError::InvalidProfile(format!(
                "residual {} deg is not below the motion threshold {} deg",
                self.residual_deg, self.motion_threshold_deg
            )));
        }
        if !self.heading_offset_deg.is_finite() {
            return Err(CalibError::InvalidProfile("non-finite heading".into()));
        }
        Ok(())
    }
}

/// Calibrated segment orientations for one frame.
pub fn apply_calibration(
    frame: &SensorFrame,
    profile: &CalibrationProfile,
) -> Result<BTreeMap<String, UnitQuat>, CalibError> {
    frame
        .orientations
        .iter()
        .map(|(s, q)| Ok((s.clone(), profile.apply_one(s, q)?)))
        .collect()
}

/// A copy of `rec` with every frame calibrated, tagged with `tag`.
pub fn calibrate_recording(rec: &Recording, profile: &CalibrationProfile, tag: &str) -> Result<Recording, CalibError> {
    let frames = rec
        .frames
        .iter()
        .map(|f| {
            Ok(SensorFrame {
                orientations: apply_calibration(f, profile)?,
                ..f.clone()
            })
        })
        .collect::<Result<_, CalibError>>()?;
    Ok(Recording {
        frames,
        calibration: Some(tag.to_string()),
        ..rec.clone()
    })
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    version: u32,
    window: [f64; 2],
    heading_offset_deg: f64,
    residual_deg: f64,
    motion_threshold_deg: f64,
    heading_mode: String,
    nominal_torso_mount: [f64; 4],
    reference_pose: String,
    boresight: BTreeMap<String, [f64; 4]>,
}

impl CalibrationProfile {
    pub fn to_json(&self) -> String {
        let file = ProfileFile {
            version: PROFILE_VERSION,
            window: [self.window.0, self.window.1],
            heading_offset_deg: self.heading_offset_deg,
            residual_deg: self.residual_deg,
            motion_threshold_deg: self.motion_threshold_deg,
            heading_mode: "global".into(),
            nominal_torso_mount: self.nominal_torso_mount.canonical().to_array(),
            reference_pose: "n-pose-identity".into(),
            boresight: self
                .boresight
                .iter()
                .map(|(k, q)| (k.clone(), q.canonical().to_array()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibError> {
        let file: ProfileFile = serde_json::from_str(text)?;
        if file.version != PROFILE_VERSION {
            return Err(CalibError::InvalidProfile(format!("unsupported version {}", file.version)));
        }
        let quat = |c: [f64; 4]| -> Result<UnitQuat, CalibError> {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(CalibError::InvalidProfile(format!("non-unit quaternion {c:?}")));
            }
            UnitQuat::from_array(c).map_err(|e| CalibError::InvalidProfile(e.to_string()))
        };
        let profile = CalibrationProfile {
            boresight: file
                .boresight
                .into_iter()
                .map(|(k, c)| Ok((k, quat(c)?)))
                .collect::<Result<_, CalibError>>()?,
            heading_offset_deg: file.heading_offset_deg,
            window: (file.window[0], file.window[1]),
            residual_deg: file.residual_deg,
            motion_threshold_deg: file.motion_threshold_deg,
            nominal_torso_mount: quat(file.nominal_torso_mount)?,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, CalibError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

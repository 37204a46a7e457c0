//! Sensor ingest: wire protocol, frame assembly, network replay/record and
//! the file formats that enter or leave the pipeline as orientations.

mod assemble;
mod import;
pub mod net;
mod packet;
mod recording_csv;
mod sto;

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use thiserror::Error;

use crate::rotmath::UnitQuat;

pub use assemble::{assemble_frames, tick_time_us, CaptureQueue, CaptureStats, DEFAULT_STALENESS_MS};
pub use import::{import_output1, import_output2, Output1Options, Output2Import};
pub use packet::{decode_packet, encode_packet, quantize_q14, PACKET_LEN, PACKET_MAGIC, PROTOCOL_VERSION};
pub use recording_csv::{read_recording, read_recording_str, write_recording, write_recording_string};
pub use sto::{export_sto, read_sto_quaternions, write_angles_sto};

/// Most segments a single recording may carry.
pub const MAX_SEGMENTS: usize = 11;

/// Segment names understood by the pipeline.
pub const KNOWN_SEGMENTS: [&str; 11] = [
    "pelvis",
    "torso",
    "head",
    "upper_arm_l",
    "upper_arm_r",
    "forearm_l",
    "forearm_r",
    "hand_l",
    "hand_r",
    "thigh_l",
    "thigh_r",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("corrupt packet: checksum {expected:#04x} != {found:#04x}")]
    CorruptPacket { expected: u8, found: u8 },
    #[error("incomplete packet: {have} of {need} bytes")]
    Incomplete { have: usize, need: usize },
    #[error("no packets from sensor {sensor_id} ({segment}) before the first tick")]
    MissingSensor { sensor_id: u8, segment: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("recording is not calibrated")]
    CalibrationRequired,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("transport error: {0}")]
    Transport(#[source] io::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IngestError {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        IngestError::Format {
            line,
            message: message.into(),
        }
    }
}

/// One decoded orientation packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub sensor_id: u8,
    pub seq: u16,
    pub timestamp_us: u32,
    pub q: UnitQuat,
    pub status: u8,
}

impl SensorSample {
    pub const LOW_BATTERY: u8 = 0b01;
    pub const FUSION_DEGRADED: u8 = 0b10;
}

/// Body orientations at one receiver tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub tick_index: u64,
    pub time_s: f64,
    pub orientations: BTreeMap<String, UnitQuat>,
    pub stale: BTreeSet<String>,
}

/// A uniformly sampled sequence of body frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub rate_hz: f64,
    /// sensor id -> segment name
    pub segment_map: BTreeMap<u8, String>,
    /// Path or tag of the calibration profile the orientations are expressed in.
    pub calibration: Option<String>,
    pub frames: Vec<SensorFrame>,
}

impl Recording {
    pub fn segments(&self) -> Vec<String> {
        self.segment_map.values().cloned().collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.rate_hz
    }

    /// Index of the frame whose tick is at or before `time_s`.
    pub fn frame_index_at(&self, time_s: f64) -> usize {
        ((time_s * self.rate_hz + 1e-9).floor().max(0.0) as usize).min(self.frames.len().saturating_sub(1))
    }

    /// Builds a recording from per-frame orientation maps sampled at `rate_hz`.
    /// Sensor ids follow the order of `segments`.
    pub fn from_orientations(
        rate_hz: f64,
        segments: &[String],
        frames: Vec<BTreeMap<String, UnitQuat>>,
    ) -> Recording {
        let segment_map = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u8, s.clone()))
            .collect();
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, orientations)| SensorFrame {
                tick_index: i as u64,
                time_s: i as f64 / rate_hz,
                orientations,
                stale: BTreeSet::new(),
            })
            .collect();
        Recording {
            rate_hz,
            segment_map,
            calibration: None,
            frames,
        }
    }

    /// Checks the structural invariants: segment count, names and frame contents.
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(IngestError::InvalidArgument(format!("rate {} Hz", self.rate_hz)));
        }
        if self.segment_map.len() > MAX_SEGMENTS {
            return Err(IngestError::InvalidArgument(format!(
                "{} segments (max {MAX_SEGMENTS})",
                self.segment_map.len()
            )));
        }
        for name in self.segment_map.values() {
            validate_segment_name(name)?;
        }
        let names: BTreeSet<&String> = self.segment_map.values().collect();
        let mut last_tick = None;
        for f in &self.frames {
            if f.orientations.len() != names.len() || !f.orientations.keys().all(|k| names.contains(k)) {
                return Err(IngestError::InvalidArgument(format!(
                    "frame {} does not carry exactly the mapped segments",
                    f.tick_index
                )));
            }
            if let Some(t) = last_tick {
                if f.tick_index <= t {
                    return Err(IngestError::InvalidArgument(format!(
                        "tick index {} not increasing",
                        f.tick_index
                    )));
                }
            }
            last_tick = Some(f.tick_index);
        }
        Ok(())
    }
}

pub fn validate_segment_name(name: &str) -> Result<(), IngestError> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == ',' || c == '\t') {
        return Err(IngestError::InvalidArgument(format!("segment name {name:?}")));
    }
    if !KNOWN_SEGMENTS.contains(&name) {
        return Err(IngestError::InvalidArgument(format!("unknown segment {name:?}")));
    }
    Ok(())
}

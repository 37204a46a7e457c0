//! Inertial motion capture to RULA ergonomics pipeline.
//!
//! Stages: sensor packets are assembled into frames ([`ingest`]), calibrated
//! against an N-pose ([`calib`]), turned into joint angles ([`kinmodel`]),
//! trimmed to active work ([`segment`]), scored ([`rula`]), compared across
//! capture systems ([`compare`]) and bundled for review ([`report`]).

pub mod rotmath;
pub mod angles;
pub mod ingest;
pub mod calib;
pub mod kinmodel;
pub mod synth;
pub mod segment;
pub mod rula;
pub mod compare;
pub mod report;

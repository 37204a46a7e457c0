//! Seeded synthetic motion and sensor simulation for tests and demos.
//!
//! A [`SyntheticMotion`] is a smooth, continuous-time posture: an N-pose hold,
//! a ramp, then sums of sinusoids per joint axis inside comfortable ranges.
//! A [`SensorRig`] turns segment orientations into what body-worn sensors
//! would report: a subject yaw, a fixed mounting rotation per sensor and
//! optional orientation noise.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::angles::{AngleKey, Axis, Joint, JointAngleFrame, JointAngleSeries};
use crate::ingest::Recording;
use crate::kinmodel::{segment_orientations, KinematicModel};
use crate::rotmath::UnitQuat;

#[derive(Debug, Clone)]
struct Channel {
    key: AngleKey,
    center: f64,
    /// (amplitude deg, frequency Hz, phase rad)
    terms: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticMotion {
    pub model: KinematicModel,
    /// Length of the still N-pose at the start.
    pub npose_s: f64,
    pub ramp_s: f64,
    channels: Vec<Channel>,
    root_terms: [(f64, f64, f64); 3],
}

fn range_for(key: &AngleKey) -> (f64, f64) {
    match (key.joint, key.axis) {
        (Joint::Shoulder, Axis::Flexion) => (30.0, 40.0),
        (Joint::Shoulder, Axis::Abduction) => (15.0, 15.0),
        (Joint::Shoulder, _) => (0.0, 25.0),
        (Joint::Elbow, Axis::Flexion) => (60.0, 40.0),
        (Joint::Elbow, Axis::Abduction) => (0.0, 3.0),
        (Joint::Elbow, _) => (0.0, 40.0),
        (Joint::Trunk, Axis::Flexion) => (15.0, 15.0),
        (Joint::Trunk, Axis::Abduction) => (0.0, 8.0),
        (Joint::Trunk, _) => (0.0, 10.0),
    }
}

fn terms(rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<(f64, f64, f64)> {
    let split = rng.random_range(0.55..0.8);
    vec![
        (amplitude * split, rng.random_range(0.08..0.25), rng.random_range(0.0..TAU)),
        (amplitude * (1.0 - split), rng.random_range(0.25..0.6), rng.random_range(0.0..TAU)),
    ]
}

fn eval(terms: &[(f64, f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(a, f, p)| a * (TAU * f * t + p).sin()).sum()
}

impl SyntheticMotion {
    pub fn new(model: KinematicModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = model
            .angle_keys()
            .into_iter()
            .map(|key| {
                let (center, amplitude) = range_for(&key);
                Channel {
                    key,
                    center,
                    terms: terms(&mut rng, amplitude),
                }
            })
            .collect();
        let mut root = || {
            let t = terms(&mut rng, 1.0);
            (t[0].0, t[0].1, t[0].2)
        };
        let root_terms = [root(), root(), root()];
        SyntheticMotion {
            model,
            npose_s: 3.0,
            ramp_s: 1.0,
            channels,
            root_terms,
        }
    }

    fn gate(&self, t: f64) -> f64 {
        let u = ((t - self.npose_s) / self.ramp_s).clamp(0.0, 1.0);
        u * u * (3.0 - 2.0 * u)
    }

    /// Ground-truth joint angles at motion time `t`.
    pub fn angles_at(&self, t: f64) -> JointAngleFrame {
        let g = self.gate(t);
        let mut f = JointAngleFrame {
            time_s: t,
            ..Default::default()
        };
        for c in &self.channels {
            let limit = self.model.limit(&c.key).expect("channel from model");
            let v = g * (c.center + eval(&c.terms, t));
            f.angles.insert(c.key, limit.clamp(v));
        }
        f
    }

    /// Root segment orientation: a gentle sway about the N-pose attitude.
    pub fn root_at(&self, t: f64) -> UnitQuat {
        let g = self.gate(t);
        let [yaw, pitch, roll] = self.root_terms.map(|(a, f, p)| g * a * (TAU * f * t + p).sin());
        UnitQuat::rot_y(12.0 * yaw) * UnitQuat::rot_z(-8.0 * pitch) * UnitQuat::rot_x(4.0 * roll)
    }

    pub fn segment_orientations_at(&self, t: f64) -> BTreeMap<String, UnitQuat> {
        segment_orientations(&self.angles_at(t), &self.model, self.root_at(t)).expect("complete synthetic frame")
    }

    /// Ground truth sampled like [`SensorRig::record`] samples the sensors.
    pub fn truth_series(&self, rate_hz: f64, duration_s: f64, offset_s: f64) -> JointAngleSeries {
        let n = frame_count(rate_hz, duration_s);
        let frames: Vec<JointAngleFrame> = (0..n)
            .map(|k| self.angles_at(offset_s + k as f64 / rate_hz))
            .collect();
        let mut s = JointAngleSeries::from_frames(rate_hz, &frames);
        s.metadata.insert("source".into(), "synthetic truth".into());
        s
    }
}

fn frame_count(rate_hz: f64, duration_s: f64) -> usize {
    (duration_s * rate_hz + 1e-9).floor() as usize
}

/// Simulated body-worn sensors.
#[derive(Debug, Clone)]
pub struct SensorRig {
    /// Subject facing direction, as a turn about the vertical axis.
    pub heading_deg: f64,
    /// Sensor attitude relative to its segment.
    pub mounts: BTreeMap<String, UnitQuat>,
    /// RMS magnitude of the per-sample orientation noise rotation.
    pub noise_rms_deg: f64,
    pub noise_seed: u64,
}

impl SensorRig {
    /// Uniformly random mounts for every model segment.
    pub fn random(model: &KinematicModel, heading_deg: f64, noise_rms_deg: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mounts = model
            .segments()
            .into_iter()
            .map(|s| {
                let c: [f64; 4] = std::array::from_fn(|_| Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng));
                (s, UnitQuat::new(c[0], c[1], c[2], c[3]))
            })
            .collect();
        SensorRig {
            heading_deg,
            mounts,
            noise_rms_deg,
            noise_seed: rng.random(),
        }
    }

    /// Samples `motion` from `offset_s` for `duration_s` at `rate_hz`.
    pub fn record(&self, motion: &SyntheticMotion, rate_hz: f64, duration_s: f64, offset_s: f64) -> Recording {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let sigma = (self.noise_rms_deg / 3f64.sqrt()).to_radians();
        let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let yaw = UnitQuat::rot_y(self.heading_deg);
        let segments = motion.model.segments();
        let frames = (0..frame_count(rate_hz, duration_s))
            .map(|k| {
                let seg = motion.segment_orientations_at(offset_s + k as f64 / rate_hz);
                segments
                    .iter()
                    .map(|s| {
                        let mut q = yaw * seg[s] * self.mounts[s];
                        if self.noise_rms_deg > 0.0 {
                            let n = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
                            q = q * UnitQuat::from_rotation_vector(n);
                        }
                        (s.clone(), q)
                    })
                    .collect()
            })
            .collect();
        Recording::from_orientations(rate_hz, &segments, frames)
    }
}

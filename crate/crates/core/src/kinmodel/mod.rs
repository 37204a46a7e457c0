//! Upper-body kinematic chain: joint-angle extraction, forward kinematics and
//! limit-constrained chain IK.
//!
//! Every joint is a Z-X'-Y'' rotation of the child relative to the parent.
//! Anatomical angles are the Euler angles times a per-joint sign vector, so
//! that positive flexion and abduction mean the same thing on every joint.
//! Left-side joints are reflected through the sagittal plane first, which
//! makes left and right angles directly comparable.

mod ik;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angles::{AngleFlag, AngleKey, Axis, Joint, JointAngleFrame, JointAngleSeries, Side};
use crate::ingest::Recording;
use crate::rotmath::{euler_compose, euler_decompose_with_context, EulerZXY, UnitQuat};

pub use ik::{chain_ik, residual_and_jacobian, IkOptions, IkSolution};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limit {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl Limit {
    pub const fn new(min_deg: f64, max_deg: f64) -> Self {
        Limit { min_deg, max_deg }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min_deg && v <= self.max_deg
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min_deg, self.max_deg)
    }
}

/// One parent -> child joint of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDef {
    pub joint: Joint,
    pub side: Side,
    pub parent: String,
    pub child: String,
    /// Anatomical angle = sign × Euler angle, per slot (Z, X', Y'').
    pub axis_signs: [f64; 3],
    pub limits: [Limit; 3],
}

impl JointDef {
    pub fn keys(&self) -> [AngleKey; 3] {
        self.joint.axes().map(|a| AngleKey::new(self.joint, self.side, a))
    }

    pub fn mirrored(&self) -> bool {
        self.side == Side::Left
    }

    /// Child-relative-to-parent rotation for anatomical angles in degrees.
    pub fn rotation(&self, anat_deg: [f64; 3]) -> UnitQuat {
        let s = self.axis_signs;
        let q = euler_compose(&EulerZXY::new(s[0] * anat_deg[0], s[1] * anat_deg[1], s[2] * anat_deg[2]));
        if self.mirrored() {
            q.mirror_sagittal()
        } else {
            q
        }
    }

    /// Inverse of [`JointDef::rotation`]; `previous_deg` resolves gimbal lock.
    pub fn angles_of(&self, relative: &UnitQuat, previous_deg: Option<[f64; 3]>) -> ([f64; 3], bool) {
        let rel = if self.mirrored() { relative.mirror_sagittal() } else { *relative };
        let s = self.axis_signs;
        let e = euler_decompose_with_context(&rel, previous_deg.map(|p| s[2] * p[2]));
        (
            [s[0] * e.flexion_deg, s[1] * e.abduction_deg, s[2] * e.rotation_deg],
            e.gimbal_flag,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub pelvis_to_torso: f64,
    pub torso: f64,
    pub shoulder_half_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
}

impl Default for SegmentLengths {
    fn default() -> Self {
        SegmentLengths {
            pelvis_to_torso: 0.10,
            torso: 0.45,
            shoulder_half_width: 0.20,
            upper_arm: 0.30,
            forearm: 0.27,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    pub root: String,
    /// Parent-before-child order.
    pub joints: Vec<JointDef>,
    pub lengths_m: SegmentLengths,
    pub weights: BTreeMap<String, f64>,
}

pub fn default_limits(joint: Joint) -> [Limit; 3] {
    match joint {
        Joint::Shoulder => [Limit::new(-60.0, 180.0), Limit::new(-30.0, 180.0), Limit::new(-90.0, 90.0)],
        Joint::Elbow => [Limit::new(0.0, 150.0), Limit::new(-30.0, 30.0), Limit::new(-90.0, 90.0)],
        Joint::Trunk => [Limit::new(-30.0, 90.0), Limit::new(-40.0, 40.0), Limit::new(-45.0, 45.0)],
    }
}

pub fn default_axis_signs(joint: Joint) -> [f64; 3] {
    match joint {
        // right-arm abduction moves the arm toward +Z, a negative turn about X
        Joint::Shoulder => [1.0, -1.0, 1.0],
        Joint::Elbow => [1.0, 1.0, 1.0],
        // forward trunk flexion tips +Y toward +X, a negative turn about Z
        Joint::Trunk => [-1.0, 1.0, 1.0],
    }
}

fn joint_def(joint: Joint, side: Side, parent: &str, child: &str) -> JointDef {
    JointDef {
        joint,
        side,
        parent: parent.into(),
        child: child.into(),
        axis_signs: default_axis_signs(joint),
        limits: default_limits(joint),
    }
}

impl Default for KinematicModel {
    fn default() -> Self {
        Self::upper_body(false)
    }
}

impl KinematicModel {
    /// Torso, both arms and forearms; with a pelvis root and trunk joint when `with_pelvis`.
    pub fn upper_body(with_pelvis: bool) -> Self {
        let mut joints = Vec::new();
        if with_pelvis {
            joints.push(joint_def(Joint::Trunk, Side::Center, "pelvis", "torso"));
        }
        for (side, s) in [(Side::Left, "l"), (Side::Right, "r")] {
            joints.push(joint_def(Joint::Shoulder, side, "torso", &format!("upper_arm_{s}")));
            joints.push(joint_def(Joint::Elbow, side, &format!("upper_arm_{s}"), &format!("forearm_{s}")));
        }
        let root = if with_pelvis { "pelvis" } else { "torso" }.to_string();
        let mut model = KinematicModel {
            root,
            joints,
            lengths_m: SegmentLengths::default(),
            weights: BTreeMap::new(),
        };
        model.weights = model.segments().into_iter().map(|s| (s, 1.0)).collect();
        model
    }

    /// Root first, then children in joint order.
    pub fn segments(&self) -> Vec<String> {
        std::iter::once(self.root.clone())
            .chain(self.joints.iter().map(|j| j.child.clone()))
            .collect()
    }

    pub fn weight(&self, segment: &str) -> f64 {
        self.weights.get(segment).copied().unwrap_or(1.0)
    }

    pub fn joint(&self, joint: Joint, side: Side) -> Option<&JointDef> {
        self.joints.iter().find(|j| j.joint == joint && j.side == side)
    }

    pub fn angle_keys(&self) -> Vec<AngleKey> {
        self.joints.iter().flat_map(|j| j.keys()).collect()
    }

    pub fn limit(&self, key: &AngleKey) -> Option<Limit> {
        let j = self.joint(key.joint, key.side)?;
        let slot = key.joint.axes().iter().position(|a| *a == key.axis)?;
        Some(j.limits[slot])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut known: BTreeSet<&str> = BTreeSet::from([self.root.as_str()]);
        for j in &self.joints {
            if !known.contains(j.parent.as_str()) {
                return Err(ModelError::InvalidModel(format!(
                    "joint {}_{} has parent {:?} before it is defined",
                    j.joint, j.side, j.parent
                )));
            }
            if !known.insert(j.child.as_str()) {
                return Err(ModelError::InvalidModel(format!("segment {:?} has two parents", j.child)));
            }
            for l in &j.limits {
                if !(l.min_deg < l.max_deg) {
                    return Err(ModelError::InvalidModel(format!("limits {l:?} on {}_{}", j.joint, j.side)));
                }
            }
            if j.axis_signs.iter().any(|s| s.abs() != 1.0) {
                return Err(ModelError::InvalidModel("axis signs must be +1 or -1".into()));
            }
        }
        if self.weights.values().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(ModelError::InvalidModel("weights must be non-negative".into()));
        }
        Ok(())
    }
}

fn anat(frame: &JointAngleFrame, j: &JointDef) -> Result<[f64; 3], ModelError> {
    let keys = j.keys();
    let mut out = [0.0; 3];
    for (o, k) in out.iter_mut().zip(&keys) {
        *o = frame
            .get(k)
            .ok_or_else(|| ModelError::ModelMismatch(format!("missing joint value {k}")))?;
    }
    Ok(out)
}

/// Joint angles from segment orientations by direct decomposition, no limits.
pub fn joint_angles_analytic(
    seg_orients: &BTreeMap<String, UnitQuat>,
    model: &KinematicModel,
) -> Result<JointAngleFrame, ModelError> {
    joint_angles_analytic_with_context(seg_orients, model, None)
}

/// As [`joint_angles_analytic`], resolving gimbal lock with the previous frame's axial rotation.
pub fn joint_angles_analytic_with_context(
    seg_orients: &BTreeMap<String, UnitQuat>,
    model: &KinematicModel,
    previous: Option<&JointAngleFrame>,
) -> Result<JointAngleFrame, ModelError> {
    let mut frame = JointAngleFrame::default();
    for j in &model.joints {
        let get = |s: &str| {
            seg_orients
                .get(s)
                .ok_or_else(|| ModelError::ModelMismatch(format!("missing segment {s:?}")))
        };
        let rel = get(&j.parent)?.inverse() * *get(&j.child)?;
        let prev = previous.and_then(|p| anat(p, j).ok());
        let (angles, gimbal) = j.angles_of(&rel, prev);
        for ((k, v), limit) in j.keys().iter().zip(angles).zip(&j.limits) {
            frame.angles.insert(*k, v);
            if gimbal {
                frame.flag(*k, AngleFlag::Gimbal);
            }
            if !limit.contains(v) {
                frame.flag(*k, AngleFlag::OutsideLimits);
            }
        }
    }
    Ok(frame)
}

/// Orientation and joint positions of one body segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPose {
    #[serde(with = "quat_array")]
    pub orientation: UnitQuat,
    pub proximal: [f64; 3],
    pub distal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPose {
    pub time_s: f64,
    pub segments: BTreeMap<String, SegmentPose>,
}

pub(crate) mod quat_array {
    use crate::rotmath::UnitQuat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuat, s: S) -> Result<S::Ok, S::Error> {
        q.canonical().to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuat, D::Error> {
        let c = <[f64; 4]>::deserialize(d)?;
        UnitQuat::from_array(c).map_err(serde::de::Error::custom)
    }
}

/// Segment orientations for joint angles `theta` under a root orientation.
pub fn segment_orientations(
    theta: &JointAngleFrame,
    model: &KinematicModel,
    root: UnitQuat,
) -> Result<BTreeMap<String, UnitQuat>, ModelError> {
    let mut out = BTreeMap::from([(model.root.clone(), root)]);
    for j in &model.joints {
        let parent = *out
            .get(&j.parent)
            .ok_or_else(|| ModelError::ModelMismatch(format!("parent {:?} unresolved", j.parent)))?;
        out.insert(j.child.clone(), parent * j.rotation(anat(theta, j)?));
    }
    Ok(out)
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Skeleton for joint angles `theta` with the root at the origin in N-pose attitude.
pub fn forward_kinematics(theta: &JointAngleFrame, model: &KinematicModel) -> Result<SkeletonPose, ModelError> {
    forward_kinematics_rooted(theta, model, UnitQuat::IDENTITY)
}

/// Forward kinematics with an explicit root orientation. Positions grow from
/// the pelvis origin: +Y along the trunk, -Y along the arms.
pub fn forward_kinematics_rooted(
    theta: &JointAngleFrame,
    model: &KinematicModel,
    root: UnitQuat,
) -> Result<SkeletonPose, ModelError> {
    let orient = segment_orientations(theta, model, root)?;
    let len = model.lengths_m;
    let mut segments = BTreeMap::new();
    let mut torso_base = [0.0; 3];
    if let Some(p) = orient.get("pelvis") {
        let distal = p.rotate([0.0, len.pelvis_to_torso, 0.0]);
        segments.insert(
            "pelvis".to_string(),
            SegmentPose {
                orientation: *p,
                proximal: [0.0; 3],
                distal,
            },
        );
        torso_base = distal;
    }
    let torso = orient
        .get("torso")
        .ok_or_else(|| ModelError::ModelMismatch("model has no torso".into()))?;
    let neck = add(torso_base, torso.rotate([0.0, len.torso, 0.0]));
    segments.insert(
        "torso".to_string(),
        SegmentPose {
            orientation: *torso,
            proximal: torso_base,
            distal: neck,
        },
    );
    for (s, z) in [("l", -1.0), ("r", 1.0)] {
        let ua_name = format!("upper_arm_{s}");
        let Some(ua) = orient.get(&ua_name) else { continue };
        let shoulder = add(neck, torso.rotate([0.0, 0.0, z * len.shoulder_half_width]));
        let elbow = add(shoulder, ua.rotate([0.0, -len.upper_arm, 0.0]));
        segments.insert(
            ua_name,
            SegmentPose {
                orientation: *ua,
                proximal: shoulder,
                distal: elbow,
            },
        );
        let fa_name = format!("forearm_{s}");
        if let Some(fa) = orient.get(&fa_name) {
            segments.insert(
                fa_name,
                SegmentPose {
                    orientation: *fa,
                    proximal: elbow,
                    distal: add(elbow, fa.rotate([0.0, -len.forearm, 0.0])),
                },
            );
        }
    }
    Ok(SkeletonPose {
        time_s: theta.time_s,
        segments,
    })
}

/// Which IK path produced an angle file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IkMode {
    Analytic,
    Chain,
}

impl std::str::FromStr for IkMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(IkMode::Analytic),
            "chain" => Ok(IkMode::Chain),
            other => Err(format!("unknown IK mode {other:?} (expected analytic or chain)")),
        }
    }
}

impl IkMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IkMode::Analytic => "analytic",
            IkMode::Chain => "chain",
        }
    }
}

/// Joint angles for a whole recording, plus the root orientation per frame.
#[derive(Debug, Clone)]
pub struct IkRun {
    pub frames: Vec<JointAngleFrame>,
    pub roots: Vec<UnitQuat>,
    /// Final chain cost per frame; empty for the analytic mode.
    pub costs: Vec<f64>,
}

impl IkRun {
    pub fn series(&self, rec: &Recording, mode: IkMode) -> JointAngleSeries {
        let mut s = JointAngleSeries::from_frames(rec.rate_hz, &self.frames);
        s.origin_s = rec.frames.first().map_or(0.0, |f| f.time_s);
        s.metadata.insert("ik_mode".into(), mode.as_str().into());
        if let Some(c) = &rec.calibration {
            s.metadata.insert("calibration".into(), c.clone());
        }
        s
    }

    pub fn poses(&self, model: &KinematicModel) -> Result<Vec<SkeletonPose>, ModelError> {
        self.frames
            .iter()
            .zip(&self.roots)
            .map(|(f, r)| forward_kinematics_rooted(f, model, *r))
            .collect()
    }
}

/// Runs the selected IK mode over every frame. The chain solver warm-starts
/// from the previous frame; the analytic path uses it to resolve gimbal lock.
pub fn solve_recording(rec: &Recording, model: &KinematicModel, mode: IkMode, opts: &IkOptions) -> Result<IkRun, ModelError> {
    model.validate()?;
    let mut run = IkRun {
        frames: Vec::with_capacity(rec.frames.len()),
        roots: Vec::with_capacity(rec.frames.len()),
        costs: Vec::new(),
    };
    let mut last: Option<IkSolution> = None;
    for f in &rec.frames {
        if f.orientations.values().any(|q| q.to_array().iter().any(|c| !c.is_finite())) {
            return Err(ModelError::NumericalError(format!("non-finite orientation at t={}", f.time_s)));
        }
        let mut frame = match mode {
            IkMode::Analytic => {
                let frame = joint_angles_analytic_with_context(&f.orientations, model, run.frames.last())?;
                let root = *f
                    .orientations
                    .get(&model.root)
                    .ok_or_else(|| ModelError::ModelMismatch(format!("missing segment {:?}", model.root)))?;
                run.roots.push(root);
                frame
            }
            IkMode::Chain => {
                let sol = chain_ik(&f.orientations, model, last.as_ref(), opts)?;
                run.roots.push(sol.root);
                run.costs.push(sol.cost);
                let frame = sol.frame.clone();
                last = Some(sol);
                frame
            }
        };
        frame.time_s = f.time_s;
        run.frames.push(frame);
    }
    Ok(run)
}

// ---- model file ----

#[derive(Serialize, Deserialize)]
struct SegmentEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<Joint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<Side>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    segments: Vec<SegmentEntry>,
    limits: BTreeMap<Joint, BTreeMap<Axis, [f64; 2]>>,
    lengths_m: SegmentLengths,
    #[serde(default)]
    weights: BTreeMap<String, f64>,
    euler_sequences: BTreeMap<Joint, String>,
    #[serde(default)]
    axis_signs: BTreeMap<Joint, [f64; 3]>,
}

impl KinematicModel {
    pub fn to_json(&self) -> String {
        let mut segments = vec![SegmentEntry {
            name: self.root.clone(),
            parent: None,
            joint: None,
            side: None,
        }];
        let mut limits: BTreeMap<Joint, BTreeMap<Axis, [f64; 2]>> = BTreeMap::new();
        let mut euler_sequences = BTreeMap::new();
        let mut axis_signs = BTreeMap::new();
        for j in &self.joints {
            segments.push(SegmentEntry {
                name: j.child.clone(),
                parent: Some(j.parent.clone()),
                joint: Some(j.joint),
                side: Some(j.side),
            });
            let axes = j.joint.axes();
            limits.insert(
                j.joint,
                axes.iter().zip(&j.limits).map(|(a, l)| (*a, [l.min_deg, l.max_deg])).collect(),
            );
            euler_sequences.insert(j.joint, "ZXY".to_string());
            axis_signs.insert(j.joint, j.axis_signs);
        }
        let file = ModelFile {
            segments,
            limits,
            lengths_m: self.lengths_m,
            weights: self.weights.clone(),
            euler_sequences,
            axis_signs,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let mut roots = file.segments.iter().filter(|s| s.parent.is_none());
        let root = roots
            .next()
            .ok_or_else(|| ModelError::InvalidModel("no root segment".into()))?
            .name
            .clone();
        if roots.next().is_some() {
            return Err(ModelError::InvalidModel("more than one root segment".into()));
        }
        let mut joints = Vec::new();
        for s in file.segments.iter().filter(|s| s.parent.is_some()) {
            let joint = s
                .joint
                .ok_or_else(|| ModelError::InvalidModel(format!("segment {:?} lacks a joint", s.name)))?;
            let side = s
                .side
                .ok_or_else(|| ModelError::InvalidModel(format!("segment {:?} lacks a side", s.name)))?;
            match file.euler_sequences.get(&joint).map(String::as_str) {
                Some("ZXY") | None => {}
                Some(other) => {
                    return Err(ModelError::InvalidModel(format!(
                        "euler sequence {other:?} for {joint}: only ZXY is supported"
                    )))
                }
            }
            let mut limits = default_limits(joint);
            if let Some(given) = file.limits.get(&joint) {
                for (slot, axis) in joint.axes().iter().enumerate() {
                    if let Some([lo, hi]) = given.get(axis) {
                        limits[slot] = Limit::new(*lo, *hi);
                    }
                }
                if let Some(a) = given.keys().find(|a| !joint.axes().contains(a)) {
                    return Err(ModelError::InvalidModel(format!("{joint} has no {a} axis")));
                }
            }
            joints.push(JointDef {
                joint,
                side,
                parent: s.parent.clone().expect("filtered"),
                child: s.name.clone(),
                axis_signs: file.axis_signs.get(&joint).copied().unwrap_or(default_axis_signs(joint)),
                limits,
            });
        }
        let model = KinematicModel {
            root,
            joints,
            lengths_m: file.lengths_m,
            weights: file.weights,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

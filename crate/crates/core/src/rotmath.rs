//! Rotation algebra shared by every stage of the pipeline.
//!
//! Conventions: Hamilton quaternions, active rotations, global frame with
//! X anterior, Y up and Z to the subject's right. Euler angles use the
//! intrinsic Z-X'-Y'' sequence: flexion about Z, abduction about the
//! rotated X, axial rotation about the twice rotated Y.

use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// |abduction| above this is reported as gimbal locked.
pub const GIMBAL_THRESHOLD_DEG: f64 = 85.0;

#[derive(Debug, Error, PartialEq)]
pub enum RotError {
    #[error("cannot average an empty set of quaternions")]
    EmptyMean,
    #[error("quaternion has zero or non-finite norm")]
    Degenerate,
}

/// A rotation stored as a unit quaternion.
///
/// Every constructor and arithmetic operation renormalizes, so the norm stays
/// within floating point noise of one.
#[derive(Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for UnitQuat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnitQuat({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given components. Fails on zero or non-finite input.
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RotError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(RotError::Degenerate);
        }
        Ok(UnitQuat {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Like [`UnitQuat::try_new`] but panics on degenerate input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::try_new(w, x, y, z).expect("degenerate quaternion")
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self, RotError> {
        Self::try_new(c[0], c[1], c[2], c[3])
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle_rad` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle_rad).sin_cos();
        let k = s / n;
        Self::new(c, axis[0] * k, axis[1] * k, axis[2] * k)
    }

    pub fn rot_x(deg: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], deg.to_radians())
    }
    pub fn rot_y(deg: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], deg.to_radians())
    }
    pub fn rot_z(deg: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], deg.to_radians())
    }

    /// Exponential map of a rotation vector (radians).
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if angle < 1e-12 {
            // second order expansion keeps tiny steps accurate
            return Self::new(1.0 - angle * angle / 8.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]);
        }
        Self::from_axis_angle(v, angle)
    }

    /// Logarithm map: the rotation vector (radians) of the shortest arc, norm in [0, pi].
    pub fn to_rotation_vector(&self) -> [f64; 3] {
        let q = self.canonical();
        let vn = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if vn < 1e-300 {
            return [0.0; 3];
        }
        let angle = 2.0 * vn.atan2(q.w);
        let k = angle / vn;
        [q.x * k, q.y * k, q.z * k]
    }

    pub fn conjugate(&self) -> Self {
        UnitQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    pub fn negated(&self) -> Self {
        UnitQuat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, o: &UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Sign representative with w > 0, or the first nonzero component positive when w = 0.
    pub fn canonical(&self) -> Self {
        let c = self.to_array();
        match c.iter().find(|v| **v != 0.0) {
            Some(v) if *v < 0.0 => self.negated(),
            _ => *self,
        }
    }

    pub fn norm_deviation(&self) -> f64 {
        ((self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt() - 1.0).abs()
    }

    /// Rotates a vector.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let UnitQuat { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Reflection through the sagittal (X-Y) plane, R -> M R M with M = diag(1, 1, -1).
    pub fn mirror_sagittal(&self) -> Self {
        UnitQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: self.z,
        }
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;

    fn mul(self, b: UnitQuat) -> UnitQuat {
        compose(self, b)
    }
}

/// Hamilton product `a ⊗ b`: apply `b` first, then `a`.
pub fn compose(a: UnitQuat, b: UnitQuat) -> UnitQuat {
    UnitQuat::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Angle of the rotation in degrees, in [0, 180].
pub fn rotation_angle(q: &UnitQuat) -> f64 {
    let vn = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    (2.0 * vn.atan2(q.w.abs())).to_degrees()
}

/// Geodesic distance between two rotations in radians.
pub fn geodesic(a: &UnitQuat, b: &UnitQuat) -> f64 {
    rotation_angle(&compose(a.inverse(), *b)).to_radians()
}

/// Intrinsic Z-X'-Y'' angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerZXY {
    pub flexion_deg: f64,
    pub abduction_deg: f64,
    pub rotation_deg: f64,
    pub gimbal_flag: bool,
}

impl EulerZXY {
    pub fn new(flexion_deg: f64, abduction_deg: f64, rotation_deg: f64) -> Self {
        EulerZXY {
            flexion_deg,
            abduction_deg,
            rotation_deg,
            gimbal_flag: abduction_deg.abs() > GIMBAL_THRESHOLD_DEG,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.flexion_deg, self.abduction_deg, self.rotation_deg]
    }
}

fn wrap_half_open(deg: f64) -> f64 {
    // (-180, 180]
    let mut d = deg % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// `Rz(flexion) ⊗ Rx(abduction) ⊗ Ry(rotation)`.
pub fn euler_compose(e: &EulerZXY) -> UnitQuat {
    UnitQuat::rot_z(e.flexion_deg) * UnitQuat::rot_x(e.abduction_deg) * UnitQuat::rot_y(e.rotation_deg)
}

/// Decomposes without stream context: gimbal-locked frames get rotation 0.
pub fn euler_decompose(q: &UnitQuat) -> EulerZXY {
    euler_decompose_with_context(q, None)
}

/// Decomposes `q` into Z-X'-Y'' angles.
///
/// When |abduction| exceeds [`GIMBAL_THRESHOLD_DEG`] the axial rotation is pinned to
/// `previous_rotation_deg` (or 0) and flexion is solved for that pinned value.
pub fn euler_decompose_with_context(q: &UnitQuat, previous_rotation_deg: Option<f64>) -> EulerZXY {
    let m = q.to_matrix();
    let abduction = m[2][1].atan2((m[0][1] * m[0][1] + m[1][1] * m[1][1]).sqrt());
    let abduction_deg = abduction.to_degrees();
    if abduction_deg.abs() > GIMBAL_THRESHOLD_DEG {
        let rotation_deg = previous_rotation_deg.unwrap_or(0.0);
        // R · Ry(rotation)^T = Rz(flexion) · Rx(abduction), whose first column is (cos f, sin f, 0)
        let r = q * UnitQuat::rot_y(rotation_deg).inverse();
        let rm = r.to_matrix();
        let flexion = rm[1][0].atan2(rm[0][0]);
        return EulerZXY {
            flexion_deg: wrap_half_open(flexion.to_degrees()),
            abduction_deg,
            rotation_deg,
            gimbal_flag: true,
        };
    }
    let flexion = (-m[0][1]).atan2(m[1][1]);
    let rotation = (-m[2][0]).atan2(m[2][2]);
    EulerZXY {
        flexion_deg: wrap_half_open(flexion.to_degrees()),
        abduction_deg,
        rotation_deg: wrap_half_open(rotation.to_degrees()),
        gimbal_flag: false,
    }
}

impl Mul<UnitQuat> for &UnitQuat {
    type Output = UnitQuat;

    fn mul(self, b: UnitQuat) -> UnitQuat {
        compose(*self, b)
    }
}

/// Shortest-arc spherical interpolation.
pub fn slerp(a: &UnitQuat, b: &UnitQuat, t: f64) -> UnitQuat {
    let mut b = *b;
    let mut d = a.dot(&b);
    if d < 0.0 {
        b = b.negated();
        d = -d;
    }
    if d > 1.0 - 1e-12 {
        // nearly parallel: normalized lerp is exact to rounding
        return UnitQuat::new(
            a.w + t * (b.w - a.w),
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.z + t * (b.z - a.z),
        );
    }
    let theta = d.min(1.0).acos();
    let s = theta.sin();
    let ka = ((1.0 - t) * theta).sin() / s;
    let kb = (t * theta).sin() / s;
    UnitQuat::new(
        ka * a.w + kb * b.w,
        ka * a.x + kb * b.x,
        ka * a.y + kb * b.y,
        ka * a.z + kb * b.z,
    )
}

/// Attitude average: the unit quaternion maximizing `Σ (qᵀqᵢ)²`.
///
/// Found as the dominant eigenvector of `Σ qᵢqᵢᵀ` by power iteration, seeded
/// with the first sample. Sign-invariant per sample.
pub fn quat_mean(samples: &[UnitQuat]) -> Result<UnitQuat, RotError> {
    let first = *samples.first().ok_or(RotError::EmptyMean)?;
    let mut acc = [[0.0f64; 4]; 4];
    for q in samples {
        let q = if q.dot(&first) < 0.0 { q.negated() } else { *q };
        let c = q.to_array();
        for (i, row) in acc.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += c[i] * c[j];
            }
        }
    }
    let mut v = first.to_array();
    for _ in 0..10_000 {
        let mut next = [0.0f64; 4];
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..4).map(|j| acc[i][j] * v[j]).sum();
        }
        let n = next.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(RotError::Degenerate);
        }
        next.iter_mut().for_each(|c| *c /= n);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    let q = UnitQuat::from_array(v)?;
    Ok(if q.dot(&first) < 0.0 { q.negated() } else { q })
}

//! Whole-chain least-squares IK with joint limits.
//!
//! Unknowns are the root orientation (updated on the manifold, `R ⊗ exp(δ)`)
//! and every joint angle. The residual of segment `s` is
//! `sqrt(w_s) · log(R_model,sᵀ · R_meas,s)`. Steps are damped Gauss-Newton
//! over the free variables, projected back into the limit box; a variable
//! sitting on a bound whose gradient points outward is held fixed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::angles::{AngleFlag, JointAngleFrame};
use crate::rotmath::UnitQuat;

use super::{joint_angles_analytic, KinematicModel, ModelError};

#[derive(Debug, Clone)]
pub struct IkOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this.
    pub cost_tolerance: f64,
    pub initial_damping: f64,
    pub record_history: bool,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            max_iterations: 50,
            cost_tolerance: 1e-12,
            initial_damping: 1e-4,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IkSolution {
    pub frame: JointAngleFrame,
    pub root: UnitQuat,
    /// Sum of squared weighted residuals (rad²).
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Layout {
    /// Segment names, root first; segment `i + 1` is the child of joint `i`.
    segments: Vec<String>,
    /// Joint indices on the path from the root to each segment.
    ancestors: Vec<Vec<usize>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Layout {
    fn new(model: &KinematicModel) -> Result<Self, ModelError> {
        let segments = model.segments();
        let mut ancestors: Vec<Vec<usize>> = vec![Vec::new()];
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (i, j) in model.joints.iter().enumerate() {
            let p = segments
                .iter()
                .position(|s| *s == j.parent)
                .filter(|p| *p <= i)
                .ok_or_else(|| ModelError::InvalidModel(format!("parent {:?} out of order", j.parent)))?;
            let mut a = ancestors[p].clone();
            a.push(i);
            ancestors.push(a);
            for l in &j.limits {
                lo.push(l.min_deg.to_radians());
                hi.push(l.max_deg.to_radians());
            }
        }
        Ok(Layout {
            segments,
            ancestors,
            lo,
            hi,
        })
    }
}

fn mat(q: &UnitQuat) -> Matrix3<f64> {
    let m = q.to_matrix();
    Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = skew(phi);
    let c = if t < 1e-6 {
        1.0 / 12.0 + t * t / 720.0
    } else {
        1.0 / (t * t) - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

fn theta_vector(frame: &JointAngleFrame, model: &KinematicModel) -> Result<Vec<f64>, ModelError> {
    model
        .angle_keys()
        .iter()
        .map(|k| {
            frame
                .get(k)
                .map(f64::to_radians)
                .ok_or_else(|| ModelError::ModelMismatch(format!("missing joint value {k}")))
        })
        .collect()
}

fn joint_deg(theta: &[f64], j: usize) -> [f64; 3] {
    [theta[3 * j].to_degrees(), theta[3 * j + 1].to_degrees(), theta[3 * j + 2].to_degrees()]
}

fn model_orientations(model: &KinematicModel, root: UnitQuat, theta: &[f64]) -> Vec<UnitQuat> {
    let segments = model.segments();
    let mut out = vec![root];
    for (i, j) in model.joints.iter().enumerate() {
        let p = segments
            .iter()
            .position(|s| *s == j.parent)
            .expect("validated layout");
        out.push(out[p] * j.rotation(joint_deg(theta, i)));
    }
    out
}

fn measured(
    seg_orients: &BTreeMap<String, UnitQuat>,
    layout: &Layout,
) -> Result<Vec<UnitQuat>, ModelError> {
    layout
        .segments
        .iter()
        .map(|s| {
            seg_orients
                .get(s)
                .copied()
                .ok_or_else(|| ModelError::ModelMismatch(format!("missing segment {s:?}")))
        })
        .collect()
}

fn residuals(model: &KinematicModel, meas: &[UnitQuat], root: UnitQuat, theta: &[f64]) -> (DVector<f64>, Vec<UnitQuat>) {
    let orient = model_orientations(model, root, theta);
    let segments = model.segments();
    let mut r = DVector::zeros(3 * meas.len());
    for (i, (a, b)) in orient.iter().zip(meas).enumerate() {
        let sw = model.weight(&segments[i]).sqrt();
        let v = (a.inverse() * *b).to_rotation_vector();
        for k in 0..3 {
            r[3 * i + k] = sw * v[k];
        }
    }
    (r, orient)
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Body-frame angular velocity of a joint per unit change of each anatomical angle.
fn joint_axes(model: &KinematicModel, j: usize, theta: &[f64]) -> [Vector3<f64>; 3] {
    let def = &model.joints[j];
    let s = def.axis_signs;
    let e2 = s[1] * theta[3 * j + 1];
    let e3 = s[2] * theta[3 * j + 2];
    let ry_t = mat(&UnitQuat::rot_y(e3.to_degrees())).transpose();
    let rx_t = mat(&UnitQuat::rot_x(e2.to_degrees())).transpose();
    let mut axes = [
        ry_t * rx_t * Vector3::z() * s[0],
        ry_t * Vector3::x() * s[1],
        Vector3::y() * s[2],
    ];
    if def.mirrored() {
        for a in &mut axes {
            a.x = -a.x;
            a.y = -a.y;
        }
    }
    axes
}

fn linearize(
    model: &KinematicModel,
    layout: &Layout,
    meas: &[UnitQuat],
    root: UnitQuat,
    theta: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let (r, orient) = residuals(model, meas, root, theta);
    let n = 3 + theta.len();
    let rows = 3 * meas.len();
    let mut jac = DMatrix::zeros(rows, n);
    let world: Vec<Matrix3<f64>> = orient.iter().map(mat).collect();
    let root_m = world[0];
    let mut world_axes: Vec<[Vector3<f64>; 3]> = Vec::with_capacity(model.joints.len());
    for j in 0..model.joints.len() {
        let child = world[j + 1];
        world_axes.push(joint_axes(model, j, theta).map(|a| child * a));
    }
    for (s, a_s) in world.iter().enumerate() {
        let sw = model.weight(&layout.segments[s]).sqrt();
        if sw == 0.0 {
            continue;
        }
        let rv = Vector3::new(r[3 * s], r[3 * s + 1], r[3 * s + 2]) / sw;
        let block = -sw * left_jacobian_inverse(&rv) * a_s.transpose();
        for k in 0..3 {
            let col = block * (root_m * Vector3::ith(k, 1.0));
            jac.fixed_view_mut::<3, 1>(3 * s, k).copy_from(&col);
        }
        for &j in &layout.ancestors[s] {
            for (i, w) in world_axes[j].iter().enumerate() {
                let col = block * w;
                jac.fixed_view_mut::<3, 1>(3 * s, 3 + 3 * j + i).copy_from(&col);
            }
        }
    }
    (r, jac)
}

/// Weighted residual and its Jacobian at (`root`, `theta`).
///
/// Columns: three for a body-frame root perturbation `root ⊗ exp(δ)`, then the
/// joint angles of `model.angle_keys()` in radians.
pub fn residual_and_jacobian(
    seg_orients: &BTreeMap<String, UnitQuat>,
    model: &KinematicModel,
    root: UnitQuat,
    theta: &JointAngleFrame,
) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
    let layout = Layout::new(model)?;
    let meas = measured(seg_orients, &layout)?;
    let th = theta_vector(theta, model)?;
    Ok(linearize(model, &layout, &meas, root, &th))
}

/// Limit-constrained joint angles that best explain all segment orientations.
///
/// Starts from `warm_start` when given, otherwise from the analytic solution
/// clamped into the limits.
pub fn chain_ik(
    seg_orients: &BTreeMap<String, UnitQuat>,
    model: &KinematicModel,
    warm_start: Option<&IkSolution>,
    opts: &IkOptions,
) -> Result<IkSolution, ModelError> {
    let layout = Layout::new(model)?;
    let meas = measured(seg_orients, &layout)?;
    let (mut root, mut theta) = match warm_start {
        Some(w) => (w.root, theta_vector(&w.frame, model)?),
        None => (meas[0], theta_vector(&joint_angles_analytic(seg_orients, model)?, model)?),
    };
    for (i, t) in theta.iter_mut().enumerate() {
        *t = t.clamp(layout.lo[i], layout.hi[i]);
    }

    let mut cost = cost_of(&residuals(model, &meas, root, &theta).0);
    if !cost.is_finite() {
        return Err(ModelError::NumericalError("non-finite initial cost".into()));
    }
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let n = 3 + theta.len();

    while iterations < opts.max_iterations {
        iterations += 1;
        let (r, jac) = linearize(model, &layout, &meas, root, &theta);
        let g = jac.tr_mul(&r);
        let h = jac.tr_mul(&jac);
        let free: Vec<usize> = (0..n)
            .filter(|&c| {
                if c < 3 {
                    return true;
                }
                let i = c - 3;
                !((theta[i] <= layout.lo[i] && g[c] > 0.0) || (theta[i] >= layout.hi[i] && g[c] < 0.0))
            })
            .collect();
        let m = free.len();
        let hf = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_fn(m, |a, _| g[free[a]]);

        let mut accepted = None;
        for _ in 0..16 {
            let damped = &hf + DMatrix::identity(m, m) * lambda;
            let Some(chol) = damped.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&gf));
            let mut full = DVector::zeros(n);
            for (a, &c) in free.iter().enumerate() {
                full[c] = step[a];
            }
            let new_root = root * UnitQuat::from_rotation_vector([full[0], full[1], full[2]]);
            let new_theta: Vec<f64> = theta
                .iter()
                .enumerate()
                .map(|(i, t)| (t + full[3 + i]).clamp(layout.lo[i], layout.hi[i]))
                .collect();
            let new_cost = cost_of(&residuals(model, &meas, new_root, &new_theta).0);
            if !new_cost.is_finite() {
                return Err(ModelError::NumericalError("non-finite cost during IK".into()));
            }
            if new_cost <= cost {
                accepted = Some((new_root, new_theta, new_cost));
                lambda = (lambda / 3.0).max(1e-12);
                break;
            }
            lambda *= 4.0;
        }
        let Some((new_root, new_theta, new_cost)) = accepted else {
            converged = true;
            break;
        };
        debug_assert!(new_cost <= cost);
        let decrease = cost - new_cost;
        root = new_root;
        theta = new_theta;
        cost = new_cost;
        history.push(cost);
        if decrease < opts.cost_tolerance {
            converged = true;
            break;
        }
    }

    let mut frame = JointAngleFrame::default();
    for (i, k) in model.angle_keys().into_iter().enumerate() {
        let limit = model.joints[i / 3].limits[i % 3];
        let v = if theta[i] <= layout.lo[i] {
            frame.flag(k, AngleFlag::Clamped);
            limit.min_deg
        } else if theta[i] >= layout.hi[i] {
            frame.flag(k, AngleFlag::Clamped);
            limit.max_deg
        } else {
            theta[i].to_degrees()
        };
        assert!(limit.contains(v), "chain IK left {k} outside its limits");
        frame.angles.insert(k, v);
    }
    Ok(IkSolution {
        frame,
        root,
        cost,
        iterations,
        converged,
        cost_history: if opts.record_history { history } else { Vec::new() },
    })
}

//! End-to-end acceptance checks. Run with `cargo test -p ergokin-cli --test acceptance`.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits non-zero if any fail.

use std::collections::BTreeMap;
use std::fs;
use std::net::UdpSocket;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ergokin::angles::{AngleKey, Axis, Joint, JointAngleFrame, JointAngleSeries, Side};
use ergokin::calib::{calibrate_recording, estimate_calibration, CalibConfig};
use ergokin::compare::{compare_series, default_selection, ComparisonResult};
use ergokin::ingest::net::{record, replay, RecordOptions, ReplayOptions};
use ergokin::ingest::{
    decode_packet, encode_packet, import_output2, quantize_q14, write_angles_sto, Recording,
    SensorSample,
};
use ergokin::kinmodel::{
    chain_ik, joint_angles_analytic, residual_and_jacobian, segment_orientations, solve_recording, IkMode, IkOptions,
    KinematicModel, Limit,
};
use ergokin::report::{Manifest, SummaryDoc};
use ergokin::rotmath::UnitQuat;
use ergokin::rula::{score_series, score_side, summarize, ArmAngles, GlobalMode, RiskSummary, RulaConfig};
use ergokin::segment::{apply_segments, SegmentSpec};
use ergokin::synth::{SensorRig, SyntheticMotion};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 synthetic mirror", synthetic_mirror),
        ("2 noise-free exactness", noise_free_exactness),
        ("3 RULA oracle grid", rula_oracle_grid),
        ("4 global summary fidelity", summary_fidelity),
        ("5 IK solver checks", ik_solver_checks),
        ("6 protocol loopback", protocol),
        ("7 segmentation arithmetic", segmentation),
        ("8 pipeline determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} ({secs:.1} s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} ({secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// shared helpers

const MIRROR_SECONDS: f64 = 60.0;
const HEADING_DEG: f64 = 37.0;
const OFFSET_S: f64 = 0.3;

fn calib_config(rig: &SensorRig, threshold_deg: f64) -> CalibConfig {
    CalibConfig {
        motion_threshold_deg: threshold_deg,
        nominal_torso_mount: rig.mounts["torso"],
        ..Default::default()
    }
}

/// calibrate -> ik on one recording.
fn angles_from(rec: &Recording, rig: &SensorRig, model: &KinematicModel, threshold_deg: f64, mode: IkMode) -> JointAngleSeries {
    let cal = estimate_calibration(rec, (0.0, 2.0), &calib_config(rig, threshold_deg)).expect("calibration");
    let calibrated = calibrate_recording(rec, &cal.profile, "acceptance").expect("apply calibration");
    solve_recording(&calibrated, model, mode, &IkOptions::default())
        .expect("ik")
        .series(&calibrated, mode)
}

fn joint_table(cmp: &ComparisonResult) -> String {
    cmp.joints
        .iter()
        .map(|j| {
            let axes: Vec<String> = j
                .axes
                .iter()
                .map(|a| format!("{} r={:.4} rmse={:.3}", a.key.axis.as_str(), a.xcorr, a.rmse_deg))
                .collect();
            format!("{} lag={} [{}]", j.name, j.lag_samples, axes.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn max_abs_diff(a: &JointAngleSeries, b: &JointAngleSeries) -> Result<f64, String> {
    ensure!(a.len() == b.len(), "lengths {} and {}", a.len(), b.len());
    let mut worst: f64 = 0.0;
    for (k, va) in &b.channels {
        let Some(vb) = a.channel(k) else {
            return Err(format!("missing channel {k}"));
        };
        for (x, y) in va.iter().zip(vb) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// 1

fn synthetic_mirror() -> Outcome {
    let start = Instant::now();
    let model = KinematicModel::default();
    let motion = SyntheticMotion::new(model.clone(), 2024);
    let rig_a = SensorRig::random(&model, HEADING_DEG, 2.0, 101);
    let rig_b = SensorRig::random(&model, HEADING_DEG, 2.0, 202);
    let rec_a = rig_a.record(&motion, 60.0, MIRROR_SECONDS, 0.0);
    let rec_b = rig_b.record(&motion, 100.0, MIRROR_SECONDS, OFFSET_S);
    // 2 deg RMS per-sample noise puts single samples several degrees off the
    // window mean, so the stillness threshold is raised for this run.
    let a = angles_from(&rec_a, &rig_a, &model, 10.0, IkMode::Chain);
    let b = angles_from(&rec_b, &rig_b, &model, 10.0, IkMode::Chain);
    let cmp = compare_series(&a, &b, &default_selection(), 5.0).map_err(|e| e.to_string())?;
    let expected_lag = -(OFFSET_S * cmp.common_rate_hz).round() as i64;
    for j in &cmp.joints {
        ensure!(
            (j.lag_samples - expected_lag).abs() <= 1,
            "{} lag {} samples, expected {expected_lag}: {}",
            j.name,
            j.lag_samples,
            joint_table(&cmp)
        );
        for ax in &j.axes {
            ensure!(
                ax.xcorr > 0.95 && ax.rmse_deg < 3.0,
                "{} {}: xcorr {:.4}, rmse {:.3}: {}",
                j.name,
                ax.key.axis.as_str(),
                ax.xcorr,
                ax.rmse_deg,
                joint_table(&cmp)
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 30.0, "took {elapsed:.1} s");
    Ok(joint_table(&cmp))
}

// ---------------------------------------------------------------------------
// 2

fn noise_free_exactness() -> Outcome {
    let model = KinematicModel::default();
    let motion = SyntheticMotion::new(model.clone(), 77);
    let rig_a = SensorRig::random(&model, HEADING_DEG, 0.0, 303);
    let rig_b = SensorRig::random(&model, HEADING_DEG, 0.0, 404);
    let mut notes = Vec::new();
    for mode in [IkMode::Analytic, IkMode::Chain] {
        let mut worst: f64 = 0.0;
        for (rig, rate, offset) in [(&rig_a, 60.0, 0.0), (&rig_b, 100.0, OFFSET_S)] {
            let rec = rig.record(&motion, rate, MIRROR_SECONDS, offset);
            let got = angles_from(&rec, rig, &model, 3.0, mode);
            let truth = motion.truth_series(rate, MIRROR_SECONDS, offset);
            let d = max_abs_diff(&got, &truth)?;
            ensure!(d < 1e-6, "{} mode at {rate} Hz: max angle error {d:e} deg", mode.as_str());
            worst = worst.max(d);
            let cmp = compare_series(&got, &truth, &default_selection(), 1.0).map_err(|e| e.to_string())?;
            for j in &cmp.joints {
                ensure!(j.lag_samples == 0, "{} lag {} against truth", j.name, j.lag_samples);
                for ax in &j.axes {
                    ensure!(
                        (ax.xcorr - 1.0).abs() <= 1e-9 && ax.rmse_deg < 1e-6,
                        "{} {} {}: xcorr {}, rmse {:e}",
                        mode.as_str(),
                        j.name,
                        ax.key.axis.as_str(),
                        ax.xcorr,
                        ax.rmse_deg
                    );
                }
            }
        }
        notes.push(format!("{} max error {worst:.1e} deg", mode.as_str()));
    }

    // two copies on one sampling grid: different mounts, 0.3 s apart
    let rec_a = rig_a.record(&motion, 100.0, MIRROR_SECONDS, 0.0);
    let rec_b = rig_b.record(&motion, 100.0, MIRROR_SECONDS, OFFSET_S);
    let a = angles_from(&rec_a, &rig_a, &model, 3.0, IkMode::Analytic);
    let b = angles_from(&rec_b, &rig_b, &model, 3.0, IkMode::Analytic);
    let cmp = compare_series(&a, &b, &default_selection(), 5.0).map_err(|e| e.to_string())?;
    for j in &cmp.joints {
        ensure!(j.lag_samples == -30, "{} lag {}", j.name, j.lag_samples);
        for ax in &j.axes {
            ensure!(
                (ax.xcorr - 1.0).abs() <= 1e-9 && ax.rmse_deg < 1e-6,
                "copies {} {}: xcorr {}, rmse {:e}",
                j.name,
                ax.key.axis.as_str(),
                ax.xcorr,
                ax.rmse_deg
            );
        }
    }
    notes.push("copy A vs copy B lag -30 samples, xcorr 1".into());
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// worksheet oracle, transcribed independently of the shipped table file

/// [upper arm 1-6][lower arm 1-3][wrist 1-4][twist 1-2]
const WS_TABLE_A: [[[[u8; 2]; 4]; 3]; 6] = [
    [[[1, 2], [2, 2], [2, 3], [3, 3]], [[2, 2], [2, 2], [3, 3], [3, 3]], [[2, 3], [2, 3], [3, 3], [4, 4]]],
    [[[2, 3], [2, 3], [3, 3], [4, 4]], [[3, 3], [3, 3], [3, 4], [4, 4]], [[3, 4], [3, 4], [4, 4], [4, 5]]],
    [[[3, 3], [4, 4], [4, 4], [5, 5]], [[3, 4], [4, 4], [4, 4], [5, 5]], [[4, 4], [4, 4], [4, 5], [5, 5]]],
    [[[4, 4], [4, 4], [4, 5], [5, 5]], [[4, 4], [4, 4], [4, 5], [5, 5]], [[4, 4], [4, 5], [5, 5], [6, 6]]],
    [[[5, 5], [5, 5], [5, 6], [6, 7]], [[5, 6], [6, 6], [6, 7], [7, 7]], [[6, 6], [6, 7], [7, 7], [7, 8]]],
    [[[7, 7], [7, 7], [7, 8], [8, 9]], [[8, 8], [8, 8], [8, 9], [9, 9]], [[9, 9], [9, 9], [9, 9], [9, 9]]],
];

/// [score A 1-8][score B 1-7]
const WS_TABLE_C: [[u8; 7]; 8] = [
    [1, 2, 3, 3, 4, 5, 5],
    [2, 2, 3, 4, 4, 5, 5],
    [3, 3, 3, 4, 4, 5, 6],
    [3, 3, 3, 4, 5, 6, 6],
    [4, 4, 4, 5, 6, 7, 7],
    [4, 4, 5, 6, 6, 7, 7],
    [5, 5, 6, 6, 7, 7, 7],
    [5, 5, 6, 7, 7, 7, 7],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Worksheet {
    upper: u8,
    lower: u8,
    twist: u8,
    a: u8,
    grand: u8,
    local_sum: u8,
}

/// Straight-line worksheet: neutral wrist, no muscle/force load, neck/trunk/legs 1
/// (score B 1), abduction adds 1 beyond 45 deg, twist beyond 60 deg pronosupination.
fn worksheet(flex: f64, abd: f64, elbow: f64, pro: Option<f64>) -> Worksheet {
    let mut upper = 1;
    if flex < -20.0 {
        upper = 2;
    }
    if flex > 20.0 {
        upper = 2;
    }
    if flex > 45.0 {
        upper = 3;
    }
    if flex > 90.0 {
        upper = 4;
    }
    if abd > 45.0 || abd < -45.0 {
        upper += 1;
    }
    let lower = if (60.0..=100.0).contains(&elbow) { 1 } else { 2 };
    let twist = match pro {
        Some(p) if p > 60.0 || p < -60.0 => 2,
        _ => 1,
    };
    let a = WS_TABLE_A[upper as usize - 1][lower as usize - 1][0][twist as usize - 1];
    let grand = WS_TABLE_C[a as usize - 1][0];
    Worksheet {
        upper,
        lower,
        twist,
        a,
        grand,
        local_sum: upper + lower,
    }
}

fn band_index(score: u8) -> usize {
    match score {
        1 | 2 => 0,
        3 | 4 => 1,
        5 | 6 => 2,
        _ => 3,
    }
}

fn agrees(w: &Worksheet, a: &ArmAngles, grand: &RulaConfig, local: &RulaConfig) -> bool {
    let g = score_side(a, grand);
    let l = score_side(a, local);
    g.upper_arm == w.upper
        && g.lower_arm == w.lower
        && g.wrist_twist == w.twist
        && g.posture_a == w.a
        && g.grand == w.grand
        && g.global == w.grand
        && g.band.index() == band_index(w.grand)
        && l.global == w.local_sum
        && l.grand == w.grand
        && l.band.index() == band_index(w.local_sum)
}

// ---------------------------------------------------------------------------
// 3

fn rula_oracle_grid() -> Outcome {
    let start = Instant::now();
    let grand = RulaConfig::with_mode(GlobalMode::Grand);
    let local = RulaConfig::with_mode(GlobalMode::LocalSum);

    let mut points: u64 = 0;
    for flex in -90..=180 {
        for abd in 0..=180 {
            for elbow in 0..=150 {
                for pro in -90..=90 {
                    let (f, ab, e, p) = (flex as f64, abd as f64, elbow as f64, pro as f64);
                    let w = worksheet(f, ab, e, Some(p));
                    let a = ArmAngles {
                        shoulder_flexion: f,
                        shoulder_abduction: ab,
                        elbow_flexion: e,
                        pronosupination: Some(p),
                    };
                    ensure!(agrees(&w, &a, &grand, &local), "mismatch at {a:?}: oracle {w:?}");
                    points += 1;
                }
            }
        }
    }
    let grid_s = start.elapsed().as_secs_f64();

    // Full frames through score_series on a slice of the grid: every flexion and
    // elbow value, with abduction and pronosupination at and around their breakpoints.
    let mut frames = Vec::new();
    for flex in -90..=180 {
        for elbow in 0..=150 {
            for (abd, pro) in [(0.0, 0.0), (45.0, 60.0), (46.0, 61.0), (180.0, -90.0), (44.0, -61.0)] {
                frames.push((flex as f64, abd, elbow as f64, pro));
            }
        }
    }
    let mut series = JointAngleSeries::new(100.0);
    let push = |s: &mut JointAngleSeries, joint, side, axis, v: Vec<f64>| {
        s.channels.insert(AngleKey::new(joint, side, axis), v);
    };
    let col = |i: usize| frames.iter().map(|f| [f.0, f.1, f.2, f.3][i]).collect::<Vec<f64>>();
    let rev = |i: usize| frames.iter().rev().map(|f| [f.0, f.1, f.2, f.3][i]).collect::<Vec<f64>>();
    push(&mut series, Joint::Shoulder, Side::Right, Axis::Flexion, col(0));
    push(&mut series, Joint::Shoulder, Side::Right, Axis::Abduction, col(1));
    push(&mut series, Joint::Elbow, Side::Right, Axis::Flexion, col(2));
    push(&mut series, Joint::Elbow, Side::Right, Axis::Pronosupination, col(3));
    push(&mut series, Joint::Shoulder, Side::Left, Axis::Flexion, rev(0));
    push(&mut series, Joint::Shoulder, Side::Left, Axis::Abduction, rev(1));
    push(&mut series, Joint::Elbow, Side::Left, Axis::Flexion, rev(2));
    push(&mut series, Joint::Elbow, Side::Left, Axis::Pronosupination, rev(3));
    for (cfg, grand_mode) in [(&grand, true), (&local, false)] {
        let scores = score_series(&series, cfg).map_err(|e| e.to_string())?;
        let n = frames.len();
        for (i, s) in scores.iter().enumerate() {
            for (side, f) in [(&s.right, frames[i]), (&s.left, frames[n - 1 - i])] {
                let w = worksheet(f.0, f.1, f.2, Some(f.3));
                let want = if grand_mode { w.grand } else { w.local_sum };
                ensure!(side.global == want && side.upper_arm == w.upper, "score_series frame {i}: {f:?}");
            }
        }
    }

    // breakpoints, approached from both sides
    let eps = 1e-9;
    let mut boundary = 0;
    let flexes = [-20.0, 20.0, 45.0, 90.0];
    let elbows = [60.0, 100.0];
    let mut probes: Vec<ArmAngles> = Vec::new();
    for b in flexes {
        for d in [-eps, 0.0, eps] {
            probes.push(arm(b + d, 0.0, 80.0, Some(0.0)));
        }
    }
    for b in [45.0, -45.0] {
        for d in [-eps, 0.0, eps] {
            probes.push(arm(10.0, b + d, 80.0, Some(0.0)));
        }
    }
    for b in elbows {
        for d in [-eps, 0.0, eps] {
            probes.push(arm(10.0, 0.0, b + d, Some(0.0)));
        }
    }
    for b in [60.0, -60.0] {
        for d in [-eps, 0.0, eps] {
            probes.push(arm(10.0, 0.0, 80.0, Some(b + d)));
        }
    }
    probes.push(arm(10.0, 0.0, 80.0, None));
    for a in &probes {
        let w = worksheet(a.shoulder_flexion, a.shoulder_abduction, a.elbow_flexion, a.pronosupination);
        ensure!(agrees(&w, a, &grand, &local), "boundary mismatch at {a:?}: oracle {w:?}");
        boundary += 1;
    }
    // the closed-low-risk-side convention, spelled out
    let g = |f, ab, e, p| score_side(&arm(f, ab, e, Some(p)), &grand);
    ensure!(g(20.0, 0.0, 80.0, 0.0).upper_arm == 1, "20 deg flexion scores 1");
    ensure!(g(20.0 + eps, 0.0, 80.0, 0.0).upper_arm == 2, "just above 20 deg scores 2");
    ensure!(g(-20.0, 0.0, 80.0, 0.0).upper_arm == 1, "20 deg extension scores 1");
    ensure!(g(10.0, 0.0, 100.0, 0.0).lower_arm == 1, "100 deg elbow scores 1");
    ensure!(g(10.0, 0.0, 100.0 + eps, 0.0).lower_arm == 2, "just above 100 deg elbow scores 2");
    ensure!(g(10.0, 0.0, 60.0 - eps, 0.0).lower_arm == 2, "just below 60 deg elbow scores 2");
    ensure!(g(100.0, 60.0, 80.0, 0.0).upper_arm == 5, "100/60 scores 5");

    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 300.0, "took {elapsed:.0} s");
    Ok(format!(
        "{points} grid points x 2 modes in {grid_s:.0} s, {} score_series frames, {boundary} boundary probes, all equal",
        frames.len()
    ))
}

fn arm(flex: f64, abd: f64, elbow: f64, pro: Option<f64>) -> ArmAngles {
    ArmAngles {
        shoulder_flexion: flex,
        shoulder_abduction: abd,
        elbow_flexion: elbow,
        pronosupination: pro,
    }
}

// ---------------------------------------------------------------------------
// 4

const DWELL_RATE: f64 = 50.0;
const DWELL_SECONDS: f64 = 100.0;

/// Right arm: flexion ramps -20 -> 180 deg, abduction 60 from 70 s, elbow 120
/// from 85 s, pronosupination 75 from 90 s. Left arm holds a neutral posture.
fn dwell_posture(t: f64) -> ([f64; 4], [f64; 4]) {
    let right = [
        -20.0 + 2.0 * t,
        if t >= 70.0 { 60.0 } else { 0.0 },
        if t >= 85.0 { 120.0 } else { 80.0 },
        if t >= 90.0 { 75.0 } else { 0.0 },
    ];
    (right, [10.0, 0.0, 80.0, 0.0])
}

/// Breakpoints of `dwell_posture` in seconds: flexion crosses 20/45/90 at
/// (f + 20) / 2, plus the three step times.
fn dwell_pieces() -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0, 20.0, 32.5, 55.0, 70.0, 85.0, 90.0, DWELL_SECONDS];
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

fn dwell_series() -> JointAngleSeries {
    let n = (DWELL_RATE * DWELL_SECONDS) as usize;
    let mut s = JointAngleSeries::new(DWELL_RATE);
    let axes = [
        (Joint::Shoulder, Axis::Flexion),
        (Joint::Shoulder, Axis::Abduction),
        (Joint::Elbow, Axis::Flexion),
        (Joint::Elbow, Axis::Pronosupination),
    ];
    for (side, pick) in [(Side::Right, 0usize), (Side::Left, 1)] {
        for (i, (joint, axis)) in axes.iter().enumerate() {
            let v = (0..n)
                .map(|k| {
                    let (r, l) = dwell_posture(k as f64 / DWELL_RATE);
                    [r, l][pick][i]
                })
                .collect();
            s.channels.insert(AngleKey::new(*joint, side, *axis), v);
        }
    }
    s.metadata.insert("source".into(), "dwell fixture".into());
    s
}

fn summary_via(series: &JointAngleSeries, mode: GlobalMode) -> Result<RiskSummary, String> {
    let scores = score_series(series, &RulaConfig::with_mode(mode)).map_err(|e| e.to_string())?;
    summarize(&scores, "all", mode).map_err(|e| e.to_string())
}

fn summary_fidelity() -> Outcome {
    let series = dwell_series();
    let n = series.len() as f64;
    let one_frame = 100.0 / n;
    let csv = import_output2(&series.to_csv(), &BTreeMap::new()).map_err(|e| e.to_string())?.series;
    let sto = import_output2(&write_angles_sto(&series, "dwell"), &BTreeMap::new())
        .map_err(|e| e.to_string())?
        .series;
    // a vendor-style table with its own column names, mapped on import
    let vendor_names = [
        ("shoulder_r_flexion", "Right Shoulder Flexion/Extension"),
        ("shoulder_r_abduction", "Right Shoulder Abduction/Adduction"),
        ("elbow_r_flexion", "Right Elbow Flexion/Extension"),
        ("elbow_r_pronosupination", "Right Elbow Pronation/Supination"),
        ("shoulder_l_flexion", "Left Shoulder Flexion/Extension"),
        ("shoulder_l_abduction", "Left Shoulder Abduction/Adduction"),
        ("elbow_l_flexion", "Left Elbow Flexion/Extension"),
        ("elbow_l_pronosupination", "Left Elbow Pronation/Supination"),
    ];
    let mut vendor = String::from("time");
    let keys: Vec<AngleKey> = vendor_names
        .iter()
        .map(|(c, _)| AngleKey::from_column(&format!("{c}_deg")).expect("canonical name"))
        .collect();
    for (_, v) in &vendor_names {
        vendor.push(',');
        vendor.push_str(v);
    }
    vendor.push('\n');
    for i in 0..series.len() {
        vendor.push_str(&format!("{}", i as f64 / DWELL_RATE));
        for k in &keys {
            vendor.push_str(&format!(",{}", series.channels[k][i]));
        }
        vendor.push('\n');
    }
    let rename: BTreeMap<String, String> = vendor_names.iter().map(|(c, v)| (v.to_string(), c.to_string())).collect();
    let vendor_series = import_output2(&vendor, &rename).map_err(|e| e.to_string())?.series;

    let mut notes = Vec::new();
    for mode in [GlobalMode::Grand, GlobalMode::LocalSum] {
        let native = summary_via(&series, mode)?;
        for (path, s) in [("csv", &csv), ("sto", &sto), ("vendor", &vendor_series)] {
            let other = summary_via(s, mode)?;
            ensure!(other == native, "{} mode: {path} import summary differs: {other:?} vs {native:?}", mode.as_str());
        }
        // expected dwell fractions from the piece table
        let mut expected = [[0.0f64; 4]; 2];
        for (t0, t1) in dwell_pieces() {
            let (r, l) = dwell_posture(0.5 * (t0 + t1));
            for (i, p) in [r, l].iter().enumerate() {
                let w = worksheet(p[0], p[1], p[2], Some(p[3]));
                let g = if mode == GlobalMode::Grand { w.grand } else { w.local_sum };
                expected[i][band_index(g)] += 100.0 * (t1 - t0) / DWELL_SECONDS;
            }
        }
        for (i, side) in [&native.right, &native.left].iter().enumerate() {
            let total: f64 = side.percent_time.iter().sum();
            ensure!((total - 100.0).abs() <= 1e-9, "percentages sum to {total}");
            for b in 0..4 {
                let d = (side.percent_time[b] - expected[i][b]).abs();
                ensure!(
                    d <= one_frame + 1e-9,
                    "{} mode side {i} band {b}: {} vs analytic {}",
                    mode.as_str(),
                    side.percent_time[b],
                    expected[i][b]
                );
            }
        }
        ensure!(native.worst_side == Side::Right, "worst side {:?}", native.worst_side);
        notes.push(format!(
            "{}: right {:?} vs analytic {:?}",
            mode.as_str(),
            native.right.percent_time,
            expected[0]
        ));
    }
    notes.push("native, csv, sto and renamed-vendor imports identical".into());
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 5

fn random_quat(rng: &mut ChaCha8Rng) -> UnitQuat {
    let n = Normal::new(0.0, 1.0).unwrap();
    UnitQuat::new(n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng))
}

fn random_posture(model: &KinematicModel, rng: &mut ChaCha8Rng, margin_deg: f64) -> JointAngleFrame {
    let mut f = JointAngleFrame::default();
    for k in model.angle_keys() {
        let l = model.limit(&k).unwrap();
        let (mut lo, mut hi) = (l.min_deg + margin_deg, l.max_deg - margin_deg);
        if k.axis == Axis::Abduction {
            lo = lo.max(-80.0);
            hi = hi.min(80.0);
        }
        f.angles.insert(k, rng.random_range(lo..hi).clamp(-179.0, 179.0));
    }
    f
}

fn ik_solver_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let base = KinematicModel::upper_body(true);

    // chain vs analytic with limits out of the way
    let mut open = base.clone();
    for j in &mut open.joints {
        j.limits = [Limit::new(-180.0, 180.0), Limit::new(-90.0, 90.0), Limit::new(-180.0, 180.0)];
    }
    let mut worst_match: f64 = 0.0;
    for _ in 0..300 {
        let theta = random_posture(&base, &mut rng, 0.0);
        let orients = segment_orientations(&theta, &open, random_quat(&mut rng)).unwrap();
        let analytic = joint_angles_analytic(&orients, &open).unwrap();
        let chain = chain_ik(&orients, &open, None, &IkOptions::default()).unwrap();
        for (k, v) in &analytic.angles {
            worst_match = worst_match.max((chain.frame.angles[k] - v).abs());
        }
    }
    ensure!(worst_match < 1e-3, "chain vs analytic differ by {worst_match} deg");

    // Jacobian against central differences
    let h = 1e-6;
    let mut worst_jac: f64 = 0.0;
    for _ in 0..20 {
        let theta = random_posture(&base, &mut rng, 5.0);
        let root = random_quat(&mut rng);
        let meas = segment_orientations(&random_posture(&base, &mut rng, 5.0), &base, random_quat(&mut rng)).unwrap();
        let (_, jac) = residual_and_jacobian(&meas, &base, root, &theta).unwrap();
        let keys = base.angle_keys();
        for c in 0..jac.ncols() {
            let eval = |d: f64| {
                if c < 3 {
                    let mut v = [0.0; 3];
                    v[c] = d;
                    residual_and_jacobian(&meas, &base, root * UnitQuat::from_rotation_vector(v), &theta).unwrap().0
                } else {
                    let mut t = theta.clone();
                    *t.angles.get_mut(&keys[c - 3]).unwrap() += d.to_degrees();
                    residual_and_jacobian(&meas, &base, root, &t).unwrap().0
                }
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let col = jac.column(c);
            worst_jac = worst_jac.max((fd - col).norm() / col.norm().max(1e-3));
        }
    }
    ensure!(worst_jac < 1e-5, "Jacobian relative error {worst_jac:e}");

    // limits and monotone cost on arbitrary (often infeasible) measurements
    let opts = IkOptions {
        record_history: true,
        ..Default::default()
    };
    let mut clamped = 0;
    for i in 0..300 {
        let orients: BTreeMap<String, UnitQuat> = if i % 2 == 0 {
            base.segments().into_iter().map(|s| (s, random_quat(&mut rng))).collect()
        } else {
            let mut theta = random_posture(&base, &mut rng, 0.0);
            for v in theta.angles.values_mut() {
                *v *= 1.4;
            }
            segment_orientations(&theta, &base, random_quat(&mut rng)).unwrap()
        };
        let sol = chain_ik(&orients, &base, None, &opts).unwrap();
        for (k, v) in &sol.frame.angles {
            let l = base.limit(k).unwrap();
            ensure!(l.contains(*v), "{k} = {v} outside [{}, {}]", l.min_deg, l.max_deg);
        }
        clamped += sol.frame.flags.values().filter(|f| !f.is_empty()).count();
        for w in sol.cost_history.windows(2) {
            ensure!(w[1] <= w[0], "cost rose from {} to {}", w[0], w[1]);
        }
    }
    Ok(format!(
        "chain-analytic {worst_match:.1e} deg, Jacobian {worst_jac:.1e} relative, 300 solves within limits ({clamped} flagged axes), costs monotone"
    ))
}

// ---------------------------------------------------------------------------
// 6

fn loopback(source: &Recording, speed: f64, loss: f64, staleness_ms: f64) -> Result<(Recording, Duration, Vec<(u8, u64)>), String> {
    let socket = UdpSocket::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = socket.local_addr().map_err(|e| e.to_string())?;
    let mut opts = RecordOptions::new(source.rate_hz, source.segment_map.clone());
    opts.staleness_ms = staleness_ms;
    opts.idle_timeout = Duration::from_millis(400);
    opts.start_timeout = Duration::from_secs(10);
    let rx = std::thread::spawn(move || record(socket, &opts));
    let stats = replay(
        source,
        &addr.to_string(),
        &ReplayOptions {
            speed,
            loss_fraction: loss,
            seed: 9,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let (rec, _) = rx.join().expect("recorder thread").map_err(|e| e.to_string())?;
    Ok((rec, stats.elapsed, stats.dropped))
}

fn protocol() -> Outcome {
    let mut notes = Vec::new();

    // golden vectors: frozen encoder output, fields re-parsed by a separate script
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data");
    let hex_lines = fs::read_to_string(data.join("golden_packets.hex")).map_err(|e| e.to_string())?;
    let fields = fs::read_to_string(data.join("golden_packets_fields.csv")).map_err(|e| e.to_string())?;
    let mut count = 0;
    for (line, row) in hex_lines.lines().zip(fields.lines().skip(1)) {
        let bytes = hex::decode(line.trim()).map_err(|e| e.to_string())?;
        ensure!(bytes.len() == 19, "golden packet of {} bytes", bytes.len());
        let f: Vec<i64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        let s = decode_packet(&bytes).map_err(|e| e.to_string())?;
        ensure!(
            s.sensor_id as i64 == f[0] && s.seq as i64 == f[1] && s.timestamp_us as i64 == f[2] && s.status as i64 == f[7],
            "golden packet {count} header fields differ"
        );
        let q = UnitQuat::new(
            f[3] as f64 / 16384.0,
            f[4] as f64 / 16384.0,
            f[5] as f64 / 16384.0,
            f[6] as f64 / 16384.0,
        );
        ensure!(q.to_array() == s.q.to_array(), "golden packet {count} quaternion");
        ensure!(encode_packet(&s)[..] == bytes[..], "re-encoding golden packet {count}");
        let rebuilt = SensorSample {
            sensor_id: f[0] as u8,
            seq: f[1] as u16,
            timestamp_us: f[2] as u32,
            q,
            status: f[7] as u8,
        };
        ensure!(encode_packet(&rebuilt)[..] == bytes[..], "encoding fields of golden packet {count}");
        count += 1;
    }
    ensure!(count == 100, "{count} golden packets");
    notes.push("100 golden packets byte-exact".to_string());

    let model = KinematicModel::default();
    let motion = SyntheticMotion::new(model.clone(), 6);
    let rig = SensorRig::random(&model, 15.0, 0.5, 7);
    let source = rig.record(&motion, 50.0, 4.0, 0.0);
    let mut quantized = source.clone();
    for f in &mut quantized.frames {
        for q in f.orientations.values_mut() {
            *q = quantize_q14(q);
        }
    }

    for speed in [1.0, 8.0] {
        let (rec, elapsed, _) = loopback(&source, speed, 0.0, 200.0)?;
        ensure!(rec.frames.len() == quantized.frames.len(), "x{speed}: {} frames", rec.frames.len());
        for (a, b) in rec.frames.iter().zip(&quantized.frames) {
            ensure!(a.time_s == b.time_s && a.tick_index == b.tick_index, "x{speed}: tick {}", b.tick_index);
            ensure!(a.stale.is_empty(), "x{speed}: stale at tick {}", a.tick_index);
            for (seg, q) in &b.orientations {
                ensure!(a.orientations[seg].to_array() == q.to_array(), "x{speed}: {seg} at tick {}", a.tick_index);
            }
        }
        let nominal = source.duration_s() / speed;
        let wall = elapsed.as_secs_f64();
        ensure!((wall - nominal).abs() <= 0.1 * nominal, "x{speed}: wall time {wall:.3} s, expected {nominal:.3} s");
        notes.push(format!("x{speed} exact after quantization in {wall:.2} s"));
    }

    // 5% loss with a staleness bound under one tick, so every withheld packet flags its segment
    let staleness_ms = 15.0;
    let (rec, _, dropped) = loopback(&source, 8.0, 0.05, staleness_ms)?;
    ensure!(rec.frames.len() == source.frames.len(), "lossy capture has {} frames", rec.frames.len());
    let mut stale_expected = 0;
    for (id, seg) in &source.segment_map {
        let mut last = 0usize;
        for k in 0..source.frames.len() {
            if !dropped.contains(&(*id, k as u64)) {
                last = k;
            }
            let frame = &rec.frames[k];
            ensure!(
                frame.orientations[seg].to_array() == quantized.frames[last].orientations[seg].to_array(),
                "{seg} at tick {k} does not hold tick {last}"
            );
            let age_ms = (k - last) as f64 * 1000.0 / source.rate_hz;
            let stale = age_ms > staleness_ms;
            stale_expected += stale as usize;
            ensure!(frame.stale.contains(seg) == stale, "{seg} stale flag at tick {k} (age {age_ms} ms)");
        }
    }
    notes.push(format!("5% loss: {} packets withheld, {stale_expected} stale flags as expected", dropped.len()));
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------------------
// 7

fn segmentation() -> Outcome {
    let spec = SegmentSpec::from_json(
        r#"{"clock":"R1","segments":[
            {"label":"R1 subprocess 1","start":"0:04","end":"1:04","unit":"s"},
            {"label":"R2 subprocess 2","start":"1:28","end":"2:38","unit":"s"}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let r = spec.resolve(100.0, 20_000).map_err(|e| e.to_string())?;
    ensure!((r[0].start, r[0].end) == (400, 6400), "0:04-1:04 gives {}", r[0]);
    ensure!((r[1].start, r[1].end) == (8800, 15800), "1:28-2:38 gives {}", r[1]);

    let frames = SegmentSpec::from_json(
        r#"{"segments":[
            {"label":"F1","start":210,"end":6300,"unit":"frames"},
            {"label":"F2","start":24760,"end":31760,"unit":"frames"}]}"#,
    )
    .map_err(|e| e.to_string())?;
    let f = frames.resolve(100.0, 40_000).map_err(|e| e.to_string())?;
    let d1 = f[0].duration_s(100.0);
    let d2 = f[1].duration_s(100.0);
    ensure!(format!("{d1:.2}") == "60.90", "F210-6300 lasts {d1}");
    ensure!(format!("{d2:.2}") == "70.00", "F24760-31760 lasts {d2}");

    let mut series = JointAngleSeries::new(100.0);
    series
        .channels
        .insert(AngleKey::new(Joint::Elbow, Side::Right, Axis::Flexion), (0..40_000).map(|i| i as f64).collect());
    let cut = apply_segments(&series, &frames).map_err(|e| e.to_string())?;
    let s1 = &cut["F1"];
    ensure!(s1.len() == 6090 && s1.channels.values().next().unwrap()[0] == 210.0, "F1 slice");
    ensure!((s1.origin_s - 2.10).abs() < 1e-12, "F1 origin {}", s1.origin_s);
    Ok(format!("0:04-1:04 -> [400, 6400), 1:28-2:38 -> [8800, 15800), F210-6300 -> {d1:.2} s, F24760-31760 -> {d2:.2} s"))
}

// ---------------------------------------------------------------------------
// 8

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn determinism() -> Outcome {
    let fixture = fixture_dir().join("fixture_recording.csv");
    let spec = fixture_dir().join("fixture_segments.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    let mut summaries = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        let code = ergokin_cli::run([
            "ergokin",
            "pipeline",
            "--input",
            fixture.to_str().unwrap(),
            "--calib-window",
            "0-2",
            "--spec",
            spec.to_str().unwrap(),
            "--mode",
            "chain",
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure!(code == 0, "pipeline exit code {code}");
        let m = Manifest::load(&out).map_err(|e| e.to_string())?;
        let bad = m.verify(&out).map_err(|e| e.to_string())?;
        ensure!(bad.is_empty(), "hash mismatch in {bad:?}");
        manifests.push(fs::read(out.join("manifest.json")).map_err(|e| e.to_string())?);
        summaries.push(fs::read_to_string(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    ensure!(manifests[0] == manifests[1], "manifests differ between runs");
    ensure!(summaries[0] == summaries[1], "summary.json differs between runs");
    let golden = fs::read_to_string(fixture_dir().join("golden_summary.json")).map_err(|e| e.to_string())?;
    ensure!(summaries[0] == golden, "summary.json differs from the frozen golden copy");
    let doc: SummaryDoc = serde_json::from_str(&summaries[0]).map_err(|e| e.to_string())?;
    let m: Manifest = serde_json::from_slice(&manifests[0]).map_err(|e| e.to_string())?;
    Ok(format!(
        "two runs byte-identical ({} files hashed, {} segments), summary matches golden",
        m.files.len(),
        doc.segments.len()
    ))
}

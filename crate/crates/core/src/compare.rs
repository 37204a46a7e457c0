//! Agreement metrics between two joint-angle series of the same movement:
//! resampling to a common rate, lag alignment, correlation and RMSE.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angles::{AngleKey, Axis, Joint, JointAngleSeries, Side};

pub const DEFAULT_MAX_LAG_S: f64 = 5.0;
pub const MIN_OVERLAP_S: f64 = 2.0;
pub const ESTIMATOR: &str = "zero-lag Pearson correlation of mean-removed series after integer-sample lag alignment";

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{joint}: {source}")]
    Joint {
        joint: String,
        #[source]
        source: Box<CompareError>,
    },
}

fn input(msg: impl Into<String>) -> CompareError {
    CompareError::Input(msg.into())
}

/// Linear resampling onto `target_rate` over the original time span.
pub fn resample(series: &JointAngleSeries, target_rate: f64) -> Result<JointAngleSeries, CompareError> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(input(format!("target rate {target_rate}")));
    }
    let n = series.len();
    if n < 2 {
        return Err(input(format!("cannot resample a series of {n} sample(s)")));
    }
    if target_rate == series.rate_hz {
        return Ok(series.clone());
    }
    let span = (n - 1) as f64 / series.rate_hz;
    let m = (span * target_rate + 1e-9).floor() as usize + 1;
    let positions: Vec<(usize, f64)> = (0..m)
        .map(|k| {
            let x = k as f64 * series.rate_hz / target_rate;
            let i = (x.floor() as usize).min(n - 1);
            (i, x - i as f64)
        })
        .collect();
    let channels = series
        .channels
        .iter()
        .map(|(k, v)| {
            let out = positions
                .iter()
                .map(|&(i, f)| if f == 0.0 || i + 1 >= n { v[i] } else { v[i] + f * (v[i + 1] - v[i]) })
                .collect();
            (*k, out)
        })
        .collect();
    Ok(JointAngleSeries {
        rate_hz: target_rate,
        origin_s: series.origin_s,
        channels,
        metadata: series.metadata.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Xcorr {
    pub value: f64,
    /// One input was constant; the value is defined as 0.
    pub degenerate: bool,
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Zero-lag normalized correlation of the mean-removed inputs.
pub fn xcorr(a: &[f64], b: &[f64]) -> Result<Xcorr, CompareError> {
    if a.len() != b.len() {
        return Err(input(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(input("correlation needs at least 2 samples"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    match (saa == 0.0, sbb == 0.0) {
        (true, true) => Err(input("both series are constant")),
        (true, false) | (false, true) => Ok(Xcorr {
            value: 0.0,
            degenerate: true,
        }),
        _ => Ok(Xcorr {
            value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
            degenerate: false,
        }),
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, CompareError> {
    if a.len() != b.len() {
        return Err(input(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(input("RMSE of empty series"));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// The overlapping parts of `a` and `b` when `b` is read `lag` samples later than `a`.
pub fn aligned<'a>(a: &'a [f64], b: &'a [f64], lag: i64) -> (&'a [f64], &'a [f64]) {
    let (a0, b0) = if lag >= 0 { (0, lag as usize) } else { ((-lag) as usize, 0) };
    if a0 >= a.len() || b0 >= b.len() {
        return (&a[..0], &b[..0]);
    }
    let n = (a.len() - a0).min(b.len() - b0);
    (&a[a0..a0 + n], &b[b0..b0 + n])
}

/// Shift in samples, within ±`max_lag`, that best aligns `b` onto `a`:
/// `b[i + lag]` pairs with `a[i]`, so a positive lag means `b` runs late.
/// Ties go to the smallest |lag|, then the positive one.
pub fn best_lag_samples(a: &[f64], b: &[f64], max_lag: usize, min_overlap: usize) -> Result<(i64, f64), CompareError> {
    let mut best: Option<(i64, f64)> = None;
    let mut order = vec![0i64];
    for k in 1..=max_lag as i64 {
        order.push(k);
        order.push(-k);
    }
    for lag in order {
        let (x, y) = aligned(a, b, lag);
        if x.len() < min_overlap.max(2) {
            continue;
        }
        let c = xcorr(x, y)?.value;
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((lag, c));
        }
    }
    best.ok_or_else(|| input(format!("no lag within ±{max_lag} samples leaves {min_overlap} overlapping samples")))
}

/// Lag in seconds for two series at a common rate; see [`best_lag_samples`].
pub fn best_lag(a: &[f64], b: &[f64], rate_hz: f64, max_lag_s: f64) -> Result<f64, CompareError> {
    let max_lag = (max_lag_s * rate_hz + 1e-9).floor() as usize;
    let min_overlap = (MIN_OVERLAP_S * rate_hz).ceil() as usize;
    Ok(best_lag_samples(a, b, max_lag, min_overlap)?.0 as f64 / rate_hz)
}

/// One joint compared on a set of axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSelection {
    pub joint: Joint,
    pub side: Side,
    pub axes: Vec<Axis>,
}

impl JointSelection {
    pub fn name(&self) -> String {
        let side = match self.side {
            Side::Left => "Left",
            Side::Right => "Right",
            Side::Center => "Center",
        };
        let joint = match self.joint {
            Joint::Elbow => "Elbow",
            Joint::Shoulder => "Shoulder",
            Joint::Trunk => "Trunk",
        };
        format!("{side}-{joint}")
    }
}

/// Left/right elbow on flexion and pronosupination, left/right shoulder on
/// flexion and abduction, in table order.
pub fn default_selection() -> Vec<JointSelection> {
    let mut out = Vec::new();
    for (joint, axes) in [
        (Joint::Elbow, vec![Axis::Flexion, Axis::Pronosupination]),
        (Joint::Shoulder, vec![Axis::Flexion, Axis::Abduction]),
    ] {
        for side in [Side::Left, Side::Right] {
            out.push(JointSelection {
                joint,
                side,
                axes: axes.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisComparison {
    pub key: AngleKey,
    pub xcorr: f64,
    pub degenerate: bool,
    pub rmse_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    pub name: String,
    pub joint: Joint,
    pub side: Side,
    /// Axis the lag was estimated on (largest variance in `a`).
    pub lag_axis: Axis,
    pub lag_samples: i64,
    pub lag_s: f64,
    pub overlap_s: f64,
    /// Headline figures: the first selected axis.
    pub xcorr: f64,
    pub rmse_deg: f64,
    pub axes: Vec<AxisComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub estimator: String,
    pub rate_a_hz: f64,
    pub rate_b_hz: f64,
    pub common_rate_hz: f64,
    pub max_lag_s: f64,
    pub joints: Vec<JointComparison>,
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn compare_joint(
    a: &JointAngleSeries,
    b: &JointAngleSeries,
    sel: &JointSelection,
    max_lag_s: f64,
) -> Result<JointComparison, CompareError> {
    if sel.axes.is_empty() {
        return Err(input("no axes selected"));
    }
    let mut pairs = Vec::new();
    for axis in &sel.axes {
        let key = AngleKey::new(sel.joint, sel.side, *axis);
        let ca = a.channel(&key).ok_or_else(|| input(format!("series a lacks {key}")))?;
        let cb = b.channel(&key).ok_or_else(|| input(format!("series b lacks {key}")))?;
        pairs.push((key, ca, cb));
    }
    let (lag_axis, lag_a, lag_b) = pairs
        .iter()
        .map(|(k, ca, cb)| (k.axis, *ca, *cb))
        .fold(None, |best: Option<(Axis, &[f64], &[f64])>, cur| match best {
            Some(b) if variance(b.1) >= variance(cur.1) => Some(b),
            _ => Some(cur),
        })
        .expect("at least one axis");
    let rate = a.rate_hz;
    let max_lag = (max_lag_s * rate + 1e-9).floor() as usize;
    let min_overlap = (MIN_OVERLAP_S * rate).ceil() as usize;
    let (lag, _) = best_lag_samples(lag_a, lag_b, max_lag, min_overlap)?;
    let mut axes = Vec::new();
    let mut overlap = 0;
    for (key, ca, cb) in &pairs {
        let (x, y) = aligned(ca, cb, lag);
        overlap = x.len();
        let c = xcorr(x, y)?;
        axes.push(AxisComparison {
            key: *key,
            xcorr: c.value,
            degenerate: c.degenerate,
            rmse_deg: rmse(x, y)?,
        });
    }
    Ok(JointComparison {
        name: sel.name(),
        joint: sel.joint,
        side: sel.side,
        lag_axis,
        lag_samples: lag,
        lag_s: lag as f64 / rate,
        overlap_s: overlap as f64 / rate,
        xcorr: axes[0].xcorr,
        rmse_deg: axes[0].rmse_deg,
        axes,
    })
}

/// Resamples both series to the higher rate, then aligns and scores every selected joint.
pub fn compare_series(
    a: &JointAngleSeries,
    b: &JointAngleSeries,
    selection: &[JointSelection],
    max_lag_s: f64,
) -> Result<ComparisonResult, CompareError> {
    if !(max_lag_s >= 0.0 && max_lag_s.is_finite()) {
        return Err(input(format!("max lag {max_lag_s}")));
    }
    let common = a.rate_hz.max(b.rate_hz);
    let ra = resample(a, common)?;
    let rb = resample(b, common)?;
    let joints = selection
        .iter()
        .map(|sel| {
            compare_joint(&ra, &rb, sel, max_lag_s).map_err(|e| CompareError::Joint {
                joint: sel.name(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ComparisonResult {
        estimator: ESTIMATOR.into(),
        rate_a_hz: a.rate_hz,
        rate_b_hz: b.rate_hz,
        common_rate_hz: common,
        max_lag_s,
        joints,
    })
}

impl ComparisonResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    /// Joints as columns, cross-correlation and RMSE as rows, three decimals.
    pub fn to_markdown(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## {title}\n");
        let _ = writeln!(out, "Estimator: {}.\n", self.estimator);
        out.push_str("| |");
        for j in &self.joints {
            let _ = write!(out, " {} |", j.name);
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.joints.len()));
        out.push('\n');
        let mut row = |name: &str, f: &dyn Fn(&JointComparison) -> String| {
            let _ = write!(out, "| {name} |");
            for j in &self.joints {
                let _ = write!(out, " {} |", f(j));
            }
            out.push('\n');
        };
        row("Cross-correlation", &|j| format!("{:.3}", j.xcorr));
        row("RMSE", &|j| format!("{:.3}", j.rmse_deg));
        row("Lag (s)", &|j| format!("{:.3}", j.lag_s));
        row("Overlap (s)", &|j| format!("{:.3}", j.overlap_s));
        out.push_str("\n| Joint | Axis | Cross-correlation | RMSE |\n|---|---|---:|---:|\n");
        for j in &self.joints {
            for a in &j.axes {
                let flag = if a.degenerate { " (constant input)" } else { "" };
                let _ = writeln!(out, "| {} | {} | {:.3}{flag} | {:.3} |", j.name, a.key.axis, a.xcorr, a.rmse_deg);
            }
        }
        out
    }
}

//! Report bundle: a self-contained directory of angle and score tables,
//! per-segment summaries, strided skeleton poses, static SVG plots and a
//! manifest of content hashes written last.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::angles::{AngleKey, Joint, JointAngleSeries, Side};
use crate::calib::CalibrationProfile;
use crate::compare::ComparisonResult;
use crate::kinmodel::{IkMode, KinematicModel, SkeletonPose};
use crate::rula::{scores_csv, summarize, Band, GlobalMode, RiskSummary, RulaConfig, RulaError, RulaFrameScore, BANDS};
use crate::segment::{SegmentSpec, SpecError};

pub const BUNDLE_FORMAT: &str = "ergokin-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_POSE_STRIDE: usize = 2;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("inconsistent input ({stage}): {message}")]
    Input { stage: String, message: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Rula(#[from] RulaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn stage_error(stage: &str, message: impl Into<String>) -> ReportError {
    ReportError::Input {
        stage: stage.into(),
        message: message.into(),
    }
}

/// Fill colors for bands 1-2, 3-4, 5-6 and 7+.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette(pub [String; 4]);

impl Default for Palette {
    fn default() -> Self {
        Palette(["#2e9d4a", "#f2c230", "#f08a24", "#d62d20"].map(String::from))
    }
}

impl Palette {
    pub fn of(&self, band: Band) -> &str {
        &self.0[band.index()]
    }
}

#[derive(Debug, Clone)]
pub struct BundleInputs<'a> {
    pub angles: &'a JointAngleSeries,
    pub scores: &'a [RulaFrameScore],
    pub summaries: &'a [RiskSummary],
    pub poses: &'a [SkeletonPose],
    pub rula_config: &'a RulaConfig,
    pub model: &'a KinematicModel,
    pub ik_mode: IkMode,
    pub profile: Option<&'a CalibrationProfile>,
    pub spec: Option<&'a SegmentSpec>,
    pub comparison: Option<&'a ComparisonResult>,
    pub pose_stride: usize,
    pub palette: Palette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub ik_mode: IkMode,
    pub global_mode: GlobalMode,
    pub rate_hz: f64,
    pub origin_s: f64,
    pub frame_count: usize,
    pub duration_s: f64,
    pub pose_stride: usize,
    pub segment_labels: Vec<String>,
    pub config_hashes: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }

    /// Re-hashes every listed file; returns the paths that do not match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, ReportError> {
        let mut bad = Vec::new();
        for f in &self.files {
            let data = fs::read(dir.join(&f.path))?;
            if sha256_hex(&data) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Time-in-band summaries, one per spec segment, or a single "all" summary without a spec.
pub fn summarize_segments(
    scores: &[RulaFrameScore],
    rate_hz: f64,
    spec: Option<&SegmentSpec>,
    mode: GlobalMode,
) -> Result<Vec<RiskSummary>, ReportError> {
    match spec {
        Some(spec) if !spec.segments.is_empty() => spec
            .resolve(rate_hz, scores.len())?
            .into_iter()
            .map(|r| Ok(summarize(&scores[r.start..r.end], &r.label, mode)?))
            .collect(),
        _ => Ok(vec![summarize(scores, "all", mode)?]),
    }
}

/// The summary document: global mode plus one summary per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub mode: GlobalMode,
    pub segments: Vec<RiskSummary>,
}

pub fn summary_json(mode: GlobalMode, summaries: &[RiskSummary]) -> String {
    let doc = SummaryDoc {
        mode,
        segments: summaries.to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n"
}

struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn put(&mut self, rel: &str, data: &[u8]) -> Result<(), ReportError> {
        let path = self.dir.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, data)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(data),
            bytes: data.len() as u64,
        });
        Ok(())
    }
}

pub fn poses_jsonl(poses: &[SkeletonPose], stride: usize) -> String {
    let mut out = String::new();
    for (i, p) in poses.iter().enumerate().step_by(stride.max(1)) {
        let line = json!({ "frame": i, "time_s": p.time_s, "segments": p.segments });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// One stored pose line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub time_s: f64,
    pub segments: BTreeMap<String, crate::kinmodel::SegmentPose>,
}

pub fn read_poses_jsonl(text: &str) -> Result<Vec<PoseRecord>, ReportError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| stage_error("poses", format!("line {}: {e}", i + 1))))
        .collect()
}

fn check_inputs(inp: &BundleInputs) -> Result<(), ReportError> {
    let n = inp.angles.len();
    if n == 0 {
        return Err(stage_error("angles", "empty angle series"));
    }
    if inp.scores.len() != n {
        return Err(stage_error("scores", format!("{} score frames for {n} angle frames", inp.scores.len())));
    }
    if inp.poses.len() != n {
        return Err(stage_error("poses", format!("{} poses for {n} angle frames", inp.poses.len())));
    }
    if inp.summaries.is_empty() {
        return Err(stage_error("summary", "no summaries"));
    }
    for s in inp.summaries {
        for side in [&s.left, &s.right] {
            let total: f64 = side.percent_time.iter().sum();
            if (total - 100.0).abs() > 1e-9 {
                return Err(stage_error("summary", format!("{} percentages sum to {total}", s.label)));
            }
        }
        if s.mode != inp.rula_config.global_mode {
            return Err(stage_error("summary", format!("{} was scored in {} mode", s.label, s.mode.as_str())));
        }
    }
    if let Some(spec) = inp.spec {
        spec.resolve(inp.angles.rate_hz, n)?;
    }
    if inp.pose_stride == 0 {
        return Err(stage_error("poses", "stride must be at least 1"));
    }
    Ok(())
}

/// Writes the bundle into `out_dir` and returns its manifest.
pub fn build_bundle(inp: &BundleInputs, out_dir: &Path) -> Result<Manifest, ReportError> {
    check_inputs(inp)?;
    fs::create_dir_all(out_dir)?;
    let _ = fs::remove_file(out_dir.join(MANIFEST));
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let mode = inp.rula_config.global_mode;

    let mut angles = inp.angles.clone();
    angles.metadata.insert("ik_mode".into(), inp.ik_mode.as_str().into());
    w.put("angles.csv", angles.to_csv().as_bytes())?;
    w.put("scores.csv", scores_csv(inp.scores, mode).as_bytes())?;
    w.put("summary.json", summary_json(mode, inp.summaries).as_bytes())?;
    w.put("poses.jsonl", poses_jsonl(inp.poses, inp.pose_stride).as_bytes())?;
    let spec = inp.spec.cloned().unwrap_or(SegmentSpec {
        clock: String::new(),
        segments: Vec::new(),
    });
    w.put("segments.json", (spec.to_json() + "\n").as_bytes())?;

    let rula_json = inp.rula_config.to_json() + "\n";
    let model_json = inp.model.to_json() + "\n";
    w.put("config/rula.json", rula_json.as_bytes())?;
    w.put("config/model.json", model_json.as_bytes())?;
    let mut config_hashes = BTreeMap::from([
        ("rula".to_string(), sha256_hex(rula_json.as_bytes())),
        ("model".to_string(), sha256_hex(model_json.as_bytes())),
        ("rula_tables".to_string(), sha256_hex(serde_json::to_string(&inp.rula_config.tables)?.as_bytes())),
    ]);
    if let Some(p) = inp.profile {
        let text = p.to_json() + "\n";
        config_hashes.insert("calibration".into(), sha256_hex(text.as_bytes()));
        w.put("config/calibration.json", text.as_bytes())?;
    }

    for (name, svg) in angle_plots(inp.angles) {
        w.put(&format!("plots/{name}"), svg.as_bytes())?;
    }
    for side in [Side::Left, Side::Right] {
        let svg = score_strip(inp.scores, side, inp.angles.rate_hz, &inp.palette);
        w.put(&format!("plots/scores_{}.svg", side.as_str()), svg.as_bytes())?;
    }
    for (i, s) in inp.summaries.iter().enumerate() {
        for side in [Side::Left, Side::Right] {
            let svg = pie(s, side, &inp.palette);
            w.put(&format!("plots/pie_{i:02}_{}.svg", side.as_str()), svg.as_bytes())?;
        }
    }
    if let Some(c) = inp.comparison {
        w.put("comparison.json", (c.to_json() + "\n").as_bytes())?;
        w.put("comparison.md", c.to_markdown("Comparison").as_bytes())?;
    }

    w.files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        generator: format!("ergokin {}", env!("CARGO_PKG_VERSION")),
        ik_mode: inp.ik_mode,
        global_mode: mode,
        rate_hz: inp.angles.rate_hz,
        origin_s: inp.angles.origin_s,
        frame_count: inp.angles.len(),
        duration_s: inp.angles.duration_s(),
        pose_stride: inp.pose_stride,
        segment_labels: inp.summaries.iter().map(|s| s.label.clone()).collect(),
        config_hashes,
        files: w.files,
    };
    let tmp = out_dir.join(".manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::rename(&tmp, out_dir.join(MANIFEST))?;
    Ok(manifest)
}

// ---- plots ----

const W: f64 = 800.0;
const H: f64 = 220.0;
const PAD: f64 = 40.0;
const LINE_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

fn svg_open(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{PAD}" y="16" font-size="13">{title}</text>"#);
}

fn axes_box(out: &mut String, y_lo: f64, y_hi: f64, t_end: f64) {
    let (x0, x1, y0, y1) = (PAD, W - 10.0, H - 25.0, 25.0);
    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(out, r#"<text x="4" y="{}">{y_hi:.0}</text>"#, y1 + 8.0);
    let _ = writeln!(out, r#"<text x="4" y="{y0}">{y_lo:.0}</text>"#);
    let _ = writeln!(out, r#"<text x="{x0}" y="{}">0 s</text>"#, H - 8.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{t_end:.2} s</text>"#, x1, H - 8.0);
}

fn angle_plots(series: &JointAngleSeries) -> Vec<(String, String)> {
    let mut groups: BTreeMap<(Joint, Side), Vec<(&AngleKey, &Vec<f64>)>> = BTreeMap::new();
    for (k, v) in &series.channels {
        groups.entry((k.joint, k.side)).or_default().push((k, v));
    }
    let n = series.len();
    let t_end = series.duration_s();
    groups
        .into_iter()
        .map(|((joint, side), chans)| {
            let finite = chans.iter().flat_map(|(_, v)| v.iter()).filter(|x| x.is_finite());
            let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
            if !lo.is_finite() {
                (lo, hi) = (-1.0, 1.0);
            }
            if hi - lo < 1.0 {
                lo -= 0.5;
                hi += 0.5;
            }
            let mut out = String::new();
            svg_open(&mut out, W, H, &format!("{joint} {side} angles (deg)"));
            axes_box(&mut out, lo, hi, t_end);
            for (c, (k, v)) in chans.iter().enumerate() {
                let color = LINE_COLORS[c % 3];
                let mut pts = String::new();
                for (i, y) in v.iter().enumerate() {
                    if !y.is_finite() {
                        continue;
                    }
                    let px = PAD + (W - 10.0 - PAD) * i as f64 / (n.max(2) - 1) as f64;
                    let py = (H - 25.0) - (H - 50.0) * (y - lo) / (hi - lo);
                    let _ = write!(pts, "{px:.2},{py:.2} ");
                }
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                    pts.trim_end()
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="16" fill="{color}">{}</text>"#,
                    W - 300.0 + 95.0 * c as f64,
                    k.axis
                );
            }
            out.push_str("</svg>\n");
            (format!("angles_{}_{}.svg", joint.as_str(), side.as_str()), out)
        })
        .collect()
}

/// Step plot of the banded global score, each run filled with its band color.
pub fn score_strip(scores: &[RulaFrameScore], side: Side, rate_hz: f64, palette: &Palette) -> String {
    let mut out = String::new();
    svg_open(&mut out, W, H, &format!("Instantaneous RULA score, side {side}"));
    let n = scores.len().max(1);
    let top = scores.iter().map(|s| s.side(side).global).max().unwrap_or(1).max(7) as f64;
    axes_box(&mut out, 0.0, top, scores.len() as f64 / rate_hz);
    let mut i = 0;
    while i < scores.len() {
        let s = scores[i].side(side);
        let mut j = i + 1;
        while j < scores.len() && scores[j].side(side).global == s.global {
            j += 1;
        }
        let x = PAD + (W - 10.0 - PAD) * i as f64 / n as f64;
        let w = (W - 10.0 - PAD) * (j - i) as f64 / n as f64;
        let h = (H - 50.0) * s.global as f64 / top;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="{}"/>"#,
            H - 25.0 - h,
            palette.of(s.band)
        );
        i = j;
    }
    out.push_str("</svg>\n");
    out
}

/// Pie of time-in-band shares for one side of one summary.
pub fn pie(summary: &RiskSummary, side: Side, palette: &Palette) -> String {
    let s = match side {
        Side::Left => &summary.left,
        _ => &summary.right,
    };
    let (cx, cy, r) = (110.0, 120.0, 80.0);
    let mut out = String::new();
    svg_open(&mut out, 360.0, 240.0, &format!("{} side {side} ({} mode)", summary.label, summary.mode.as_str()));
    let mut start = 0.0f64;
    for band in BANDS {
        let share = s.percent_time[band.index()] / 100.0;
        if share <= 0.0 {
            continue;
        }
        let color = palette.of(band);
        if share >= 1.0 - 1e-12 {
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="{r}" fill="{color}"/>"#);
        } else {
            let end = start + share;
            let p = |f: f64| {
                let a = std::f64::consts::TAU * f - std::f64::consts::FRAC_PI_2;
                (cx + r * a.cos(), cy + r * a.sin())
            };
            let (x0, y0) = p(start);
            let (x1, y1) = p(end);
            let large = if share > 0.5 { 1 } else { 0 };
            let _ = writeln!(
                out,
                r#"<path d="M{cx},{cy} L{x0:.3},{y0:.3} A{r},{r} 0 {large} 1 {x1:.3},{y1:.3} Z" fill="{color}"/>"#
            );
        }
        start += share;
    }
    for (i, band) in BANDS.iter().enumerate() {
        let y = 70.0 + 22.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="220" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, palette.of(*band));
        let _ = writeln!(out, r#"<text x="238" y="{y}">{}: {:.1}%</text>"#, band.label(), s.percent_time[i]);
    }
    out.push_str("</svg>\n");
    out
}

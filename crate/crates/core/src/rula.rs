//! RULA posture scoring for the upper limbs, risk bands and time-in-band summaries.
//!
//! Only the arm is measured: wrist posture, neck, trunk and legs come from
//! configured constants, as do the muscle-use and force/load adjustments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angles::{AngleKey, Axis, Joint, JointAngleFrame, JointAngleSeries, Side};

pub const DEFAULT_TABLES_JSON: &str = include_str!("../data/rula_tables_v1.json");

#[derive(Debug, Error)]
pub enum RulaError {
    #[error("missing input angle {0}")]
    MissingAngle(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulaTables {
    pub version: u32,
    /// `[upper_arm][lower_arm][wrist][wrist_twist]`, each index one less than the score.
    pub table_a: [[[[u8; 2]; 4]; 3]; 6],
    /// `[neck][trunk][legs]`
    pub table_b: [[[u8; 2]; 6]; 6],
    /// `[score_a][score_b]`
    pub table_c: [[u8; 7]; 8],
}

impl Default for RulaTables {
    fn default() -> Self {
        RulaTables::from_json(DEFAULT_TABLES_JSON).expect("bundled tables are valid")
    }
}

impl RulaTables {
    pub fn from_json(text: &str) -> Result<Self, RulaError> {
        let t: RulaTables = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, RulaError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), RulaError> {
        let all = self
            .table_a
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .chain(self.table_b.iter().flatten().flatten())
            .chain(self.table_c.iter().flatten());
        for v in all {
            if !(1..=9).contains(v) {
                return Err(RulaError::Config(format!("table entry {v} outside 1-9")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalMode {
    #[serde(rename = "grand")]
    Grand,
    #[serde(rename = "local-sum")]
    LocalSum,
}

impl GlobalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GlobalMode::Grand => "grand",
            GlobalMode::LocalSum => "local-sum",
        }
    }
}

impl std::str::FromStr for GlobalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grand" => Ok(GlobalMode::Grand),
            "local-sum" => Ok(GlobalMode::LocalSum),
            other => Err(format!("unknown global mode {other:?} (expected grand or local-sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulaConfig {
    /// Upper-arm flexion breakpoints: extension limit, then the 2/3/4 thresholds.
    pub upper_arm_breakpoints_deg: [f64; 4],
    pub abduction_bonus_threshold_deg: f64,
    pub shoulder_raised_score: u8,
    pub arm_supported_score: i8,
    /// Elbow flexion window scoring 1.
    pub lower_arm_window_deg: [f64; 2],
    pub midline_adjustment_enabled: bool,
    pub wrist_default_score: u8,
    pub wrist_twist_threshold_deg: f64,
    pub muscle_use_score: u8,
    pub force_load_score: u8,
    pub neck_score: u8,
    pub trunk_score: u8,
    pub legs_score: u8,
    pub global_mode: GlobalMode,
    /// Alternate tables file; the bundled tables when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tables_path: Option<String>,
    #[serde(skip)]
    pub tables: RulaTables,
}

impl Default for RulaConfig {
    fn default() -> Self {
        RulaConfig {
            upper_arm_breakpoints_deg: [-20.0, 20.0, 45.0, 90.0],
            abduction_bonus_threshold_deg: 45.0,
            shoulder_raised_score: 0,
            arm_supported_score: 0,
            lower_arm_window_deg: [60.0, 100.0],
            midline_adjustment_enabled: false,
            wrist_default_score: 1,
            wrist_twist_threshold_deg: 60.0,
            muscle_use_score: 0,
            force_load_score: 0,
            neck_score: 1,
            trunk_score: 1,
            legs_score: 1,
            global_mode: GlobalMode::Grand,
            tables_path: None,
            tables: RulaTables::default(),
        }
    }
}

impl RulaConfig {
    pub fn with_mode(mode: GlobalMode) -> Self {
        RulaConfig {
            global_mode: mode,
            ..Default::default()
        }
    }

    /// Parses a config; a relative `tables_path` resolves against `base_dir`.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, RulaError> {
        let mut cfg: RulaConfig = serde_json::from_str(text)?;
        if let Some(p) = &cfg.tables_path {
            let p = Path::new(p);
            let full = match base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.to_path_buf(),
            };
            cfg.tables = RulaTables::load(&full)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RulaError> {
        Self::from_json(&fs::read_to_string(path)?, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), RulaError> {
        let b = self.upper_arm_breakpoints_deg;
        if !b.windows(2).all(|w| w[0] < w[1]) {
            return Err(RulaError::Config(format!("breakpoints {b:?} not strictly increasing")));
        }
        if !(self.lower_arm_window_deg[0] < self.lower_arm_window_deg[1]) {
            return Err(RulaError::Config("lower-arm window must satisfy min < max".into()));
        }
        if self.midline_adjustment_enabled {
            return Err(RulaError::Config("midline adjustment needs a measured midline crossing; not supported".into()));
        }
        for (name, v, range) in [
            ("wrist_default_score", self.wrist_default_score, 1..=4),
            ("neck_score", self.neck_score, 1..=6),
            ("trunk_score", self.trunk_score, 1..=6),
            ("legs_score", self.legs_score, 1..=2),
            ("shoulder_raised_score", self.shoulder_raised_score, 0..=1),
            ("muscle_use_score", self.muscle_use_score, 0..=1),
            ("force_load_score", self.force_load_score, 0..=3),
        ] {
            if !range.contains(&v) {
                return Err(RulaError::Config(format!("{name} {v} outside {range:?}")));
            }
        }
        if !(-1..=0).contains(&self.arm_supported_score) {
            return Err(RulaError::Config("arm_supported_score must be 0 or -1".into()));
        }
        self.tables.validate()
    }

    /// Table B value plus adjustments; independent of the arm angles.
    pub fn score_b(&self) -> u8 {
        let t = &self.tables.table_b;
        t[self.neck_score as usize - 1][self.trunk_score as usize - 1][self.legs_score as usize - 1]
            + self.muscle_use_score
            + self.force_load_score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "1-2")]
    Low,
    #[serde(rename = "3-4")]
    Medium,
    #[serde(rename = "5-6")]
    High,
    #[serde(rename = "7+")]
    VeryHigh,
}

pub const BANDS: [Band; 4] = [Band::Low, Band::Medium, Band::High, Band::VeryHigh];

impl Band {
    pub fn label(&self) -> &'static str {
        match self {
            Band::Low => "1-2",
            Band::Medium => "3-4",
            Band::High => "5-6",
            Band::VeryHigh => "7+",
        }
    }

    pub fn color(&self) -> Color {
        match self {
            Band::Low => Color::Green,
            Band::Medium => Color::Yellow,
            Band::High => Color::Orange,
            Band::VeryHigh => Color::Red,
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Green,
    Yellow,
    Orange,
    Red,
}

impl Color {
    pub fn as_str(&self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Red => "red",
        }
    }
}

pub fn band_of(global: u8) -> Result<(Band, Color), RulaError> {
    let band = match global {
        0 => return Err(RulaError::Input("global score must be at least 1".into())),
        1..=2 => Band::Low,
        3..=4 => Band::Medium,
        5..=6 => Band::High,
        _ => Band::VeryHigh,
    };
    Ok((band, band.color()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideScore {
    pub upper_arm: u8,
    pub lower_arm: u8,
    pub wrist: u8,
    pub wrist_twist: u8,
    pub posture_a: u8,
    pub score_a: u8,
    pub score_b: u8,
    pub grand: u8,
    /// The value that is banded: `grand`, or `upper_arm + lower_arm` in local-sum mode.
    pub global: u8,
    pub band: Band,
    pub color: Color,
}

/// Arm angles of one side, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmAngles {
    pub shoulder_flexion: f64,
    pub shoulder_abduction: f64,
    pub elbow_flexion: f64,
    pub pronosupination: Option<f64>,
}

pub fn upper_arm_base(flexion: f64, breakpoints: &[f64; 4]) -> u8 {
    let [ext, low, mid, high] = *breakpoints;
    if flexion < ext {
        2
    } else if flexion <= low {
        1
    } else if flexion <= mid {
        2
    } else if flexion <= high {
        3
    } else {
        4
    }
}

/// Scores one arm. This is the whole per-side computation.
pub fn score_side(a: &ArmAngles, cfg: &RulaConfig) -> SideScore {
    let mut upper = upper_arm_base(a.shoulder_flexion, &cfg.upper_arm_breakpoints_deg) as i16;
    if a.shoulder_abduction.abs() > cfg.abduction_bonus_threshold_deg {
        upper += 1;
    }
    upper += cfg.shoulder_raised_score as i16 + cfg.arm_supported_score as i16;
    let upper_arm = upper.clamp(1, 6) as u8;
    let [lo, hi] = cfg.lower_arm_window_deg;
    let lower_arm = if a.elbow_flexion >= lo && a.elbow_flexion <= hi { 1 } else { 2 };
    let wrist = cfg.wrist_default_score;
    let wrist_twist = match a.pronosupination {
        Some(p) if p.abs() > cfg.wrist_twist_threshold_deg => 2,
        _ => 1,
    };
    let posture_a = cfg.tables.table_a[upper_arm as usize - 1][lower_arm as usize - 1][wrist as usize - 1]
        [wrist_twist as usize - 1];
    let score_a = posture_a + cfg.muscle_use_score + cfg.force_load_score;
    let score_b = cfg.score_b();
    let grand = cfg.tables.table_c[score_a.clamp(1, 8) as usize - 1][score_b.clamp(1, 7) as usize - 1];
    let global = match cfg.global_mode {
        GlobalMode::Grand => grand,
        GlobalMode::LocalSum => upper_arm + lower_arm,
    };
    let (band, color) = band_of(global).expect("global is at least 1");
    SideScore {
        upper_arm,
        lower_arm,
        wrist,
        wrist_twist,
        posture_a,
        score_a,
        score_b,
        grand,
        global,
        band,
        color,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulaFrameScore {
    pub time_s: f64,
    pub left: SideScore,
    pub right: SideScore,
}

impl RulaFrameScore {
    pub fn side(&self, side: Side) -> &SideScore {
        match side {
            Side::Left => &self.left,
            _ => &self.right,
        }
    }
}

pub fn arm_angles(frame: &JointAngleFrame, side: Side) -> Result<ArmAngles, RulaError> {
    let get = |joint, axis| {
        let k = AngleKey::new(joint, side, axis);
        match frame.get(&k) {
            Some(v) if v.is_finite() => Ok(v),
            Some(v) => Err(RulaError::Input(format!("{k} is {v}"))),
            None => Err(RulaError::MissingAngle(k.to_string())),
        }
    };
    let pronosupination = frame
        .get(&AngleKey::new(Joint::Elbow, side, Axis::Pronosupination))
        .filter(|v| v.is_finite());
    Ok(ArmAngles {
        shoulder_flexion: get(Joint::Shoulder, Axis::Flexion)?,
        shoulder_abduction: get(Joint::Shoulder, Axis::Abduction)?,
        elbow_flexion: get(Joint::Elbow, Axis::Flexion)?,
        pronosupination,
    })
}

pub fn score_frame(frame: &JointAngleFrame, cfg: &RulaConfig) -> Result<RulaFrameScore, RulaError> {
    Ok(RulaFrameScore {
        time_s: frame.time_s,
        left: score_side(&arm_angles(frame, Side::Left)?, cfg),
        right: score_side(&arm_angles(frame, Side::Right)?, cfg),
    })
}

pub fn score_series(series: &JointAngleSeries, cfg: &RulaConfig) -> Result<Vec<RulaFrameScore>, RulaError> {
    series
        .frames()
        .map(|mut f| {
            f.time_s += series.origin_s;
            score_frame(&f, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    /// Percent of frames in bands 1-2, 3-4, 5-6, 7+.
    pub percent_time: [f64; 4],
    pub frames_per_band: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub label: String,
    pub mode: GlobalMode,
    pub frame_count: usize,
    pub left: SideSummary,
    pub right: SideSummary,
    pub worst_side: Side,
}

fn side_summary(scores: &[RulaFrameScore], side: Side) -> SideSummary {
    let mut counts = [0usize; 4];
    for s in scores {
        counts[s.side(side).band.index()] += 1;
    }
    let n = scores.len() as f64;
    let mut pct = counts.map(|c| 100.0 * c as f64 / n);
    // put any rounding residue on the largest share so the total is exactly 100
    let residue = 100.0 - pct.iter().sum::<f64>();
    let largest = (0..4).max_by_key(|&i| counts[i]).expect("four bands");
    pct[largest] += residue;
    SideSummary {
        percent_time: pct,
        frames_per_band: counts,
    }
}

pub fn summarize(scores: &[RulaFrameScore], label: &str, mode: GlobalMode) -> Result<RiskSummary, RulaError> {
    if scores.is_empty() {
        return Err(RulaError::Input(format!("no frames to summarize for {label:?}")));
    }
    let left = side_summary(scores, Side::Left);
    let right = side_summary(scores, Side::Right);
    let high = |s: &SideSummary| s.frames_per_band[2] + s.frames_per_band[3];
    let worst_side = if high(&left) > high(&right) { Side::Left } else { Side::Right };
    Ok(RiskSummary {
        label: label.to_string(),
        mode,
        frame_count: scores.len(),
        left,
        right,
        worst_side,
    })
}

/// One row per frame: time, then per side the sub-scores, global, band and color.
pub fn scores_csv(scores: &[RulaFrameScore], mode: GlobalMode) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# ergokin-scores v1\n# mode: {}", mode.as_str());
    out.push_str("time_s");
    for s in ["l", "r"] {
        for c in [
            "upper_arm",
            "lower_arm",
            "wrist",
            "wrist_twist",
            "posture_a",
            "score_a",
            "score_b",
            "grand",
            "global",
            "band",
            "color",
        ] {
            let _ = write!(out, ",{c}_{s}");
        }
    }
    out.push('\n');
    for f in scores {
        let _ = write!(out, "{}", f.time_s);
        for s in [&f.left, &f.right] {
            let _ = write!(
                out,
                ",{},{},{},{},{},{},{},{},{},{},{}",
                s.upper_arm,
                s.lower_arm,
                s.wrist,
                s.wrist_twist,
                s.posture_a,
                s.score_a,
                s.score_b,
                s.grand,
                s.global,
                s.band.label(),
                s.color.as_str()
            );
        }
        out.push('\n');
    }
    out
}

fn parse_band(text: &str) -> Option<Band> {
    BANDS.into_iter().find(|b| b.label() == text)
}

/// Reads a table written by [`scores_csv`].
pub fn read_scores_csv(text: &str) -> Result<(GlobalMode, Vec<RulaFrameScore>), RulaError> {
    let mut mode = None;
    let mut header: Option<Vec<&str>> = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let bad = |m: String| RulaError::Input(format!("scores line {n}: {m}"));
        if let Some(c) = line.strip_prefix('#') {
            if let Some(m) = c.trim().strip_prefix("mode:") {
                mode = Some(m.trim().parse::<GlobalMode>().map_err(bad)?);
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let Some(h) = &header else {
            if cells.len() != 23 || cells[0] != "time_s" {
                return Err(bad("expected time_s and 11 columns per side".into()));
            }
            header = Some(cells);
            continue;
        };
        if cells.len() != h.len() {
            return Err(bad(format!("{} cells, expected {}", cells.len(), h.len())));
        }
        let time_s: f64 = cells[0].parse().map_err(|_| bad("bad time".into()))?;
        let side = |o: usize| -> Result<SideScore, RulaError> {
            let num = |j: usize| cells[o + j].parse::<u8>().map_err(|_| bad(format!("bad value {:?}", cells[o + j])));
            let band = parse_band(cells[o + 9]).ok_or_else(|| bad(format!("bad band {:?}", cells[o + 9])))?;
            Ok(SideScore {
                upper_arm: num(0)?,
                lower_arm: num(1)?,
                wrist: num(2)?,
                wrist_twist: num(3)?,
                posture_a: num(4)?,
                score_a: num(5)?,
                score_b: num(6)?,
                grand: num(7)?,
                global: num(8)?,
                band,
                color: band.color(),
            })
        };
        out.push(RulaFrameScore {
            time_s,
            left: side(1)?,
            right: side(12)?,
        });
    }
    let mode = mode.ok_or_else(|| RulaError::Input("scores file lacks a '# mode:' line".into()))?;
    Ok((mode, out))
}

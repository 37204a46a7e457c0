//! Native recording CSV.
//!
//! ```text
//! # ergokin-recording v1
//! # rate_hz: 60
//! # segments: torso,upper_arm_r
//! # calibration: none
//! time_s,torso_qw,torso_qx,torso_qy,torso_qz,upper_arm_r_qw,...
//! ```
//!
//! Two optional extensions: a `# sensor_ids:` line when sensor ids are not
//! 0..n in segment order, and a trailing `stale` column (segment names joined
//! with `|`) when any frame carries stale segments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::rotmath::UnitQuat;

use super::{validate_segment_name, IngestError, Recording, SensorFrame};

const MAGIC: &str = "# ergokin-recording v1";
/// Tolerated quaternion norm error in files we wrote (9 decimals leave ~1e-9).
const NORM_TOLERANCE: f64 = 1e-6;

pub(crate) fn format_rate(rate: f64) -> String {
    if rate.fract() == 0.0 {
        format!("{}", rate as i64)
    } else {
        format!("{rate}")
    }
}

pub fn write_recording_string(rec: &Recording) -> Result<String, IngestError> {
    rec.validate()?;
    let segments = rec.segments();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "# rate_hz: {}", format_rate(rec.rate_hz));
    let _ = writeln!(out, "# segments: {}", segments.join(","));
    let identity_ids = rec.segment_map.keys().enumerate().all(|(i, id)| i == *id as usize);
    if !identity_ids {
        let ids: Vec<String> = rec.segment_map.keys().map(|id| id.to_string()).collect();
        let _ = writeln!(out, "# sensor_ids: {}", ids.join(","));
    }
    let _ = writeln!(out, "# calibration: {}", rec.calibration.as_deref().unwrap_or("none"));
    let with_stale = rec.frames.iter().any(|f| !f.stale.is_empty());
    out.push_str("time_s");
    for s in &segments {
        let _ = write!(out, ",{s}_qw,{s}_qx,{s}_qy,{s}_qz");
    }
    if with_stale {
        out.push_str(",stale");
    }
    out.push('\n');
    for f in &rec.frames {
        let _ = write!(out, "{}", f.tick_index as f64 / rec.rate_hz);
        for s in &segments {
            let q = f.orientations[s].canonical();
            let _ = write!(out, ",{:.9},{:.9},{:.9},{:.9}", q.w(), q.x(), q.y(), q.z());
        }
        if with_stale {
            let names: Vec<&str> = f.stale.iter().map(String::as_str).collect();
            let _ = write!(out, ",{}", names.join("|"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_recording(rec: &Recording, path: &Path) -> Result<(), IngestError> {
    let text = write_recording_string(rec)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording, IngestError> {
    read_recording_str(&fs::read_to_string(path)?)
}

fn header_value<'a>(line: Option<(usize, &'a str)>, key: &str, lineno: usize) -> Result<&'a str, IngestError> {
    let (n, text) = line.ok_or_else(|| IngestError::format(lineno, format!("missing '# {key}:' line")))?;
    text.strip_prefix("# ")
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix(':'))
        .map(str::trim)
        .ok_or_else(|| IngestError::format(n, format!("expected '# {key}: ...'")))
}

pub fn read_recording_str(text: &str) -> Result<Recording, IngestError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).peekable();
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(IngestError::format(1, "missing recording magic line")),
    }
    let rate_hz: f64 = header_value(lines.next(), "rate_hz", 2)?
        .parse()
        .map_err(|_| IngestError::format(2, "rate_hz is not a number"))?;
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(IngestError::format(2, "rate_hz must be positive"));
    }
    let segments: Vec<String> = header_value(lines.next(), "segments", 3)?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    for s in &segments {
        validate_segment_name(s).map_err(|e| IngestError::format(3, e.to_string()))?;
    }
    let unique: BTreeSet<&String> = segments.iter().collect();
    if unique.len() != segments.len() {
        return Err(IngestError::format(3, "duplicated segment"));
    }
    let mut ids: Vec<u8> = (0..segments.len() as u8).collect();
    if matches!(lines.peek(), Some((_, l)) if l.starts_with("# sensor_ids:")) {
        let n = lines.peek().map(|(n, _)| *n).unwrap_or(4);
        ids = header_value(lines.next(), "sensor_ids", n)?
            .split(',')
            .map(|v| v.trim().parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|_| IngestError::format(n, "bad sensor id"))?;
        let unique: BTreeSet<&u8> = ids.iter().collect();
        if ids.len() != segments.len() || unique.len() != ids.len() || ids.iter().any(|id| *id > 15) {
            return Err(IngestError::format(n, "sensor_ids must be unique ids 0-15, one per segment"));
        }
    }
    let cal_line = lines.peek().map(|(n, _)| *n).unwrap_or(4);
    let calibration = match header_value(lines.next(), "calibration", cal_line)? {
        "" => return Err(IngestError::format(cal_line, "empty calibration value")),
        "none" => None,
        other => Some(other.to_string()),
    };

    let (hline, header) = lines
        .next()
        .ok_or_else(|| IngestError::format(cal_line + 1, "missing column header"))?;
    let mut expected = vec!["time_s".to_string()];
    for s in &segments {
        for c in ["qw", "qx", "qy", "qz"] {
            expected.push(format!("{s}_{c}"));
        }
    }
    let cols: Vec<&str> = header.split(',').collect();
    let with_stale = cols.len() == expected.len() + 1 && cols.last() == Some(&"stale");
    let body_cols = if with_stale { &cols[..cols.len() - 1] } else { &cols[..] };
    if body_cols != expected.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        return Err(IngestError::format(hline, "column header does not match segments"));
    }

    let mut frames: Vec<SensorFrame> = Vec::new();
    let mut blank: Option<usize> = None;
    for (n, line) in lines {
        if line.is_empty() {
            blank.get_or_insert(n);
            continue;
        }
        if let Some(b) = blank {
            return Err(IngestError::format(b, "blank line between data rows"));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(IngestError::format(n, format!("expected {} cells, found {}", cols.len(), cells.len())));
        }
        let num = |i: usize| -> Result<f64, IngestError> {
            let v: f64 = cells[i]
                .trim()
                .parse()
                .map_err(|_| IngestError::format(n, format!("bad number {:?}", cells[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(IngestError::format(n, "non-finite value"))
            }
        };
        let t = num(0)?;
        let tick = (t * rate_hz).round();
        if tick < 0.0 || (t - tick / rate_hz).abs() > 1e-6 {
            return Err(IngestError::format(n, format!("time {t} is off the {rate_hz} Hz grid")));
        }
        let tick = tick as u64;
        if let Some(prev) = frames.last() {
            if tick <= prev.tick_index {
                return Err(IngestError::format(n, format!("non-monotonic time {t}")));
            }
        }
        let mut orientations = BTreeMap::new();
        for (j, s) in segments.iter().enumerate() {
            let c = [num(1 + 4 * j)?, num(2 + 4 * j)?, num(3 + 4 * j)?, num(4 + 4 * j)?];
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(IngestError::format(n, format!("{s} quaternion norm {norm}")));
            }
            let q = UnitQuat::from_array(c).map_err(|e| IngestError::format(n, e.to_string()))?;
            orientations.insert(s.clone(), q);
        }
        let mut stale = BTreeSet::new();
        if with_stale {
            let cell = cells[cells.len() - 1].trim();
            for name in cell.split('|').filter(|s| !s.is_empty()) {
                if !segments.iter().any(|s| s == name) {
                    return Err(IngestError::format(n, format!("unknown stale segment {name:?}")));
                }
                stale.insert(name.to_string());
            }
        }
        frames.push(SensorFrame {
            tick_index: tick,
            time_s: tick as f64 / rate_hz,
            orientations,
            stale,
        });
    }

    Ok(Recording {
        rate_hz,
        segment_map: ids.into_iter().zip(segments).collect(),
        calibration,
        frames,
    })
}

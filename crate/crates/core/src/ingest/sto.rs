//! OpenSim storage (.sto) writers and the quaternion-table reader.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::angles::JointAngleSeries;
use crate::rotmath::UnitQuat;

use super::recording_csv::format_rate;
use super::{validate_segment_name, IngestError, Recording, SensorFrame};

/// Writes the recording's orientations as a quaternion storage table.
/// Only calibrated recordings are exported.
pub fn export_sto(rec: &Recording, path: &Path) -> Result<(), IngestError> {
    fs::write(path, sto_string(rec)?)?;
    Ok(())
}

pub(crate) fn sto_string(rec: &Recording) -> Result<String, IngestError> {
    if rec.calibration.is_none() {
        return Err(IngestError::CalibrationRequired);
    }
    for s in rec.segment_map.values() {
        validate_segment_name(s)?;
    }
    rec.validate()?;
    let segments = rec.segments();
    let mut out = String::new();
    let _ = writeln!(out, "DataRate={}", format_rate(rec.rate_hz));
    out.push_str("DataType=Quaternion\nOpenSimVersion=compat\nendheader\ntime");
    for s in &segments {
        let _ = write!(out, "\t{s}");
    }
    out.push('\n');
    for f in &rec.frames {
        let _ = write!(out, "{}", f.tick_index as f64 / rec.rate_hz);
        for s in &segments {
            let q = f.orientations[s].canonical();
            let _ = write!(out, "\t{},{},{},{}", q.w(), q.x(), q.y(), q.z());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a quaternion storage table (one `w,x,y,z` cell per segment).
pub fn read_sto_quaternions(text: &str) -> Result<Recording, IngestError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let end = lines
        .iter()
        .position(|l| l.trim() == "endheader")
        .ok_or_else(|| IngestError::format(1, "missing endheader"))?;
    let mut header = BTreeMap::new();
    for l in &lines[..end] {
        if let Some((k, v)) = l.split_once('=') {
            header.insert(k.trim(), v.trim());
        }
    }
    if header.get("DataType").is_some_and(|t| *t != "Quaternion") {
        return Err(IngestError::format(1, "DataType is not Quaternion"));
    }
    let rate_hz: f64 = header
        .get("DataRate")
        .ok_or_else(|| IngestError::format(1, "missing DataRate"))?
        .parse()
        .map_err(|_| IngestError::format(1, "bad DataRate"))?;
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(IngestError::format(1, "bad DataRate"));
    }
    let hline = end + 2;
    let cols: Vec<&str> = lines
        .get(end + 1)
        .ok_or_else(|| IngestError::format(hline, "missing column header"))?
        .split('\t')
        .collect();
    if cols.first() != Some(&"time") || cols.len() < 2 {
        return Err(IngestError::format(hline, "expected 'time' followed by segment columns"));
    }
    let segments: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    for s in &segments {
        validate_segment_name(s).map_err(|e| IngestError::format(hline, e.to_string()))?;
    }
    if segments.iter().collect::<BTreeSet<_>>().len() != segments.len() {
        return Err(IngestError::format(hline, "duplicated segment"));
    }

    let mut frames: Vec<SensorFrame> = Vec::new();
    for (i, l) in lines.iter().enumerate().skip(end + 2) {
        let n = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = l.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(IngestError::format(n, "wrong number of cells"));
        }
        let t: f64 = cells[0].parse().map_err(|_| IngestError::format(n, "bad time"))?;
        let tick = (t * rate_hz).round();
        if !(tick >= 0.0) || (t - tick / rate_hz).abs() > 1e-6 {
            return Err(IngestError::format(n, format!("time {t} is off the grid")));
        }
        let tick = tick as u64;
        if frames.last().is_some_and(|f| f.tick_index >= tick) {
            return Err(IngestError::format(n, format!("non-monotonic time {t}")));
        }
        let mut orientations = BTreeMap::new();
        for (s, cell) in segments.iter().zip(&cells[1..]) {
            let c: Vec<f64> = cell
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| IngestError::format(n, format!("bad quaternion cell {cell:?}")))?;
            if c.len() != 4 || c.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::format(n, format!("bad quaternion cell {cell:?}")));
            }
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(IngestError::format(n, format!("{s} quaternion norm {norm}")));
            }
            let q = UnitQuat::try_new(c[0], c[1], c[2], c[3]).map_err(|e| IngestError::format(n, e.to_string()))?;
            orientations.insert(s.clone(), q);
        }
        frames.push(SensorFrame {
            tick_index: tick,
            time_s: tick as f64 / rate_hz,
            orientations,
            stale: BTreeSet::new(),
        });
    }
    Ok(Recording {
        rate_hz,
        segment_map: segments.into_iter().enumerate().map(|(i, s)| (i as u8, s)).collect(),
        calibration: Some("sto".into()),
        frames,
    })
}

/// Joint angles as a storage table in degrees, readable by [`super::import_output2`].
pub fn write_angles_sto(series: &JointAngleSeries, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{name}");
    out.push_str("version=1\n");
    let _ = writeln!(out, "nRows={}", series.len());
    let _ = writeln!(out, "nColumns={}", series.channels.len() + 1);
    out.push_str("inDegrees=yes\n");
    let _ = writeln!(out, "DataRate={}", series.rate_hz);
    out.push_str("endheader\ntime");
    for k in series.channels.keys() {
        let _ = write!(out, "\t{k}");
    }
    out.push('\n');
    for i in 0..series.len() {
        let _ = write!(out, "{}", series.origin_s + series.time_s(i));
        for v in series.channels.values() {
            let _ = write!(out, "\t{}", v[i]);
        }
        out.push('\n');
    }
    out
}

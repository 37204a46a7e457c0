//! Importers for data produced by other capture systems: per-sensor quaternion
//! exports ("Output 1") and joint-angle tables ("Output 2").

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::angles::{AngleKey, JointAngleSeries};
use crate::rotmath::{slerp, UnitQuat};

use super::{validate_segment_name, IngestError, Recording, SensorFrame, DEFAULT_STALENESS_MS};

const UNIT_NORM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct Output1Options {
    /// Declared sample rate; inferred from the time column when absent.
    pub rate_hz: Option<f64>,
    pub staleness_ms: f64,
}

impl Default for Output1Options {
    fn default() -> Self {
        Output1Options {
            rate_hz: None,
            staleness_ms: DEFAULT_STALENESS_MS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Output2Import {
    pub series: JointAngleSeries,
    pub warnings: Vec<String>,
}

struct Table<'a> {
    header_line: usize,
    columns: Vec<&'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
    comments: BTreeMap<String, String>,
}

fn split_table(text: &str) -> Result<Table<'_>, IngestError> {
    let mut comments = BTreeMap::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header) = loop {
        match lines.next() {
            Some((_, l)) if l.starts_with('#') => {
                if let Some((k, v)) = l.trim_start_matches('#').split_once(':') {
                    comments.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            Some(h) => break h,
            None => return Err(IngestError::format(1, "no header row")),
        }
    };
    let delim = if header.contains('\t') {
        '\t'
    } else if header.contains(';') && !header.contains(',') {
        ';'
    } else {
        ','
    };
    let columns: Vec<&str> = header.split(delim).map(str::trim).collect();
    let rows = lines
        .map(|(n, l)| (n, l.split(delim).map(str::trim).collect::<Vec<_>>()))
        .collect();
    Ok(Table {
        header_line,
        columns,
        rows,
        comments,
    })
}

fn parse_cell(cell: &str, line: usize) -> Result<f64, IngestError> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::format(line, format!("bad number {cell:?}")))
}

fn infer_rate(times: &[f64], line: usize) -> Result<f64, IngestError> {
    let mut deltas: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if deltas.is_empty() {
        return Err(IngestError::format(line, "cannot infer rate from fewer than two samples"));
    }
    deltas.sort_by(f64::total_cmp);
    let median = deltas[deltas.len() / 2];
    let rate = 1.0 / median;
    Ok(if (rate - rate.round()).abs() < 1e-3 * rate { rate.round() } else { rate })
}

const TIME_COLUMNS: [&str; 5] = ["time_s", "time", "Time", "timestamp", "t"];

/// Imports a per-sensor quaternion table. `mapping` sends column prefixes to
/// segment names; quaternion columns are `<prefix>_qw.._qz` or `<prefix>_q0.._q3`.
pub fn import_output1(
    text: &str,
    mapping: &BTreeMap<String, String>,
    opts: &Output1Options,
) -> Result<Recording, IngestError> {
    let table = split_table(text)?;
    let hl = table.header_line;
    let col = |name: &str| table.columns.iter().position(|c| *c == name);
    let (time_col, frame_based) = match TIME_COLUMNS.iter().find_map(|n| col(n)) {
        Some(i) => (i, false),
        None => match col("frame").or_else(|| col("Frame")) {
            Some(i) => (i, true),
            None => return Err(IngestError::format(hl, "missing time column")),
        },
    };
    if frame_based && opts.rate_hz.is_none() {
        return Err(IngestError::format(hl, "frame-indexed export needs a declared rate"));
    }

    let mut sensors: Vec<(String, [usize; 4])> = Vec::new();
    for (prefix, segment) in mapping {
        validate_segment_name(segment).map_err(|e| IngestError::format(hl, e.to_string()))?;
        let find = |suffixes: [&str; 4]| -> Option<[usize; 4]> {
            let mut idx = [0; 4];
            for (i, s) in suffixes.iter().enumerate() {
                idx[i] = col(&format!("{prefix}_{s}"))?;
            }
            Some(idx)
        };
        let idx = find(["qw", "qx", "qy", "qz"])
            .or_else(|| find(["q0", "q1", "q2", "q3"]))
            .ok_or_else(|| IngestError::format(hl, format!("missing quaternion columns for {prefix:?}")))?;
        sensors.push((segment.clone(), idx));
    }
    if sensors.is_empty() {
        return Err(IngestError::format(hl, "empty sensor mapping"));
    }
    let unique: BTreeSet<&String> = sensors.iter().map(|(s, _)| s).collect();
    if unique.len() != sensors.len() {
        return Err(IngestError::format(hl, "two prefixes map to the same segment"));
    }
    sensors.sort_by_key(|(_, idx)| idx[0]);

    let mut times = Vec::with_capacity(table.rows.len());
    let mut samples: Vec<(usize, Vec<UnitQuat>)> = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        if cells.len() != table.columns.len() {
            return Err(IngestError::format(*line, "wrong number of cells"));
        }
        times.push(parse_cell(cells[time_col], *line)?);
        let mut qs = Vec::with_capacity(sensors.len());
        for (segment, idx) in &sensors {
            let c = [
                parse_cell(cells[idx[0]], *line)?,
                parse_cell(cells[idx[1]], *line)?,
                parse_cell(cells[idx[2]], *line)?,
                parse_cell(cells[idx[3]], *line)?,
            ];
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(IngestError::format(*line, format!("{segment} quaternion norm {norm:.4}")));
            }
            qs.push(UnitQuat::from_array(c).map_err(|e| IngestError::format(*line, e.to_string()))?);
        }
        samples.push((*line, qs));
    }
    if samples.is_empty() {
        return Err(IngestError::format(hl, "no data rows"));
    }
    let rate_hz = match opts.rate_hz {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(IngestError::InvalidArgument(format!("rate {r}"))),
        None => infer_rate(&times, hl)?,
    };
    if frame_based {
        times.iter_mut().for_each(|t| *t /= rate_hz);
    }

    let t0 = times[0];
    let staleness_s = opts.staleness_ms / 1000.0;
    let mut frames: Vec<SensorFrame> = Vec::new();
    let mut prev: Option<(u64, f64, &Vec<UnitQuat>)> = None;
    let segments: Vec<String> = sensors.iter().map(|(s, _)| s.clone()).collect();
    for ((line, qs), t) in samples.iter().zip(&times) {
        let pos = (t - t0) * rate_hz;
        let tick = pos.round();
        if (pos - tick).abs() > 0.25 {
            return Err(IngestError::format(*line, format!("time {t} is off the {rate_hz} Hz grid")));
        }
        let tick = tick as u64;
        if let Some((ptick, pt, pqs)) = prev {
            if tick <= ptick {
                return Err(IngestError::format(*line, format!("non-monotonic time {t}")));
            }
            let gap_stale = t - pt > staleness_s;
            for k in ptick + 1..tick {
                let frac = (k - ptick) as f64 / (tick - ptick) as f64;
                let orientations = segments
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (s.clone(), slerp(&pqs[j], &qs[j], frac)))
                    .collect();
                let stale = if gap_stale { segments.iter().cloned().collect() } else { BTreeSet::new() };
                frames.push(SensorFrame {
                    tick_index: k,
                    time_s: k as f64 / rate_hz,
                    orientations,
                    stale,
                });
            }
        }
        frames.push(SensorFrame {
            tick_index: tick,
            time_s: tick as f64 / rate_hz,
            orientations: segments.iter().cloned().zip(qs.iter().copied()).collect(),
            stale: BTreeSet::new(),
        });
        prev = Some((tick, *t, qs));
    }

    Ok(Recording {
        rate_hz,
        segment_map: segments.into_iter().enumerate().map(|(i, s)| (i as u8, s)).collect(),
        calibration: None,
        frames,
    })
}

/// Imports a joint-angle table: angle CSV or an OpenSim storage file (detected
/// by its `endheader` line). `rename` maps foreign column names to canonical
/// channel names (with or without the `_deg` suffix).
pub fn import_output2(text: &str, rename: &BTreeMap<String, String>) -> Result<Output2Import, IngestError> {
    let mut warnings = Vec::new();
    let mut sto_header: BTreeMap<String, String> = BTreeMap::new();
    let body = match text.lines().position(|l| l.trim() == "endheader") {
        Some(end) => {
            for l in text.lines().take(end) {
                if let Some((k, v)) = l.split_once('=') {
                    sto_header.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            let offset: usize = text.lines().take(end + 1).map(|l| l.len() + 1).sum();
            Some((end + 1, &text[offset.min(text.len())..]))
        }
        None => None,
    };
    let (line_offset, table_text) = body.unwrap_or((0, text));
    let mut table = split_table(table_text)?;
    table.header_line += line_offset;
    for (n, _) in table.rows.iter_mut() {
        *n += line_offset;
    }
    let hl = table.header_line;

    let time_col = TIME_COLUMNS
        .iter()
        .find_map(|n| table.columns.iter().position(|c| c == n))
        .ok_or_else(|| IngestError::format(hl, "missing time column"))?;
    let mut keyed: Vec<(usize, AngleKey)> = Vec::new();
    for (i, c) in table.columns.iter().enumerate() {
        if i == time_col {
            continue;
        }
        let name = rename.get(*c).map(String::as_str).unwrap_or(c);
        let key = AngleKey::from_column(name).or_else(|| AngleKey::from_column(&format!("{name}_deg")));
        match key {
            Some(k) if keyed.iter().any(|(_, existing)| *existing == k) => {
                return Err(IngestError::format(hl, format!("duplicate channel {k}")));
            }
            Some(k) => keyed.push((i, k)),
            None => warnings.push(format!("ignored column {c:?}")),
        }
    }
    if keyed.is_empty() {
        return Err(IngestError::format(hl, "no recognizable angle column"));
    }

    let mut times = Vec::with_capacity(table.rows.len());
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(table.rows.len()); keyed.len()];
    for (line, cells) in &table.rows {
        if cells.len() != table.columns.len() {
            return Err(IngestError::format(*line, "wrong number of cells"));
        }
        times.push(parse_cell(cells[time_col], *line)?);
        for (j, (i, _)) in keyed.iter().enumerate() {
            values[j].push(parse_cell(cells[*i], *line)?);
        }
    }
    if times.is_empty() {
        return Err(IngestError::format(hl, "no data rows"));
    }

    let declared = table
        .comments
        .get("rate_hz")
        .or_else(|| sto_header.get("DataRate"))
        .map(|v| v.parse::<f64>().map_err(|_| IngestError::format(1, format!("bad rate {v:?}"))))
        .transpose()?;
    let rate_hz = match declared {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(IngestError::format(1, format!("bad rate {r}"))),
        None => infer_rate(&times, hl)?,
    };
    let t0 = times[0];
    for ((line, _), t) in table.rows.iter().zip(&times).skip(1) {
        let expected = t0 + (((t - t0) * rate_hz).round()) / rate_hz;
        if (t - expected).abs() * rate_hz > 0.25 {
            return Err(IngestError::format(*line, format!("time {t} is off the {rate_hz} Hz grid")));
        }
    }
    for (i, w) in times.windows(2).enumerate() {
        let steps = ((w[1] - w[0]) * rate_hz).round();
        if steps != 1.0 {
            return Err(IngestError::format(
                table.rows[i + 1].0,
                format!("series is not uniformly sampled at {rate_hz} Hz"),
            ));
        }
    }

    if sto_header.get("inDegrees").map(String::as_str) == Some("no") {
        values.iter_mut().flatten().for_each(|v| *v = v.to_degrees());
        warnings.push("inDegrees=no: values converted from radians".into());
    } else {
        let all: Vec<f64> = values.iter().flatten().copied().collect();
        let small = all.iter().filter(|v| v.abs() < 3.2).count();
        if !all.is_empty() && small as f64 >= 0.99 * all.len() as f64 {
            warnings.push(format!(
                "{:.1}% of values are below 3.2 in magnitude; the file may be in radians (imported unchanged)",
                100.0 * small as f64 / all.len() as f64
            ));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let mut series = JointAngleSeries::new(rate_hz);
    series.origin_s = match table.comments.get("origin_s") {
        Some(v) => v.parse().map_err(|_| IngestError::format(1, format!("bad origin {v:?}")))?,
        None => t0,
    };
    for (k, v) in &table.comments {
        if !matches!(k.as_str(), "rate_hz" | "origin_s") && !k.starts_with("ergokin-") {
            series.metadata.insert(k.clone(), v.clone());
        }
    }
    series.channels = keyed.into_iter().map(|(_, k)| k).zip(values).collect();
    Ok(Output2Import { series, warnings })
}

use std::collections::BTreeMap;
use std::fs;
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::{info, warn};

use ergokin::angles::JointAngleSeries;
use ergokin::calib::{calibrate_recording, estimate_calibration, CalibConfig, CalibrationProfile};
use ergokin::compare::{compare_series, default_selection, ComparisonResult};
use ergokin::ingest::net::{record, replay, RecordOptions, ReplayOptions};
use ergokin::ingest::{
    import_output1, import_output2, read_recording, read_sto_quaternions, validate_segment_name, write_angles_sto,
    write_recording, IngestError, Output1Options, Recording,
};
use ergokin::kinmodel::{solve_recording, IkMode, IkOptions, KinematicModel, SkeletonPose};
use ergokin::report::{
    build_bundle, poses_jsonl, read_poses_jsonl, summarize_segments, summary_json, BundleInputs, Palette, SummaryDoc,
};
use ergokin::rula::{read_scores_csv, score_series, scores_csv, RulaConfig};
use ergokin::segment::{apply_segments, apply_segments_recording, SegmentSpec};

use crate::args::*;
use crate::{config_dir, usage};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Replay(a) => cmd_replay(a),
        Command::Record(a) => cmd_record(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Ik(a) => cmd_ik(a),
        Command::Import(a) => cmd_import(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Score(a) => cmd_score(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
        Command::Serve(a) => crate::serve::run(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{what}: cannot read {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_recording(path: &Path) -> Result<Recording> {
    let rec = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("sto")) {
        read_sto_quaternions(&read_text(path, "recording")?)?
    } else {
        read_recording(path).with_context(|| format!("recording {}", path.display()))?
    };
    Ok(rec)
}

fn load_angles(path: &Path) -> Result<JointAngleSeries> {
    let imp = import_output2(&read_text(path, "angles")?, &BTreeMap::new())
        .with_context(|| format!("angles {}", path.display()))?;
    for w in &imp.warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(imp.series)
}

fn config_file(explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.clone());
    }
    let p = config_dir()?.join(name);
    p.is_file().then_some(p)
}

fn load_rula_config(explicit: &Option<PathBuf>) -> Result<RulaConfig> {
    match config_file(explicit, "rula.json") {
        Some(p) => RulaConfig::load(&p).with_context(|| format!("RULA config {}", p.display())),
        None => Ok(RulaConfig::default()),
    }
}

fn load_model(explicit: &Option<PathBuf>) -> Result<KinematicModel> {
    match config_file(explicit, "model.json") {
        Some(p) => KinematicModel::load(&p).with_context(|| format!("model {}", p.display())),
        None => Ok(KinematicModel::default()),
    }
}

/// Picks the model matching the recording: with a pelvis root when a pelvis sensor exists.
fn model_for(explicit: &Option<PathBuf>, rec: &Recording) -> Result<KinematicModel> {
    if config_file(explicit, "model.json").is_some() {
        return load_model(explicit);
    }
    Ok(KinematicModel::upper_body(rec.segment_map.values().any(|s| s == "pelvis")))
}

fn parse_window(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once('-')
        .ok_or_else(|| usage(format!("window {text:?} is not start-end")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("window {text:?} is not start-end")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| usage(format!("expected key=value, got {p:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let rec = load_recording(&a.input)?;
    let opts = ReplayOptions {
        speed: a.speed,
        loss_fraction: a.loss,
        seed: a.seed,
        ..Default::default()
    };
    let stats = match replay(&rec, &a.dest, &opts) {
        Err(IngestError::InvalidArgument(m)) => return Err(usage(m)),
        other => other?,
    };
    info!(
        "sent {} packets, withheld {}, {:.3} s",
        stats.sent,
        stats.dropped.len(),
        stats.elapsed.as_secs_f64()
    );
    Ok(())
}

fn cmd_record(a: RecordArgs) -> Result<()> {
    let mut map = BTreeMap::new();
    let map_text = if Path::new(&a.map).is_file() {
        read_text(Path::new(&a.map), "sensor map")?
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_string())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(",")
    } else {
        a.map.clone()
    };
    for (id, seg) in parse_pairs(&map_text)? {
        let id: u8 = id.parse().map_err(|_| usage(format!("sensor id {id:?} is not 0-255")))?;
        validate_segment_name(&seg).map_err(|e| usage(e.to_string()))?;
        map.insert(id, seg);
    }
    if map.is_empty() {
        return Err(usage("--map names no sensor"));
    }
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(usage(format!("rate {}", a.rate)));
    }
    let socket = UdpSocket::bind(a.listen.as_str()).with_context(|| format!("bind {}", a.listen))?;
    let mut opts = RecordOptions::new(a.rate, map);
    opts.staleness_ms = a.staleness_ms;
    opts.idle_timeout = Duration::from_millis(a.idle_ms);
    opts.start_timeout = Duration::from_secs_f64(a.start_timeout_s);
    opts.max_duration = a.max_duration_s.map(Duration::from_secs_f64);
    let (rec, stats) = record(socket, &opts)?;
    info!("{stats:?}");
    if stats.overflow_dropped > 0 {
        warn!("capture queue overflowed: {} datagrams dropped", stats.overflow_dropped);
    }
    write_recording(&rec, &a.out)?;
    Ok(())
}

fn calib_config(threshold: Option<f64>) -> CalibConfig {
    let mut c = CalibConfig::default();
    if let Some(t) = threshold {
        c.motion_threshold_deg = t;
    }
    c
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let rec = load_recording(&a.input)?;
    let window = parse_window(&a.window)?;
    let cal = estimate_calibration(&rec, window, &calib_config(a.motion_threshold))?;
    for w in &cal.warnings {
        warn!("{w:?}");
    }
    cal.profile.save(&a.out)?;
    if let Some(out) = &a.apply {
        let tagged = calibrate_recording(&rec, &cal.profile, &file_name(&a.out))?;
        write_recording(&tagged, out)?;
    }
    Ok(())
}

fn calibrated(rec: Recording, calib: &Option<PathBuf>) -> Result<Recording> {
    match (calib, &rec.calibration) {
        (Some(p), None) => {
            let profile = CalibrationProfile::load(p).with_context(|| format!("profile {}", p.display()))?;
            Ok(calibrate_recording(&rec, &profile, &file_name(p))?)
        }
        (Some(_), Some(tag)) => bail!("input is already calibrated ({tag}); drop --calib"),
        (None, Some(_)) => Ok(rec),
        (None, None) => Err(IngestError::CalibrationRequired).context("input is uncalibrated; pass --calib"),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_ik(a: IkArgs) -> Result<()> {
    let rec = calibrated(load_recording(&a.input)?, &a.calib)?;
    let model = model_for(&a.model, &rec)?;
    let run = solve_recording(&rec, &model, a.mode, &IkOptions::default())?;
    let series = run.series(&rec, a.mode);
    if a.sto {
        write_text(&a.out, &write_angles_sto(&series, "angles"))?;
    } else {
        write_text(&a.out, &series.to_csv())?;
    }
    if let Some(p) = &a.poses {
        write_text(p, &poses_jsonl(&run.poses(&model)?, 1))?;
    }
    Ok(())
}

fn cmd_import(a: ImportArgs) -> Result<()> {
    let text = read_text(&a.input, "input")?;
    let map: BTreeMap<String, String> = parse_pairs(&a.map)?.into_iter().collect();
    match a.format {
        ImportFormat::Output1 => {
            if map.is_empty() {
                return Err(usage("output1 needs --map prefix=segment,..."));
            }
            let opts = Output1Options {
                rate_hz: a.rate,
                staleness_ms: a.staleness_ms,
            };
            let rec = import_output1(&text, &map, &opts)?;
            write_recording(&rec, &a.out)?;
        }
        ImportFormat::Output2 => {
            let imp = import_output2(&text, &map)?;
            for w in &imp.warnings {
                warn!("{w}");
            }
            let mut series = imp.series;
            if let Some(r) = a.rate {
                if r != series.rate_hz {
                    bail!("file is sampled at {} Hz, not {r}", series.rate_hz);
                }
            }
            series.metadata.insert("source".into(), file_name(&a.input));
            write_text(&a.out, &series.to_csv())?;
        }
    }
    Ok(())
}

fn safe_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn check_clock(spec: &SegmentSpec, input: &Path) {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if !spec.clock.is_empty() && spec.clock != stem && spec.clock != file_name(input) {
        warn!("segment spec refers to clock {:?}, input is {:?}", spec.clock, stem);
    }
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let spec = SegmentSpec::load(&a.spec).with_context(|| format!("spec {}", a.spec.display()))?;
    check_clock(&spec, &a.input);
    let text = read_text(&a.input, "input")?;
    fs::create_dir_all(&a.out_dir)?;
    if text.starts_with("# ergokin-recording") || a.input.extension().is_some_and(|e| e == "sto") {
        let rec = load_recording(&a.input)?;
        for (label, sub) in apply_segments_recording(&rec, &spec)? {
            write_recording(&sub, &a.out_dir.join(format!("{}.csv", safe_label(&label))))?;
        }
    } else {
        let series = load_angles(&a.input)?;
        for (label, sub) in apply_segments(&series, &spec)? {
            write_text(&a.out_dir.join(format!("{}.csv", safe_label(&label))), &sub.to_csv())?;
        }
    }
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let series = load_angles(&a.angles)?;
    let mut cfg = load_rula_config(&a.config)?;
    if let Some(m) = a.mode {
        cfg.global_mode = m;
    }
    let scores = score_series(&series, &cfg)?;
    write_text(&a.out, &scores_csv(&scores, cfg.global_mode))?;
    if let Some(p) = &a.summary {
        let spec = a.spec.as_deref().map(SegmentSpec::load).transpose()?;
        let summaries = summarize_segments(&scores, series.rate_hz, spec.as_ref(), cfg.global_mode)?;
        write_text(p, &summary_json(cfg.global_mode, &summaries))?;
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    if !(a.max_lag >= 0.0 && a.max_lag.is_finite()) {
        return Err(usage(format!("max lag {}", a.max_lag)));
    }
    let sa = load_angles(&a.a)?;
    let sb = load_angles(&a.b)?;
    let result = compare_series(&sa, &sb, &default_selection(), a.max_lag)?;
    write_text(&a.out, &(result.to_json() + "\n"))?;
    if let Some(t) = &a.table {
        write_text(t, &result.to_markdown(&a.title))?;
    }
    Ok(())
}

fn stage_file(path: &Path, stage: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("missing or unreadable {stage} input {}", path.display()))
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let angles = load_angles(&a.angles)?;
    let (mode, scores) = read_scores_csv(&stage_file(&a.scores, "scores")?).context("scores")?;
    let doc: SummaryDoc = serde_json::from_str(&stage_file(&a.summary, "summary")?).context("summary")?;
    let poses: Vec<SkeletonPose> = read_poses_jsonl(&stage_file(&a.poses, "poses")?)?
        .into_iter()
        .map(|p| SkeletonPose {
            time_s: p.time_s,
            segments: p.segments,
        })
        .collect();
    let mut cfg = load_rula_config(&a.config)?;
    cfg.global_mode = mode;
    if doc.mode != mode {
        bail!("summary was computed in {} mode, scores in {}", doc.mode.as_str(), mode.as_str());
    }
    let model = load_model(&a.model)?;
    let profile = a.calib.as_deref().map(CalibrationProfile::load).transpose()?;
    let spec = a.spec.as_deref().map(SegmentSpec::load).transpose()?;
    let comparison: Option<ComparisonResult> = match &a.comparison {
        Some(p) => Some(serde_json::from_str(&stage_file(p, "comparison")?).context("comparison")?),
        None => None,
    };
    let ik_mode = angles
        .metadata
        .get("ik_mode")
        .and_then(|m| m.parse().ok())
        .unwrap_or(IkMode::Analytic);
    let inputs = BundleInputs {
        angles: &angles,
        scores: &scores,
        summaries: &doc.segments,
        poses: &poses,
        rula_config: &cfg,
        model: &model,
        ik_mode,
        profile: profile.as_ref(),
        spec: spec.as_ref(),
        comparison: comparison.as_ref(),
        pose_stride: a.pose_stride.max(1),
        palette: Palette::default(),
    };
    build_bundle(&inputs, &a.out)?;
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let rec = load_recording(&a.input)?;
    let (profile, tag) = match &a.calib {
        Some(p) => (CalibrationProfile::load(p)?, file_name(p)),
        None => {
            let window = parse_window(&a.calib_window)?;
            let cal = estimate_calibration(&rec, window, &calib_config(a.motion_threshold))?;
            for w in &cal.warnings {
                warn!("{w:?}");
            }
            (cal.profile, format!("n-pose {}-{} s", window.0, window.1))
        }
    };
    let rec = if rec.calibration.is_some() {
        warn!("input is already calibrated; using it as is");
        rec
    } else {
        calibrate_recording(&rec, &profile, &tag)?
    };
    let model = model_for(&a.model, &rec)?;
    let run = solve_recording(&rec, &model, a.mode, &IkOptions::default())?;
    let series = run.series(&rec, a.mode);
    let mut cfg = load_rula_config(&a.config)?;
    if let Some(m) = a.global_mode {
        cfg.global_mode = m;
    }
    let scores = score_series(&series, &cfg)?;
    let spec = a.spec.as_deref().map(SegmentSpec::load).transpose()?;
    if let Some(s) = &spec {
        check_clock(s, &a.input);
    }
    let summaries = summarize_segments(&scores, series.rate_hz, spec.as_ref(), cfg.global_mode)?;
    let poses = run.poses(&model)?;
    let inputs = BundleInputs {
        angles: &series,
        scores: &scores,
        summaries: &summaries,
        poses: &poses,
        rula_config: &cfg,
        model: &model,
        ik_mode: a.mode,
        profile: Some(&profile),
        spec: spec.as_ref(),
        comparison: None,
        pose_stride: a.pose_stride.max(1),
        palette: Palette::default(),
    };
    let manifest = build_bundle(&inputs, &a.out)?;
    info!("bundle with {} files written to {}", manifest.files.len(), a.out.display());
    for s in &summaries {
        info!(
            "{}: left {:?}, right {:?}, worst side {}",
            s.label, s.left.percent_time, s.right.percent_time, s.worst_side
        );
    }
    Ok(())
}

//! HTTP API and static hosting over a report bundle.
//!
//! Everything is loaded into memory at start-up. The only write is `PUT /api/segments`,
//! which replaces `segments.json` (temp file + rename) under a single-writer lock; readers
//! always see either the old or the new document.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use ergokin::angles::{JointAngleSeries, Side};
use ergokin::ingest::import_output2;
use ergokin::report::{read_poses_jsonl, summarize_segments, Manifest, PoseRecord, SummaryDoc};
use ergokin::rula::{read_scores_csv, GlobalMode, RulaFrameScore, SideScore};
use ergokin::segment::SegmentSpec;

use crate::args::ServeArgs;

const SEGMENTS_FILE: &str = "segments.json";

/// The loaded bundle plus the mutable segment document.
pub struct ServeState {
    dir: PathBuf,
    manifest: Manifest,
    manifest_json: Value,
    poses: Vec<PoseRecord>,
    angles: JointAngleSeries,
    mode: GlobalMode,
    scores: Vec<RulaFrameScore>,
    current: RwLock<Current>,
    writer: tokio::sync::Mutex<()>,
}

struct Current {
    spec: SegmentSpec,
    summary: SummaryDoc,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("invalid segment document")]
    Invalid(Vec<String>),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
            ApiError::Invalid(errs) => (StatusCode::BAD_REQUEST, json!({ "error": self.to_string(), "errors": errs })),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

impl ServeState {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).with_context(|| format!("bundle file {}", dir.join(name).display()))
        };
        let manifest_text = read(ergokin::report::MANIFEST)?;
        let manifest: Manifest = serde_json::from_str(&manifest_text).context("manifest")?;
        let manifest_json: Value = serde_json::from_str(&manifest_text)?;
        let poses = read_poses_jsonl(&read("poses.jsonl")?)?;
        let angles = import_output2(&read("angles.csv")?, &BTreeMap::new())?.series;
        let (mode, scores) = read_scores_csv(&read("scores.csv")?)?;
        let spec = SegmentSpec::from_json(&read(SEGMENTS_FILE)?).context("segments.json")?;
        let summary: SummaryDoc = serde_json::from_str(&read("summary.json")?).context("summary.json")?;
        if scores.len() != manifest.frame_count || angles.len() != manifest.frame_count {
            anyhow::bail!(
                "bundle is inconsistent: manifest lists {} frames, angles {}, scores {}",
                manifest.frame_count,
                angles.len(),
                scores.len()
            );
        }
        Ok(ServeState {
            dir: dir.to_path_buf(),
            manifest,
            manifest_json,
            poses,
            angles,
            mode,
            scores,
            current: RwLock::new(Current { spec, summary }),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    fn validate(&self, body: &str) -> ApiResult<SegmentSpec> {
        let spec = SegmentSpec::from_json(body).map_err(|e| ApiError::Invalid(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        if let Err(e) = spec.resolve(self.manifest.rate_hz, self.manifest.frame_count) {
            errors.push(e.to_string());
        }
        // Report every pairwise overlap, not only the first one found.
        if let Ok(ranges) = spec_ranges(&spec, self.manifest.rate_hz) {
            for (i, a) in ranges.iter().enumerate() {
                for b in &ranges[i + 1..] {
                    if a.1 < b.2 && b.1 < a.2 {
                        let msg = format!("segments {:?} and {:?} overlap", a.0, b.0);
                        if !errors.contains(&msg) {
                            errors.push(msg);
                        }
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(spec)
        } else {
            Err(ApiError::Invalid(errors))
        }
    }
}

fn spec_ranges(spec: &SegmentSpec, rate_hz: f64) -> std::result::Result<Vec<(String, usize, usize)>, ()> {
    spec.segments
        .iter()
        .map(|s| {
            let one = SegmentSpec {
                clock: String::new(),
                segments: vec![s.clone()],
            };
            one.resolve(rate_hz, usize::MAX)
                .map(|r| (r[0].label.clone(), r[0].start, r[0].end))
                .map_err(|_| ())
        })
        .collect()
}

pub fn router(state: Arc<ServeState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/manifest", get(manifest))
        .route("/api/poses", get(poses))
        .route("/api/angles", get(angles))
        .route("/api/scores", get(scores))
        .route("/api/summary", get(summary))
        .route("/api/segments", get(get_segments).put(put_segments))
        .with_state(state);
    match static_dir {
        Some(d) => api.fallback_service(ServeDir::new(d)),
        None => api,
    }
}

async fn manifest(State(s): State<Arc<ServeState>>) -> Json<Value> {
    Json(s.manifest_json.clone())
}

#[derive(Debug, Deserialize)]
struct PoseQuery {
    from: Option<f64>,
    to: Option<f64>,
    stride: Option<usize>,
}

async fn poses(State(s): State<Arc<ServeState>>, Query(q): Query<PoseQuery>) -> ApiResult<Json<Vec<PoseRecord>>> {
    let from = q.from.unwrap_or(f64::NEG_INFINITY);
    let to = q.to.unwrap_or(f64::INFINITY);
    let stride = q.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::BadRequest("stride must be at least 1".into()));
    }
    if from.is_nan() || to.is_nan() || from > to {
        return Err(ApiError::BadRequest(format!("empty time range {from}..{to}")));
    }
    let out = s
        .poses
        .iter()
        .filter(|p| p.time_s >= from && p.time_s < to)
        .step_by(stride)
        .cloned()
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct AngleQuery {
    joint: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnglesDoc {
    rate_hz: f64,
    origin_s: f64,
    frame_count: usize,
    channels: BTreeMap<String, Vec<f64>>,
}

async fn angles(State(s): State<Arc<ServeState>>, Query(q): Query<AngleQuery>) -> ApiResult<Json<AnglesDoc>> {
    let filter = match &q.joint {
        None => None,
        Some(j) => {
            let known = ["elbow", "shoulder", "trunk"];
            let head = j.split('_').next().unwrap_or("");
            if !known.contains(&head) {
                return Err(ApiError::BadRequest(format!("unknown joint {j:?}; expected one of {known:?}")));
            }
            Some(j.as_str())
        }
    };
    let channels: BTreeMap<String, Vec<f64>> = s
        .angles
        .channels
        .iter()
        .map(|(k, v)| (k.to_string(), v))
        .filter(|(name, _)| filter.is_none_or(|f| name == f || name.starts_with(&format!("{f}_"))))
        .map(|(name, v)| (name, v.clone()))
        .collect();
    if channels.is_empty() {
        return Err(ApiError::NotFound(format!("no channel matches {:?}", q.joint.unwrap_or_default())));
    }
    Ok(Json(AnglesDoc {
        rate_hz: s.angles.rate_hz,
        origin_s: s.angles.origin_s,
        frame_count: s.angles.len(),
        channels,
    }))
}

#[derive(Debug, Deserialize)]
struct ScoreQuery {
    side: Option<String>,
}

#[derive(Debug, Serialize)]
struct SideFrame<'a> {
    time_s: f64,
    #[serde(flatten)]
    score: &'a SideScore,
}

async fn scores(State(s): State<Arc<ServeState>>, Query(q): Query<ScoreQuery>) -> ApiResult<Json<Value>> {
    let sides: Vec<Side> = match q.side.as_deref() {
        None => vec![Side::Left, Side::Right],
        Some("l") | Some("left") => vec![Side::Left],
        Some("r") | Some("right") => vec![Side::Right],
        Some(other) => return Err(ApiError::BadRequest(format!("unknown side {other:?}; expected l or r"))),
    };
    let mut out = serde_json::Map::new();
    out.insert("mode".into(), json!(s.mode));
    out.insert("rate_hz".into(), json!(s.manifest.rate_hz));
    for side in sides {
        let frames: Vec<SideFrame> = s
            .scores
            .iter()
            .map(|f| SideFrame {
                time_s: f.time_s,
                score: f.side(side),
            })
            .collect();
        let v = serde_json::to_value(frames).map_err(|e| ApiError::Internal(e.to_string()))?;
        out.insert(side.as_str().into(), v);
    }
    Ok(Json(Value::Object(out)))
}

#[derive(Debug, Deserialize)]
struct SummaryQuery {
    segment: Option<String>,
}

async fn summary(State(s): State<Arc<ServeState>>, Query(q): Query<SummaryQuery>) -> ApiResult<Json<Value>> {
    let cur = s.current.read().expect("state lock");
    let v = match &q.segment {
        None => serde_json::to_value(&cur.summary),
        Some(label) => match cur.summary.segments.iter().find(|x| &x.label == label) {
            Some(x) => serde_json::to_value(x),
            None => return Err(ApiError::NotFound(format!("unknown segment {label:?}"))),
        },
    };
    v.map(Json).map_err(|e| ApiError::Internal(e.to_string()))
}

async fn get_segments(State(s): State<Arc<ServeState>>) -> Json<SegmentSpec> {
    Json(s.current.read().expect("state lock").spec.clone())
}

async fn put_segments(State(s): State<Arc<ServeState>>, body: String) -> ApiResult<Json<SegmentSpec>> {
    let spec = s.validate(&body)?;
    let summaries = summarize_segments(&s.scores, s.manifest.rate_hz, Some(&spec), s.mode)
        .map_err(|e| ApiError::Invalid(vec![e.to_string()]))?;
    let _guard = s.writer.lock().await;
    let path = s.dir.join(SEGMENTS_FILE);
    let tmp = s.dir.join(".segments.json.tmp");
    let text = spec.to_json() + "\n";
    fs::write(&tmp, &text)
        .and_then(|_| fs::rename(&tmp, &path))
        .map_err(|e| ApiError::Internal(format!("cannot persist segments: {e}")))?;
    let mut cur = s.current.write().expect("state lock");
    cur.spec = spec.clone();
    cur.summary = SummaryDoc {
        mode: s.mode,
        segments: summaries,
    };
    Ok(Json(spec))
}

/// Runs the server until interrupted.
pub fn run(a: ServeArgs) -> Result<()> {
    let state = Arc::new(ServeState::load(&a.bundle)?);
    let static_dir = a.static_dir.clone().or_else(|| {
        let d = a.bundle.join("ui");
        d.is_dir().then_some(d)
    });
    let app = router(state, static_dir);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("bind {}:{}", a.host, a.port))?;
        log::info!("serving {} on http://{}", a.bundle.display(), listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

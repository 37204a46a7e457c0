use std::fs;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use ergokin::ingest::write_recording;
use ergokin::kinmodel::KinematicModel;
use ergokin::report::Manifest;
use ergokin::rotmath::UnitQuat;
use ergokin::synth::{SensorRig, SyntheticMotion};
use ergokin_cli::serve::{router, ServeState};

fn bundle(dir: &Path) -> std::path::PathBuf {
    let model = KinematicModel::default();
    let mut rig = SensorRig::random(&model, 10.0, 0.3, 4);
    rig.mounts.insert("torso".into(), UnitQuat::IDENTITY);
    let rec = dir.join("rec.csv");
    write_recording(&rig.record(&SyntheticMotion::new(model, 8), 20.0, 10.0, 0.0), &rec).unwrap();
    let out = dir.join("bundle");
    let spec = dir.join("segments.json");
    fs::write(&spec, r#"{"segments":[{"label":"a","start":0,"end":5,"unit":"s"},{"label":"b","start":5,"end":10,"unit":"s"}]}"#)
        .unwrap();
    let code = ergokin_cli::run([
        "ergokin", "pipeline", "--input", rec.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--out",
        out.to_str().unwrap(), "--pose-stride", "1",
    ]);
    assert_eq!(code, 0);
    out
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn read_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let app = router(Arc::new(ServeState::load(&b).unwrap()), None);

    let (st, m) = call(&app, "GET", "/api/manifest", "").await;
    assert_eq!(st, StatusCode::OK);
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m, on_disk);
    assert_eq!(m["frame_count"], 200);

    let (st, p) = call(&app, "GET", "/api/poses?from=1&to=2&stride=5", "").await;
    assert_eq!(st, StatusCode::OK);
    let frames: Vec<u64> = p.as_array().unwrap().iter().map(|x| x["frame"].as_u64().unwrap()).collect();
    assert_eq!(frames, vec![20, 25, 30, 35]);
    assert!(p[0]["segments"]["torso"]["orientation"].is_array());
    assert_eq!(call(&app, "GET", "/api/poses?stride=0", "").await.0, StatusCode::BAD_REQUEST);

    let (st, a) = call(&app, "GET", "/api/angles?joint=elbow_r", "").await;
    assert_eq!(st, StatusCode::OK);
    let names: Vec<&String> = a["channels"].as_object().unwrap().keys().collect();
    assert_eq!(names, ["elbow_r_abduction", "elbow_r_flexion", "elbow_r_pronosupination"]);
    assert_eq!(a["channels"]["elbow_r_flexion"].as_array().unwrap().len(), 200);
    assert_eq!(call(&app, "GET", "/api/angles?joint=knee", "").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/api/angles?joint=elbow_c", "").await.0, StatusCode::NOT_FOUND);

    let (st, sc) = call(&app, "GET", "/api/scores?side=l", "").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(sc["l"].as_array().unwrap().len(), 200);
    assert!(sc.get("r").is_none());
    assert!(sc["l"][0]["grand"].is_u64());
    assert_eq!(call(&app, "GET", "/api/scores?side=x", "").await.0, StatusCode::BAD_REQUEST);

    let (st, s) = call(&app, "GET", "/api/summary?segment=b", "").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["label"], "b");
    assert_eq!(s["frame_count"], 100);
    assert_eq!(call(&app, "GET", "/api/summary?segment=zzz", "").await.0, StatusCode::NOT_FOUND);
    let (_, all) = call(&app, "GET", "/api/summary", "").await;
    assert_eq!(all["segments"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn segment_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let before = Manifest::load(&b).unwrap();
    let snapshot: Vec<(String, Vec<u8>)> = before
        .files
        .iter()
        .filter(|f| f.path != "segments.json")
        .map(|f| (f.path.clone(), fs::read(b.join(&f.path)).unwrap()))
        .collect();
    let app = router(Arc::new(ServeState::load(&b).unwrap()), None);

    let doc = r#"{"clock":"rec","segments":[{"label":"x","start":"0:01","end":"0:04","unit":"s"},{"label":"y","start":100,"end":180,"unit":"frames"}]}"#;
    let (st, stored) = call(&app, "PUT", "/api/segments", doc).await;
    assert_eq!(st, StatusCode::OK);
    let (st, got) = call(&app, "GET", "/api/segments", "").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(got, stored);
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(b.join("segments.json")).unwrap()).unwrap();
    assert_eq!(on_disk, stored);
    assert_eq!(stored["segments"][0]["label"], "x");

    let (st, s) = call(&app, "GET", "/api/summary?segment=y", "").await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s["frame_count"], 80);
    assert_eq!(call(&app, "GET", "/api/summary?segment=a", "").await.0, StatusCode::NOT_FOUND);

    let overlap = r#"{"segments":[{"label":"p","start":0,"end":3,"unit":"s"},{"label":"q","start":2,"end":4,"unit":"s"}]}"#;
    let (st, err) = call(&app, "PUT", "/api/segments", overlap).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let msgs = err["errors"].as_array().unwrap();
    assert!(msgs.iter().any(|m| {
        let m = m.as_str().unwrap();
        m.contains("overlap") && m.contains("\"p\"") && m.contains("\"q\"")
    }));
    assert_eq!(call(&app, "PUT", "/api/segments", "{not json").await.0, StatusCode::BAD_REQUEST);
    let too_long = r#"{"segments":[{"label":"z","start":0,"end":11,"unit":"s"}]}"#;
    assert_eq!(call(&app, "PUT", "/api/segments", too_long).await.0, StatusCode::BAD_REQUEST);
    let (_, still) = call(&app, "GET", "/api/segments", "").await;
    assert_eq!(still, stored, "rejected documents leave the stored one in place");

    for (path, bytes) in snapshot {
        assert_eq!(fs::read(b.join(&path)).unwrap(), bytes, "{path} was modified");
    }
    let leftovers: Vec<_> = fs::read_dir(&b).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".tmp")).collect();
    assert!(leftovers.is_empty());
}

#[tokio::test]
async fn concurrent_readers_see_whole_documents() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let app = router(Arc::new(ServeState::load(&b).unwrap()), None);
    let docs = [
        r#"{"segments":[{"label":"one","start":0,"end":2,"unit":"s"}]}"#,
        r#"{"segments":[{"label":"two","start":2,"end":4,"unit":"s"},{"label":"three","start":4,"end":6,"unit":"s"}]}"#,
    ];
    let mut tasks = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            if i % 4 == 0 {
                let (st, _) = call(&app, "PUT", "/api/segments", docs[(i / 4) % 2]).await;
                assert_eq!(st, StatusCode::OK);
            } else {
                let (st, v) = call(&app, "GET", "/api/segments", "").await;
                assert_eq!(st, StatusCode::OK);
                let labels: Vec<&str> = v["segments"].as_array().unwrap().iter().map(|s| s["label"].as_str().unwrap()).collect();
                assert!(
                    labels == ["a", "b"] || labels == ["one"] || labels == ["two", "three"],
                    "torn document {labels:?}"
                );
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
}

#[test]
fn serves_over_tcp_with_static_files() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let ui = dir.path().join("ui");
    fs::create_dir_all(&ui).unwrap();
    fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let app = router(Arc::new(ServeState::load(&b).unwrap()), Some(ui));
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });

    let get = |path: &str| {
        let mut s = TcpStream::connect(addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    };
    let m = get("/api/manifest");
    assert!(m.starts_with("HTTP/1.1 200"), "{m}");
    assert!(m.contains("\"format\":\"ergokin-bundle\""));
    let idx = get("/");
    assert!(idx.starts_with("HTTP/1.1 200") && idx.contains("<html>review</html>"), "{idx}");
    assert!(get("/api/summary?segment=missing").starts_with("HTTP/1.1 404"));
}

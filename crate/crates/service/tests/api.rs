mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ips_core::*;
use ips_service::{app, SessionInfo, SessionState, StreamEvent};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    router: Router,
    _stop: tokio::sync::watch::Sender<bool>,
    dir: tempfile::TempDir,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (router, stop) = app(dir.path()).unwrap();
        Api { router, _stop: stop, dir }
    }

    async fn raw(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn create(&self, area: &SurveyArea) -> String {
        let (status, v) = self.call("POST", "/api/v1/sessions", Some(json!({ "area": area }))).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn ingest(&self, id: &str, samples: &[FingerprintSample]) -> (StatusCode, Value) {
        self.call("POST", &format!("/api/v1/sessions/{id}/samples"), Some(json!({ "samples": samples }))).await
    }

    async fn info(&self, id: &str) -> SessionInfo {
        let (status, v) = self.call("GET", &format!("/api/v1/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_value(v).unwrap()
    }

    async fn trained(&self, seed: u64) -> (String, SimScenario) {
        let sc = common::small_room(seed);
        let id = self.create(&sc.area).await;
        let (status, _) = self.ingest(&id, &common::survey(&sc, 4)).await;
        assert_eq!(status, StatusCode::OK);
        let (status, report) = self.call("POST", &format!("/api/v1/sessions/{id}/train"), Some(json!({}))).await;
        assert_eq!(status, StatusCode::OK, "{report}");
        (id, sc)
    }

    /// Opens the live stream and returns its body.
    async fn subscribe(&self, id: &str) -> Body {
        let req = Request::get(format!("/api/v1/sessions/{id}/stream")).body(Body::empty()).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "text/event-stream");
        resp.into_body()
    }
}

/// Reads SSE frames until `n` data events have arrived.
async fn next_events(body: &mut Body, n: usize) -> Vec<StreamEvent> {
    let mut out = Vec::new();
    let mut text = String::new();
    while out.len() < n {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .expect("event within 5 s")
            .expect("stream open")
            .unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = text.find("\n\n") {
            let block: String = text.drain(..end + 2).collect();
            for line in block.lines() {
                if let Some(data) = line.strip_prefix("data:") {
                    out.push(serde_json::from_str(data.trim()).unwrap());
                }
            }
        }
    }
    out
}

/// Asserts nothing more arrives within a short window.
async fn no_more_events(body: &mut Body) {
    if let Ok(Some(Ok(frame))) = tokio::time::timeout(Duration::from_millis(200), body.frame()).await {
        if let Ok(data) = frame.into_data() {
            assert!(!String::from_utf8_lossy(&data).contains("data:"), "unexpected event");
        }
    }
}

fn bad_sample(mut s: FingerprintSample) -> FingerprintSample {
    let ap = s.readings.keys().next().unwrap().clone();
    s.readings.insert(ap, 5);
    s
}

fn walk_observation(sc: &SimScenario) -> Observation {
    simulate_walk(sc, &[(1.0, 1.0), (8.0, 5.0)], 1.0, 1.0).unwrap().remove(3).observation
}

#[tokio::test]
async fn create_session_checks_area() {
    let api = Api::new();
    let area = SurveyArea::with_interior_grid(14.0, 14.0, 1.0);
    let a = api.create(&area).await;
    let b = api.create(&area).await;
    assert_ne!(a, b);
    let info = api.info(&a).await;
    assert_eq!(info.state, SessionState::Collecting);
    assert_eq!(info.sample_count, 0);
    assert!(api.dir.path().join("sessions").join(&a).join("session.json").exists());

    let bad = SurveyArea::new(0.0, 5.0, vec![]);
    let (status, v) = api.call("POST", "/api/v1/sessions", Some(json!({ "area": bad }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "InvalidArea");
    assert!(v["detail"].is_string());
}

#[tokio::test]
async fn unknown_session_is_404() {
    let api = Api::new();
    for (method, path) in [("GET", "radiomap"), ("POST", "train"), ("GET", "stream")] {
        let (status, v) = api.call(method, &format!("/api/v1/sessions/nope/{path}"), Some(json!({}))).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(v["error"], "SessionNotFound");
    }
}

#[tokio::test]
async fn ingest_is_all_or_nothing() {
    let api = Api::new();
    let sc = common::small_room(1);
    let id = api.create(&sc.area).await;
    let samples = common::survey(&sc, 1);

    let (status, v) = api.ingest(&id, &samples[..10]).await;
    assert_eq!((status, v["accepted"].as_u64()), (StatusCode::OK, Some(10)));
    assert_eq!(api.info(&id).await.sample_count, 10);

    let mut batch = samples[10..20].to_vec();
    batch[6] = bad_sample(batch[6].clone());
    let (status, v) = api.ingest(&id, &batch).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "ValidationFailed");
    assert!(v["detail"].as_str().unwrap().starts_with("sample 6"), "{v}");
    assert_eq!(api.info(&id).await.sample_count, 10);

    // A record that does not even parse is also pinned to its index.
    let mut raw: Vec<Value> = samples[10..13].iter().map(|s| serde_json::to_value(s).unwrap()).collect();
    raw[2].as_object_mut().unwrap().remove("heading_deg");
    let (status, v) =
        api.call("POST", &format!("/api/v1/sessions/{id}/samples"), Some(json!({ "samples": raw }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["detail"].as_str().unwrap().starts_with("sample 2"), "{v}");

    let mut outside = samples[0].clone();
    outside.x = 50.0;
    assert_eq!(api.ingest(&id, &[outside]).await.0, StatusCode::BAD_REQUEST);

    let lines = std::fs::read_to_string(api.dir.path().join("sessions").join(&id).join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_batches_append_whole() {
    let api = Api::new();
    let sc = common::small_room(2);
    let id = api.create(&sc.area).await;
    let all = common::survey(&sc, 4);
    let tag = |device: &str| -> Vec<FingerprintSample> {
        all.iter()
            .take(100)
            .map(|s| FingerprintSample { device_id: device.into(), ..s.clone() })
            .collect()
    };
    let (a, b) = (tag("dev-a"), tag("dev-b"));
    let (ra, rb) = tokio::join!(api.ingest(&id, &a), api.ingest(&id, &b));
    assert_eq!(ra.1["accepted"], 100);
    assert_eq!(rb.1["accepted"], 100);
    assert_eq!(api.info(&id).await.sample_count, 200);

    let text = std::fs::read_to_string(api.dir.path().join("sessions").join(&id).join("samples.jsonl")).unwrap();
    let parsed = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert_eq!(parsed.len(), 200);
    // Each batch is one contiguous run.
    let first = parsed[0].device_id.clone();
    assert!(parsed[..100].iter().all(|s| s.device_id == first));
    assert!(parsed[100..].iter().all(|s| s.device_id != first));
}

#[tokio::test]
async fn localize_requires_training() {
    let api = Api::new();
    let sc = common::small_room(3);
    let id = api.create(&sc.area).await;
    let obs = walk_observation(&sc);
    let (status, v) =
        api.call("POST", &format!("/api/v1/sessions/{id}/localize"), Some(json!({ "observation": obs }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "NotTrained");
    let (status, v) = api.call("GET", &format!("/api/v1/sessions/{id}/stream"), None).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("NotTrained")));
    assert_eq!(api.call("GET", &format!("/api/v1/sessions/{id}/radiomap"), None).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn training_an_empty_session_fails() {
    let api = Api::new();
    let id = api.create(&SurveyArea::with_interior_grid(4.0, 4.0, 1.0)).await;
    let (status, v) = api.call("POST", &format!("/api/v1/sessions/{id}/train"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["error"], "TrainingFailed");
    assert!(v["detail"].as_str().unwrap().contains("EmptyInput"), "{v}");
    let info = api.info(&id).await;
    assert_eq!(info.state, SessionState::Failed);
    assert!(info.failure.unwrap().contains("EmptyInput"));
    let report = std::fs::read_to_string(api.dir.path().join("sessions").join(&id).join("report.json")).unwrap();
    assert!(report.contains("EmptyInput"));
    // Failed sessions may retry.
    assert_eq!(
        api.call("POST", &format!("/api/v1/sessions/{id}/train"), Some(json!({}))).await.0,
        StatusCode::INTERNAL_SERVER_ERROR
    );
}

#[tokio::test]
async fn invalid_train_config_is_rejected_before_work() {
    let api = Api::new();
    let sc = common::small_room(3);
    let id = api.create(&sc.area).await;
    let uri = format!("/api/v1/sessions/{id}/train");
    for body in [json!({"spacing": 0.0}), json!({"min_presence": 2.0}), json!({"hyper_policy": "magic"}), json!({"spcing": 1})] {
        let (status, v) = api.call("POST", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"], "InvalidRequest");
    }
    assert_eq!(api.info(&id).await.state, SessionState::Collecting);
}

#[tokio::test]
async fn trains_simulated_survey() {
    let api = Api::new();
    let sc = common::small_room(4);
    let id = api.create(&sc.area).await;
    let samples = common::survey(&sc, 4);
    assert_eq!(sc.area.reference_points.len(), 54);
    api.ingest(&id, &samples).await;
    let (status, report) = api
        .call(
            "POST",
            &format!("/api/v1/sessions/{id}/train"),
            Some(json!({"spacing": 0.5, "hyper_policy": "fixed", "min_presence": 0.2})),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    let surfaces = report["surfaces"].as_array().unwrap().len();
    let skipped = report["skipped"].as_array().unwrap().len();
    assert_eq!(surfaces + skipped, 4 * sc.aps.len());
    assert_eq!(report["sample_count"], samples.len());
    assert_eq!(report["config"]["spacing"], 0.5);
    assert!(report["elapsed_ms"].is_u64());

    let info = api.info(&id).await;
    assert_eq!(info.state, SessionState::Trained);
    assert!(info.trained_at.is_some());

    let dir = api.dir.path().join("sessions").join(&id);
    for f in ["sparse_map.json", "radiomap.json", "report.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let (status, body) = api.raw("GET", &format!("/api/v1/sessions/{id}/radiomap"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read(dir.join("radiomap.json")).unwrap());
    assert_eq!(DenseRadioMap::from_json(std::str::from_utf8(&body).unwrap()).unwrap().surfaces.len(), surfaces);

    // Trained sessions neither retrain nor accept more samples.
    let (status, v) = api.call("POST", &format!("/api/v1/sessions/{id}/train"), Some(json!({}))).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("WrongState")));
    assert_eq!(api.ingest(&id, &samples[..1]).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn identical_training_gives_identical_radiomap() {
    let api = Api::new();
    let (a, _) = api.trained(5).await;
    let (b, _) = api.trained(5).await;
    let read = |id: &str| std::fs::read(api.dir.path().join("sessions").join(id).join("radiomap.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_localize_agrees() {
    let api = Api::new();
    let (id, sc) = api.trained(6).await;
    let obs = walk_observation(&sc);
    let uri = format!("/api/v1/sessions/{id}/localize");
    let calls = (0..100).map(|_| api.call("POST", &uri, Some(json!({ "observation": obs }))));
    let results = futures_util::future::join_all(calls).await;
    let first = &results[0].1;
    for (status, v) in &results {
        assert_eq!(*status, StatusCode::OK);
        assert_eq!(v, first);
    }
    let est: PositionEstimate = serde_json::from_value(first.clone()).unwrap();
    assert!((0.0..=sc.area.width).contains(&est.x) && (0.0..=sc.area.height).contains(&est.y));
}

#[tokio::test]
async fn localize_without_overlap_is_400() {
    let api = Api::new();
    let (id, _) = api.trained(7).await;
    let mut readings = Readings::new();
    readings.insert(AccessPointId::new(Bssid::new([9; 6]), Band::Band5GHz), -50);
    let obs = Observation { readings, timestamp: "2024-01-01T00:00:00Z".parse().unwrap(), heading_hint: None };
    let (status, v) =
        api.call("POST", &format!("/api/v1/sessions/{id}/localize"), Some(json!({ "observation": obs }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "InsufficientOverlap");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_pushes_each_result_once() {
    let api = Api::new();
    let (id, sc) = api.trained(8).await;
    let obs = walk_observation(&sc);
    let uri = format!("/api/v1/sessions/{id}/localize");
    let localize = || api.call("POST", &uri, Some(json!({ "observation": obs })));

    let mut early = api.subscribe(&id).await;
    let (_, first) = localize().await;
    let got = next_events(&mut early, 1).await;
    assert_eq!(got, vec![StreamEvent::Estimate(serde_json::from_value(first).unwrap())]);
    no_more_events(&mut early).await;

    // A late subscriber sees nothing from before it joined.
    let mut late = api.subscribe(&id).await;
    let (_, second) = localize().await;
    let truth = vec![
        TruthObservation { observation: obs.clone(), x: 3.0, y: 2.0 },
        TruthObservation { observation: obs.clone(), x: 5.0, y: 1.0 },
    ];
    let (status, ev) = api
        .call("POST", &format!("/api/v1/sessions/{id}/eval"), Some(json!({ "observations_with_truth": truth })))
        .await;
    assert_eq!(status, StatusCode::OK);
    let ev: Evaluation = serde_json::from_value(ev).unwrap();
    assert_eq!(ev.summary.n, 2);

    let a = next_events(&mut early, 3).await;
    let b = next_events(&mut late, 3).await;
    assert_eq!(a, b);
    assert_eq!(a[0], StreamEvent::Estimate(serde_json::from_value(second).unwrap()));
    assert_eq!(a[1..], ev.records.into_iter().map(StreamEvent::Accuracy).collect::<Vec<_>>()[..]);
}

#[tokio::test]
async fn eval_reports_three_four_five() {
    let api = Api::new();
    let (id, sc) = api.trained(9).await;
    let obs = walk_observation(&sc);
    let (_, est) =
        api.call("POST", &format!("/api/v1/sessions/{id}/localize"), Some(json!({ "observation": obs }))).await;
    let (ex, ey) = (est["x"].as_f64().unwrap(), est["y"].as_f64().unwrap());
    let truth = vec![TruthObservation { observation: obs, x: ex - 3.0, y: ey - 4.0 }];
    let (status, v) = api
        .call("POST", &format!("/api/v1/sessions/{id}/eval"), Some(json!({ "observations_with_truth": truth })))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert!((v["records"][0]["error_m"].as_f64().unwrap() - 5.0).abs() <= 1e-12, "{v}");
    assert_eq!(v["summary"]["mean_error_m"], v["records"][0]["error_m"]);
    assert_eq!(v["summary"]["n"], 1);
}

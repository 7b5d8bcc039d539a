use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{DateTime, Duration, TimeZone, Utc};
use ctlab_annotate::{read_events, replay, router, shared, Clock, ServiceConfig, Shared, Store, TaskState};
use ctlab_core::augment::{CandidateComment, CandidateStatus};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

/// Manually advanced clock, in seconds since a fixed origin.
#[derive(Clone, Default)]
struct TestClock(Arc<AtomicI64>);

impl TestClock {
    fn advance(&self, d: Duration) {
        self.0.fetch_add(d.num_seconds(), Ordering::SeqCst);
    }
    fn clock(&self) -> Clock {
        let secs = self.0.clone();
        Arc::new(move || origin() + Duration::seconds(secs.load(Ordering::SeqCst)))
    }
}

fn origin() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap()
}

fn config() -> ServiceConfig {
    ServiceConfig {
        annotators: vec!["ann1".into(), "ann2".into(), "ann3".into()],
        adjudicators: vec!["adj".into()],
        ..ServiceConfig::default()
    }
}

fn candidates(n: usize) -> Vec<CandidateComment<f64>> {
    (0..n)
        .map(|i| CandidateComment {
            id: format!("c{i:03}"),
            text: format!("mined comment number {i}"),
            source: "test".into(),
            model_score: [0.1, 0.2, 0.3, 0.9],
            status: CandidateStatus::Pending,
        })
        .collect()
}

fn service(n: usize, clock: &TestClock) -> Shared {
    let mut store = Store::in_memory(config(), clock.clock()).unwrap();
    store.add_candidates(candidates(n)).unwrap();
    shared(store)
}

async fn call(app: &Shared, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn label(r: u8, e: u8, n: u8, c: u8) -> Value {
    json!({"religio": r, "ethno": e, "nondenominational": n, "noncommunal": c})
}

async fn vote(app: &Shared, task: &str, who: &str, l: Value, needs_context: bool) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        &format!("/api/tasks/{task}/vote"),
        Some(json!({"annotator": who, "label": l, "needs_context": needs_context})),
    )
    .await
}

#[tokio::test]
async fn session_cap_blocks_the_fifty_first_annotation() {
    let clock = TestClock::default();
    let app = service(120, &clock);
    for i in 0..50 {
        let (status, body) = call(&app, "GET", "/api/tasks/next?annotator=ann1", None).await;
        assert_eq!(status, StatusCode::OK, "request {i}: {body}");
        let id = body["task_id"].as_str().unwrap().to_owned();
        let (status, body) = vote(&app, &id, "ann1", label(1, 0, 0, 0), false).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["session"]["completed"], i + 1);
    }
    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator=ann1", None).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(body["error"], "session_cap");

    let task = app
        .lock()
        .state()
        .tasks
        .iter()
        .find(|t| t.assigned.contains(&"ann1".to_string()) && !t.votes.contains_key("ann1"))
        .unwrap()
        .task_id
        .clone();
    let (status, _) = vote(&app, &task, "ann1", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);

    let (status, body) = call(&app, "POST", "/api/sessions?annotator=ann1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session"]["number"], 2);
    let (status, _) = vote(&app, &task, "ann1", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn inactive_session_expires_after_timeout() {
    let clock = TestClock::default();
    let app = service(120, &clock);
    for _ in 0..50 {
        let (_, body) = call(&app, "GET", "/api/tasks/next?annotator=ann2", None).await;
        let id = body["task_id"].as_str().unwrap().to_owned();
        vote(&app, &id, "ann2", label(0, 0, 0, 0), false).await;
    }
    clock.advance(Duration::hours(7));
    let (status, _) = call(&app, "GET", "/api/tasks/next?annotator=ann2", None).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    clock.advance(Duration::hours(1));
    let (status, body) = call(&app, "GET", "/api/tasks/next?annotator=ann2", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session"]["number"], 2);
    assert_eq!(body["session"]["completed"], 0);
}

/// Collects every string key and value in a JSON document.
fn strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                out.push(k.clone());
                strings(x, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|x| strings(x, out)),
        Value::String(s) => out.push(s.clone()),
        _ => {}
    }
}

#[tokio::test]
async fn annotators_never_see_other_votes_or_task_state() {
    let clock = TestClock::default();
    let app = service(3, &clock);
    // c000 goes to ann1 and ann2.
    vote(&app, "c000", "ann1", label(0, 1, 0, 0), true).await;

    let mut seen = Vec::new();
    for uri in [
        "/api/tasks/next?annotator=ann2",
        "/api/progress?annotator=ann2",
        "/api/conflicts?adjudicator=ann2",
        "/api/export?adjudicator=ann2",
    ] {
        let (_, body) = call(&app, "GET", uri, None).await;
        strings(&body, &mut seen);
    }
    let (status, body) = vote(&app, "c000", "ann2", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::OK);
    strings(&body, &mut seen);
    let (_, body) = call(&app, "GET", "/api/progress?annotator=ann2", None).await;
    strings(&body, &mut seen);

    for leak in ["ann1", "votes", "ethno", "needs_context", "conflict", "agreed", "state"] {
        assert!(
            !seen.iter().any(|s| s.contains(leak)),
            "annotator-facing response leaked `{leak}`: {seen:?}"
        );
    }
    let (status, _) = call(&app, "GET", "/api/conflicts?adjudicator=ann2", None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body) = call(&app, "GET", "/api/conflicts?adjudicator=adj", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["conflicts"][0]["votes"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn agreement_conflict_and_resolution_flow() {
    let clock = TestClock::default();
    let app = service(3, &clock);
    // c000: ann1+ann2, c001: ann2+ann3, c002: ann3+ann1
    vote(&app, "c000", "ann1", label(1, 0, 0, 0), false).await;
    vote(&app, "c000", "ann2", label(1, 0, 0, 0), false).await;
    vote(&app, "c001", "ann2", label(0, 0, 0, 1), false).await;
    vote(&app, "c001", "ann3", label(0, 0, 1, 0), false).await;
    vote(&app, "c002", "ann3", label(0, 1, 0, 0), true).await;
    vote(&app, "c002", "ann1", label(0, 1, 0, 0), false).await;
    {
        let s = app.lock();
        assert_eq!(s.state().task("c000").unwrap().state, TaskState::Agreed);
        assert_eq!(s.state().task("c001").unwrap().state, TaskState::Conflict);
        assert!(s.state().task("c002").unwrap().is_rejected());
    }
    let (_, body) = call(&app, "GET", "/api/conflicts?adjudicator=adj", None).await;
    let ids: Vec<_> = body["conflicts"].as_array().unwrap().iter().map(|c| c["task_id"].clone()).collect();
    assert_eq!(ids, vec![json!("c001"), json!("c002")]);

    let (status, _) = call(
        &app,
        "POST",
        "/api/conflicts/c000/resolve",
        Some(json!({"adjudicator": "adj", "label": label(0, 1, 0, 0)})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(
        &app,
        "POST",
        "/api/conflicts/c001/resolve",
        Some(json!({"adjudicator": "adj", "label": label(0, 0, 1, 0)})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(
        &app,
        "POST",
        "/api/conflicts/c002/resolve",
        Some(json!({"adjudicator": "adj", "reject": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    let (status, body) = call(&app, "GET", "/api/progress?adjudicator=adj", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["progress"]["accepted"], 2);
    assert_eq!(body["progress"]["rejected"], 1);

    let (status, body) = call(&app, "GET", "/api/export?adjudicator=adj", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows: Vec<Value> = body
        .as_str()
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["id"], "c000");
    assert_eq!(rows[0]["religio"], 1);
    assert_eq!(rows[1]["id"], "c001");
    assert_eq!(rows[1]["nondenominational"], 1);
    assert!(rows.iter().all(|r| r["provenance"] == "manual"));
    let corpus = ctlab_core::corpus::read_jsonl(body.as_str().unwrap().as_bytes()).unwrap();
    assert_eq!(corpus.len(), 2);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let clock = TestClock::default();
    let app = service(3, &clock);
    let (status, body) = vote(&app, "c000", "ann1", label(1, 0, 0, 1), false).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("noncommunal"));
    let (status, _) = vote(&app, "c000", "ann1", label(2, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = vote(&app, "c000", "ann3", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = vote(&app, "nope", "ann1", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = vote(&app, "c000", "stranger", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call(&app, "GET", "/api/tasks/next", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    vote(&app, "c000", "ann1", label(1, 0, 0, 0), false).await;
    let (status, _) = vote(&app, "c000", "ann1", label(1, 0, 0, 0), false).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(
        &app,
        "POST",
        "/api/conflicts/c000/resolve",
        Some(json!({"adjudicator": "adj", "label": label(1, 0, 0, 0), "reject": true})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn replaying_the_log_rebuilds_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let clock = TestClock::default();
    let cfg = ServiceConfig {
        snapshot_every: 7,
        ..config()
    };
    let live = {
        let mut store = Store::open(dir.path(), cfg.clone(), clock.clock()).unwrap();
        store.add_candidates(candidates(12)).unwrap();
        for i in 0..12 {
            let id = format!("c{i:03}");
            let assigned = store.state().task(&id).unwrap().assigned.clone();
            for (k, who) in assigned.iter().enumerate() {
                clock.advance(Duration::minutes(3));
                let bits = if (i + k) % 3 == 0 { [0, 0, 0, 1] } else { [1, 0, 0, 0] };
                let l = ctlab_core::LabelVector::from_bits(bits).unwrap();
                store.vote(&id, who, l, i == 5).unwrap();
            }
        }
        let open: Vec<String> = store.conflicts("adj").unwrap().iter().map(|t| t.task_id.clone()).collect();
        assert!(!open.is_empty());
        store.resolve(&open[0], "adj", None).unwrap();
        store.state().clone()
    };
    let events = read_events(&dir.path().join("events.jsonl")).unwrap();
    assert_eq!(events.len() as u64, live.applied);
    assert_eq!(replay(&events), live);

    let reopened = Store::open(dir.path(), cfg, clock.clock()).unwrap();
    assert!(dir.path().join("snapshot.json").exists());
    assert_eq!(*reopened.state(), live);
}

#[test]
fn config_validation() {
    let clock = TestClock::default();
    let one = ServiceConfig {
        annotators: vec!["a".into()],
        adjudicators: vec!["x".into()],
        ..ServiceConfig::default()
    };
    assert!(Store::in_memory(one, clock.clock()).is_err());
    let overlap = ServiceConfig {
        annotators: vec!["a".into(), "b".into()],
        adjudicators: vec!["a".into()],
        ..ServiceConfig::default()
    };
    assert!(Store::in_memory(overlap, clock.clock()).is_err());
    let mut store = Store::in_memory(config(), clock.clock()).unwrap();
    store.add_candidates(candidates(2)).unwrap();
    assert!(store.add_candidates(candidates(1)).is_err());
}

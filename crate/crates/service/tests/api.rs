use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use bandit_tutor_core::difficulty::initial_multiplier;
use bandit_tutor_core::{generate_synthetic_curriculum, Curriculum, ProblemId, Session, SessionConfig};
use bandit_tutor_service::{router, AppState, Clock, FileStore, MemoryStore, SessionStore};

const CURRICULUM: &str = r#"{"sections":[
  {"id":"basics","title":"Basics","concepts":[
    {"id":"vars","prerequisites":[],"problems":[
      {"id":"v1","difficulty":1,"prompt":"v1?","choices":["a","b","c"],"correct_choice":0},
      {"id":"v2","difficulty":3,"prompt":"v2?","choices":["a","b","c"],"correct_choice":1},
      {"id":"v3","difficulty":5,"prompt":"v3?","choices":["a","b","c"],"correct_choice":2}
    ]},
    {"id":"loops","prerequisites":["vars"],"problems":[
      {"id":"l1","difficulty":2,"prompt":"l1?","choices":["a","b"],"correct_choice":1}
    ]}
  ]},
  {"id":"single","title":"Single","concepts":[
    {"id":"only","prerequisites":[],"problems":[
      {"id":"o1","difficulty":3,"prompt":"o1?","choices":["yes","no"],"correct_choice":0}
    ]}
  ]}
]}"#;

struct FixedClock(AtomicU64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

fn curriculum() -> Arc<Curriculum> {
    Arc::new(Curriculum::from_json(CURRICULUM).unwrap())
}

fn app_with(curriculum: Arc<Curriculum>, store: Arc<dyn SessionStore>) -> Router {
    let state = AppState::new(curriculum, "demo", SessionConfig::default(), store)
        .with_clock(Arc::new(FixedClock(AtomicU64::new(1_000))));
    router(Arc::new(state), None)
}

fn app() -> Router {
    app_with(curriculum(), Arc::new(MemoryStore::new()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_owned())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, section: &str, seed: u64) -> String {
    let body = json!({"curriculum_id": "demo", "section_id": section, "seed": seed}).to_string();
    let (status, v) = call(app, "POST", "/api/sessions", Some(&body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_owned()
}

async fn next(app: &Router, id: &str) -> (StatusCode, Value) {
    call(app, "GET", &format!("/api/sessions/{id}/next"), None).await
}

async fn answer(app: &Router, id: &str, problem: &str, choice: usize) -> (StatusCode, Value) {
    let body = json!({"problem_id": problem, "choice_index": choice}).to_string();
    call(app, "POST", &format!("/api/sessions/{id}/answer"), Some(&body)).await
}

fn correct_choice(c: &Curriculum, problem: &str) -> usize {
    c.problem(&ProblemId::from(problem)).unwrap().correct_choice
}

fn belief(progress: &Value, concept: &str) -> String {
    progress
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["concept_id"] == concept)
        .unwrap()["belief"]
        .as_str()
        .unwrap()
        .to_owned()
}

#[tokio::test]
async fn create_reports_initial_progress() {
    let app = app();
    let body = json!({"curriculum_id": "demo", "section_id": "basics", "seed": 4}).to_string();
    let (status, v) = call(&app, "POST", "/api/sessions", Some(&body)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["seed"], 4);
    assert_eq!(v["complete"], false);
    assert_eq!(belief(&v["progress"], "vars"), "unlocked_unmastered");
    assert_eq!(belief(&v["progress"], "loops"), "locked");
    let id = v["session_id"].as_str().unwrap();
    assert_eq!(id.len(), 32);
    assert!(id.bytes().all(|b| b.is_ascii_hexdigit()));
}

#[tokio::test]
async fn create_rejects_bad_requests() {
    let app = app();
    let cases = [
        (r#"{"curriculum_id":"demo","section_id":"nope"}"#, StatusCode::NOT_FOUND),
        (r#"{"curriculum_id":"other","section_id":"basics"}"#, StatusCode::NOT_FOUND),
        ("not json", StatusCode::BAD_REQUEST),
        (r#"{"curriculum_id":"demo"}"#, StatusCode::BAD_REQUEST),
        (r#"{"section_id":"basics","extra":1}"#, StatusCode::BAD_REQUEST),
        (r#"{"section_id":"basics","seed":-3}"#, StatusCode::BAD_REQUEST),
        ("", StatusCode::BAD_REQUEST),
    ];
    for (body, expected) in cases {
        let (status, v) = call(&app, "POST", "/api/sessions", Some(body)).await;
        assert_eq!(status, expected, "{body}: {v}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn omitted_seed_is_generated_and_returned() {
    let app = app();
    let (status, v) = call(&app, "POST", "/api/sessions", Some(r#"{"section_id":"basics"}"#)).await;
    assert_eq!(status, StatusCode::CREATED);
    let seed = v["seed"].as_u64().unwrap();
    assert!(seed < 1 << 53);

    // The returned seed reproduces the session.
    let first = next(&app, v["session_id"].as_str().unwrap()).await.1;
    let again = create(&app, "basics", seed).await;
    assert_eq!(next(&app, &again).await.1, first);
}

#[tokio::test]
async fn next_is_idempotent_and_hides_difficulty() {
    let app = app();
    let id = create(&app, "basics", 9).await;
    let (s1, a) = next(&app, &id).await;
    let (s2, b) = next(&app, &id).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    assert_eq!(a["concept_id"], "vars");
    assert!(a.get("difficulty").is_none());
    assert!(a.get("correct_choice").is_none());
    assert_eq!(a["choices"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn unknown_session_is_404_everywhere() {
    let app = app();
    for (m, path, body) in [
        ("GET", "/api/sessions/abc/next", None),
        ("GET", "/api/sessions/abc/state", None),
        ("POST", "/api/sessions/abc/answer", Some(r#"{"problem_id":"v1","choice_index":0}"#)),
        ("GET", "/api/sessions/..%2F..%2Fetc/next", None),
    ] {
        assert_eq!(call(&app, m, path, body).await.0, StatusCode::NOT_FOUND, "{path}");
    }
}

#[tokio::test]
async fn answer_errors() {
    let c = curriculum();
    let app = app();
    let id = create(&app, "basics", 2).await;
    // Nothing outstanding yet.
    assert_eq!(answer(&app, &id, "v1", 0).await.0, StatusCode::CONFLICT);

    let rec = next(&app, &id).await.1;
    let pid = rec["problem_id"].as_str().unwrap().to_owned();
    let other = ["v1", "v2", "v3"].into_iter().find(|p| *p != pid).unwrap();
    assert_eq!(answer(&app, &id, other, 0).await.0, StatusCode::CONFLICT);
    assert_eq!(answer(&app, &id, &pid, 3).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/answer"),
        Some(r#"{"problem_id":"v1"}"#),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = answer(&app, &id, &pid, correct_choice(&c, &pid)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["correct"], true);
    // Replaying the same answer finds nothing outstanding.
    let (status, v) = answer(&app, &id, &pid, correct_choice(&c, &pid)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["progress"].is_array());
}

#[tokio::test]
async fn single_problem_concept_completes_session() {
    let c = curriculum();
    let app = app();
    let id = create(&app, "single", 0).await;
    let rec = next(&app, &id).await.1;
    assert_eq!(rec["problem_id"], "o1");
    let (status, v) = answer(&app, &id, "o1", correct_choice(&c, "o1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(belief(&v["progress"], "only"), "mastered");
    assert_eq!(v["complete"], true);
    assert_eq!(v["concept_mastered"], "bank_exhausted");

    let (status, v) = next(&app, &id).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["complete"], true);
    assert_eq!(belief(&v["progress"], "only"), "mastered");
}

#[tokio::test]
async fn correct_answer_is_not_asked_again() {
    let c = curriculum();
    let app = app();
    for seed in 0..10 {
        let id = create(&app, "basics", seed).await;
        let first = next(&app, &id).await.1["problem_id"].as_str().unwrap().to_owned();
        answer(&app, &id, &first, correct_choice(&c, &first)).await;
        let mut seen = Vec::new();
        while let (StatusCode::OK, rec) = next(&app, &id).await {
            let p = rec["problem_id"].as_str().unwrap().to_owned();
            assert_ne!(p, first, "seed {seed}");
            assert!(!seen.contains(&p), "seed {seed}: {p} repeated after a correct answer");
            seen.push(p.clone());
            answer(&app, &id, &p, correct_choice(&c, &p)).await;
        }
    }
}

#[tokio::test]
async fn state_exposes_engine_numbers() {
    let c = curriculum();
    let app = app();
    // Find a seed whose first recommendation is the d = 3 problem.
    let mut found = None;
    for seed in 0..200 {
        let id = create(&app, "basics", seed).await;
        if next(&app, &id).await.1["problem_id"] == "v2" {
            found = Some(id);
            break;
        }
    }
    let id = found.expect("some seed recommends v2 first");
    let state_uri = format!("/api/sessions/{id}/state");
    let (status, before) = call(&app, "GET", &state_uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(call(&app, "GET", &state_uri, None).await.1, before);

    let problems = &before["diagnostics"]["problems"]["vars"];
    let mult = |v: &Value, i: usize| v[i]["multiplier"].as_f64().unwrap();
    for (i, d) in [1.0, 3.0, 5.0].into_iter().enumerate() {
        assert_eq!(mult(problems, i), initial_multiplier(d, 7.37));
    }

    answer(&app, &id, "v2", correct_choice(&c, "v2")).await;
    let after = call(&app, "GET", &state_uri, None).await.1;
    let after = &after["diagnostics"]["problems"]["vars"];
    assert_eq!(mult(after, 2), mult(problems, 2) * 1.3);
    assert_eq!(mult(after, 0), mult(problems, 0) * (1.0 / 1.3));
    assert_eq!(mult(after, 1), mult(problems, 1));
}

#[tokio::test]
async fn curriculum_listing() {
    let app = app();
    let (status, v) = call(&app, "GET", "/api/curriculum", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["curriculum_id"], "demo");
    assert_eq!(v["sections"][0]["id"], "basics");
    assert_eq!(v["sections"][0]["concepts"][1]["prerequisites"][0], "vars");
    assert!(!v.to_string().contains("difficulty"));
}

#[tokio::test]
async fn static_files_are_served_under_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>quiz</h1>").unwrap();
    let state = AppState::new(curriculum(), "demo", SessionConfig::default(), Arc::new(MemoryStore::new()));
    let app = router(Arc::new(state), Some(dir.path().to_owned()));
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("<h1>quiz</h1>".into()));
    assert_eq!(call(&app, "GET", "/api/curriculum", None).await.0, StatusCode::OK);
}

/// Answers alternate wrong, right, right by step; returns the problems seen.
async fn drive(app: &Router, c: &Curriculum, id: &str, steps: usize, offset: usize) -> Vec<String> {
    let mut seen = Vec::new();
    for k in 0..steps {
        let (status, rec) = next(app, id).await;
        if status != StatusCode::OK {
            break;
        }
        let p = rec["problem_id"].as_str().unwrap().to_owned();
        let right = correct_choice(c, &p);
        let n = c.problem(&ProblemId::from(p.as_str())).unwrap().choices.len();
        let choice = if (k + offset) % 3 == 0 { (right + 1) % n } else { right };
        assert_eq!(answer(app, id, &p, choice).await.0, StatusCode::OK);
        seen.push(p);
    }
    seen
}

#[tokio::test]
async fn restart_resumes_identically() {
    let c = Arc::new(generate_synthetic_curriculum(1, 3, 8, 12).unwrap());
    let section = c.sections()[0].id.to_string();
    let dir = tempfile::tempdir().unwrap();
    let reference = app_with(c.clone(), Arc::new(MemoryStore::new()));
    let ref_id = create(&reference, &section, 77).await;
    let expected = drive(&reference, &c, &ref_id, 200, 0).await;
    assert!(expected.len() > 6);

    // Crash after a persisted answer.
    let first = app_with(c.clone(), Arc::new(FileStore::open(dir.path()).unwrap()));
    let id = create(&first, &section, 77).await;
    let mut got = drive(&first, &c, &id, 3, 0).await;
    // And after a persisted, unanswered recommendation.
    let pending = next(&first, &id).await.1;
    drop(first);

    let second = app_with(c.clone(), Arc::new(FileStore::open(dir.path()).unwrap()));
    assert_eq!(next(&second, &id).await.1, pending);
    got.extend(drive(&second, &c, &id, 200, 3).await);
    assert_eq!(got, expected);

    let a = call(&reference, "GET", &format!("/api/sessions/{ref_id}/state"), None).await.1;
    let b = call(&second, "GET", &format!("/api/sessions/{id}/state"), None).await.1;
    assert_eq!(a["diagnostics"]["log"], b["diagnostics"]["log"]);
    assert_eq!(a["diagnostics"]["concepts"], b["diagnostics"]["concepts"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_answers_are_serialized() {
    let c = curriculum();
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(c.clone(), Arc::new(FileStore::open(dir.path()).unwrap()));
    for seed in 0..5 {
        let id = create(&app, "basics", seed).await;
        let rec = next(&app, &id).await.1;
        let p = rec["problem_id"].as_str().unwrap().to_owned();
        let choice = correct_choice(&c, &p);
        let tasks: Vec<_> = (0..16)
            .map(|_| {
                let (app, id, p) = (app.clone(), id.clone(), p.clone());
                tokio::spawn(async move { answer(&app, &id, &p, choice).await.0 })
            })
            .collect();
        let mut ok = 0;
        for t in tasks {
            match t.await.unwrap() {
                StatusCode::OK => ok += 1,
                StatusCode::CONFLICT => {}
                other => panic!("unexpected {other}"),
            }
        }
        assert_eq!(ok, 1);
        let state = call(&app, "GET", &format!("/api/sessions/{id}/state"), None).await.1;
        assert_eq!(state["diagnostics"]["log"].as_array().unwrap().len(), 1);
    }
}

#[tokio::test]
async fn scripted_client_matches_direct_engine() {
    let c = Arc::new(generate_synthetic_curriculum(2, 3, 6, 5).unwrap());
    let app = app_with(c.clone(), Arc::new(MemoryStore::new()));
    for (k, section) in c.sections().iter().enumerate() {
        let seed = 1000 + k as u64;
        let id = create(&app, section.id.as_str(), seed).await;
        drive(&app, &c, &id, 10_000, 1).await;
        let served = call(&app, "GET", &format!("/api/sessions/{id}/state"), None).await.1;

        let mut direct = Session::start(c.clone(), &section.id, SessionConfig::default(), seed).unwrap();
        let mut step = 0;
        while !direct.is_complete() {
            let rec = direct.next_recommendation().unwrap();
            let correct = (step + 1) % 3 != 0;
            direct.record_answer(&rec.problem_id, correct, 0.0).unwrap();
            step += 1;
        }
        let direct_log = serde_json::to_value(direct.log()).unwrap();
        assert_eq!(served["diagnostics"]["log"], direct_log);
        assert_eq!(served["diagnostics"]["complete"], true);
    }
}

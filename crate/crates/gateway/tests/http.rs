use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use genonet_core::orchestrator::{SessionMeta, SessionTranscript, Stage, StageEvent, Turn};
use genonet_gateway::{parse_sse, router, ApiError, AppState, Health};

mod common;

use common::{fixtures, orchestrator, session_turns, spawn};

async fn call(state: &AppState, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn new_session(state: &AppState) -> String {
    let (status, body) = call(state, post_json("/sessions", json!({}))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice::<SessionMeta>(&body).unwrap().session_id
}

/// Posts a message and splits the SSE response into stage events and turns.
async fn post_message(state: &AppState, id: &str, body: Value) -> (Vec<StageEvent>, Vec<Turn>) {
    let (status, bytes) = call(state, post_json(&format!("/sessions/{id}/messages"), body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    let events = parse_sse(std::str::from_utf8(&bytes).unwrap());
    let mut stages = Vec::new();
    let mut turns = Vec::new();
    for e in events {
        match e.event.as_str() {
            "stage" => {
                assert!(turns.is_empty(), "stage event after the turn event");
                stages.push(serde_json::from_str(&e.data).unwrap());
            }
            "turn" => turns.push(serde_json::from_str(&e.data).unwrap()),
            other => panic!("unexpected event {other}: {}", e.data),
        }
    }
    (stages, turns)
}

fn state() -> (tempfile::TempDir, AppState) {
    let dir = tempfile::tempdir().unwrap();
    let orch = orchestrator(&dir.path().join("sandbox"), None);
    (dir, AppState::new(orch))
}

#[tokio::test]
async fn health_lists_providers_and_backends() {
    let (_dir, state) = state();
    let (status, body) = call(&state, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.providers, vec!["replay".to_string()]);
    let stub = health.backends.iter().find(|b| b.backend == "stub").unwrap();
    assert!(stub.available && stub.reason.is_none());
    let ns3 = health.backends.iter().find(|b| b.backend == "ns3").unwrap();
    assert_eq!(ns3.available, ns3.reason.is_none());
    assert_eq!(health.sessions, 0);
}

#[tokio::test]
async fn message_stream_has_ordered_stages_then_one_turn() {
    let (_dir, state) = state();
    let id = new_session(&state).await;
    let turns_in = session_turns();
    for (i, message) in turns_in.iter().enumerate() {
        let (stages, turns) = post_message(&state, &id, json!({ "message": message })).await;
        assert_eq!(turns.len(), 1);
        let turn = &turns[0];
        assert_eq!(turn.ordinal as usize, i + 1);
        assert!(turn.error.is_none(), "turn {}: {:?}", i + 1, turn.error);
        assert!(!stages.is_empty());
        assert_eq!(stages.first().unwrap().stage, Stage::Routed);
        assert_eq!(stages.last().unwrap().stage, Stage::Reply);
        assert!(stages.iter().all(|s| s.turn == turn.ordinal));
        assert!(stages.windows(2).all(|w| w[0].stage <= w[1].stage), "{stages:?}");
    }
    let (status, body) = call(&state, get(&format!("/sessions/{id}/transcript"))).await;
    assert_eq!(status, StatusCode::OK);
    let transcript: SessionTranscript = serde_json::from_slice(&body).unwrap();
    assert_eq!(transcript.turns.len(), turns_in.len());
}

#[tokio::test]
async fn streams_over_a_real_connection() {
    let (_dir, state) = state();
    let base = spawn(state).await;
    let client = reqwest::Client::new();
    let meta: SessionMeta = client.post(format!("{base}/sessions")).send().await.unwrap().json().await.unwrap();
    let resp = client
        .post(format!("{base}/sessions/{}/messages", meta.session_id))
        .json(&json!({ "message": session_turns()[0] }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()[header::CONTENT_TYPE.as_str()].to_str().unwrap().starts_with("text/event-stream"));
    let events = parse_sse(&resp.text().await.unwrap());
    let kinds: Vec<&str> = events.iter().map(|e| e.event.as_str()).collect();
    assert_eq!(kinds.last(), Some(&"turn"));
    assert_eq!(kinds.iter().filter(|k| **k == "turn").count(), 1);
    assert!(kinds[..kinds.len() - 1].iter().all(|k| *k == "stage"));
}

#[tokio::test]
async fn flowmon_attachment_yields_two_rows() {
    let (_dir, state) = state();
    let id = new_session(&state).await;
    let xml = std::fs::read_to_string(fixtures().join("flowmon/cttc-nr-demo.xml")).unwrap();
    let (_, turns) = post_message(
        &state,
        &id,
        json!({ "message": "what do these results show?", "attachments": [{ "name": "flowmon.xml", "content": xml }] }),
    )
    .await;
    let turn = &turns[0];
    assert!(turn.error.is_none(), "{:?}", turn.error);
    let report = turn.interpretation.as_ref().expect("interpretation");
    assert_eq!(report.flows.len(), 2);
    assert_eq!(turn.attachments.len(), 1);
}

#[tokio::test]
async fn transcript_reads_are_byte_identical() {
    let (_dir, state) = state();
    let id = new_session(&state).await;
    post_message(&state, &id, json!({ "message": session_turns()[0] })).await;
    let (_, a) = call(&state, get(&format!("/sessions/{id}/transcript"))).await;
    let (_, b) = call(&state, get(&format!("/sessions/{id}/transcript"))).await;
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

async fn expect_error(state: &AppState, req: Request<Body>, status: StatusCode, code: &str) {
    let (got, body) = call(state, req).await;
    assert_eq!(got, status, "{}", String::from_utf8_lossy(&body));
    let err: ApiError = serde_json::from_slice(&body).unwrap();
    assert_eq!(err.code, code);
    assert!(!err.message.is_empty());
}

#[tokio::test]
async fn error_responses_carry_code_and_status() {
    let (_dir, state) = state();
    expect_error(
        &state,
        post_json("/sessions/nope/messages", json!({ "message": "hi" })),
        StatusCode::NOT_FOUND,
        "SessionNotFound",
    )
    .await;
    expect_error(&state, get("/sessions/nope/transcript"), StatusCode::NOT_FOUND, "SessionNotFound").await;
    expect_error(
        &state,
        post_json("/sessions", json!({ "temperature": "0.2" })),
        StatusCode::BAD_REQUEST,
        "InvalidOverride",
    )
    .await;
    expect_error(
        &state,
        post_json("/sessions", json!({ "backend": "mininet" })),
        StatusCode::BAD_REQUEST,
        "InvalidOverride",
    )
    .await;

    let id = new_session(&state).await;
    expect_error(
        &state,
        post_json(&format!("/sessions/{id}/messages"), json!({ "message": "   " })),
        StatusCode::BAD_REQUEST,
        "EmptyMessage",
    )
    .await;
    let limit = state.orchestrator.config().max_attachment_bytes;
    expect_error(
        &state,
        post_json(
            &format!("/sessions/{id}/messages"),
            json!({ "message": "interpret", "attachments": [{ "name": "big.log", "content": "x".repeat(limit + 1) }] }),
        ),
        StatusCode::PAYLOAD_TOO_LARGE,
        "PayloadTooLarge",
    )
    .await;
    // Rejected requests leave no turn behind.
    let (_, body) = call(&state, get(&format!("/sessions/{id}/transcript"))).await;
    let transcript: SessionTranscript = serde_json::from_slice(&body).unwrap();
    assert!(transcript.turns.is_empty());
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let (_dir, state) = state();
    let state = state.with_auth_token(Some("s3cret".into()));
    let (status, _) = call(&state, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    expect_error(&state, post_json("/sessions", json!({})), StatusCode::UNAUTHORIZED, "Unauthorized").await;
    let wrong = Request::post("/sessions")
        .header(header::AUTHORIZATION, "Bearer nope")
        .body(Body::empty())
        .unwrap();
    expect_error(&state, wrong, StatusCode::UNAUTHORIZED, "Unauthorized").await;
    let right = Request::post("/sessions")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    let (status, body) = call(&state, right).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let sandbox = dir.path().join("sandbox");
    let state = AppState::new(orchestrator(&sandbox, Some(data.clone())));
    let id = new_session(&state).await;
    for message in &session_turns()[..3] {
        post_message(&state, &id, json!({ "message": message })).await;
    }
    let (_, before) = call(&state, get(&format!("/sessions/{id}/transcript"))).await;
    drop(state);

    let restarted = AppState::new(orchestrator(&sandbox, Some(data)));
    let (status, after) = call(&restarted, get(&format!("/sessions/{id}/transcript"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let (_, body) = call(&restarted, get("/health")).await;
    assert_eq!(serde_json::from_slice::<Health>(&body).unwrap().sessions, 1);
}

#[test]
fn sse_parser_handles_multiline_data_and_comments() {
    let body = ": keep-alive\n\nevent: stage\ndata: {\"a\":1}\n\nevent: turn\ndata: line1\ndata: line2\n\n";
    let events = parse_sse(body);
    assert_eq!(events.len(), 2);
    assert_eq!(events[0].event, "stage");
    assert_eq!(events[1].data, "line1\nline2");
}

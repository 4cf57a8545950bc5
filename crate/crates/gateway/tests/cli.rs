use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request};
use serde_json::json;
use tower::ServiceExt;

use genonet_core::orchestrator::{SessionTranscript, Turn};
use genonet_gateway::{parse_sse, router, AppState};

mod common;

use common::{fixtures, orchestrator, session_turns};

fn genonet(sandbox: &Path, cassette: &str) -> Command {
    let root = fixtures();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_genonet"));
    for (k, _) in std::env::vars() {
        if k.starts_with("GENONET_") || k == "NS3_ROOT" {
            cmd.env_remove(k);
        }
    }
    cmd.env("GENONET_PROVIDER_MODE", "replay")
        .env("GENONET_CASSETTE", root.join("cassettes").join(format!("{cassette}.ndjson")))
        .env("GENONET_STUB_DIR", root.join("stub"))
        .env("GENONET_CORPUS_DIR", root.join("corpus"))
        .env("GENONET_SANDBOX_DIR", sandbox)
        .env("GENONET_LOGICAL_CLOCK", "1");
    cmd
}

fn run_with_stdin(mut cmd: Command, stdin: &str) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// The turns in the transcript store's canonical line format.
fn turns_ndjson(turns: &[Turn]) -> String {
    SessionTranscript {
        session_id: String::new(),
        turns: turns.to_vec(),
    }
    .to_ndjson()
}

#[tokio::test]
async fn chat_and_http_record_the_same_turns() {
    let dir = tempfile::tempdir().unwrap();
    let messages = session_turns();

    let mut cmd = genonet(&dir.path().join("cli"), "session");
    cmd.args(["chat", "--session-id", "parity", "--json"]);
    let out = run_with_stdin(cmd, &(messages.join("\n") + "\n"));
    let cli: Vec<Turn> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cli.len(), messages.len());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("session parity"));
    assert!(stderr.contains("routed"));

    let orch = orchestrator(&dir.path().join("http"), None);
    orch.create_session_with_id("parity", &Default::default()).unwrap();
    let state = AppState::new(orch.clone());
    let mut http = Vec::new();
    for m in &messages {
        let req = Request::post("/sessions/parity/messages")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(json!({ "message": m }).to_string()))
            .unwrap();
        let resp = router(state.clone()).oneshot(req).await.unwrap();
        let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let turn = parse_sse(std::str::from_utf8(&body).unwrap())
            .into_iter()
            .find(|e| e.event == "turn")
            .unwrap();
        http.push(serde_json::from_str(&turn.data).unwrap());
    }

    assert_eq!(turns_ndjson(&cli), turns_ndjson(&http));
    assert_eq!(turns_ndjson(&http), orch.transcript("parity").unwrap().to_ndjson());
}

#[test]
fn chat_prints_plain_replies() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = genonet(dir.path(), "session");
    cmd.arg("chat");
    let out = run_with_stdin(cmd, &(session_turns()[0].clone() + "\n"));
    assert!(stdout(&out).contains("numerology"));
}

#[test]
fn interpret_flowmon_prints_one_row_per_flow() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixtures().join("flowmon/cttc-nr-demo.xml");
    let out = genonet(dir.path(), "session")
        .args(["interpret", "flowmon", file.to_str().unwrap(), "--json"])
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["flows"].as_array().unwrap().len(), 2);
}

#[test]
fn interpret_log_reports_the_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixtures().join("logs/second-echo.log");
    let out = genonet(dir.path(), "session")
        .args(["interpret", "log", file.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(stdout(&out).contains("0.02161 s"));
}

#[test]
fn run_repairs_a_broken_script() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("echo-pair.cc");
    std::fs::copy(fixtures().join("scripts/echo-broken.cc"), &script).unwrap();
    let out = genonet(&dir.path().join("sandbox"), "debug-fix")
        .args(["run", script.to_str().unwrap(), "--backend", "stub", "--max-attempts", "3", "--json"])
        .output()
        .unwrap();
    let outcome: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(outcome["resolved"], true);
    assert_eq!(outcome["attempts"].as_array().unwrap().len(), 2);
}

#[test]
fn run_exits_nonzero_when_attempts_run_out() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("echo-pair.cc");
    std::fs::copy(fixtures().join("scripts/typo-v1.cc"), &script).unwrap();
    let out = genonet(&dir.path().join("sandbox"), "debug-exhaust")
        .args(["run", script.to_str().unwrap(), "--max-attempts", "3"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("attempt 3"));
}

#[test]
fn run_named_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = genonet(dir.path(), "session").args(["run", "second.py"]).output().unwrap();
    assert!(stdout(&out).contains("server received 1024 bytes"));
}

#[test]
fn generate_writes_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("xr.cc");
    let out = genonet(dir.path(), "session")
        .args(["generate", "--prompt", &session_turns()[1], "--dialect", "cpp", "--out"])
        .arg(&target)
        .output()
        .unwrap();
    stdout(&out);
    let source = std::fs::read_to_string(&target).unwrap();
    assert!(source.contains("28e9") || source.contains("28000000000"), "{source}");
    assert!(!String::from_utf8_lossy(&out.stderr).contains("structure check failed"));
}

#[test]
fn ingest_then_search() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("index.json");
    let out = genonet(dir.path(), "session")
        .args(["ingest", fixtures().join("corpus").to_str().unwrap(), "--index", index.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(stdout(&out).starts_with("20 documents"));
    let out = genonet(dir.path(), "session")
        .args(["search", "subcarrier spacing numerology", "-k", "3", "--index", index.to_str().unwrap()])
        .output()
        .unwrap();
    let text = stdout(&out);
    let ids: Vec<&str> = text.lines().filter(|l| !l.starts_with('\t')).collect();
    assert_eq!(ids.len(), 3);
    assert!(ids[0].contains("numerology@"), "{text}");
}

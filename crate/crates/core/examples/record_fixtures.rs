//! Regenerates the offline fixture tree: stub execution bundles under
//! `fixtures/stub/` and the replay cassettes under `fixtures/cassettes/`.
//!
//! Model responses come from a scripted transport, so the recording is
//! reproducible. Run with `cargo run -p genonet-core --example record_fixtures`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use genonet_core::config::ServiceConfig;
use genonet_core::digest::Digest;
use genonet_core::llm::{
    contract, Cassette, GatewayOptions, LlmGateway, LlmRequest, ProviderMode, RecordedResponse, ScriptedTransport,
    TransportFailure,
};
use genonet_core::orchestrator::SessionOverrides;
use genonet_core::sandbox::{debug_loop, ExecTarget, Fixture, Limits, Sandbox, SandboxPermits, StubExecutor};
use genonet_core::codegen::Dialect;

const XR_SPEC_JSON: &str = r#"{"frequency":"28 GHz","bandwidth":"200 MHz","cc_count":1,"ue_count":100,"channel_model":"UMi","traffic_profile":"XR","transport":"TCP","beamforming":"SCANNING","helper_stack":"NR_5GLENA"}"#;

const NUMEROLOGY_ANSWER: &str = "In 5G NR the numerology \u{3bc} selects the subcarrier spacing as \
15 \u{d7} 2^\u{3bc} kHz, so \u{3bc} = 0 gives 15 kHz and \u{3bc} = 3 gives 120 kHz. A higher numerology \
shortens the OFDM symbol and the slot, which lowers latency and tolerates the larger phase noise of \
millimeter-wave carriers. In 5G-LENA it is set per bandwidth part through the PHY attribute \
\"Numerology\"; FR2 deployments such as 28 GHz typically use \u{3bc} = 3.";

const ECHO_BROKEN_STDERR: &str = "../scratch/echo-pair.cc: In function 'int main(int, char**)':\n\
../scratch/echo-pair.cc:44:20: error: expected ';' before 'Simulator'\n   \
44 |     Simulator::Run()\n      |                    ^\n      |                    ;\n";

struct Scripts {
    broken: String,
    fixed: String,
    typos: [String; 3],
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn typo_stderr(name: &str) -> String {
    format!(
        "../scratch/echo-pair.cc: In function 'int main(int, char**)':\n\
         ../scratch/echo-pair.cc:31:5: error: '{name}' was not declared in this scope\n   \
         31 |     {name} server(9);\n      |     ^~~~~~~~~~~~~~~~~~\n"
    )
}

fn src_key(source: &str) -> String {
    format!("src-{}", Digest::of_bytes(source.as_bytes()).to_hex())
}

fn responder(scripts: Arc<Scripts>) -> impl Fn(&LlmRequest) -> Result<RecordedResponse, TransportFailure> {
    move |req| {
        let user = req.messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        let text = match req.contract.as_deref() {
            Some(contract::SCENARIO_SPEC_V1) => XR_SPEC_JSON.to_string(),
            Some(contract::ROUTE_V1) => r#"{"route":"GeneralQuery","confidence":0.6,"rationale":"question"}"#.into(),
            Some(other) => return Err(TransportFailure::fatal(format!("no scripted reply for contract {other}"))),
            None if user.contains("Script:\n") => {
                // Repair requests: the broken echo script is fixed, the typo
                // chain only ever swaps one wrong class name for another.
                if user.contains(&scripts.broken) {
                    scripts.fixed.clone()
                } else if user.contains(&scripts.typos[0]) {
                    scripts.typos[1].clone()
                } else if user.contains(&scripts.typos[1]) {
                    scripts.typos[2].clone()
                } else {
                    return Err(TransportFailure::fatal("unexpected repair request"));
                }
            }
            None => NUMEROLOGY_ANSWER.to_string(),
        };
        Ok(RecordedResponse::stop(text))
    }
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stub_dir = root.join("stub");
    let cassettes = root.join("cassettes");
    for dir in [&stub_dir, &cassettes] {
        if dir.exists() {
            fs::remove_dir_all(dir).expect("clear old fixtures");
        }
        fs::create_dir_all(dir).expect("create fixture dir");
    }

    let scripts = Arc::new(Scripts {
        broken: read(&root.join("scripts/echo-broken.cc")),
        fixed: read(&root.join("scripts/echo-fixed.cc")),
        typos: ["typo-v1.cc", "typo-v2.cc", "typo-v3.cc"].map(|f| read(&root.join("scripts").join(f))),
    });
    let echo_log = read(&root.join("logs/second-echo.log"));

    let save = |key: &str, fixture: Fixture| fixture.save(&stub_dir.join(key)).expect("save fixture");
    save(
        "cttc-nr-demo",
        Fixture::success("").with_artifact("flowmon", "flowmon.xml", fs::read(root.join("flowmon/cttc-nr-demo.xml")).unwrap()),
    );
    save("second.py", Fixture::success(echo_log.clone()));
    save(&src_key(&scripts.broken), Fixture::build_failure(ECHO_BROKEN_STDERR));
    save(&src_key(&scripts.fixed), Fixture::success(echo_log));
    for (source, name) in scripts.typos.iter().zip(["UdpEchoServerHelpr", "UdpEchoServerHelperV2", "EchoServerHelper"]) {
        save(&src_key(source), Fixture::build_failure(typo_stderr(name)));
    }

    let transport = Arc::new(ScriptedTransport::new(responder(scripts.clone())));

    // The scripted four-turn session.
    let session: serde_json::Value = serde_json::from_str(&read(&root.join("session.json"))).unwrap();
    let mut config = ServiceConfig::fixtures(&root, "session");
    config.provider_mode = ProviderMode::Record;
    config.sandbox_dir = tempfile::tempdir().unwrap().keep();
    let orch = config.build_with(Some(transport.clone())).expect("build orchestrator");
    let id = session["session_id"].as_str().unwrap();
    orch.create_session_with_id(id, &SessionOverrides::default()).unwrap();
    for message in session["turns"].as_array().unwrap() {
        let turn = orch
            .handle_turn(id, message.as_str().unwrap(), &[], &mut |_| {})
            .unwrap_or_else(|e| panic!("turn {message}: {e}"));
        if let Some(artifact) = turn.artifacts.first() {
            save(
                &artifact.spec_digest.to_hex(),
                Fixture::success("").with_artifact("flowmon", "flowmon.xml", fs::read(root.join("flowmon/xr-umi-tcp.xml")).unwrap()),
            );
        }
        println!("turn {}: {:?}", turn.ordinal, turn.route.map(|r| r.route));
    }

    // Debug-loop cassettes, recorded against the stub bundles written above.
    let sandbox = Sandbox::new(
        Arc::new(StubExecutor::new(Some(stub_dir.clone()))),
        Limits::default(),
        std::env::temp_dir().join("genonet-record"),
        SandboxPermits::new(1),
        config.clock(),
    );
    for (name, source) in [("debug-fix", &scripts.broken), ("debug-exhaust", &scripts.typos[0])] {
        let path = cassettes.join(format!("{name}.ndjson"));
        let gateway = LlmGateway::record(
            transport.clone(),
            Cassette::new(),
            GatewayOptions {
                cassette_path: Some(path),
                ..GatewayOptions::default()
            },
        );
        let target = ExecTarget::Script {
            name: "echo-pair.cc".into(),
            dialect: Dialect::Cpp,
            source: source.clone(),
        };
        let out = debug_loop(&sandbox, &gateway, target, 3);
        println!("{name}: resolved={} attempts={}", out.resolved, out.attempts.len());
    }
}

//! Sandboxed execution of generated or upstream ns-3 scripts, and the
//! error-driven repair loop.

pub mod ns3;
pub mod process;
pub mod stub;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::codegen::{lint_structure, strip_code_fence, Dialect, GeneratedArtifact};
use crate::digest::Digest;
use crate::llm::{LlmGateway, LlmRequest};

pub use ns3::Ns3Executor;
pub use stub::{fixture_keys, Fixture, FixtureArtifact, FixtureReport, StubExecutor};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_MAX_SANDBOXES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Ns3,
    Stub,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ns3 => "ns3",
            Backend::Stub => "stub",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ns3" | "ns-3" => Ok(Backend::Ns3),
            "stub" => Ok(Backend::Stub),
            other => Err(format!("unknown backend {other:?} (expected ns3 or stub)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Configure,
    Build,
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(with = "secs")]
    pub build_timeout: Duration,
    #[serde(with = "secs")]
    pub run_timeout: Duration,
    pub memory_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            build_timeout: Duration::from_secs(300),
            run_timeout: Duration::from_secs(600),
            memory_bytes: 4 << 30,
        }
    }
}

impl Limits {
    /// Same timeout for both phases.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.build_timeout = timeout;
        self.run_timeout = timeout;
        self
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// What to execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecTarget {
    Artifact(Box<GeneratedArtifact>),
    /// A script supplied directly (not generated from a spec).
    Script {
        name: String,
        dialect: Dialect,
        source: String,
    },
    /// An upstream example by reference, e.g. `second.py`.
    Example(String),
}

impl ExecTarget {
    pub fn artifact(a: GeneratedArtifact) -> Self {
        ExecTarget::Artifact(Box::new(a))
    }

    pub fn source(&self) -> Option<(&str, Dialect)> {
        match self {
            ExecTarget::Artifact(a) => Some((&a.source, a.dialect)),
            ExecTarget::Script { source, dialect, .. } => Some((source, *dialect)),
            ExecTarget::Example(_) => None,
        }
    }

    /// Short human-readable identity.
    pub fn label(&self) -> String {
        match self {
            ExecTarget::Artifact(a) => a.file_name(),
            ExecTarget::Script { name, .. } => name.clone(),
            ExecTarget::Example(name) => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducedArtifact {
    /// Logical name, e.g. `flowmon`.
    pub name: String,
    pub file: String,
    pub digest: Digest,
    pub size: u64,
    /// Location on disk; not persisted, since working directories are ephemeral.
    #[serde(skip)]
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    /// 1-based attempt ordinal.
    pub attempt: u32,
    pub backend: Backend,
    pub target: String,
    pub phase: Phase,
    /// `None` when the process was killed by a signal or timed out.
    pub exit_status: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_s: f64,
    pub peak_memory_bytes: u64,
    pub artifacts: Vec<ProducedArtifact>,
    pub started_at_ms: u64,
    /// The attempt's working directory; not persisted.
    #[serde(skip)]
    pub workdir: PathBuf,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.exit_status == Some(0) && self.phase == Phase::Run
    }

    pub fn artifact(&self, name: &str) -> Option<&ProducedArtifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SandboxError {
    #[error("{} phase timed out after {:.1} s", .0.phase_name(), .0.wall_time_s)]
    Timeout(Box<ExecutionReport>),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no stub fixture registered for {0}")]
    FixtureMissing(String),
    #[error("build failed:\n{}", .0.stderr)]
    BuildFailed(Box<ExecutionReport>),
    #[error("sandbox i/o: {0}")]
    Io(String),
}

impl ExecutionReport {
    fn phase_name(&self) -> &'static str {
        match self.phase {
            Phase::Configure => "configure",
            Phase::Build => "build",
            Phase::Run => "run",
        }
    }
}

impl SandboxError {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            SandboxError::Timeout(_) => "Timeout",
            SandboxError::BackendUnavailable(_) => "BackendUnavailable",
            SandboxError::FixtureMissing(_) => "FixtureMissing",
            SandboxError::BuildFailed(_) => "BuildFailed",
            SandboxError::Io(_) => "SandboxIo",
        }
    }

    /// The partial or failed report carried by this error, if any.
    pub fn report(&self) -> Option<&ExecutionReport> {
        match self {
            SandboxError::Timeout(r) | SandboxError::BuildFailed(r) => Some(r),
            _ => None,
        }
    }

    fn report_mut(&mut self) -> Option<&mut ExecutionReport> {
        match self {
            SandboxError::Timeout(r) | SandboxError::BuildFailed(r) => Some(r),
            _ => None,
        }
    }
}

pub trait Executor: Send + Sync {
    fn backend(&self) -> Backend;

    /// Runs `target` inside `workdir`, which the caller created and owns.
    fn execute(&self, target: &ExecTarget, limits: &Limits, workdir: &Path) -> Result<ExecutionReport, SandboxError>;
}

/// Counting semaphore bounding concurrent sandboxes service-wide.
#[derive(Debug)]
pub struct SandboxPermits {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl SandboxPermits {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(Self {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    /// Reads `GENONET_MAX_SANDBOXES` (default 2).
    pub fn from_env() -> Arc<Self> {
        let max = std::env::var("GENONET_MAX_SANDBOXES")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_MAX_SANDBOXES);
        Self::new(max)
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().unwrap()
    }

    pub fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.in_use.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(Arc::clone(self))
    }
}

pub struct Permit(Arc<SandboxPermits>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.in_use.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// An executor plus the policy around it: limits, working directories and
/// the concurrency bound.
pub struct Sandbox {
    executor: Arc<dyn Executor>,
    limits: Limits,
    work_root: PathBuf,
    permits: Arc<SandboxPermits>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sandbox")
            .field("backend", &self.executor.backend())
            .field("limits", &self.limits)
            .field("work_root", &self.work_root)
            .finish()
    }
}

/// `GENONET_SANDBOX_DIR`, else a directory under the system temp dir.
pub fn default_work_root() -> PathBuf {
    std::env::var_os("GENONET_SANDBOX_DIR")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("genonet-sandbox"))
}

impl Sandbox {
    pub fn new(
        executor: Arc<dyn Executor>,
        limits: Limits,
        work_root: PathBuf,
        permits: Arc<SandboxPermits>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            executor,
            limits,
            work_root,
            permits,
            clock,
        }
    }

    pub fn backend(&self) -> Backend {
        self.executor.backend()
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    /// One execution in a fresh working directory, tagged with `attempt`.
    pub fn execute(&self, target: &ExecTarget, attempt: u32) -> Result<ExecutionReport, SandboxError> {
        let _permit = self.permits.acquire();
        std::fs::create_dir_all(&self.work_root)
            .map_err(|e| SandboxError::Io(format!("{}: {e}", self.work_root.display())))?;
        let workdir = tempfile::Builder::new()
            .prefix(&format!("attempt{attempt}-"))
            .tempdir_in(&self.work_root)
            .map_err(|e| SandboxError::Io(format!("creating working directory: {e}")))?
            .keep();
        let started_at_ms = self.clock.now_ms();
        let stamp = |r: &mut ExecutionReport| {
            r.attempt = attempt;
            r.started_at_ms = started_at_ms;
            r.workdir = workdir.clone();
        };
        match self.executor.execute(target, &self.limits, &workdir) {
            Ok(mut r) => {
                stamp(&mut r);
                Ok(r)
            }
            Err(mut e) => {
                if let Some(r) = e.report_mut() {
                    stamp(r);
                }
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Succeeded,
    Exhausted,
    /// The repaired script failed a structure check the previous one passed.
    LintRegression { checks: Vec<String> },
    Timeout,
    /// The backend or gateway could not continue (missing fixture, cassette miss, ...).
    Error { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugOutcome {
    pub final_target: ExecTarget,
    /// Every script version tried, in order (the first is the input).
    pub versions: Vec<ExecTarget>,
    pub attempts: Vec<ExecutionReport>,
    /// The repair prompts sent, in order.
    pub repair_prompts: Vec<String>,
    pub resolved: bool,
    pub stop: StopReason,
}

const REPAIR_SYSTEM_PROMPT: &str = "\
You fix ns-3 simulation scripts. Reply with the complete corrected script
only, keeping every `@genonet:begin`/`@genonet:end` marker line unchanged.";

/// The repair request for a failed attempt; the user message carries the
/// current source and the failing phase's full stderr.
pub fn repair_request(source: &str, dialect: Dialect, report: &ExecutionReport) -> LlmRequest {
    let user = format!(
        "This {dialect} ns-3 script failed in the {} phase (exit status {}).\n\n\
         Script:\n{source}\n\nError output:\n{}\n\nReturn the corrected full script.",
        report.phase_name(),
        report.exit_status.map_or("none".to_string(), |c| c.to_string()),
        report.stderr,
    );
    LlmRequest::new(REPAIR_SYSTEM_PROMPT, user).with_max_tokens(4096)
}

/// Executes `target`, feeding failures back to the model for a corrected
/// script, up to `max_attempts` executions.
///
/// Never fails: the outcome records why the loop stopped.
pub fn debug_loop(sandbox: &Sandbox, gateway: &LlmGateway, target: ExecTarget, max_attempts: u32) -> DebugOutcome {
    let max_attempts = max_attempts.max(1);
    let mut current = target;
    let mut out = DebugOutcome {
        final_target: current.clone(),
        versions: vec![current.clone()],
        attempts: Vec::new(),
        repair_prompts: Vec::new(),
        resolved: false,
        stop: StopReason::Exhausted,
    };
    for attempt in 1..=max_attempts {
        let failed = match sandbox.execute(&current, attempt) {
            Ok(r) if r.succeeded() => {
                out.attempts.push(r);
                out.resolved = true;
                out.stop = StopReason::Succeeded;
                break;
            }
            Ok(r) => r,
            Err(SandboxError::BuildFailed(r)) => *r,
            Err(SandboxError::Timeout(r)) => {
                out.attempts.push(*r);
                out.stop = StopReason::Timeout;
                break;
            }
            Err(e) => {
                out.stop = StopReason::Error {
                    code: e.code().into(),
                    message: e.to_string(),
                };
                break;
            }
        };
        out.attempts.push(failed.clone());
        if attempt == max_attempts {
            out.stop = StopReason::Exhausted;
            break;
        }
        let Some((source, dialect)) = current.source() else {
            out.stop = StopReason::Error {
                code: "NotRepairable".into(),
                message: "upstream examples cannot be repaired".into(),
            };
            break;
        };
        let req = repair_request(source, dialect, &failed);
        out.repair_prompts.push(req.messages.last().map(|m| m.content.clone()).unwrap_or_default());
        let repaired = match gateway.complete(&req) {
            Ok(resp) => strip_code_fence(&resp.text).to_string(),
            Err(e) => {
                out.stop = StopReason::Error {
                    code: e.code().into(),
                    message: e.to_string(),
                };
                break;
            }
        };
        current = match &current {
            ExecTarget::Artifact(a) => {
                let before = lint_structure(a);
                let next = match a.with_source(repaired) {
                    Ok(n) => n,
                    Err(e) => {
                        out.stop = StopReason::LintRegression {
                            checks: vec![format!("markers: {e}")],
                        };
                        break;
                    }
                };
                let after = lint_structure(&next);
                let regressed: Vec<String> = before
                    .checks
                    .iter()
                    .zip(&after.checks)
                    .filter(|(b, a)| b.passed && !a.passed)
                    .map(|(b, _)| b.check.as_str().to_string())
                    .collect();
                if !regressed.is_empty() {
                    out.versions.push(ExecTarget::artifact(next));
                    out.stop = StopReason::LintRegression { checks: regressed };
                    break;
                }
                ExecTarget::artifact(next)
            }
            ExecTarget::Script { name, dialect, .. } => ExecTarget::Script {
                name: name.clone(),
                dialect: *dialect,
                source: repaired,
            },
            ExecTarget::Example(_) => unreachable!("examples have no source"),
        };
        out.versions.push(current.clone());
    }
    out.final_target = current;
    out
}

//! Fixture-backed executor: returns canned reports keyed by source digest,
//! spec digest, or example reference.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{Backend, ExecTarget, ExecutionReport, Executor, Limits, Phase, ProducedArtifact, SandboxError};
use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureArtifact {
    /// Logical name, e.g. `flowmon`.
    pub name: String,
    /// File inside the fixture directory.
    pub file: String,
}

/// Contents of a fixture's `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub phase: Phase,
    pub exit_status: i32,
    #[serde(default)]
    pub wall_time_s: f64,
    #[serde(default)]
    pub peak_memory_bytes: u64,
    #[serde(default)]
    pub artifacts: Vec<FixtureArtifact>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub report: FixtureReport,
    pub stdout: String,
    pub stderr: String,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Fixture {
    /// A successful run with the given stdout.
    pub fn success(stdout: impl Into<String>) -> Self {
        Self {
            report: FixtureReport {
                phase: Phase::Run,
                exit_status: 0,
                wall_time_s: 1.0,
                peak_memory_bytes: 64 << 20,
                artifacts: Vec::new(),
            },
            stdout: stdout.into(),
            stderr: String::new(),
            files: BTreeMap::new(),
        }
    }

    /// A failed build with the given compiler output.
    pub fn build_failure(stderr: impl Into<String>) -> Self {
        Self {
            report: FixtureReport {
                phase: Phase::Build,
                exit_status: 1,
                wall_time_s: 1.0,
                peak_memory_bytes: 64 << 20,
                artifacts: Vec::new(),
            },
            stdout: String::new(),
            stderr: stderr.into(),
            files: BTreeMap::new(),
        }
    }

    pub fn with_artifact(mut self, name: &str, file: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.report.artifacts.push(FixtureArtifact {
            name: name.to_string(),
            file: file.to_string(),
        });
        self.files.insert(file.to_string(), bytes.into());
        self
    }

    pub fn load(dir: &Path) -> Result<Self, SandboxError> {
        let io = |e: std::io::Error| SandboxError::Io(format!("{}: {e}", dir.display()));
        let report: FixtureReport = serde_json::from_slice(&fs::read(dir.join("report.json")).map_err(io)?)
            .map_err(|e| SandboxError::Io(format!("{}/report.json: {e}", dir.display())))?;
        let read_text = |name: &str| -> Result<String, SandboxError> {
            match fs::read_to_string(dir.join(name)) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
                Err(e) => Err(io(e)),
            }
        };
        let mut files = BTreeMap::new();
        for a in &report.artifacts {
            files.insert(a.file.clone(), fs::read(dir.join(&a.file)).map_err(io)?);
        }
        Ok(Self {
            stdout: read_text("stdout.txt")?,
            stderr: read_text("stderr.txt")?,
            report,
            files,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), SandboxError> {
        let io = |e: std::io::Error| SandboxError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut json = serde_json::to_string_pretty(&self.report).expect("fixture report serializes");
        json.push('\n');
        fs::write(dir.join("report.json"), json).map_err(io)?;
        fs::write(dir.join("stdout.txt"), &self.stdout).map_err(io)?;
        fs::write(dir.join("stderr.txt"), &self.stderr).map_err(io)?;
        for (file, bytes) in &self.files {
            fs::write(dir.join(file), bytes).map_err(io)?;
        }
        Ok(())
    }
}

/// Fixture keys tried for `target`, most specific first.
pub fn fixture_keys(target: &ExecTarget) -> Vec<String> {
    match target {
        ExecTarget::Artifact(a) => vec![
            format!("src-{}", a.source_digest().to_hex()),
            a.spec_digest.to_hex(),
        ],
        ExecTarget::Script { source, .. } => {
            vec![format!("src-{}", Digest::of_bytes(source.as_bytes()).to_hex())]
        }
        ExecTarget::Example(name) => vec![name.clone()],
    }
}

/// Executes by looking up a registered fixture.
#[derive(Debug, Default)]
pub struct StubExecutor {
    root: Option<PathBuf>,
    registered: RwLock<HashMap<String, Fixture>>,
}

impl StubExecutor {
    /// Fixtures are read from `root/<key>/` in addition to any registered in memory.
    pub fn new(root: Option<PathBuf>) -> Self {
        Self {
            root,
            registered: RwLock::new(HashMap::new()),
        }
    }

    pub fn register(&self, key: impl Into<String>, fixture: Fixture) {
        self.registered.write().unwrap().insert(key.into(), fixture);
    }

    fn lookup(&self, key: &str) -> Result<Option<Fixture>, SandboxError> {
        if let Some(f) = self.registered.read().unwrap().get(key) {
            return Ok(Some(f.clone()));
        }
        if let Some(root) = &self.root {
            // Keys are hex digests or example names; refuse anything path-like.
            if key.contains('/') || key.contains("..") {
                return Ok(None);
            }
            let dir = root.join(key);
            if dir.join("report.json").is_file() {
                return Fixture::load(&dir).map(Some);
            }
        }
        Ok(None)
    }
}

impl Executor for StubExecutor {
    fn backend(&self) -> Backend {
        Backend::Stub
    }

    fn execute(
        &self,
        target: &ExecTarget,
        _limits: &Limits,
        workdir: &Path,
    ) -> Result<ExecutionReport, SandboxError> {
        let keys = fixture_keys(target);
        let mut found = None;
        for key in &keys {
            if let Some(f) = self.lookup(key)? {
                found = Some((key.clone(), f));
                break;
            }
        }
        let (key, fixture) = found.ok_or_else(|| SandboxError::FixtureMissing(keys.last().cloned().unwrap_or_default()))?;
        let mut artifacts = Vec::new();
        for a in &fixture.report.artifacts {
            let bytes = &fixture.files[&a.file];
            let path = workdir.join(&a.file);
            fs::write(&path, bytes).map_err(|e| SandboxError::Io(format!("{}: {e}", path.display())))?;
            artifacts.push(ProducedArtifact {
                name: a.name.clone(),
                file: a.file.clone(),
                digest: Digest::of_bytes(bytes),
                size: bytes.len() as u64,
                path,
            });
        }
        let report = ExecutionReport {
            attempt: 1,
            backend: Backend::Stub,
            target: key,
            phase: fixture.report.phase,
            exit_status: Some(fixture.report.exit_status),
            stdout: fixture.stdout,
            stderr: fixture.stderr,
            wall_time_s: fixture.report.wall_time_s,
            peak_memory_bytes: fixture.report.peak_memory_bytes,
            artifacts,
            started_at_ms: 0,
            workdir: PathBuf::new(),
        };
        if report.phase == Phase::Build && report.exit_status != Some(0) {
            return Err(SandboxError::BuildFailed(Box::new(report)));
        }
        Ok(report)
    }
}

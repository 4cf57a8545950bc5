//! Real-toolchain executor: stages a script into the ns-3 scratch area, then
//! drives the `ns3` front end to build and run it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use super::process::{self, ProcessOutcome};
use super::{Backend, ExecTarget, ExecutionReport, Executor, Limits, Phase, ProducedArtifact, SandboxError};
use crate::codegen::Dialect;
use crate::digest::Digest;

/// Upstream examples addressable by short reference.
pub const KNOWN_EXAMPLES: &[(&str, &str)] = &[
    ("cttc-nr-demo", "cttc-nr-demo"),
    ("second.py", "examples/tutorial/second.py"),
    ("second", "second"),
    ("first.py", "examples/tutorial/first.py"),
];

pub fn example_program(reference: &str) -> &str {
    KNOWN_EXAMPLES
        .iter()
        .find(|(k, _)| *k == reference)
        .map_or(reference, |(_, p)| *p)
}

#[derive(Debug, Clone)]
pub struct Ns3Executor {
    root: PathBuf,
}

impl Ns3Executor {
    /// Validates that `root` holds an `ns3` driver.
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, SandboxError> {
        let root = root.into();
        let driver = root.join("ns3");
        if !driver.is_file() || !root.join("scratch").is_dir() {
            return Err(SandboxError::BackendUnavailable(format!(
                "{} is not an ns-3 tree (expected ./ns3 and scratch/)",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    /// Reads `NS3_ROOT`.
    pub fn from_env() -> Result<Self, SandboxError> {
        match std::env::var_os("NS3_ROOT") {
            Some(r) if !r.is_empty() => Self::new(PathBuf::from(r)),
            _ => Err(SandboxError::BackendUnavailable("NS3_ROOT is not set".into())),
        }
    }

    fn driver(&self, args: &[&str]) -> Command {
        let mut c = Command::new(self.root.join("ns3"));
        c.args(args).current_dir(&self.root);
        c
    }

    fn invoke(&self, args: &[&str], timeout: Duration, limits: &Limits) -> Result<ProcessOutcome, SandboxError> {
        process::run(self.driver(args), timeout, Some(limits.memory_bytes))
            .map_err(|e| SandboxError::Io(format!("spawning {}/ns3: {e}", self.root.display())))
    }
}

/// Removes a staged scratch file when dropped.
struct Staged(Option<PathBuf>);

impl Drop for Staged {
    fn drop(&mut self) {
        if let Some(p) = self.0.take() {
            let _ = fs::remove_file(p);
        }
    }
}

fn report_from(
    target: &str,
    phase: Phase,
    o: &ProcessOutcome,
    artifacts: Vec<ProducedArtifact>,
) -> ExecutionReport {
    ExecutionReport {
        attempt: 1,
        backend: Backend::Ns3,
        target: target.to_string(),
        phase,
        exit_status: o.exit_code,
        stdout: o.stdout.clone(),
        stderr: o.stderr.clone(),
        wall_time_s: o.wall_time_s,
        peak_memory_bytes: o.peak_memory_bytes,
        artifacts,
        started_at_ms: 0,
        workdir: PathBuf::new(),
    }
}

fn collect_outputs(workdir: &Path) -> Result<Vec<ProducedArtifact>, SandboxError> {
    let mut names: Vec<_> = fs::read_dir(workdir)
        .map_err(|e| SandboxError::Io(format!("{}: {e}", workdir.display())))?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut out = Vec::new();
    for file in names {
        let path = workdir.join(&file);
        let bytes = fs::read(&path).map_err(|e| SandboxError::Io(format!("{}: {e}", path.display())))?;
        let name = match file.as_str() {
            "flowmon.xml" => "flowmon".to_string(),
            other => other.rsplit_once('.').map_or(other, |(stem, _)| stem).to_string(),
        };
        out.push(ProducedArtifact {
            name,
            file,
            digest: Digest::of_bytes(&bytes),
            size: bytes.len() as u64,
            path,
        });
    }
    Ok(out)
}

impl Executor for Ns3Executor {
    fn backend(&self) -> Backend {
        Backend::Ns3
    }

    fn execute(&self, target: &ExecTarget, limits: &Limits, workdir: &Path) -> Result<ExecutionReport, SandboxError> {
        let (program, dialect, _staged) = match target {
            ExecTarget::Example(name) => {
                let program = example_program(name).to_string();
                let dialect = if program.ends_with(".py") { Dialect::Python } else { Dialect::Cpp };
                (program, dialect, Staged(None))
            }
            ExecTarget::Artifact(_) | ExecTarget::Script { .. } => {
                let (source, dialect) = target.source().expect("script targets carry source");
                let stem = format!(
                    "genonet_{}",
                    Digest::of_bytes(workdir.as_os_str().as_encoded_bytes()).short(12)
                );
                let file = self.root.join("scratch").join(format!("{stem}.{}", dialect.extension()));
                fs::write(&file, source)
                    .map_err(|e| SandboxError::Io(format!("staging {}: {e}", file.display())))?;
                let program = match dialect {
                    Dialect::Cpp => format!("scratch/{stem}"),
                    Dialect::Python => format!("scratch/{stem}.py"),
                };
                (program, dialect, Staged(Some(file)))
            }
        };
        let key = target.label();

        if dialect == Dialect::Cpp {
            let build = self.invoke(&["build"], limits.build_timeout, limits)?;
            if build.timed_out {
                return Err(SandboxError::Timeout(Box::new(report_from(&key, Phase::Build, &build, Vec::new()))));
            }
            if !build.success() {
                return Err(SandboxError::BuildFailed(Box::new(report_from(&key, Phase::Build, &build, Vec::new()))));
            }
        }

        let cwd = workdir.to_string_lossy().into_owned();
        let run = self.invoke(&["run", &program, "--no-build", "--cwd", &cwd], limits.run_timeout, limits)?;
        let artifacts = collect_outputs(workdir)?;
        let report = report_from(&key, Phase::Run, &run, artifacts);
        if run.timed_out {
            return Err(SandboxError::Timeout(Box::new(report)));
        }
        Ok(report)
    }
}

//! Subprocess runner: own process group, address-space cap, wall-clock
//! timeout with a process-group kill, and full stream capture.

use std::ffi::OsString;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

/// Environment variables passed through to sandboxed processes; everything
/// else is cleared.
pub const ENV_ALLOW_LIST: &[&str] = &[
    "PATH",
    "HOME",
    "USER",
    "LANG",
    "LC_ALL",
    "TMPDIR",
    "LD_LIBRARY_PATH",
    "PYTHONPATH",
    "NS3_ROOT",
    "CC",
    "CXX",
    "CXXFLAGS",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    /// Process id, which is also the process-group id.
    pub pid: i32,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_s: f64,
    /// Peak resident set size of the direct child, in bytes.
    pub peak_memory_bytes: u64,
    pub timed_out: bool,
}

impl ProcessOutcome {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

fn allowed_env() -> Vec<(String, OsString)> {
    ENV_ALLOW_LIST
        .iter()
        .filter_map(|k| std::env::var_os(k).map(|v| (k.to_string(), v)))
        .collect()
}

fn drain<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        buf
    })
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall; ESRCH (group already gone) is expected and ignored.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

/// Pids of live (non-zombie) processes in group `pgid`, from `/proc`.
pub fn live_group_members(pgid: i32) -> Vec<i32> {
    let Ok(entries) = std::fs::read_dir("/proc") else {
        return Vec::new();
    };
    entries
        .filter_map(Result::ok)
        .filter_map(|e| e.file_name().to_str()?.parse::<i32>().ok())
        .filter(|pid| {
            let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) else {
                return false;
            };
            // Fields after the parenthesised command name: state ppid pgrp ...
            let Some((_, rest)) = stat.rsplit_once(')') else {
                return false;
            };
            let mut fields = rest.split_whitespace();
            let state = fields.next();
            let pgrp = fields.nth(1).and_then(|f| f.parse::<i32>().ok());
            pgrp == Some(pgid) && state != Some("Z") && state != Some("X")
        })
        .collect()
}

pub fn group_alive(pgid: i32) -> bool {
    !live_group_members(pgid).is_empty()
}

/// Kills the group and waits (bounded) for its members to exit.
fn sweep_group(pgid: i32) {
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        kill_group(pgid);
        if !group_alive(pgid) || Instant::now() >= deadline {
            return;
        }
        thread::sleep(Duration::from_millis(5));
    }
}

/// Runs `cmd` to completion or until `timeout`, whichever comes first.
///
/// The child leads a fresh process group whose members are all killed when
/// the call returns, so nothing it spawned outlives it.
pub fn run(mut cmd: Command, timeout: Duration, memory_cap_bytes: Option<u64>) -> io::Result<ProcessOutcome> {
    cmd.env_clear()
        .envs(allowed_env())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(cap) = memory_cap_bytes {
        let limit = libc::rlimit {
            rlim_cur: cap as libc::rlim_t,
            rlim_max: cap as libc::rlim_t,
        };
        // SAFETY: setrlimit is async-signal-safe and touches only this child.
        unsafe {
            cmd.pre_exec(move || {
                if libc::setrlimit(libc::RLIMIT_AS, &limit) != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id() as i32;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());

    let deadline = started + timeout;
    let mut status: libc::c_int = 0;
    // SAFETY: zeroed rusage is a valid initial value.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let mut timed_out = false;
    loop {
        // SAFETY: pid is our own unreaped child.
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        if r == pid {
            break;
        }
        if r < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            kill_group(pid);
            return Err(e);
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_group(pid);
            // SAFETY: as above, now blocking until the killed child is reaped.
            unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }
    // Sweep anything the child left behind in its group.
    sweep_group(pid);
    let wall_time_s = started.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
    let es = ExitStatus::from_raw(status);
    Ok(ProcessOutcome {
        pid,
        exit_code: if timed_out { None } else { es.code() },
        signal: es.signal(),
        stdout,
        stderr,
        wall_time_s,
        peak_memory_bytes: (usage.ru_maxrss.max(0) as u64) * 1024,
        timed_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut c = Command::new("/bin/sh");
        c.arg("-c").arg(script);
        c
    }

    #[test]
    fn captures_streams_and_status() {
        let o = run(sh("echo out; echo err >&2; exit 3"), Duration::from_secs(5), None).unwrap();
        assert_eq!(o.stdout, "out\n");
        assert_eq!(o.stderr, "err\n");
        assert_eq!(o.exit_code, Some(3));
        assert!(!o.timed_out);
        assert!(o.peak_memory_bytes > 0);
    }

    #[test]
    fn timeout_kills_the_whole_group() {
        let o = run(
            sh("echo partial; sleep 30 & sleep 30; echo never"),
            Duration::from_millis(300),
            None,
        )
        .unwrap();
        assert!(o.timed_out);
        assert_eq!(o.exit_code, None);
        assert_eq!(o.stdout, "partial\n");
        assert!(!group_alive(o.pid));
    }

    #[test]
    fn environment_is_filtered() {
        std::env::set_var("GENONET_PROCESS_TEST_SECRET", "leak");
        let o = run(sh("echo \"[$GENONET_PROCESS_TEST_SECRET]\""), Duration::from_secs(5), None).unwrap();
        assert_eq!(o.stdout, "[]\n");
    }

    #[test]
    fn memory_cap_applies() {
        let o = run(sh("ulimit -v"), Duration::from_secs(5), Some(512 * 1024 * 1024)).unwrap();
        assert_eq!(o.stdout.trim(), "524288");
    }
}

//! Sandboxed command execution with bounded output and a hard wall-clock timeout.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{prefix_within, suffix_within};

/// Exit code reported for commands killed on timeout or that never ran.
pub const KILLED_EXIT_CODE: i32 = -1;
pub const DEFAULT_PATH: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";
const TRUNCATION_MARKER: &str = "\n[... output truncated ...]\n";
const POLL_INTERVAL: Duration = Duration::from_millis(10);
/// How long to wait for pipe readers after the process group is gone.
const READER_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Shell,
    Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: ToolKind,
    /// Command line, or script source when `tool == Script`.
    pub payload: String,
    /// Interpreter name used for scripts, e.g. `python3`.
    pub interpreter: String,
    pub timeout_seconds: f64,
    pub working_dir: PathBuf,
    #[serde(default)]
    pub env_overrides: BTreeMap<String, String>,
}

impl ToolInvocation {
    pub fn shell(payload: impl Into<String>, working_dir: impl Into<PathBuf>, timeout_seconds: f64) -> Self {
        Self {
            tool: ToolKind::Shell,
            payload: payload.into(),
            interpreter: "python3".into(),
            timeout_seconds,
            working_dir: working_dir.into(),
            env_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub truncated: bool,
    pub duration_ms: u64,
    pub timed_out: bool,
    /// Set when the command could not be run at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResult {
    pub fn failed(err: &ExecError) -> Self {
        Self {
            exit_code: KILLED_EXIT_CODE,
            stderr: err.to_string(),
            error: Some(err.to_string()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("failed to spawn: {0}")]
    SpawnError(String),
    #[error("invalid invocation: {0}")]
    InvalidInvocation(String),
}

/// Something that can run a tool invocation: a real subprocess or the simulator.
pub trait ExecutionBackend: Send {
    fn name(&self) -> &str;
    fn execute(&mut self, inv: &ToolInvocation) -> Result<ToolResult, ExecError>;
}

/// Bounded capture of one stream: the first `cap` bytes and the last `cap` bytes.
#[derive(Debug, Default)]
pub struct Capture {
    head: Vec<u8>,
    tail: VecDeque<u8>,
    total: usize,
    cap: usize,
}

impl Capture {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            ..Self::default()
        }
    }

    pub fn from_bytes(bytes: &[u8], cap: usize) -> Self {
        let mut c = Self::new(cap);
        c.push(bytes);
        c
    }

    pub fn push(&mut self, mut bytes: &[u8]) {
        self.total += bytes.len();
        if self.head.len() < self.cap {
            let take = (self.cap - self.head.len()).min(bytes.len());
            self.head.extend_from_slice(&bytes[..take]);
            bytes = &bytes[take..];
        }
        if bytes.len() >= self.cap {
            self.tail.clear();
            self.tail.extend(&bytes[bytes.len() - self.cap..]);
        } else {
            let overflow = (self.tail.len() + bytes.len()).saturating_sub(self.cap);
            self.tail.drain(..overflow);
            self.tail.extend(bytes);
        }
    }

    /// Captured text; `gap` is true when bytes between head and tail were dropped.
    fn text(&self) -> (String, String, bool) {
        let head = String::from_utf8_lossy(&self.head).into_owned();
        let tail_bytes: Vec<u8> = self.tail.iter().copied().collect();
        let gap = self.total > self.head.len() + self.tail.len();
        (head, String::from_utf8_lossy(&tail_bytes).into_owned(), gap)
    }
}

/// Fits `head + tail` into `budget` bytes, keeping 75% head and 25% tail around a marker.
fn fit(head: &str, tail: &str, gap: bool, budget: usize) -> (String, bool) {
    if !gap && head.len() + tail.len() <= budget {
        return (format!("{head}{tail}"), false);
    }
    if budget < TRUNCATION_MARKER.len() {
        return (prefix_within(head, budget).to_string(), true);
    }
    let avail = budget - TRUNCATION_MARKER.len();
    let head_keep = avail * 3 / 4;
    let tail_keep = avail - head_keep;
    let joined;
    let (h, t) = if gap {
        (head, tail)
    } else {
        joined = format!("{head}{tail}");
        (joined.as_str(), joined.as_str())
    };
    let h = prefix_within(h, head_keep);
    let t = suffix_within(t, tail_keep);
    (format!("{h}{TRUNCATION_MARKER}{t}"), true)
}

/// Applies the combined output bound to both streams.
pub fn bound_output(stdout: &Capture, stderr: &Capture, max_bytes: usize) -> (String, String, bool) {
    let (oh, ot, ogap) = stdout.text();
    let (eh, et, egap) = stderr.text();
    let out_len = oh.len() + ot.len();
    let err_len = eh.len() + et.len();
    if !ogap && !egap && out_len + err_len <= max_bytes {
        return (format!("{oh}{ot}"), format!("{eh}{et}"), false);
    }
    let half = max_bytes / 2;
    let (out_budget, err_budget) = if !egap && err_len <= half {
        (max_bytes - err_len, err_len)
    } else if !ogap && out_len <= half {
        (out_len, max_bytes - out_len)
    } else {
        (max_bytes - half, half)
    };
    let (out, t1) = fit(&oh, &ot, ogap, out_budget);
    let (err, t2) = fit(&eh, &et, egap, err_budget);
    (out, err, t1 || t2)
}

/// Bounds plain strings, used by backends that produce output in memory.
pub fn bound_text(stdout: &str, stderr: &str, max_bytes: usize) -> (String, String, bool) {
    bound_output(
        &Capture::from_bytes(stdout.as_bytes(), max_bytes),
        &Capture::from_bytes(stderr.as_bytes(), max_bytes),
        max_bytes,
    )
}

/// Runs commands as real child processes confined to a working directory.
///
/// The child gets a cleared environment (only `PATH`, `HOME` and explicit overrides)
/// and its own process group, which is killed with SIGKILL on timeout.
#[derive(Debug, Clone)]
pub struct SubprocessBackend {
    pub max_output_bytes: usize,
    pub shell: String,
}

impl SubprocessBackend {
    pub fn new(max_output_bytes: usize) -> Self {
        Self {
            max_output_bytes,
            shell: "/bin/sh".into(),
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut pipe: R, capture: Arc<Mutex<Capture>>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => capture.lock().expect("capture lock").push(&buf[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
    })
}

fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: kill(2) with a negative pid signals the process group we created.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn join_with_grace(handles: Vec<thread::JoinHandle<()>>, grace: Duration) {
    let deadline = Instant::now() + grace;
    for h in handles {
        while !h.is_finished() && Instant::now() < deadline {
            thread::sleep(POLL_INTERVAL);
        }
        if h.is_finished() {
            let _ = h.join();
        }
    }
}

struct ScriptFile(PathBuf);

impl Drop for ScriptFile {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

impl SubprocessBackend {
    fn command(&self, inv: &ToolInvocation) -> Result<(Command, Option<ScriptFile>), ExecError> {
        match inv.tool {
            ToolKind::Shell => {
                let mut cmd = Command::new(&self.shell);
                cmd.arg("-c").arg(&inv.payload);
                Ok((cmd, None))
            }
            ToolKind::Script => {
                if inv.interpreter.trim().is_empty() {
                    return Err(ExecError::InvalidInvocation("script tool needs an interpreter".into()));
                }
                let path = inv
                    .working_dir
                    .join(format!(".breachseek-script-{}", uuid::Uuid::new_v4().simple()));
                std::fs::write(&path, &inv.payload)
                    .map_err(|e| ExecError::SandboxUnavailable(format!("cannot write script: {e}")))?;
                let mut cmd = Command::new(&inv.interpreter);
                cmd.arg(&path);
                Ok((cmd, Some(ScriptFile(path))))
            }
        }
    }
}

fn check_working_dir(dir: &Path) -> Result<(), ExecError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(ExecError::SandboxUnavailable(format!(
            "working directory {} does not exist",
            dir.display()
        )))
    }
}

impl ExecutionBackend for SubprocessBackend {
    fn name(&self) -> &str {
        "subprocess"
    }

    fn execute(&mut self, inv: &ToolInvocation) -> Result<ToolResult, ExecError> {
        if inv.payload.trim().is_empty() {
            return Err(ExecError::InvalidInvocation("empty payload".into()));
        }
        if !inv.timeout_seconds.is_finite() || inv.timeout_seconds <= 0.0 {
            return Err(ExecError::InvalidInvocation("timeout must be positive".into()));
        }
        check_working_dir(&inv.working_dir)?;
        let (mut cmd, _script) = self.command(inv)?;
        cmd.current_dir(&inv.working_dir)
            .env_clear()
            .env("PATH", DEFAULT_PATH)
            .env("HOME", &inv.working_dir)
            .envs(&inv.env_overrides)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| ExecError::SpawnError(e.to_string()))?;
        let out = Arc::new(Mutex::new(Capture::new(self.max_output_bytes)));
        let err = Arc::new(Mutex::new(Capture::new(self.max_output_bytes)));
        let readers = vec![
            spawn_reader(child.stdout.take().expect("piped stdout"), out.clone()),
            spawn_reader(child.stderr.take().expect("piped stderr"), err.clone()),
        ];

        let deadline = start + Duration::from_secs_f64(inv.timeout_seconds);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    timed_out = true;
                    kill_group(&child);
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(POLL_INTERVAL),
                Err(e) => {
                    kill_group(&child);
                    let _ = child.wait();
                    return Err(ExecError::SpawnError(e.to_string()));
                }
            }
        };
        // stragglers that inherited the pipes
        kill_group(&child);
        join_with_grace(readers, READER_GRACE);
        let duration_ms = start.elapsed().as_millis() as u64;

        let exit_code = match status {
            None => KILLED_EXIT_CODE,
            Some(s) => s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0)),
        };
        let (stdout, stderr, truncated) = bound_output(
            &out.lock().expect("capture lock"),
            &err.lock().expect("capture lock"),
            self.max_output_bytes,
        );
        Ok(ToolResult {
            exit_code,
            stdout,
            stderr,
            truncated,
            duration_ms,
            timed_out,
            error: None,
        })
    }
}

//! Isolated shell sessions for agent command execution.
//!
//! Isolation is per-run working directory plus a separate process group
//! per command, not containers: agent commands are untrusted, so operators
//! MUST run the harness inside a disposable VM. The sandbox enforces
//! per-command timeouts, caps captured output, and reaps every process
//! group it created when a session closes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on captured bytes per stream per command.
pub const DEFAULT_OUTPUT_CAP_BYTES: usize = 4 * 1024 * 1024;

/// Default per-command timeout.
pub const DEFAULT_COMMAND_TIMEOUT_SECS: u64 = 60;

const FALLBACK_PATH: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

/// Package managers refused while `allow_install` is off. A heuristic
/// guard only; the VM boundary is the actual containment.
const INSTALLER_COMMANDS: &[&str] = &[
    "apt", "apt-get", "yum", "dnf", "pacman", "apk", "pip", "pip3", "gem", "npm", "brew",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    #[serde(default = "default_cap")]
    pub output_cap_bytes: usize,
    #[serde(default = "default_timeout")]
    pub command_timeout_secs: u64,
    /// Whether agent commands may install additional tools. Off by default
    /// so CI runs cannot mutate the environment.
    #[serde(default)]
    pub allow_install: bool,
    /// Environment variable names copied from the harness process into
    /// sessions. PATH is always available.
    #[serde(default)]
    pub env_passthrough: Vec<String>,
}

fn default_cap() -> usize {
    DEFAULT_OUTPUT_CAP_BYTES
}

fn default_timeout() -> u64 {
    DEFAULT_COMMAND_TIMEOUT_SECS
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            output_cap_bytes: DEFAULT_OUTPUT_CAP_BYTES,
            command_timeout_secs: DEFAULT_COMMAND_TIMEOUT_SECS,
            allow_install: false,
            env_passthrough: vec!["PATH".to_string()],
        }
    }
}

/// Session factory. Safe for concurrent spawns; sessions from different
/// runs share no mutable state.
pub struct Sandbox {
    config: SandboxConfig,
    counter: AtomicU64,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Sandbox {
            config,
            counter: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Opens a session rooted at `working_dir`.
    pub fn spawn(
        &self,
        working_dir: impl AsRef<Path>,
        env: BTreeMap<String, String>,
        wall_clock_budget: Duration,
    ) -> Result<ShellSession, SandboxError> {
        let working_dir = working_dir.as_ref();
        if !working_dir.is_dir() {
            return Err(SandboxError::Spawn(format!(
                "working directory {} does not exist",
                working_dir.display()
            )));
        }
        let id = self.counter.fetch_add(1, Ordering::SeqCst) + 1;

        let mut session_env = BTreeMap::new();
        for name in &self.config.env_passthrough {
            if let Ok(value) = std::env::var(name) {
                session_env.insert(name.clone(), value);
            }
        }
        session_env
            .entry("PATH".to_string())
            .or_insert_with(|| std::env::var("PATH").unwrap_or_else(|_| FALLBACK_PATH.to_string()));
        session_env.insert("HOME".to_string(), working_dir.display().to_string());
        session_env.extend(env);

        Ok(ShellSession {
            session_id: format!("shell-{id}"),
            working_dir: working_dir.to_path_buf(),
            env: session_env,
            wall_clock_budget,
            opened_at: Instant::now(),
            output_cap: self.config.output_cap_bytes,
            allow_install: self.config.allow_install,
            state: Mutex::new(SessionInner {
                state: SessionState::Open,
                group_pids: Vec::new(),
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Closed,
}

struct SessionInner {
    state: SessionState,
    /// Process-group leaders created by `execute`, killed at close so no
    /// background child outlives the session.
    group_pids: Vec<i32>,
}

/// One isolated shell session. Commands are only accepted while Open;
/// Closed is terminal.
pub struct ShellSession {
    session_id: String,
    working_dir: PathBuf,
    env: BTreeMap<String, String>,
    wall_clock_budget: Duration,
    opened_at: Instant,
    output_cap: usize,
    allow_install: bool,
    state: Mutex<SessionInner>,
}

/// Captured result of one command.
#[derive(Debug, Clone)]
pub struct CommandResult {
    /// Sanitized stdout, at most the configured cap.
    pub stdout: String,
    /// Sanitized stderr, at most the configured cap.
    pub stderr: String,
    pub exit_code: i32,
    /// True iff raw output exceeded the cap on either stream.
    pub truncated: bool,
    /// True iff the command was killed at the timeout; stdout/stderr then
    /// hold whatever partial output was captured.
    pub timed_out: bool,
    pub duration: Duration,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to spawn session: {0}")]
    Spawn(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("command must not be empty")]
    EmptyCommand,
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

impl ShellSession {
    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn working_dir(&self) -> &Path {
        &self.working_dir
    }

    pub fn state(&self) -> SessionState {
        self.state.lock().unwrap().state
    }

    /// Runs `command` under the system shell inside the working directory.
    ///
    /// The command gets its own process group. On timeout the whole group
    /// is killed and the partial output comes back with `timed_out` set;
    /// a timeout is a result, not an error.
    pub fn execute(&self, command: &str, timeout: Duration) -> Result<CommandResult, SandboxError> {
        if command.trim().is_empty() {
            return Err(SandboxError::EmptyCommand);
        }
        {
            let inner = self.state.lock().unwrap();
            if inner.state == SessionState::Closed {
                return Err(SandboxError::SessionClosed);
            }
        }

        let remaining = self
            .wall_clock_budget
            .saturating_sub(self.opened_at.elapsed());
        if remaining.is_zero() {
            return Ok(CommandResult {
                stdout: String::new(),
                stderr: "session wall-clock budget exhausted".to_string(),
                exit_code: -1,
                truncated: false,
                timed_out: true,
                duration: Duration::ZERO,
            });
        }
        let effective_timeout = timeout.min(remaining);

        if !self.allow_install && is_install_command(command) {
            return Ok(CommandResult {
                stdout: String::new(),
                stderr: "tool installation is disabled (allow_install=false)".to_string(),
                exit_code: 126,
                truncated: false,
                timed_out: false,
                duration: Duration::ZERO,
            });
        }

        let mut cmd = Command::new("/bin/sh");
        cmd.arg("-c")
            .arg(command)
            .current_dir(&self.working_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .envs(&self.env);

        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            unsafe {
                cmd.pre_exec(|| {
                    // New process group so timeouts and close can kill the
                    // whole tree without touching the harness.
                    libc::setpgid(0, 0);
                    Ok(())
                });
            }
        }

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| SandboxError::Spawn(e.to_string()))?;
        let pid = child.id() as i32;
        #[cfg(unix)]
        unsafe {
            // Mirror the child-side setpgid; harmless if the child won.
            libc::setpgid(pid, pid);
        }
        self.state.lock().unwrap().group_pids.push(pid);

        let cap = self.output_cap;
        let stdout_pipe = child.stdout.take().expect("stdout was piped");
        let stderr_pipe = child.stderr.take().expect("stderr was piped");
        let stdout_reader = std::thread::spawn(move || read_capped(stdout_pipe, cap));
        let stderr_reader = std::thread::spawn(move || read_capped(stderr_pipe, cap));

        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= effective_timeout {
                timed_out = true;
                kill_group(pid);
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(10));
        };
        let duration = start.elapsed();

        let (stdout_bytes, stdout_truncated) = stdout_reader.join().unwrap_or_default();
        let (stderr_bytes, stderr_truncated) = stderr_reader.join().unwrap_or_default();

        let exit_code = status.and_then(|s| s.code()).unwrap_or(-1);
        Ok(CommandResult {
            stdout: sanitize(&stdout_bytes),
            stderr: sanitize(&stderr_bytes),
            exit_code,
            truncated: stdout_truncated || stderr_truncated,
            timed_out,
            duration,
        })
    }

    /// Closes the session: every process group it created is killed, so no
    /// descendant survives. A second close is a no-op acknowledgment.
    pub fn close(&self) {
        let mut inner = self.state.lock().unwrap();
        if inner.state == SessionState::Closed {
            return;
        }
        for pid in inner.group_pids.drain(..) {
            kill_group(pid);
        }
        inner.state = SessionState::Closed;
    }
}

impl Drop for ShellSession {
    fn drop(&mut self) {
        self.close();
    }
}

fn kill_group(pid: i32) {
    #[cfg(unix)]
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
    #[cfg(not(unix))]
    let _ = pid;
}

/// Reads a stream to EOF, retaining at most `cap` bytes. The remainder is
/// drained and discarded so the child never blocks on a full pipe.
fn read_capped<R: Read>(mut reader: R, cap: usize) -> (Vec<u8>, bool) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    let mut truncated = false;
    loop {
        match reader.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if buf.len() < cap {
                    let take = n.min(cap - buf.len());
                    buf.extend_from_slice(&chunk[..take]);
                    if take < n {
                        truncated = true;
                    }
                } else {
                    truncated = true;
                }
            }
        }
    }
    (buf, truncated)
}

/// Lossy UTF-8 decode with control characters (other than newline, tab and
/// carriage return) replaced by U+FFFD, so downstream summarization and
/// transcripts always hold text.
fn sanitize(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .chars()
        .map(|c| {
            if c.is_control() && c != '\n' && c != '\t' && c != '\r' {
                '\u{FFFD}'
            } else {
                c
            }
        })
        .collect()
}

fn is_install_command(command: &str) -> bool {
    let mut tokens = command.split_whitespace();
    let mut first = tokens.next().unwrap_or_default();
    if first == "sudo" {
        first = tokens.next().unwrap_or_default();
    }
    let base = first.rsplit('/').next().unwrap_or(first);
    if INSTALLER_COMMANDS.contains(&base) {
        return true;
    }
    matches!(base, "cargo" | "go") && tokens.next() == Some("install")
}

//! Sandboxed execution of untrusted code in an external interpreter
//! subprocess: wall-clock kill, address-space limit, and interpreter-level
//! network denial.

use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::model::{ToolResponse, ToolStatus};
use crate::tools::CodeRunResult;

/// Resource limits for one code run. `no_network` is enforced inside the
/// interpreter by denying socket construction before user code runs.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodeLimits {
    #[serde(rename = "wall_time_ms", with = "crate::util::duration_ms")]
    pub wall_time: Duration,
    pub memory_bytes: u64,
    pub no_network: bool,
}

impl Default for CodeLimits {
    fn default() -> Self {
        Self {
            wall_time: Duration::from_secs(30),
            memory_bytes: 512 * 1024 * 1024,
            no_network: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CodeError {
    #[error("empty source")]
    EmptySource,
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
}

/// Counting semaphore bounding concurrent interpreter subprocesses.
pub(crate) struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    pub(crate) fn new(count: usize) -> Self {
        Self { available: Mutex::new(count.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a Permits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.permits.available.lock().unwrap() += 1;
        self.permits.freed.notify_one();
    }
}

/// Python preamble applied before user code: sets the address-space rlimit,
/// optionally denies sockets, then executes the source file passed as argv.
const WRAPPER: &str = r#"
import sys
try:
    import resource
    resource.setrlimit(resource.RLIMIT_AS, (MEMORY_BYTES, MEMORY_BYTES))
except Exception:
    pass
if NO_NETWORK:
    import socket
    def _denied(*args, **kwargs):
        raise OSError("network access disabled in sandbox")
    socket.socket = _denied
    socket.create_connection = _denied
    socket.getaddrinfo = _denied
with open(sys.argv[1], "r") as handle:
    _source = handle.read()
exec(compile(_source, "<code>", "exec"), {"__name__": "__main__"})
"#;

fn drain(pipe: impl Read + Send + 'static) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut out = String::new();
        let mut reader = pipe;
        let mut buf = Vec::new();
        let _ = reader.read_to_end(&mut buf);
        out.push_str(&String::from_utf8_lossy(&buf));
        out
    })
}

/// Runs `source` in an interpreter subprocess under `limits`. Stdout/stderr
/// are captured verbatim; limit breaches are reported in-band through
/// `timed_out` and `exit_status` rather than as errors.
pub fn run_code(
    source: &str,
    limits: &CodeLimits,
    interpreter: &str,
) -> Result<CodeRunResult, CodeError> {
    if source.trim().is_empty() {
        return Err(CodeError::EmptySource);
    }

    let dir = tempfile::tempdir()
        .map_err(|e| CodeError::SandboxUnavailable(format!("tempdir: {e}")))?;
    let source_path = dir.path().join("code.py");
    std::fs::write(&source_path, source)
        .map_err(|e| CodeError::SandboxUnavailable(format!("write source: {e}")))?;

    let wrapper = WRAPPER
        .replace("MEMORY_BYTES", &limits.memory_bytes.to_string())
        .replace("NO_NETWORK", if limits.no_network { "True" } else { "False" });

    let mut child = Command::new(interpreter)
        .arg("-I")
        .arg("-c")
        .arg(&wrapper)
        .arg(&source_path)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| CodeError::SandboxUnavailable(format!("spawn {interpreter}: {e}")))?;

    let stdout_handle = drain(child.stdout.take().expect("stdout piped"));
    let stderr_handle = drain(child.stderr.take().expect("stderr piped"));

    let started = Instant::now();
    let mut timed_out = false;
    let exit_status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status.code().unwrap_or(-1),
            Ok(None) => {
                if started.elapsed() >= limits.wall_time {
                    let _ = child.kill();
                    let _ = child.wait();
                    timed_out = true;
                    // 124 follows the timeout(1) convention for killed runs.
                    break 124;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(CodeError::SandboxUnavailable(format!("wait: {e}"))),
        }
    };

    let stdout = stdout_handle.join().unwrap_or_default();
    let stderr = stderr_handle.join().unwrap_or_default();

    Ok(CodeRunResult { stdout, stderr, exit_status, timed_out })
}

/// Renders a code run into the observation text the agent sees.
pub fn render_code_result(result: &CodeRunResult) -> String {
    let mut out = format!("exit status: {}", result.exit_status);
    if result.timed_out {
        out.push_str(" (killed: wall-time limit exceeded)");
    }
    out.push_str("\nstdout:\n");
    if result.stdout.is_empty() {
        out.push_str("(no output printed)\n");
    } else {
        out.push_str(&result.stdout);
        if !result.stdout.ends_with('\n') {
            out.push('\n');
        }
    }
    if !result.stderr.is_empty() {
        out.push_str("stderr:\n");
        out.push_str(&result.stderr);
        if !result.stderr.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

pub(crate) fn code_tool_response(
    source: &str,
    limits: &CodeLimits,
    interpreter: &str,
    permits: &Permits,
) -> ToolResponse {
    let _guard = permits.acquire();
    match run_code(source, limits, interpreter) {
        Ok(result) => ToolResponse {
            tool_name: "code".into(),
            status: if result.timed_out { ToolStatus::Timeout } else { ToolStatus::Ok },
            content: render_code_result(&result),
            latency_ms: 0,
        },
        Err(e) => ToolResponse::error("code", format!("code tool failed: {e}")),
    }
}

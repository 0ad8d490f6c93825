use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use super::{Backend, BackendError, BackendRequest, BackendResponse};

/// Exclusive timing token per device tag, shared by every shim backend in the
/// process.
fn device_token(tag: &str) -> Arc<Mutex<()>> {
    static TOKENS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = TOKENS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(tag.to_string()).or_default().clone()
}

struct ShimProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl ShimProcess {
    fn spawn(cmd: &str) -> Result<Self, BackendError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("cannot start `{cmd}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Executes requests in pooled subprocesses speaking newline-delimited JSON,
/// one request in flight per process. Requests hold the device token for
/// their whole duration.
pub struct ShimBackend {
    cmd: String,
    device_tag: String,
    timeout: Duration,
    idle: Mutex<Vec<ShimProcess>>,
}

impl ShimBackend {
    pub fn new(cmd: impl Into<String>, device_tag: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let cmd = cmd.into();
        if cmd.trim().is_empty() {
            return Err(BackendError::Unavailable("no shim command configured".into()));
        }
        Ok(Self { cmd, device_tag: device_tag.into(), timeout, idle: Mutex::new(Vec::new()) })
    }

    fn checkout(&self) -> Result<ShimProcess, BackendError> {
        let pooled = self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop();
        match pooled {
            Some(p) => Ok(p),
            None => ShimProcess::spawn(&self.cmd),
        }
    }

    fn checkin(&self, p: ShimProcess) {
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(p);
    }
}

impl Backend for ShimBackend {
    fn execute(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut line = serde_json::to_string(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');

        let mut proc = self.checkout()?;
        let token = device_token(&self.device_tag);
        let _held = token.lock().unwrap_or_else(|e| e.into_inner());

        if let Err(e) = proc.stdin.write_all(line.as_bytes()).and_then(|_| proc.stdin.flush()) {
            proc.kill();
            return Err(BackendError::Unavailable(format!("shim stdin closed: {e}")));
        }
        let reply = match proc.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                proc.kill();
                return Err(BackendError::Protocol(format!("reading shim output: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                proc.kill();
                return Err(BackendError::Timeout { secs: self.timeout.as_secs() });
            }
            Err(RecvTimeoutError::Disconnected) => {
                proc.kill();
                return Err(BackendError::Protocol("shim exited without a response".into()));
            }
        };
        match serde_json::from_str::<BackendResponse>(&reply) {
            Ok(resp) => {
                self.checkin(proc);
                Ok(resp)
            }
            Err(e) => {
                proc.kill();
                Err(BackendError::Protocol(format!("malformed response: {e}")))
            }
        }
    }
}

impl Drop for ShimBackend {
    fn drop(&mut self) {
        let procs = std::mem::take(self.idle.get_mut().unwrap_or_else(|e| e.into_inner()));
        for mut p in procs {
            drop(p.stdin);
            let _ = p.child.wait();
        }
    }
}

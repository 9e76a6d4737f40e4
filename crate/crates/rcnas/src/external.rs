//! Client for an external worker process speaking the line protocol.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rcnas_core::Architecture;

use crate::evaluator::{EvalResult, Evaluator};
use crate::format::to_value;
use crate::protocol::{parse_worker_line, Budget, EvaluateRequest, Status, WorkerMessage, PROTOCOL_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum AttachError {
    #[error("cannot start worker: {0}")]
    Spawn(std::io::Error),
    #[error("worker sent no hello within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("worker exited before the handshake")]
    Exited,
    #[error("worker speaks protocol {0}, expected {PROTOCOL_VERSION}")]
    Version(u32),
}

type Pending = Arc<Mutex<HashMap<String, Sender<EvalResult>>>>;

struct Shared {
    pending: Pending,
    /// Set once stdout closes.
    dead: Mutex<bool>,
}

/// Evaluates architectures by sending them to a worker process. Requests may
/// be issued concurrently; responses are routed by request id.
pub struct ExternalEvaluator {
    child: Mutex<Child>,
    stdin: Mutex<Option<ChildStdin>>,
    shared: Arc<Shared>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
    budget: Budget,
}

impl ExternalEvaluator {
    /// Starts `command` and waits for its hello.
    pub fn spawn(
        command: &[String],
        timeout: Duration,
        handshake_timeout: Duration,
        budget: Budget,
    ) -> Result<Self, AttachError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| AttachError::Spawn(std::io::Error::other("empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(AttachError::Spawn)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let shared = Arc::new(Shared {
            pending: Arc::default(),
            dead: Mutex::new(false),
        });
        let (hello_tx, hello_rx) = mpsc::channel();
        let reader = {
            let shared = shared.clone();
            std::thread::spawn(move || read_loop(BufReader::new(stdout), &shared, hello_tx))
        };
        let mut this = Self {
            child: Mutex::new(child),
            stdin: Mutex::new(stdin),
            shared,
            reader: Some(reader),
            timeout,
            budget,
        };
        match hello_rx.recv_timeout(handshake_timeout) {
            Ok(PROTOCOL_VERSION) => Ok(this),
            Ok(v) => Err(AttachError::Version(v)),
            Err(RecvTimeoutError::Timeout) => Err(AttachError::HandshakeTimeout(handshake_timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                this.shutdown();
                Err(AttachError::Exited)
            }
        }
    }

    pub fn is_alive(&self) -> bool {
        !*self.shared.dead.lock().unwrap()
    }

    fn shutdown(&mut self) {
        self.stdin.lock().unwrap().take();
        let mut child = self.child.lock().unwrap();
        let _ = child.kill();
        let _ = child.wait();
        drop(child);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

fn read_loop(stdout: impl BufRead, shared: &Shared, hello: Sender<u32>) {
    for line in stdout.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match parse_worker_line(&line) {
            Ok(WorkerMessage::Hello { protocol }) => {
                let _ = hello.send(protocol);
            }
            Ok(WorkerMessage::Result(r)) => {
                let result = match r.status {
                    Status::Ok => EvalResult::ok(r.performance.unwrap_or(0.0), r.wall_seconds),
                    Status::Failed => EvalResult {
                        wall_seconds: r.wall_seconds,
                        ..EvalResult::failed(r.reason.unwrap_or_else(|| "failed".into()))
                    },
                };
                deliver(shared, &r.request_id, result);
            }
            Err((Some(id), e)) => deliver(shared, &id, EvalResult::failed(format!("protocol: {e}"))),
            Err((None, e)) => log::warn!("unroutable worker message: {e}"),
        }
    }
    *shared.dead.lock().unwrap() = true;
    let drained: Vec<_> = shared.pending.lock().unwrap().drain().collect();
    for (_, tx) in drained {
        let _ = tx.send(EvalResult::failed("crashed"));
    }
}

fn deliver(shared: &Shared, id: &str, result: EvalResult) {
    match shared.pending.lock().unwrap().remove(id) {
        Some(tx) => {
            let _ = tx.send(result);
        }
        None => log::debug!("dropping response for unknown or expired request {id:?}"),
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, arch: &Architecture, request_id: &str) -> EvalResult {
        let (tx, rx) = mpsc::channel();
        {
            // Registering under the dead lock orders this against the reader's
            // final drain.
            let dead = self.shared.dead.lock().unwrap();
            if *dead {
                return EvalResult::failed("crashed");
            }
            self.shared.pending.lock().unwrap().insert(request_id.to_string(), tx);
        }
        let req = EvaluateRequest::new(request_id, to_value(arch), self.budget.clone());
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let sent = match self.stdin.lock().unwrap().as_mut() {
            Some(w) => w.write_all(line.as_bytes()).and_then(|_| w.flush()).is_ok(),
            None => false,
        };
        if !sent {
            self.shared.pending.lock().unwrap().remove(request_id);
            return EvalResult::failed("crashed");
        }
        match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().remove(request_id);
                // The reader may have delivered between the timeout and removal.
                rx.try_recv().unwrap_or_else(|_| EvalResult::failed("timeout"))
            }
            Err(RecvTimeoutError::Disconnected) => EvalResult::failed("crashed"),
        }
    }

    fn health(&self) -> Result<(), String> {
        if self.is_alive() {
            Ok(())
        } else {
            Err("worker exited".into())
        }
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        self.shutdown();
    }
}

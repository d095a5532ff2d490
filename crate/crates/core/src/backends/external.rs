//! Adapter for an inference process speaking newline-delimited JSON on
//! stdin/stdout.
//!
//! ```text
//! -> {"hello": {"f_in": F}}
//! <- {"ready": {"classes": C}}
//! -> {"id": 0, "input": [...F floats]}
//! <- {"id": 0, "logits": [...C floats]}
//! ```
//!
//! Responses must echo the request id and arrive in request order. The
//! harness applies softmax to the returned logits, so measured latency
//! covers the full pipe round trip plus softmax.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InputVector};
use crate::metrics::{softmax, SoftmaxVector};

pub const DEFAULT_RESPONSE_TIMEOUT: Duration = Duration::from_secs(30);
const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

#[derive(Serialize)]
struct Hello {
    hello: HelloBody,
}

#[derive(Serialize)]
struct HelloBody {
    f_in: usize,
}

#[derive(Deserialize)]
struct Ready {
    ready: ReadyBody,
}

#[derive(Deserialize)]
struct ReadyBody {
    classes: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    input: &'a [f64],
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    logits: Vec<f64>,
}

pub struct ExternalBackend {
    program: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    f_in: usize,
    classes: usize,
    next_id: u64,
    last_good: Option<u64>,
    timeout: Duration,
    finished: bool,
}

impl ExternalBackend {
    /// Spawns `command[0]` with the remaining elements as arguments and
    /// completes the hello/ready handshake.
    pub fn spawn(command: &[String], f_in: usize, timeout: Duration) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::InvalidDescriptor("external command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Spawn {
                program: program.clone(),
                source: e,
            })?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");

        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("external-backend-reader".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })
            .map_err(|e| BackendError::Spawn {
                program: program.clone(),
                source: e,
            })?;

        let mut backend = Self {
            program: program.clone(),
            child,
            stdin: Some(BufWriter::new(stdin)),
            lines: rx,
            f_in,
            classes: 0,
            next_id: 0,
            last_good: None,
            timeout,
            finished: false,
        };
        backend.send(&Hello {
            hello: HelloBody { f_in },
        })?;
        let line = backend.recv()?;
        let ready: Ready = serde_json::from_str(line.trim())
            .map_err(|e| BackendError::Protocol(format!("bad handshake reply {:?}: {e}", line.trim())))?;
        if ready.ready.classes < 2 {
            return Err(BackendError::Protocol(format!(
                "process reported {} classes",
                ready.ready.classes
            )));
        }
        backend.classes = ready.ready.classes;
        Ok(backend)
    }

    /// Number of completed request/response round trips.
    pub fn completed(&self) -> u64 {
        self.last_good.map_or(0, |id| id + 1)
    }

    fn send<T: Serialize>(&mut self, msg: &T) -> Result<(), BackendError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| BackendError::Protocol("backend already shut down".into()))?;
        let result = serde_json::to_writer(&mut *stdin, msg)
            .map_err(std::io::Error::from)
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        result.map_err(|_| self.exited())
    }

    fn recv(&mut self) -> Result<String, BackendError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(BackendError::Io(e)),
            Err(RecvTimeoutError::Disconnected) => Err(self.exited()),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Protocol(format!(
                "no response from {} within {:?}",
                self.program, self.timeout
            ))),
        }
    }

    fn exited(&mut self) -> BackendError {
        // Give the child a moment to finish exiting so the status is known.
        let deadline = Instant::now() + Duration::from_millis(500);
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break status.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => break "still running, stdout closed".to_string(),
                Err(e) => break e.to_string(),
            }
        };
        BackendError::ProcessExited {
            program: self.program.clone(),
            completed: self.completed(),
            status,
        }
    }
}

impl Backend for ExternalBackend {
    fn classes(&self) -> usize {
        self.classes
    }

    fn infer(&mut self, input: &InputVector) -> Result<SoftmaxVector, BackendError> {
        if input.values.len() != self.f_in {
            return Err(BackendError::DimensionMismatch {
                expected: self.f_in,
                got: input.values.len(),
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Request {
            id,
            input: &input.values,
        })?;
        let line = self.recv()?;
        let resp: Response = serde_json::from_str(line.trim())
            .map_err(|e| BackendError::Protocol(format!("malformed response to request {id}: {e}")))?;
        if resp.id != id {
            return Err(BackendError::Protocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        if resp.logits.len() != self.classes {
            return Err(BackendError::Protocol(format!(
                "response {id} carried {} logits, expected {}",
                resp.logits.len(),
                self.classes
            )));
        }
        let out = softmax(&resp.logits)?;
        self.last_good = Some(id);
        Ok(out)
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        if self.finished {
            return Ok(());
        }
        self.finished = true;
        // Closing stdin asks the process to exit.
        self.stdin = None;
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        let status = loop {
            match self.child.try_wait()? {
                Some(status) => break status,
                None if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                None => {
                    self.child.kill()?;
                    break self.child.wait()?;
                }
            }
        };
        if status.success() {
            Ok(())
        } else {
            Err(BackendError::ProcessExited {
                program: self.program.clone(),
                completed: self.completed(),
                status: status.to_string(),
            })
        }
    }

    fn measurement_scope(&self) -> String {
        "external process round trip (pipe IPC + remote inference) + softmax".into()
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if !self.finished {
            self.stdin = None;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

//! Newline-delimited JSON evaluation protocol.
//!
//! ```text
//! client -> {"type":"hello","version":1}
//! server -> {"type":"descriptor","name":...,"deterministic":...,"concurrent_safe":...,
//!            "expected_vector_length":...,"value_range":[lo,hi]}
//! client -> {"type":"eval","id":7,"structure":[16,32]}
//! server -> {"type":"result","id":7,"fitness":0.91} | {"type":"error","id":7,"message":"..."}
//! client -> {"type":"bye"}
//! ```
//!
//! The same framing runs over a child process's stdio or a TCP stream.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_len, Evaluator, EvaluatorDescriptor, FitnessValue};
use crate::error::EvalError;
use crate::space::StructureVector;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello { version: u32 },
    Descriptor(EvaluatorDescriptor),
    Eval { id: u64, structure: Vec<i64> },
    Result { id: u64, fitness: f64 },
    Error { id: u64, message: String },
    Bye,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, EvalError> {
        serde_json::from_str(line).map_err(|e| EvalError::Protocol(format!("{e}: {line}")))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    /// Per-response deadline.
    pub timeout: Duration,
    /// Extra connection attempts after the first one fails.
    pub connect_retries: u32,
    pub retry_delay: Duration,
    /// Keep several requests in flight when the server declares itself concurrent-safe.
    pub pipelined: bool,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(300),
            connect_retries: 3,
            retry_delay: Duration::from_millis(200),
            pipelined: false,
        }
    }
}

fn transport(e: impl std::fmt::Display) -> EvalError {
    EvalError::Transport(e.to_string())
}

/// Client side of the protocol.
pub struct RemoteEvaluator {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    descriptor: EvaluatorDescriptor,
    next_id: u64,
    options: RemoteOptions,
    child: Option<Child>,
    closed: bool,
}

impl std::fmt::Debug for RemoteEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEvaluator")
            .field("descriptor", &self.descriptor)
            .field("next_id", &self.next_id)
            .finish_non_exhaustive()
    }
}

impl RemoteEvaluator {
    /// Performs the handshake over an arbitrary byte-stream pair.
    pub fn from_streams<R, W>(
        reader: R,
        writer: W,
        options: RemoteOptions,
    ) -> Result<Self, EvalError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(reader, Box::new(writer), None, options)
    }

    /// Connects to a TCP endpoint, retrying up to `connect_retries` times.
    pub fn connect(addr: &str, options: RemoteOptions) -> Result<Self, EvalError> {
        let mut attempt = 0;
        let stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if attempt >= options.connect_retries => {
                    return Err(EvalError::Transport(format!("connect {addr}: {e}")))
                }
                Err(_) => {
                    attempt += 1;
                    thread::sleep(options.retry_delay);
                }
            }
        };
        stream.set_nodelay(true).map_err(transport)?;
        let reader = stream.try_clone().map_err(transport)?;
        Self::handshake(reader, Box::new(stream), None, options)
    }

    /// Spawns `command` through `sh -c` and talks to it over stdin/stdout.
    /// The child is shut down when the evaluator is closed or dropped.
    pub fn spawn(command: &str, options: RemoteOptions) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {command}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Transport(format!("spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(stdout, Box::new(stdin), Some(child), options)
    }

    fn handshake<R: Read + Send + 'static>(
        reader: R,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        options: RemoteOptions,
    ) -> Result<Self, EvalError> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let done = line.is_err();
                if tx.send(line).is_err() || done {
                    return;
                }
            }
            let _ = tx.send(Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "evaluator closed the stream",
            )));
        });
        let placeholder = EvaluatorDescriptor {
            name: String::new(),
            deterministic: false,
            concurrent_safe: false,
            expected_vector_length: 0,
            value_range: (0.0, 0.0),
        };
        let mut client = Self {
            writer,
            lines: rx,
            descriptor: placeholder,
            next_id: 0,
            options,
            child,
            closed: false,
        };
        client.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match client.recv()? {
            Message::Descriptor(d) => client.descriptor = d,
            Message::Error { message, .. } => {
                return Err(EvalError::Protocol(format!("handshake refused: {message}")))
            }
            other => {
                return Err(EvalError::Protocol(format!(
                    "expected descriptor, got {other:?}"
                )))
            }
        }
        Ok(client)
    }

    /// Fails when the server's declared vector length differs from `dims`.
    pub fn check_dimension(&self, dims: usize) -> Result<(), EvalError> {
        if self.descriptor.expected_vector_length != dims {
            return Err(EvalError::LengthMismatch {
                expected: dims,
                got: self.descriptor.expected_vector_length,
            });
        }
        Ok(())
    }

    fn send(&mut self, msg: &Message) -> Result<(), EvalError> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(transport)
    }

    fn recv(&mut self) -> Result<Message, EvalError> {
        let deadline = Instant::now() + self.options.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(transport(e)),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(EvalError::Timeout(self.options.timeout))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(EvalError::Transport("evaluator stream closed".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Message::parse(line.trim());
        }
    }

    fn request(&mut self, s: &StructureVector) -> Result<u64, EvalError> {
        check_len(&self.descriptor, s)?;
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::Eval {
            id,
            structure: s.0.clone(),
        })?;
        Ok(id)
    }

    fn response(&mut self) -> Result<(u64, Result<FitnessValue, EvalError>), EvalError> {
        match self.recv()? {
            Message::Result { id, fitness } => Ok((id, FitnessValue::new(fitness))),
            Message::Error { id, message } => Ok((id, Err(EvalError::Server { id, message }))),
            other => Err(EvalError::Protocol(format!("unexpected message {other:?}"))),
        }
    }

    /// Sends `bye` and reaps the child, if any. Idempotent.
    pub fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        let _ = self.send(&Message::Bye);
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(5);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        thread::sleep(Duration::from_millis(20))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

impl Drop for RemoteEvaluator {
    fn drop(&mut self) {
        self.close();
    }
}

impl Evaluator for RemoteEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        let want = self.request(s)?;
        let (id, result) = self.response()?;
        if id != want {
            return Err(EvalError::Protocol(format!(
                "response id {id} does not match request {want}"
            )));
        }
        result
    }

    fn evaluate_batch(
        &mut self,
        batch: &[StructureVector],
    ) -> Result<Vec<FitnessValue>, EvalError> {
        if !(self.options.pipelined && self.descriptor.concurrent_safe) {
            return batch.iter().map(|s| self.evaluate(s)).collect();
        }
        let mut pending: HashMap<u64, usize> = HashMap::with_capacity(batch.len());
        for (pos, s) in batch.iter().enumerate() {
            pending.insert(self.request(s)?, pos);
        }
        let mut out: Vec<Option<FitnessValue>> = vec![None; batch.len()];
        while !pending.is_empty() {
            let (id, result) = self.response()?;
            let pos = pending.remove(&id).ok_or_else(|| {
                EvalError::Protocol(format!("response for unknown or repeated id {id}"))
            })?;
            out[pos] = Some(result?);
        }
        Ok(out
            .into_iter()
            .map(|f| f.expect("all ids answered"))
            .collect())
    }
}

/// Counters reported by [`serve`] when the session ends.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub evaluated: u64,
    pub errors: u64,
}

/// Hosts `evaluator` on a line stream until `bye` or end of input.
pub fn serve<E, R, W>(evaluator: &mut E, reader: R, mut writer: W) -> io::Result<ServeStats>
where
    E: Evaluator + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut stats = ServeStats::default();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let reply = match Message::parse(line) {
            Ok(Message::Hello { version }) if version == PROTOCOL_VERSION => {
                Message::Descriptor(evaluator.descriptor().clone())
            }
            Ok(Message::Hello { version }) => Message::Error {
                id: 0,
                message: format!("unsupported protocol version {version}"),
            },
            Ok(Message::Eval { id, structure }) => {
                match evaluator.evaluate(&StructureVector(structure)) {
                    Ok(f) => {
                        stats.evaluated += 1;
                        Message::Result {
                            id,
                            fitness: f.value(),
                        }
                    }
                    Err(e) => Message::Error {
                        id,
                        message: e.to_string(),
                    },
                }
            }
            Ok(Message::Bye) => break,
            Ok(other) => Message::Error {
                id: 0,
                message: format!("unexpected message from client: {other:?}"),
            },
            Err(e) => Message::Error {
                id: salvage_id(line),
                message: e.to_string(),
            },
        };
        if matches!(reply, Message::Error { .. }) {
            stats.errors += 1;
        }
        writer.write_all(reply.to_line().as_bytes())?;
        writer.flush()?;
    }
    Ok(stats)
}

fn salvage_id(line: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_u64()))
        .unwrap_or(0)
}

/// Accepts one connection on `listener` and serves it to completion.
pub fn serve_tcp_once<E: Evaluator + ?Sized>(
    evaluator: &mut E,
    listener: &TcpListener,
) -> io::Result<ServeStats> {
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve(evaluator, reader, stream)
}

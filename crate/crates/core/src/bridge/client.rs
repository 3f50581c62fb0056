use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::protocol::{encode, Request, Response, WireObservation, PROTOCOL_VERSION};
use crate::env::{EnvError, EnvResponse, Environment};
use crate::trajectory::Observation;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("no handshake within {0:?}")]
    ConnectTimeout(Duration),
    #[error("cannot connect: {0}")]
    Connect(io::Error),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("episode not reset for task {0:?}")]
    EpisodeNotReset(String),
    #[error("environment error: {0}")]
    Remote(String),
    #[error("connection closed")]
    Closed,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Where a bridged environment lives: `tcp://host:port` or
/// `spawn:<shell command>` (the child speaks the protocol on stdio).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeEndpoint {
    Tcp(String),
    Spawn(String),
}

impl FromStr for BridgeEndpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(BridgeEndpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("spawn:") {
            if cmd.trim().is_empty() {
                return Err("empty spawn command".into());
            }
            Ok(BridgeEndpoint::Spawn(cmd.trim().to_string()))
        } else {
            Err(format!("bridge endpoint must start with tcp:// or spawn: (got {s:?})"))
        }
    }
}

impl fmt::Display for BridgeEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeEndpoint::Tcp(a) => write!(f, "tcp://{a}"),
            BridgeEndpoint::Spawn(c) => write!(f, "spawn:{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeConfig {
    pub connect_timeout: Duration,
    pub response_timeout: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(10),
            response_timeout: Duration::from_secs(60),
        }
    }
}

/// One live connection. Requests and responses strictly alternate; after a
/// timeout or protocol error the session refuses further requests.
pub struct BridgeSession {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    active_task: Option<String>,
    config: BridgeConfig,
    broken: bool,
}

impl fmt::Debug for BridgeSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeSession")
            .field("active_task", &self.active_task)
            .field("broken", &self.broken)
            .finish()
    }
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
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
    });
    rx
}

impl BridgeSession {
    pub fn connect(endpoint: &BridgeEndpoint, config: BridgeConfig) -> Result<Self, BridgeError> {
        let (writer, lines, child): (Box<dyn Write + Send>, _, _) = match endpoint {
            BridgeEndpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(BridgeError::Connect)?
                    .next()
                    .ok_or_else(|| BridgeError::Connect(io::Error::other(format!("cannot resolve {addr}"))))?;
                let stream = TcpStream::connect_timeout(&sock, config.connect_timeout).map_err(|e| {
                    if e.kind() == io::ErrorKind::TimedOut {
                        BridgeError::ConnectTimeout(config.connect_timeout)
                    } else {
                        BridgeError::Connect(e)
                    }
                })?;
                stream.set_nodelay(true).ok();
                let reader = stream.try_clone()?;
                (Box::new(stream), spawn_reader(reader), None)
            }
            BridgeEndpoint::Spawn(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(BridgeError::Connect)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), spawn_reader(stdout), Some(child))
            }
        };
        let mut session = Self {
            writer,
            lines,
            child,
            active_task: None,
            config,
            broken: false,
        };
        let hello = Request::Hello {
            protocol_version: PROTOCOL_VERSION,
        };
        match session.exchange(&hello, config.connect_timeout) {
            Ok(Response::Ack {
                protocol_version: Some(v),
            }) if v == PROTOCOL_VERSION => Ok(session),
            Ok(Response::Ack {
                protocol_version: Some(got),
            }) => Err(BridgeError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got,
            }),
            Ok(other) => Err(BridgeError::ProtocolError(format!("expected ack, got {other:?}"))),
            Err(BridgeError::Timeout(_)) | Err(BridgeError::Closed) => {
                Err(BridgeError::ConnectTimeout(config.connect_timeout))
            }
            Err(e) => Err(e),
        }
    }

    fn exchange(&mut self, req: &Request, timeout: Duration) -> Result<Response, BridgeError> {
        if self.broken {
            return Err(BridgeError::Closed);
        }
        let result = self.exchange_inner(req, timeout);
        if matches!(
            result,
            Err(BridgeError::Timeout(_) | BridgeError::ProtocolError(_) | BridgeError::Io(_) | BridgeError::Closed)
        ) {
            self.broken = true;
        }
        result
    }

    fn exchange_inner(&mut self, req: &Request, timeout: Duration) -> Result<Response, BridgeError> {
        self.writer.write_all(encode(req).as_bytes())?;
        self.writer.flush()?;
        let line = match self.lines.recv_timeout(timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(BridgeError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::Closed),
        };
        serde_json::from_str(line.trim()).map_err(|e| BridgeError::ProtocolError(format!("{e}: {}", line.trim())))
    }

    fn observation(&mut self, req: &Request) -> Result<WireObservation, BridgeError> {
        match self.exchange(req, self.config.response_timeout)? {
            Response::Observation(obs) => {
                if !(0.0..=1.0).contains(&obs.score) {
                    self.broken = true;
                    return Err(BridgeError::ProtocolError(format!(
                        "score {} outside [0, 1]",
                        obs.score
                    )));
                }
                Ok(obs)
            }
            Response::Error { message } => Err(BridgeError::Remote(message)),
            other => {
                self.broken = true;
                Err(BridgeError::ProtocolError(format!(
                    "expected observation, got {other:?}"
                )))
            }
        }
    }

    pub fn reset(
        &mut self,
        task_id: &str,
        seed: u64,
        max_steps: Option<usize>,
    ) -> Result<WireObservation, BridgeError> {
        let obs = self.observation(&Request::Reset {
            task_id: task_id.to_string(),
            seed,
            max_steps,
        })?;
        self.active_task = Some(task_id.to_string());
        Ok(obs)
    }

    pub fn step(&mut self, task_id: &str, action: &str) -> Result<WireObservation, BridgeError> {
        if self.active_task.as_deref() != Some(task_id) {
            return Err(BridgeError::EpisodeNotReset(task_id.to_string()));
        }
        self.observation(&Request::Step {
            task_id: task_id.to_string(),
            action: action.to_string(),
        })
    }

    pub fn close(&mut self) -> Result<(), BridgeError> {
        let task_id = self.active_task.take();
        match self.exchange(&Request::Close { task_id }, self.config.response_timeout)? {
            Response::Ack { .. } => Ok(()),
            Response::Error { message } => Err(BridgeError::Remote(message)),
            other => Err(BridgeError::ProtocolError(format!("expected ack, got {other:?}"))),
        }
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A bridged environment behind the [`Environment`] interface.
#[derive(Debug)]
pub struct BridgeEnvironment {
    session: BridgeSession,
    task_id: Option<String>,
    max_steps: Option<usize>,
}

impl BridgeEnvironment {
    pub fn new(session: BridgeSession, max_steps: Option<usize>) -> Self {
        Self {
            session,
            task_id: None,
            max_steps,
        }
    }
}

fn to_response(obs: WireObservation) -> Result<EnvResponse, EnvError> {
    let observation =
        Observation::new(obs.text, obs.score, obs.done).map_err(|e| BridgeError::ProtocolError(e.to_string()))?;
    Ok(EnvResponse {
        observation,
        available_actions: obs.available_actions,
    })
}

impl Environment for BridgeEnvironment {
    fn reset(&mut self, task_id: &str, seed: u64) -> Result<EnvResponse, EnvError> {
        let obs = self.session.reset(task_id, seed, self.max_steps)?;
        self.task_id = Some(task_id.to_string());
        to_response(obs)
    }

    fn step(&mut self, action: &str) -> Result<EnvResponse, EnvError> {
        let task_id = self.task_id.as_deref().ok_or(EnvError::EpisodeNotReset)?;
        let obs = self.session.step(task_id, action)?;
        to_response(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::server::{spawn_loopback, EchoHandler};
    use std::net::TcpListener;

    fn quick() -> BridgeConfig {
        BridgeConfig {
            connect_timeout: Duration::from_millis(300),
            response_timeout: Duration::from_millis(300),
        }
    }

    fn echo_session() -> BridgeSession {
        let addr = spawn_loopback(EchoHandler::default).unwrap();
        BridgeSession::connect(&BridgeEndpoint::Tcp(addr.to_string()), quick()).unwrap()
    }

    #[test]
    fn fixture_handshake_and_steps() {
        let mut s = echo_session();
        assert!(matches!(s.step("a", "noop"), Err(BridgeError::EpisodeNotReset(_))));
        s.reset("a", 0, None).unwrap();
        assert_eq!(s.step("a", "noop").unwrap(), WireObservation::new("ok", 0.0, false));
        let fin = s.step("a", "finish").unwrap();
        assert!(fin.done);
        assert_eq!(fin.score, 1.0);
        s.close().unwrap();
    }

    /// A server that answers every line with a fixed reply.
    fn canned(reply: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let reader = BufReader::new(stream.try_clone().unwrap());
                for line in reader.lines() {
                    if line.is_err() {
                        break;
                    }
                    if stream.write_all(reply.as_bytes()).is_err() {
                        break;
                    }
                }
            }
        });
        addr
    }

    #[test]
    fn version_mismatch() {
        let addr = canned("{\"type\":\"ack\",\"protocol_version\":99}\n");
        assert!(matches!(
            BridgeSession::connect(&BridgeEndpoint::Tcp(addr), quick()),
            Err(BridgeError::VersionMismatch { expected: 1, got: 99 })
        ));
    }

    #[test]
    fn silent_endpoint_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let _keep = listener;
        assert!(matches!(
            BridgeSession::connect(&BridgeEndpoint::Tcp(addr), quick()),
            Err(BridgeError::ConnectTimeout(_))
        ));
    }

    #[test]
    fn missing_score_is_protocol_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            for (i, _line) in reader.lines().enumerate() {
                let reply = if i == 0 {
                    "{\"type\":\"ack\",\"protocol_version\":1}\n"
                } else {
                    "{\"type\":\"observation\",\"text\":\"x\",\"done\":false}\n"
                };
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        let mut s = BridgeSession::connect(&BridgeEndpoint::Tcp(addr), quick()).unwrap();
        assert!(matches!(s.reset("a", 0, None), Err(BridgeError::ProtocolError(_))));
        assert!(matches!(s.reset("a", 0, None), Err(BridgeError::Closed)));
    }

    #[test]
    fn spawned_child_over_stdio() {
        let script = r#"while read line; do case "$line" in *hello*) echo '{"type":"ack","protocol_version":1}';; *reset*) echo '{"type":"observation","text":"hi","score":0.0,"done":false}';; *) echo '{"type":"observation","text":"bye","score":1.0,"done":true}';; esac; done"#;
        let mut s = BridgeSession::connect(&BridgeEndpoint::Spawn(script.into()), quick()).unwrap();
        assert_eq!(s.reset("t", 1, Some(5)).unwrap().text, "hi");
        assert!(s.step("t", "go").unwrap().done);
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "tcp://127.0.0.1:9".parse(),
            Ok(BridgeEndpoint::Tcp("127.0.0.1:9".into()))
        );
        assert_eq!(
            "spawn:cgi bridge-serve".parse(),
            Ok(BridgeEndpoint::Spawn("cgi bridge-serve".into()))
        );
        assert!("http://x".parse::<BridgeEndpoint>().is_err());
    }
}

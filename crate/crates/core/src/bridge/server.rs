use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::thread;

use super::protocol::{encode, Request, Response, WireObservation, PROTOCOL_VERSION};
use crate::craft::{default_max_steps, CraftEnv, CraftState, CraftTask};

/// Server-side environment behind the bridge.
pub trait BridgeHandler {
    fn reset(&mut self, task_id: &str, seed: u64, max_steps: Option<usize>) -> Result<WireObservation, String>;
    fn step(&mut self, task_id: &str, action: &str) -> Result<WireObservation, String>;
    fn close(&mut self, _task_id: Option<&str>) {}
}

/// Answers requests from `reader` until end of input. Malformed lines and
/// unknown message types get an error response; the connection stays open.
pub fn serve<R: BufRead, W: Write, H: BridgeHandler + ?Sized>(
    reader: R,
    mut writer: W,
    handler: &mut H,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => dispatch(req, handler),
            Err(e) => Response::error(describe_bad_request(&line, &e)),
        };
        writer.write_all(encode(&response).as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

fn describe_bad_request(line: &str, err: &serde_json::Error) -> String {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(v) => match v.get("type").and_then(|t| t.as_str()) {
            Some(t) if !matches!(t, "hello" | "reset" | "step" | "close") => {
                format!("unknown message type {t:?}")
            }
            _ => format!("malformed request: {err}"),
        },
        Err(_) => format!("invalid json: {err}"),
    }
}

fn dispatch<H: BridgeHandler + ?Sized>(req: Request, handler: &mut H) -> Response {
    let result = match req {
        Request::Hello { .. } => {
            return Response::Ack {
                protocol_version: Some(PROTOCOL_VERSION),
            }
        }
        Request::Close { task_id } => {
            handler.close(task_id.as_deref());
            return Response::Ack { protocol_version: None };
        }
        Request::Reset {
            task_id,
            seed,
            max_steps,
        } => handler.reset(&task_id, seed, max_steps),
        Request::Step { task_id, action } => handler.step(&task_id, &action),
    };
    match result {
        Ok(obs) => Response::Observation(obs),
        Err(message) => Response::Error { message },
    }
}

/// Accepts connections on `listener`, serving each on its own thread with a
/// fresh handler. Runs until the listener fails.
pub fn serve_tcp<H, F>(listener: TcpListener, make_handler: F) -> io::Result<()>
where
    H: BridgeHandler,
    F: Fn() -> H + Send + Sync + 'static,
{
    let make_handler = std::sync::Arc::new(make_handler);
    for stream in listener.incoming() {
        let stream = stream?;
        let make = make_handler.clone();
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("bridge connection: {e}");
                    return;
                }
            };
            let mut handler = make();
            if let Err(e) = serve(reader, stream, &mut handler) {
                log::debug!("bridge connection closed: {e}");
            }
        });
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves it in the background.
pub fn spawn_loopback<H, F>(make_handler: F) -> io::Result<SocketAddr>
where
    H: BridgeHandler,
    F: Fn() -> H + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || serve_tcp(listener, make_handler));
    Ok(addr)
}

/// Serves a set of crafting tasks.
#[derive(Debug, Clone)]
pub struct CraftHandler {
    tasks: BTreeMap<String, CraftTask>,
    episode: Option<(String, CraftEnv, CraftState)>,
}

impl CraftHandler {
    pub fn new(tasks: impl IntoIterator<Item = CraftTask>) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.instruction.task_id.clone(), t)).collect(),
            episode: None,
        }
    }
}

impl BridgeHandler for CraftHandler {
    fn reset(&mut self, task_id: &str, seed: u64, max_steps: Option<usize>) -> Result<WireObservation, String> {
        let task = self
            .tasks
            .get(task_id)
            .ok_or_else(|| format!("unknown task {task_id:?}"))?;
        let env = task.env(max_steps.unwrap_or_else(|| default_max_steps(task.gold_path().len())));
        let (state, obs) = env.reset(seed);
        self.episode = Some((task_id.to_string(), env, state));
        Ok(WireObservation::new(obs.text, obs.score, obs.done))
    }

    fn step(&mut self, task_id: &str, action: &str) -> Result<WireObservation, String> {
        let (current, env, state) = self.episode.as_mut().ok_or_else(|| "episode not reset".to_string())?;
        if current != task_id {
            return Err(format!("episode not reset for task {task_id:?}"));
        }
        let (next, obs) = env.step(state, action).map_err(|e| e.to_string())?;
        *state = next;
        Ok(WireObservation::new(obs.text, obs.score, obs.done))
    }

    fn close(&mut self, _task_id: Option<&str>) {
        self.episode = None;
    }
}

/// Test fixture: `noop` answers "ok", `finish` ends the episode with score
/// 1, anything else is echoed back.
#[derive(Debug, Clone, Default)]
pub struct EchoHandler {
    active: Option<String>,
}

impl BridgeHandler for EchoHandler {
    fn reset(&mut self, task_id: &str, _seed: u64, _max_steps: Option<usize>) -> Result<WireObservation, String> {
        self.active = Some(task_id.to_string());
        let mut obs = WireObservation::new(format!("ready: {task_id}"), 0.0, false);
        obs.available_actions = Some(vec!["noop".into(), "finish".into()]);
        Ok(obs)
    }

    fn step(&mut self, task_id: &str, action: &str) -> Result<WireObservation, String> {
        if self.active.as_deref() != Some(task_id) {
            return Err(format!("episode not reset for task {task_id:?}"));
        }
        Ok(match action.trim() {
            "noop" => WireObservation::new("ok", 0.0, false),
            "finish" => WireObservation::new("finished", 1.0, true),
            other => WireObservation::new(format!("echo: {other}"), 0.0, false),
        })
    }

    fn close(&mut self, _task_id: Option<&str>) {
        self.active = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(input: &str) -> Vec<serde_json::Value> {
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, &mut EchoHandler::default()).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn one_response_per_request() {
        let replies = run(concat!(
            "{\"type\":\"hello\",\"protocol_version\":1}\n",
            "{\"type\":\"reset\",\"task_id\":\"a\"}\n",
            "{\"type\":\"teleport\"}\n",
            "not json\n",
            "{\"type\":\"step\",\"task_id\":\"a\",\"action\":\"noop\"}\n",
            "{\"type\":\"step\",\"task_id\":\"a\",\"action\":\"finish\"}\n",
            "{\"type\":\"close\"}\n",
        ));
        assert_eq!(replies.len(), 7);
        assert_eq!(replies[0]["type"], "ack");
        assert_eq!(replies[0]["protocol_version"], 1);
        assert_eq!(replies[2]["type"], "error");
        assert!(replies[2]["message"].as_str().unwrap().contains("teleport"));
        assert_eq!(replies[3]["type"], "error");
        assert_eq!(replies[4]["text"], "ok");
        assert_eq!(replies[5]["done"], true);
        assert_eq!(replies[5]["score"], 1.0);
        assert_eq!(replies[6]["type"], "ack");
    }

    #[test]
    fn step_without_reset_is_error() {
        let replies = run("{\"type\":\"step\",\"task_id\":\"a\",\"action\":\"noop\"}\n");
        assert_eq!(replies[0]["type"], "error");
    }
}

//! Remote executor adapter.
//!
//! Wire contract: the request carries plain-text renderings of the
//! instruction, the curated memory and the current observation; the response
//! carries one action line (`navigate <id>`, `query <key>`,
//! `answer <p1>,<p2>,...` or `stop`).

use std::fmt;
use std::fmt::Write as _;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ExecutorError;
use crate::curation::MemoryState;
use crate::env::{EnvAction, Environment, InfoUnit, Observation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteEndpoint {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    2
}
fn default_in_flight() -> usize {
    4
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteEndpoint {
            url: url.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorRequest {
    pub instruction: String,
    pub memory: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorResponse {
    pub action: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("transport: {0}")]
    Io(String),
    #[error("bad response body: {0}")]
    Body(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ExecutorRequest) -> Result<ExecutorResponse, TransportError>;
}

/// JSON-over-HTTP POST transport.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &RemoteEndpoint) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .build()
            .into();
        HttpTransport { url: endpoint.url.clone(), agent }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ExecutorRequest) -> Result<ExecutorResponse, TransportError> {
        let mut resp = self.agent.post(&self.url).send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Io(other.to_string()),
        })?;
        resp.body_mut().read_json::<ExecutorResponse>().map_err(|e| TransportError::Body(e.to_string()))
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct RemoteExecutor {
    endpoint: RemoteEndpoint,
    transport: Arc<dyn Transport>,
    gate: Arc<Gate>,
}

impl fmt::Debug for RemoteExecutor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteExecutor").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl RemoteExecutor {
    pub fn http(endpoint: RemoteEndpoint) -> Self {
        let transport = Arc::new(HttpTransport::new(&endpoint));
        RemoteExecutor::with_transport(endpoint, transport)
    }

    pub fn with_transport(endpoint: RemoteEndpoint, transport: Arc<dyn Transport>) -> Self {
        let gate = Arc::new(Gate { limit: endpoint.max_in_flight.max(1), in_flight: Mutex::new(0), freed: Condvar::new() });
        RemoteExecutor { endpoint, transport, gate }
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }

    pub fn request(env: &Environment, memory: &MemoryState, obs: &Observation) -> ExecutorRequest {
        ExecutorRequest {
            instruction: render_instruction(env),
            memory: render_memory(memory),
            observation: render_observation(obs),
        }
    }

    pub fn act(&self, env: &Environment, memory: &MemoryState, obs: &Observation) -> Result<EnvAction, ExecutorError> {
        let request = Self::request(env, memory, obs);
        let _permit = self.gate.acquire();
        let attempts = self.endpoint.retries + 1;
        let mut last = TransportError::Io("no attempt made".into());
        for _ in 0..attempts {
            match self.transport.send(&request) {
                Ok(resp) => {
                    return resp.action.parse().map_err(|_| ExecutorError::MalformedAction(resp.action.clone()));
                }
                Err(e) => last = e,
            }
        }
        Err(ExecutorError::Transport { attempts, last })
    }
}

pub fn render_instruction(env: &Environment) -> String {
    let task = &env.task;
    format!(
        "Collect every payload of answer family {} and submit the full set with `answer` at step {}. \
         Use `{}` to reveal the next item.",
        task.instruction_family(),
        task.consume_step,
        match env.skin {
            crate::env::Skin::Web => "navigate <id>",
            crate::env::Skin::Search => "query <key>",
        }
    )
}

fn render_unit(out: &mut String, u: &InfoUnit) {
    let _ = writeln!(out, "[{}] {:?} payload={} tokens={} seen@{}", u.id, u.kind, u.payload, u.token_cost, u.revealed_at);
}

pub fn render_memory(memory: &MemoryState) -> String {
    let mut out = String::new();
    for u in memory.units() {
        render_unit(&mut out, u);
    }
    out
}

pub fn render_observation(obs: &Observation) -> String {
    let mut out = format!("step {}\n", obs.step);
    for u in &obs.units {
        render_unit(&mut out, u);
    }
    out
}

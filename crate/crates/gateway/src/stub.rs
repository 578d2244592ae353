//! Deterministic local chat-completion endpoint.
//!
//! Responses are looked up by the SHA-256 of the last user message; unknown
//! prompts are echoed back. Failures and latency can be injected, and
//! `GET /debug/stats` reports request and concurrency counters
//! (`POST /debug/reset` zeroes them).

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgaug_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::info;

/// One recorded response, keyed by the digest of its prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubFixture {
    pub digest: String,
    /// The prompt, kept for readability; the digest is authoritative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: String,
}

impl StubFixture {
    pub fn load_jsonl(path: &Path) -> io::Result<Vec<StubFixture>> {
        let reader = io::BufReader::new(std::fs::File::open(path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fixture: StubFixture = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            out.push(fixture);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct StubConfig {
    pub fixtures: HashMap<String, String>,
    /// Delay before answering each completion request.
    pub latency: Duration,
    /// The first `fail_first` completion requests overall get `fail_status`.
    pub fail_first: u64,
    /// Each distinct prompt gets `fail_status` on its first
    /// `fail_per_prompt` requests.
    pub fail_per_prompt: u64,
    /// Prompts (by digest) that always get `fail_status`.
    pub always_fail: HashSet<String>,
    pub fail_status: u16,
    /// Answer every completion with a body that is not valid JSON.
    pub malformed: bool,
}

impl StubConfig {
    pub fn echo() -> Self {
        StubConfig {
            fail_status: 500,
            ..StubConfig::default()
        }
    }

    pub fn with_fixtures(fixtures: impl IntoIterator<Item = StubFixture>) -> Self {
        StubConfig {
            fixtures: fixtures.into_iter().map(|f| (f.digest, f.response)).collect(),
            ..StubConfig::echo()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubStats {
    /// Completion requests received.
    pub requests: u64,
    pub in_flight: u64,
    pub max_in_flight: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
    per_prompt: std::sync::Mutex<HashMap<String, u64>>,
}

impl Counters {
    fn snapshot(&self) -> StubStats {
        StubStats {
            requests: self.requests.load(Ordering::SeqCst),
            in_flight: self.in_flight.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    fn reset(&self) {
        self.requests.store(0, Ordering::SeqCst);
        self.max_in_flight
            .store(self.in_flight.load(Ordering::SeqCst), Ordering::SeqCst);
        self.per_prompt.lock().expect("stub lock").clear();
    }
}

struct Shared {
    config: StubConfig,
    counters: Counters,
}

struct InFlight<'a>(&'a Counters);

impl<'a> InFlight<'a> {
    fn enter(c: &'a Counters) -> Self {
        let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        c.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(c)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

fn last_user_message(body: &Value) -> Option<&str> {
    body.get("messages")?
        .as_array()?
        .iter()
        .rev()
        .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))?
        .get("content")?
        .as_str()
}

async fn completions(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> Response {
    let counters = &shared.counters;
    let config = &shared.config;
    let nth = counters.requests.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(counters);
    if !config.latency.is_zero() {
        tokio::time::sleep(config.latency).await;
    }
    let Some(prompt) = last_user_message(&body) else {
        return (StatusCode::BAD_REQUEST, "no user message").into_response();
    };
    let digest = sha256_hex(prompt);
    let seen = {
        let mut per = counters.per_prompt.lock().expect("stub lock");
        let n = per.entry(digest.clone()).or_insert(0);
        *n += 1;
        *n
    };
    let status = StatusCode::from_u16(config.fail_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if nth < config.fail_first || seen <= config.fail_per_prompt || config.always_fail.contains(&digest) {
        return (status, "injected failure").into_response();
    }
    if config.malformed {
        return (StatusCode::OK, "{\"choices\": [").into_response();
    }
    let text = config.fixtures.get(&digest).map(String::as_str).unwrap_or(prompt);
    let model = body.get("model").cloned().unwrap_or(Value::Null);
    Json(json!({
        "id": format!("stub-{}", &digest[..16]),
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }]
    }))
    .into_response()
}

async fn stats(State(shared): State<Arc<Shared>>) -> Json<StubStats> {
    Json(shared.counters.snapshot())
}

async fn reset(State(shared): State<Arc<Shared>>) -> StatusCode {
    shared.counters.reset();
    StatusCode::NO_CONTENT
}

/// A running stub endpoint. Dropping it shuts the server down.
pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<io::Result<()>>>,
}

impl StubServer {
    /// Binds an ephemeral port on 127.0.0.1. Must run inside a Tokio runtime.
    pub async fn spawn(config: StubConfig) -> io::Result<Self> {
        Self::bind(config, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub async fn bind(config: StubConfig, addr: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            config,
            counters: Counters::default(),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(completions))
            .route("/debug/stats", get(stats))
            .route("/debug/reset", post(reset))
            .with_state(shared.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        info!(%addr, "stub endpoint listening");
        Ok(StubServer {
            addr,
            shared,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> StubStats {
        self.shared.counters.snapshot()
    }

    pub fn reset_stats(&self) {
        self.shared.counters.reset();
    }

    /// Stops accepting connections and waits for the server task.
    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.take() {
            Some(task) => task.await.map_err(io::Error::other)?,
            None => Ok(()),
        }
    }

    /// Serves until the server task ends (for a long-running process).
    pub async fn wait(mut self) -> io::Result<()> {
        match self.task.take() {
            Some(task) => task.await.map_err(io::Error::other)?,
            None => Ok(()),
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

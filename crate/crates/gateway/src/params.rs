use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("server error: HTTP {0}")]
    Server(u16),
    #[error("request rejected: HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<GatewayError> },
    #[error("response cache: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Whether another attempt may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            GatewayError::Network(_) | GatewayError::RateLimited | GatewayError::Server(_)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Per-request timeout in seconds.
    pub timeout_secs: f64,
    /// Upper temperature bound declared by the provider.
    pub max_temperature: f64,
}

impl GenerationParams {
    pub fn new(model: impl Into<String>) -> Self {
        GenerationParams {
            model: model.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout_secs: 60.0,
            max_temperature: DEFAULT_MAX_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Params(m));
        if self.model.trim().is_empty() {
            return bad("model name is empty".into());
        }
        if !(self.max_temperature.is_finite() && self.max_temperature >= 0.0) {
            return bad(format!(
                "provider temperature bound {} is invalid",
                self.max_temperature
            ));
        }
        if !(self.temperature.is_finite() && (0.0..=self.max_temperature).contains(&self.temperature)) {
            return bad(format!(
                "temperature {} outside [0, {}]",
                self.temperature, self.max_temperature
            ));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 1000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(u64::MAX as f64 / 2.0) as u64)
    }
}

/// Where requests go. The API key is read from `api_key_env` at request
/// time and is never stored or logged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    /// Base URL, e.g. `http://127.0.0.1:8000`; `/v1/chat/completions` is appended.
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Endpoint {
            base_url: base_url.into(),
            api_key_env: None,
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub(crate) fn api_key(&self) -> Option<String> {
        let var = self.api_key_env.as_deref()?;
        std::env::var(var).ok().filter(|k| !k.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = GenerationParams::new("qwen-turbo");
        p.validate().unwrap();
        assert_eq!(p.temperature, 0.5);
        assert_eq!(p.max_tokens, 256);
        let r = RetryPolicy::default();
        assert_eq!(r.max_retries, 3);
        assert_eq!(r.backoff(0), Duration::from_secs(1));
        assert_eq!(r.backoff(2), Duration::from_secs(4));
    }

    #[test]
    fn temperature_bound_is_enforced() {
        assert!(GenerationParams::new("m").with_temperature(2.0).validate().is_ok());
        assert!(GenerationParams::new("m").with_temperature(2.5).validate().is_err());
        assert!(GenerationParams::new("m").with_temperature(-0.1).validate().is_err());
        let mut p = GenerationParams::new("m").with_temperature(1.5);
        p.max_temperature = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn url_joining() {
        assert_eq!(
            Endpoint::new("http://h:1/").completions_url(),
            "http://h:1/v1/chat/completions"
        );
    }
}

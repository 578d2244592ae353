use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::params::{Endpoint, GatewayError, GenerationParams, RetryPolicy};

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    /// HTTP attempts made, including the successful one.
    pub attempts: u32,
}

#[derive(Clone, Debug)]
pub struct ChatClient {
    http: reqwest::Client,
    endpoint: Endpoint,
    retry: RetryPolicy,
}

impl ChatClient {
    pub fn new(endpoint: Endpoint, retry: RetryPolicy) -> Result<Self, GatewayError> {
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        Ok(ChatClient { http, endpoint, retry })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// First message content of the completion for a single user prompt,
    /// retrying network errors, 429 and 5xx with exponential backoff.
    pub async fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, GatewayError> {
        params.validate()?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(prompt, params).await {
                Ok(text) => return Ok(Completion { text, attempts }),
                Err(e) if e.is_retriable() && attempts <= self.retry.max_retries => {
                    let delay = self.retry.backoff(attempts - 1);
                    warn!(attempt = attempts, error = %e, ?delay, "retrying completion");
                    tokio::time::sleep(delay).await;
                }
                Err(e) if e.is_retriable() => {
                    return Err(GatewayError::Exhausted {
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn attempt(&self, prompt: &str, params: &GenerationParams) -> Result<String, GatewayError> {
        let body = ChatRequest {
            model: &params.model,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut request = self
            .http
            .post(self.endpoint.completions_url())
            .timeout(params.timeout())
            .json(&body);
        if let Some(key) = self.endpoint.api_key() {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| GatewayError::Network(e.to_string()))?;
        let status = response.status();
        debug!(status = status.as_u16(), "completion response");
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        if status.is_server_error() {
            return Err(GatewayError::Server(status.as_u16()));
        }
        let bytes = response
            .bytes()
            .await
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        if !status.is_success() {
            let body = String::from_utf8_lossy(&bytes).chars().take(200).collect();
            return Err(GatewayError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse = serde_json::from_slice(&bytes).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Protocol("no choices in response".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

//! Client side of LLM augmentation: an OpenAI-style chat-completion client
//! with retries, a persistent JSON-lines response cache, ordered batch
//! orchestration with bounded concurrency, and a deterministic local stub
//! endpoint for tests.

pub mod batch;
pub mod cache;
pub mod client;
pub mod params;
pub mod stub;

pub use batch::{batch_augment, plan_jobs, temperature_sweep, BatchStats, JobSpec, PromptJob, PromptPlan};
pub use cache::{CacheEntry, CacheKey, ResponseCache};
pub use client::{ChatClient, Completion};
pub use params::{Endpoint, GatewayError, GenerationParams, RetryPolicy};
pub use stub::{StubConfig, StubFixture, StubServer, StubStats};

//! Turning routing decisions into prompt jobs and running them.

use futures::stream::{self, StreamExt};
use kgaug_core::digest::sha256_hex;
use kgaug_core::prompt::{PromptError, TemplateSet, COMPRESS_GENERIC, EXPAND_WORDNET};
use kgaug_core::router::{RouteAction, RouteDecision};
use kgaug_core::{EntityId, KnowledgeGraph};
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::cache::{CacheEntry, CacheKey, ResponseCache};
use crate::client::ChatClient;
use crate::params::{GatewayError, GenerationParams};

/// Which template serves each routed action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPlan {
    pub compress_template: String,
    pub expand_template: String,
}

impl Default for PromptPlan {
    fn default() -> Self {
        PromptPlan {
            compress_template: COMPRESS_GENERIC.to_string(),
            expand_template: EXPAND_WORDNET.to_string(),
        }
    }
}

impl PromptPlan {
    pub fn template_for(&self, action: RouteAction) -> Option<&str> {
        match action {
            RouteAction::Compress => Some(&self.compress_template),
            RouteAction::Expand => Some(&self.expand_template),
            RouteAction::Keep => None,
        }
    }
}

/// A rendered prompt waiting to be sent. `error` is set when the prompt
/// could not be rendered (for example, nothing to compress); such jobs are
/// never sent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub entity: EntityId,
    pub key: String,
    pub action: RouteAction,
    pub template_id: String,
    pub prompt: String,
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One LLM round trip. `raw_response` is present exactly when the job
/// completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptJob {
    pub entity: EntityId,
    pub key: String,
    pub action: RouteAction,
    pub template_id: String,
    pub prompt: String,
    pub prompt_digest: String,
    pub params: GenerationParams,
    pub raw_response: Option<String>,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Served from the cache; differs between cold and warm runs, so it is
    /// not persisted.
    #[serde(skip)]
    pub from_cache: bool,
}

impl PromptJob {
    pub fn is_completed(&self) -> bool {
        self.raw_response.is_some()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub jobs: usize,
    pub completed: usize,
    pub failed: usize,
    pub cache_hits: usize,
    /// HTTP attempts made, retries included.
    pub requests: u64,
}

/// One job per Compress/Expand decision, in decision order. Unknown
/// template ids are fatal; per-entity render failures become failed jobs.
pub fn plan_jobs(
    decisions: &[RouteDecision],
    graph: &KnowledgeGraph,
    templates: &TemplateSet,
    plan: &PromptPlan,
) -> Result<Vec<JobSpec>, PromptError> {
    let compress = templates.require(&plan.compress_template)?;
    let expand = templates.require(&plan.expand_template)?;
    let mut specs = Vec::new();
    for d in decisions {
        let template = match d.action {
            RouteAction::Compress => compress,
            RouteAction::Expand => expand,
            RouteAction::Keep => continue,
        };
        let record = graph.entity(d.entity);
        let (prompt, error) = match template.render(&record.name, &record.description) {
            Ok(p) => (p, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        specs.push(JobSpec {
            entity: d.entity,
            key: record.key.clone(),
            action: d.action,
            template_id: template.id.clone(),
            prompt_digest: sha256_hex(&prompt),
            prompt,
            error,
        });
    }
    Ok(specs)
}

fn cache_key(spec: &JobSpec, params: &GenerationParams) -> CacheKey {
    CacheKey {
        model: params.model.clone(),
        template_id: spec.template_id.clone(),
        entity: spec.key.clone(),
        temperature_bits: params.temperature.to_bits(),
        prompt_digest: spec.prompt_digest.clone(),
    }
}

async fn run_job(
    client: &ChatClient,
    cache: Option<&ResponseCache>,
    spec: &JobSpec,
    params: &GenerationParams,
) -> Result<(PromptJob, u64), GatewayError> {
    let mut job = PromptJob {
        entity: spec.entity,
        key: spec.key.clone(),
        action: spec.action,
        template_id: spec.template_id.clone(),
        prompt: spec.prompt.clone(),
        prompt_digest: spec.prompt_digest.clone(),
        params: params.clone(),
        raw_response: None,
        attempt_count: 0,
        error: spec.error.clone(),
        from_cache: false,
    };
    if spec.error.is_some() {
        return Ok((job, 0));
    }
    let key = cache_key(spec, params);
    if let Some(hit) = cache.and_then(|c| c.get(&key)) {
        job.raw_response = Some(hit.response);
        job.attempt_count = hit.attempts;
        job.from_cache = true;
        return Ok((job, 0));
    }
    match client.complete(&spec.prompt, params).await {
        Ok(completion) => {
            if let Some(cache) = cache {
                cache.insert(CacheEntry {
                    model: key.model,
                    template_id: key.template_id,
                    entity: key.entity,
                    temperature: params.temperature,
                    prompt_digest: key.prompt_digest,
                    response: completion.text.clone(),
                    attempts: completion.attempts,
                    timestamp: 0,
                })?;
            }
            job.attempt_count = completion.attempts;
            job.raw_response = Some(completion.text);
            Ok((job, completion.attempts as u64))
        }
        Err(e) => {
            let attempts = match &e {
                GatewayError::Exhausted { attempts, .. } => *attempts,
                _ => 1,
            };
            debug!(entity = %spec.key, error = %e, "job failed");
            job.attempt_count = attempts;
            job.error = Some(e.to_string());
            Ok((job, attempts as u64))
        }
    }
}

/// Runs every job with at most `concurrency_limit` requests in flight.
/// Output order equals input order; a failed job carries its error and
/// never aborts the batch. Only cache write failures are fatal.
pub async fn batch_augment(
    client: &ChatClient,
    cache: Option<&ResponseCache>,
    specs: &[JobSpec],
    params: &GenerationParams,
    concurrency_limit: usize,
) -> Result<(Vec<PromptJob>, BatchStats), GatewayError> {
    params.validate()?;
    if concurrency_limit == 0 {
        return Err(GatewayError::Params("concurrency limit must be at least 1".into()));
    }
    let results: Vec<_> = stream::iter(specs)
        .map(|spec| run_job(client, cache, spec, params))
        .buffered(concurrency_limit)
        .collect()
        .await;
    let mut stats = BatchStats {
        jobs: specs.len(),
        ..BatchStats::default()
    };
    let mut jobs = Vec::with_capacity(specs.len());
    for result in results {
        let (job, requests) = result?;
        stats.requests += requests;
        stats.cache_hits += job.from_cache as usize;
        if job.is_completed() {
            stats.completed += 1;
        } else {
            stats.failed += 1;
        }
        jobs.push(job);
    }
    info!(
        jobs = stats.jobs,
        completed = stats.completed,
        failed = stats.failed,
        cache_hits = stats.cache_hits,
        requests = stats.requests,
        temperature = params.temperature,
        "batch finished"
    );
    Ok((jobs, stats))
}

/// One full batch per temperature, in the given order. Temperature is
/// part of the cache key, so each batch is cached independently.
pub async fn temperature_sweep(
    client: &ChatClient,
    cache: Option<&ResponseCache>,
    specs: &[JobSpec],
    params: &GenerationParams,
    temperatures: &[f64],
    concurrency_limit: usize,
) -> Result<Vec<(f64, Vec<PromptJob>, BatchStats)>, GatewayError> {
    if temperatures.is_empty() {
        return Err(GatewayError::Params(
            "temperature sweep needs at least one temperature".into(),
        ));
    }
    for &t in temperatures {
        params.clone().with_temperature(t).validate()?;
    }
    let mut out = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let p = params.clone().with_temperature(t);
        let (jobs, stats) = batch_augment(client, cache, specs, &p, concurrency_limit).await?;
        out.push((t, jobs, stats));
    }
    Ok(out)
}

use std::time::Duration;

use kgaug_core::corpus::EntitySpec;
use kgaug_core::digest::sha256_hex;
use kgaug_core::prompt::TemplateSet;
use kgaug_core::router::{RouteAction, RouteDecision};
use kgaug_core::KnowledgeGraph;
use kgaug_gateway::{
    batch_augment, plan_jobs, temperature_sweep, ChatClient, Endpoint, GatewayError, GenerationParams, JobSpec,
    PromptPlan, ResponseCache, RetryPolicy, StubConfig, StubFixture, StubServer,
};

fn graph(n: usize) -> KnowledgeGraph {
    let entities = (0..n)
        .map(|i| {
            EntitySpec::new(
                format!("e{i}"),
                format!("entity {i}"),
                format!("the {i}th thing in the list"),
            )
        })
        .collect();
    KnowledgeGraph::from_parts(
        entities,
        vec![("r".into(), "related to".into())],
        [vec![], vec![], vec![]],
    )
    .unwrap()
}

fn decisions(g: &KnowledgeGraph, action: impl Fn(usize) -> RouteAction) -> Vec<RouteDecision> {
    g.entities()
        .iter()
        .enumerate()
        .map(|(i, e)| RouteDecision {
            entity: e.id,
            key: e.key.clone(),
            length: 0,
            budget: 0,
            action: action(i),
        })
        .collect()
}

fn specs(n: usize) -> Vec<JobSpec> {
    let g = graph(n);
    let d = decisions(&g, |i| {
        if i % 2 == 0 {
            RouteAction::Compress
        } else {
            RouteAction::Expand
        }
    });
    plan_jobs(&d, &g, &TemplateSet::builtin(), &PromptPlan::default()).unwrap()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_backoff_ms: 5,
        multiplier: 2.0,
    }
}

fn client(server: &StubServer) -> ChatClient {
    ChatClient::new(Endpoint::new(server.base_url()), fast_retry()).unwrap()
}

fn params() -> GenerationParams {
    GenerationParams::new("stub-model")
}

#[tokio::test]
async fn echo_returns_prompt() {
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    let out = client(&server).complete("hello there", &params()).await.unwrap();
    assert_eq!(out.text, "hello there");
    assert_eq!(out.attempts, 1);
    assert_eq!(server.stats().requests, 1);
}

#[tokio::test]
async fn fixture_is_served_by_digest() {
    let fixture = StubFixture {
        digest: sha256_hex("known prompt"),
        prompt: None,
        response: "recorded answer".into(),
    };
    let server = StubServer::spawn(StubConfig::with_fixtures([fixture])).await.unwrap();
    let c = client(&server);
    assert_eq!(
        c.complete("known prompt", &params()).await.unwrap().text,
        "recorded answer"
    );
    assert_eq!(
        c.complete("other prompt", &params()).await.unwrap().text,
        "other prompt"
    );
}

#[tokio::test]
async fn keep_only_decisions_plan_no_jobs() {
    let g = graph(5);
    let d = decisions(&g, |_| RouteAction::Keep);
    let specs = plan_jobs(&d, &g, &TemplateSet::builtin(), &PromptPlan::default()).unwrap();
    assert!(specs.is_empty());
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    let (jobs, stats) = batch_augment(&client(&server), None, &specs, &params(), 4)
        .await
        .unwrap();
    assert!(jobs.is_empty());
    assert_eq!(stats.requests, 0);
    assert_eq!(server.stats().requests, 0);
}

#[tokio::test]
async fn unknown_template_is_fatal_and_empty_compress_is_a_failed_job() {
    let g = KnowledgeGraph::from_parts(
        vec![
            EntitySpec::new("a", "alpha", ""),
            EntitySpec::new("b", "beta", "second letter"),
        ],
        vec![],
        [vec![], vec![], vec![]],
    )
    .unwrap();
    let d = decisions(&g, |_| RouteAction::Compress);
    let plan = PromptPlan {
        expand_template: "nope".into(),
        ..PromptPlan::default()
    };
    assert!(plan_jobs(&d, &g, &TemplateSet::builtin(), &plan).is_err());
    let specs = plan_jobs(&d, &g, &TemplateSet::builtin(), &PromptPlan::default()).unwrap();
    assert!(specs[0].error.is_some());
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    let (jobs, stats) = batch_augment(&client(&server), None, &specs, &params(), 2)
        .await
        .unwrap();
    assert_eq!(jobs[0].raw_response, None);
    assert!(jobs[0].error.is_some());
    assert_eq!(jobs[1].raw_response.as_deref(), Some(specs[1].prompt.as_str()));
    assert_eq!((stats.completed, stats.failed), (1, 1));
    assert_eq!(server.stats().requests, 1);
}

#[tokio::test]
async fn warm_cache_makes_no_requests_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let specs = specs(50);
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    let c = client(&server);

    let cache = ResponseCache::open(dir.path()).unwrap();
    let (cold, stats) = batch_augment(&c, Some(&cache), &specs, &params(), 8).await.unwrap();
    assert_eq!(stats.completed, 50);
    assert_eq!(server.stats().requests, 50);
    drop(cache);

    let cache = ResponseCache::open(dir.path()).unwrap();
    assert_eq!(cache.len(), 50);
    let (warm, stats) = batch_augment(&c, Some(&cache), &specs, &params(), 8).await.unwrap();
    assert_eq!(stats.cache_hits, 50);
    assert_eq!(stats.requests, 0);
    assert_eq!(server.stats().requests, 50);
    assert_eq!(
        serde_json::to_string(&cold).unwrap(),
        serde_json::to_string(&warm).unwrap()
    );
}

#[tokio::test]
async fn output_order_matches_input_and_concurrency_is_bounded() {
    let specs = specs(40);
    let config = StubConfig {
        latency: Duration::from_millis(20),
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let (jobs, _) = batch_augment(&client(&server), None, &specs, &params(), 3)
        .await
        .unwrap();
    let max = server.stats().max_in_flight;
    assert!(max <= 3, "max in flight {max}");
    assert!(max >= 2, "requests never overlapped");
    for (job, spec) in jobs.iter().zip(&specs) {
        assert_eq!(job.key, spec.key);
        assert_eq!(job.raw_response.as_deref(), Some(spec.prompt.as_str()));
    }
}

#[tokio::test]
async fn rate_limit_is_retried() {
    let config = StubConfig {
        fail_per_prompt: 2,
        fail_status: 429,
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let out = client(&server).complete("retry me", &params()).await.unwrap();
    assert_eq!(out.attempts, 3);
    assert_eq!(server.stats().requests, 3);
}

#[tokio::test]
async fn retries_are_bounded_and_client_errors_are_not_retried() {
    let config = StubConfig {
        fail_per_prompt: 100,
        fail_status: 503,
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let err = client(&server).complete("x", &params()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Exhausted { attempts: 4, .. }), "{err:?}");

    let config = StubConfig {
        fail_per_prompt: 100,
        fail_status: 400,
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let err = client(&server).complete("x", &params()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Rejected { status: 400, .. }), "{err:?}");
    assert_eq!(server.stats().requests, 1);
}

#[tokio::test]
async fn malformed_body_is_a_protocol_error() {
    let config = StubConfig {
        malformed: true,
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let err = client(&server).complete("x", &params()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Protocol(_)), "{err:?}");
    assert_eq!(server.stats().requests, 1);
}

#[tokio::test]
async fn one_failing_job_does_not_abort_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let specs = specs(10);
    let config = StubConfig {
        always_fail: [specs[4].prompt_digest.clone()].into_iter().collect(),
        ..StubConfig::echo()
    };
    let server = StubServer::spawn(config).await.unwrap();
    let cache = ResponseCache::open(dir.path()).unwrap();
    let (jobs, stats) = batch_augment(&client(&server), Some(&cache), &specs, &params(), 4)
        .await
        .unwrap();
    assert_eq!((stats.completed, stats.failed), (9, 1));
    assert!(jobs[4].raw_response.is_none());
    assert_eq!(jobs[4].attempt_count, 4);
    assert!(jobs[4].error.as_deref().unwrap().contains("500"));
    for (i, (job, spec)) in jobs.iter().zip(&specs).enumerate() {
        assert_eq!(job.key, spec.key);
        assert_eq!(job.is_completed(), i != 4);
    }
    assert_eq!(cache.len(), 9);
}

#[tokio::test]
async fn temperature_sweep_caches_each_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let specs = specs(6);
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    let c = client(&server);
    let cache = ResponseCache::open(dir.path()).unwrap();
    let sweep = temperature_sweep(&c, Some(&cache), &specs, &params(), &[0.5, 1.0, 1.5], 4)
        .await
        .unwrap();
    assert_eq!(sweep.len(), 3);
    assert_eq!(server.stats().requests, 18);
    assert_eq!(cache.len(), 18);
    let texts: Vec<Vec<_>> = sweep
        .iter()
        .map(|(_, jobs, _)| jobs.iter().map(|j| j.raw_response.clone()).collect())
        .collect();
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[1], texts[2]);
    for ((t, jobs, _), expected) in sweep.iter().zip([0.5, 1.0, 1.5]) {
        assert_eq!(*t, expected);
        assert!(jobs.iter().all(|j| j.params.temperature == expected));
    }

    let single = temperature_sweep(&c, Some(&cache), &specs, &params(), &[0.5], 4)
        .await
        .unwrap();
    let (direct, _) = batch_augment(&c, Some(&cache), &specs, &params(), 4).await.unwrap();
    assert_eq!(single[0].1, direct);
    assert_eq!(server.stats().requests, 18);

    assert!(temperature_sweep(&c, None, &specs, &params(), &[], 4).await.is_err());
    assert!(temperature_sweep(&c, None, &specs, &params(), &[0.5, 2.5], 4)
        .await
        .is_err());
}

#[tokio::test]
async fn debug_stats_endpoint_reports_counters() {
    let server = StubServer::spawn(StubConfig::echo()).await.unwrap();
    client(&server).complete("a", &params()).await.unwrap();
    let stats: serde_json::Value = reqwest::get(format!("{}/debug/stats", server.base_url()))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(stats["requests"], 1);
    assert_eq!(stats["in_flight"], 0);
    server.reset_stats();
    assert_eq!(server.stats().requests, 0);
    server.shutdown().await.unwrap();
}

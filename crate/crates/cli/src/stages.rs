//! Stage bodies shared by the subcommands and the pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use kgaug_core::assembler::{export, resolve_descriptions, ExportFormat};
use kgaug_core::cleaner::{summarize, CleanOutcome, Cleaner, CleaningRules, BUILTIN_RULES};
use kgaug_core::corpus::{graph_stats, polysemy_groups, DatasetLayout, GraphStats, PolysemyKey};
use kgaug_core::embed::{Checkpoint, CheckpointHeader, TrainConfig, TrainOutcome, Trainer};
use kgaug_core::eval::{evaluate, EvalError, KnownTriplesScorer, RankReport, TieBreak};
use kgaug_core::prompt::{TemplateSet, BUILTIN_TEMPLATES};
use kgaug_core::router::{RouteCounts, RouteDecision};
use kgaug_core::{KnowledgeGraph, Scalar, Split, SubwordVocabulary};
use kgaug_gateway::{temperature_sweep, BatchStats, ChatClient, JobSpec, PromptJob, ResponseCache};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::{LlmSection, ScalarKind};
use crate::error::EndpointUnavailable;

pub fn load_graph(dir: &Path, layout: Option<DatasetLayout>) -> Result<(KnowledgeGraph, DatasetLayout)> {
    let layout = match layout {
        Some(l) => l,
        None => DatasetLayout::detect(dir)?,
    };
    let graph =
        KnowledgeGraph::load(dir, Some(layout)).with_context(|| format!("loading dataset {}", dir.display()))?;
    for w in graph.warnings() {
        tracing::warn!("{w}");
    }
    Ok((graph, layout))
}

pub fn load_vocab(path: &Path) -> Result<SubwordVocabulary> {
    SubwordVocabulary::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

/// Template set and the text it was parsed from.
pub fn load_templates(path: Option<&Path>) -> Result<(TemplateSet, String)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let set = TemplateSet::parse(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok((set, text))
        }
        None => Ok((TemplateSet::builtin(), BUILTIN_TEMPLATES.to_string())),
    }
}

/// Cleaner and the rule text it was built from.
pub fn load_cleaner(path: Option<&Path>) -> Result<(Cleaner, String)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rules = CleaningRules::parse(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok((Cleaner::new(rules), text))
        }
        None => Ok((Cleaner::default(), BUILTIN_RULES.to_string())),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolysemySummary {
    pub key: PolysemyKey,
    pub entity_proportion: f64,
    pub group_proportion: f64,
    pub shared_groups: usize,
    pub entities_in_shared_groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub layout: DatasetLayout,
    #[serde(flatten)]
    pub counts: GraphStats,
    pub polysemy: PolysemySummary,
}

pub fn stats_report(graph: &KnowledgeGraph, layout: DatasetLayout, vocab: Option<&SubwordVocabulary>) -> StatsReport {
    let key = PolysemyKey::for_layout(layout);
    let p = polysemy_groups(graph, key);
    StatsReport {
        layout,
        counts: graph_stats(graph, vocab),
        polysemy: PolysemySummary {
            key,
            entity_proportion: p.entity_proportion,
            group_proportion: p.group_proportion,
            shared_groups: p.shared_groups,
            entities_in_shared_groups: p.entities_in_shared_groups,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSummary {
    pub budget: usize,
    pub counts: RouteCounts,
}

/// Result of one augmentation batch per temperature.
pub struct Augmented {
    pub batches: Vec<(f64, Vec<PromptJob>, BatchStats)>,
}

impl Augmented {
    pub fn requests(&self) -> u64 {
        self.batches.iter().map(|b| b.2.requests).sum()
    }

    pub fn cache_hits(&self) -> usize {
        self.batches.iter().map(|b| b.2.cache_hits).sum()
    }
}

/// Sends `specs` once per temperature (the configured one when
/// `temperatures` is empty). Fails with [`EndpointUnavailable`] when jobs
/// were sent and none completed.
pub fn augment(specs: &[JobSpec], llm: &LlmSection, cache_dir: &Path, temperatures: &[f64]) -> Result<Augmented> {
    let temps = if temperatures.is_empty() {
        vec![llm.temperature]
    } else {
        temperatures.to_vec()
    };
    if specs.is_empty() {
        let batches = temps
            .into_iter()
            .map(|t| (t, Vec::new(), BatchStats::default()))
            .collect();
        return Ok(Augmented { batches });
    }
    let params = llm.params()?;
    let sendable = specs.iter().filter(|s| s.error.is_none()).count();
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    let batches = runtime.block_on(async {
        let cache = ResponseCache::open(cache_dir)?;
        // Nothing to send: the endpoint is not needed.
        if sendable == 0 {
            return Ok::<_, anyhow::Error>(
                temps
                    .iter()
                    .map(|&t| {
                        let p = params.clone().with_temperature(t);
                        let jobs = specs.iter().map(|s| unsent_job(s, &p)).collect::<Vec<_>>();
                        let stats = BatchStats {
                            jobs: jobs.len(),
                            failed: jobs.len(),
                            ..BatchStats::default()
                        };
                        (t, jobs, stats)
                    })
                    .collect(),
            );
        }
        let client = ChatClient::new(llm.endpoint()?, llm.retry.clone())?;
        Ok(temperature_sweep(&client, Some(&cache), specs, &params, &temps, llm.max_concurrency).await?)
    })?;
    for (t, jobs, stats) in &batches {
        info!(
            temperature = t,
            jobs = stats.jobs,
            completed = stats.completed,
            failed = stats.failed,
            cache_hits = stats.cache_hits,
            requests = stats.requests,
            "augmented"
        );
        let attempted: Vec<_> = jobs
            .iter()
            .zip(specs)
            .filter(|(_, s)| s.error.is_none())
            .map(|(j, _)| j)
            .collect();
        if !attempted.is_empty() && attempted.iter().all(|j| !j.is_completed()) {
            return Err(EndpointUnavailable {
                failed: attempted.len(),
                first: attempted[0].error.clone().unwrap_or_default(),
            }
            .into());
        }
    }
    Ok(Augmented { batches })
}

fn unsent_job(spec: &JobSpec, params: &kgaug_gateway::GenerationParams) -> PromptJob {
    PromptJob {
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
    }
}

/// One outcome per job, in job order. Failed jobs are judged
/// `no_response`.
pub fn clean_jobs(jobs: &[PromptJob], graph: &KnowledgeGraph, cleaner: &Cleaner) -> Result<Vec<CleanOutcome>> {
    jobs.iter()
        .map(|job| {
            anyhow::ensure!(
                job.entity.index() < graph.num_entities() && graph.entity(job.entity).key == job.key,
                "job for `{}` does not match the dataset",
                job.key
            );
            let e = graph.entity(job.entity);
            Ok(cleaner.clean(
                job.entity,
                &job.key,
                job.action,
                job.raw_response.as_deref(),
                &e.name,
                &e.description,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub total: usize,
    pub effective: usize,
    /// Absent when there was nothing to clean.
    pub effective_rate: Option<f64>,
    pub ineffective_by_reason: BTreeMap<String, usize>,
    pub effective_by_action: BTreeMap<String, usize>,
}

pub fn clean_report(outcomes: &[CleanOutcome]) -> CleanReport {
    match summarize(outcomes) {
        Ok(s) => CleanReport {
            total: s.total,
            effective: s.effective,
            effective_rate: Some(s.effective_rate),
            ineffective_by_reason: s.ineffective_by_reason,
            effective_by_action: s.effective_by_action,
        },
        Err(_) => CleanReport::default(),
    }
}

pub fn export_dataset(
    graph: &KnowledgeGraph,
    decisions: &[RouteDecision],
    outcomes: &[CleanOutcome],
    format: ExportFormat,
    out_dir: &Path,
) -> Result<()> {
    let resolved = resolve_descriptions(graph, decisions, outcomes)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    export(&resolved, format, out_dir)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub scalar: ScalarKind,
    pub epoch_losses: Vec<f64>,
}

fn fit<F: Scalar>(graph: &KnowledgeGraph, config: &TrainConfig, out: &Path) -> Result<Vec<f64>> {
    let trainer = Trainer::<F>::new(config.clone())?;
    let every = (config.epochs / 10).max(1);
    let TrainOutcome {
        model,
        epoch_losses,
        seed,
    } = trainer.fit(
        graph.num_entities(),
        graph.num_relations(),
        graph.split(Split::Train),
        |epoch, loss| {
            if (epoch + 1) % every == 0 {
                info!(epoch = epoch + 1, loss, "training");
            }
        },
    )?;
    let entity_keys = graph.entities().iter().map(|e| e.key.clone()).collect();
    let relation_keys = graph.relations().iter().map(|r| r.key.clone()).collect();
    Checkpoint::new(model, Some(seed), entity_keys, relation_keys).save(out)?;
    Ok(epoch_losses)
}

/// Trains on the training split and writes a checkpoint to `out`.
pub fn train(graph: &KnowledgeGraph, config: &TrainConfig, scalar: ScalarKind, out: &Path) -> Result<TrainLog> {
    let epoch_losses = match scalar {
        ScalarKind::F32 => fit::<f32>(graph, config, out)?,
        ScalarKind::F64 => fit::<f64>(graph, config, out)?,
    };
    Ok(TrainLog {
        config: config.clone(),
        scalar,
        epoch_losses,
    })
}

fn check_keys(header: &CheckpointHeader, graph: &KnowledgeGraph) -> Result<()> {
    let matches = header.entity_keys.is_empty()
        || (header.entity_keys.len() == graph.num_entities()
            && header
                .entity_keys
                .iter()
                .zip(graph.entities())
                .all(|(k, e)| *k == e.key));
    if !matches {
        return Err(EvalError::Mismatch("checkpoint entities differ from the dataset".into()).into());
    }
    Ok(())
}

fn eval_checkpoint<F: Scalar>(path: &Path, graph: &KnowledgeGraph, split: Split, tie: TieBreak) -> Result<RankReport> {
    let ckpt = Checkpoint::<F>::load(path)?;
    check_keys(&ckpt.header, graph)?;
    Ok(evaluate(&ckpt.model, graph, split, tie)?)
}

/// Filtered ranking of a saved model, scored at its stored precision.
pub fn evaluate_checkpoint(path: &Path, graph: &KnowledgeGraph, split: Split, tie: TieBreak) -> Result<RankReport> {
    let header = CheckpointHeader::load(path)?;
    match header.scalar.as_str() {
        "f64" => eval_checkpoint::<f64>(path, graph, split, tie),
        _ => eval_checkpoint::<f32>(path, graph, split, tie),
    }
}

/// Scorer that knows every true triple; every metric is 1.
pub fn evaluate_perfect(graph: &KnowledgeGraph, split: Split, tie: TieBreak) -> Result<RankReport> {
    let scorer = KnownTriplesScorer::for_graph(graph);
    Ok(evaluate::<f64, _>(&scorer, graph, split, tie)?)
}

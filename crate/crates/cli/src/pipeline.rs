//! End-to-end run over a run directory.
//!
//! Layout: one subdirectory per stage holding that stage's outputs, plus
//! `manifest.json`. The response cache lives in `llm.cache_dir`
//! (`cache/` inside the run directory by default) and is not a stage
//! output.
//!
//! ```text
//! stats/stats.json
//! route/decisions.jsonl   route/summary.json
//! augment/jobs.jsonl      augment/summary.json
//! clean/outcomes.jsonl    clean/summary.json
//! export/<dataset files>
//! train/model.ckpt        train/log.json
//! eval/report.json        eval/report.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use kgaug_core::cleaner::CleanOutcome;
use kgaug_core::corpus::DatasetLayout;
use kgaug_core::digest::{sha256_file, sha256_hex};
use kgaug_core::eval::render_reports;
use kgaug_core::router::{route, RouteDecision};
use kgaug_core::{KnowledgeGraph, SubwordVocabulary};
use kgaug_gateway::{plan_jobs, BatchStats, PromptJob};
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::config::RunConfig;
use crate::error::StageFailed;
use crate::manifest::{digest_tree, list_files, outputs_intact, Manifest, RunLock, StageRecord, StageStatus};
use crate::stages;

pub const STAGES: [&str; 7] = ["stats", "route", "augment", "clean", "export", "train", "eval"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageRun {
    pub stage: &'static str,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub stages: Vec<StageRun>,
    /// HTTP attempts made by this execution.
    pub requests: u64,
}

impl RunReport {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| s.skipped)
    }
}

fn params_digest(value: &impl Serialize) -> String {
    sha256_hex(serde_json::to_vec(value).expect("stage parameters serialize"))
}

/// Lazily loaded shared inputs.
struct RunContext<'a> {
    config: &'a RunConfig,
    run_dir: &'a Path,
    graph: Option<(KnowledgeGraph, DatasetLayout)>,
    vocab: Option<SubwordVocabulary>,
    dataset_digests: BTreeMap<String, String>,
    vocab_digest: String,
    templates_digest: String,
    rules_digest: String,
    requests: u64,
}

impl RunContext<'_> {
    fn graph(&mut self) -> Result<&(KnowledgeGraph, DatasetLayout)> {
        if self.graph.is_none() {
            self.graph = Some(stages::load_graph(
                &self.config.dataset.path,
                self.config.dataset.layout,
            )?);
        }
        Ok(self.graph.as_ref().expect("graph loaded"))
    }

    fn vocab(&mut self) -> Result<&SubwordVocabulary> {
        if self.vocab.is_none() {
            self.vocab = Some(stages::load_vocab(&self.config.vocab)?);
        }
        Ok(self.vocab.as_ref().expect("vocab loaded"))
    }

    fn layout(&self) -> Result<DatasetLayout> {
        match self.config.dataset.layout {
            Some(l) => Ok(l),
            None => Ok(DatasetLayout::detect(&self.config.dataset.path)?),
        }
    }

    fn out(&self, stage: &str, file: &str) -> PathBuf {
        self.run_dir.join(stage).join(file)
    }
}

fn upstream(manifest: &Manifest, stage: &str) -> BTreeMap<String, String> {
    manifest.stage(stage).map(|r| r.outputs.clone()).unwrap_or_default()
}

fn stage_inputs(ctx: &RunContext, manifest: &Manifest, stage: &str) -> BTreeMap<String, String> {
    let mut inputs = ctx.dataset_digests.clone();
    let mut add = |k: &str, v: &str| {
        inputs.insert(k.to_string(), v.to_string());
    };
    match stage {
        "stats" | "route" => add("vocab", &ctx.vocab_digest),
        "augment" => add("templates", &ctx.templates_digest),
        "clean" => add("rules", &ctx.rules_digest),
        _ => {}
    }
    let deps: &[&str] = match stage {
        "augment" => &["route"],
        "clean" => &["augment"],
        "export" => &["route", "clean"],
        "eval" => &["train"],
        _ => &[],
    };
    for dep in deps {
        inputs.extend(upstream(manifest, dep));
    }
    inputs
}

fn stage_params(ctx: &RunContext, stage: &str) -> Result<String> {
    let c = ctx.config;
    let layout = ctx.layout()?;
    let value = match stage {
        "stats" => json!({ "layout": layout }),
        "route" => json!({ "layout": layout, "budget": c.route.budget }),
        "augment" => json!({
            "model": c.llm.model,
            "temperature": c.llm.temperature,
            "max_tokens": c.llm.max_tokens,
            "plan": c.prompt.plan(),
        }),
        "clean" => json!({}),
        "export" => json!({ "format": c.export.format }),
        "train" => {
            let t = c.train.as_ref().expect("train stage needs a train section");
            json!({ "config": t.resolve(c.seed), "scalar": t.scalar })
        }
        "eval" => json!({ "split": c.eval.split, "tie_break": c.eval.tie_break }),
        other => unreachable!("unknown stage {other}"),
    };
    Ok(params_digest(&value))
}

fn run_stage(ctx: &mut RunContext, stage: &str) -> Result<serde_json::Value> {
    let c = ctx.config;
    match stage {
        "stats" => {
            let vocab = ctx.vocab()?.clone();
            let (graph, layout) = ctx.graph()?;
            let report = stages::stats_report(graph, *layout, Some(&vocab));
            stages::write_json(&ctx.out(stage, "stats.json"), &report)?;
            Ok(json!({ "entities": report.counts.entities, "relations": report.counts.relations }))
        }
        "route" => {
            let vocab = ctx.vocab()?.clone();
            let (graph, _) = ctx.graph()?;
            let routing = route(graph, c.route.budget, &vocab)?;
            stages::write_jsonl(&ctx.out(stage, "decisions.jsonl"), &routing.decisions)?;
            let summary = stages::RouteSummary {
                budget: c.route.budget,
                counts: routing.counts,
            };
            stages::write_json(&ctx.out(stage, "summary.json"), &summary)?;
            Ok(serde_json::to_value(routing.counts)?)
        }
        "augment" => {
            let decisions: Vec<RouteDecision> = stages::read_jsonl(&ctx.out("route", "decisions.jsonl"))?;
            let (templates, _) = stages::load_templates(c.prompt.templates.as_deref())?;
            let (graph, _) = ctx.graph()?;
            let specs = plan_jobs(&decisions, graph, &templates, &c.prompt.plan())?;
            let cache_dir = c.llm.cache_dir(ctx.run_dir);
            let augmented = stages::augment(&specs, &c.llm, &cache_dir, &[])?;
            ctx.requests += augmented.requests();
            let (_, jobs, stats) = &augmented.batches[0];
            stages::write_jsonl(&ctx.out(stage, "jobs.jsonl"), jobs)?;
            stages::write_json(
                &ctx.out(stage, "summary.json"),
                &json!({
                    "jobs": stats.jobs,
                    "completed": stats.completed,
                    "failed": stats.failed,
                    "model": c.llm.model,
                    "temperature": c.llm.temperature,
                }),
            )?;
            let BatchStats {
                cache_hits, requests, ..
            } = *stats;
            Ok(json!({ "cache_hits": cache_hits, "requests": requests }))
        }
        "clean" => {
            let jobs: Vec<PromptJob> = stages::read_jsonl(&ctx.out("augment", "jobs.jsonl"))?;
            let (cleaner, _) = stages::load_cleaner(c.clean.rules.as_deref())?;
            let (graph, _) = ctx.graph()?;
            let outcomes = stages::clean_jobs(&jobs, graph, &cleaner)?;
            stages::write_jsonl(&ctx.out(stage, "outcomes.jsonl"), &outcomes)?;
            let report = stages::clean_report(&outcomes);
            stages::write_json(&ctx.out(stage, "summary.json"), &report)?;
            Ok(json!({ "effective_rate": report.effective_rate }))
        }
        "export" => {
            let decisions: Vec<RouteDecision> = stages::read_jsonl(&ctx.out("route", "decisions.jsonl"))?;
            let outcomes: Vec<CleanOutcome> = stages::read_jsonl(&ctx.out("clean", "outcomes.jsonl"))?;
            let out_dir = ctx.run_dir.join(stage);
            let (graph, _) = ctx.graph()?;
            stages::export_dataset(graph, &decisions, &outcomes, c.export.format, &out_dir)?;
            Ok(serde_json::Value::Null)
        }
        "train" => {
            let section = c.train.as_ref().expect("train stage needs a train section");
            let config = section.resolve(c.seed);
            let ckpt = ctx.out(stage, "model.ckpt");
            let (graph, _) = ctx.graph()?;
            let log = stages::train(graph, &config, section.scalar, &ckpt)?;
            stages::write_json(&ctx.out(stage, "log.json"), &log)?;
            Ok(json!({ "final_loss": log.epoch_losses.last() }))
        }
        "eval" => {
            let ckpt = ctx.out("train", "model.ckpt");
            let label = c.train.as_ref().map(|t| t.family.name()).unwrap_or("model");
            let (graph, _) = ctx.graph()?;
            let report = stages::evaluate_checkpoint(&ckpt, graph, c.eval.split, c.eval.tie_break)?;
            stages::write_json(&ctx.out(stage, "report.json"), &report)?;
            fs::write(ctx.out(stage, "report.txt"), render_reports(&[(label, &report)]))?;
            Ok(serde_json::to_value(report.overall)?)
        }
        other => unreachable!("unknown stage {other}"),
    }
}

/// Stages this config runs, in order.
pub fn active_stages(config: &RunConfig) -> Vec<&'static str> {
    STAGES
        .into_iter()
        .filter(|s| config.train.is_some() || !matches!(*s, "train" | "eval"))
        .collect()
}

/// Runs every stage in order, skipping stages whose inputs, parameters
/// and outputs match the manifest. A failing stage is recorded in the
/// manifest and halts the run.
pub fn run_pipeline(config: &RunConfig, run_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let _lock = RunLock::acquire(run_dir)?;
    let mut manifest = Manifest::load(run_dir)?.unwrap_or_default();
    let active = active_stages(config);

    // Outputs of stages the config no longer runs would go unlisted.
    for stage in STAGES.iter().filter(|s| !active.contains(s)) {
        let dir = run_dir.join(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
    }
    manifest.retain_stages(&active);

    let mut dataset_digests = BTreeMap::new();
    for rel in list_files(&config.dataset.path, &config.dataset.path)? {
        let digest = sha256_file(&config.dataset.path.join(&rel))?;
        dataset_digests.insert(format!("dataset/{rel}"), digest);
    }
    let (_, templates_text) = stages::load_templates(config.prompt.templates.as_deref())?;
    let (_, rules_text) = stages::load_cleaner(config.clean.rules.as_deref())?;
    let mut ctx = RunContext {
        config,
        run_dir,
        graph: None,
        vocab: None,
        dataset_digests,
        vocab_digest: sha256_file(&config.vocab)?,
        templates_digest: sha256_hex(templates_text),
        rules_digest: sha256_hex(rules_text),
        requests: 0,
    };

    let mut report = RunReport::default();
    for stage in active {
        let inputs = stage_inputs(&ctx, &manifest, stage);
        let params = stage_params(&ctx, stage)?;
        let fresh = manifest.stage(stage).is_some_and(|r| {
            r.status == StageStatus::Completed
                && r.inputs == inputs
                && r.params_digest == params
                && outputs_intact(run_dir, &r.outputs)
        });
        if fresh {
            info!(stage, "up to date, skipped");
            report.stages.push(StageRun { stage, skipped: true });
            continue;
        }

        let dir = run_dir.join(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        info!(stage, "running");
        let start = Instant::now();
        let result = run_stage(&mut ctx, stage);
        let duration_ms = start.elapsed().as_millis() as u64;
        let outputs = digest_tree(run_dir, stage)?;
        let (status, metrics, error) = match &result {
            Ok(m) => (StageStatus::Completed, m.clone(), None),
            Err(e) => (StageStatus::Failed, serde_json::Value::Null, Some(format!("{e:#}"))),
        };
        manifest.upsert(StageRecord {
            stage: stage.to_string(),
            status,
            inputs,
            params_digest: params,
            outputs,
            duration_ms,
            metrics,
            error,
        });
        manifest.save(run_dir)?;
        result.map_err(|e| e.context(StageFailed { stage }))?;
        report.stages.push(StageRun { stage, skipped: false });
    }
    manifest.save(run_dir)?;
    report.requests = ctx.requests;
    Ok(report)
}

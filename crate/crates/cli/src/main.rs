use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kgaug::config::{LlmSection, ScalarKind, TrainSection};
use kgaug::error::ConfigError;
use kgaug::stages;
use kgaug::{classify, run_pipeline, Overrides, RunConfig};
use kgaug_core::assembler::ExportFormat;
use kgaug_core::cleaner::CleanOutcome;
use kgaug_core::corpus::DatasetLayout;
use kgaug_core::embed::{ModelFamily, NormOrder, StepDecay};
use kgaug_core::eval::{compare_reports, render_delta, render_reports, RankReport, TieBreak};
use kgaug_core::router::{route, RouteDecision};
use kgaug_core::Split;
use kgaug_gateway::{plan_jobs, PromptJob, PromptPlan, RetryPolicy, StubConfig, StubFixture, StubServer};
use tracing_subscriber::EnvFilter;

/// Length-routed LLM augmentation of knowledge-graph entity descriptions,
/// plus embedding baselines and filtered link-prediction evaluation.
///
/// Exit codes: 0 success, 1 other error, 2 configuration, 3 parse/format,
/// 4 network (endpoint unusable), 5 training divergence, 6 I/O.
#[derive(Parser)]
#[command(name = "kgaug", version, about, long_about)]
struct Cli {
    /// Log filter, e.g. `info` or `kgaug=debug` (also `RUST_LOG`).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// native, kgbert or wordnet; detected when omitted.
    #[arg(long)]
    layout: Option<DatasetLayout>,
}

#[derive(Subcommand)]
enum Command {
    /// Print entity/relation/split counts, description lengths and polysemy as JSON.
    Stats {
        #[command(flatten)]
        data: DatasetArgs,
        /// Vocabulary for description token lengths.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Route every entity to compress, expand or keep; writes JSON lines.
    Route {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = kgaug::config::DEFAULT_BUDGET)]
        budget: usize,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send prompts for routed entities to a chat-completion endpoint.
    Augment(AugmentArgs),
    /// Judge raw responses and report per-reason counts.
    Clean {
        #[command(flatten)]
        data: DatasetArgs,
        /// Jobs file written by `augment`.
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the dataset with effective texts replacing original descriptions.
    Export {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an embedding model on the training split.
    Train(TrainArgs),
    /// Filtered link-prediction metrics for a checkpoint.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        /// Checkpoint written by `train`.
        #[arg(long, required_unless_present = "scorer")]
        model: Option<PathBuf>,
        /// `perfect`: a scorer that knows every true triple (sanity check).
        #[arg(long, value_parser = ["perfect"])]
        scorer: Option<String>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "pessimistic")]
        tie_break: TieBreak,
        /// Report JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Signed per-metric deltas between two eval reports (after minus before).
    Compare {
        before: PathBuf,
        after: PathBuf,
        /// Print the delta as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the whole pipeline from a TOML config into a run directory.
    Run(RunArgs),
    /// Serve the deterministic stub endpoint until interrupted.
    StubServer {
        /// JSON-lines fixtures: {"digest", "prompt"?, "response"}.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
    },
}

#[derive(Args)]
struct LlmArgs {
    /// Base URL of an OpenAI-style server.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Decisions file written by `route`.
    #[arg(long)]
    decisions: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    /// Comma-separated sweep; one batch per temperature.
    #[arg(long, value_delimiter = ',', conflicts_with = "temperature")]
    temperatures: Vec<f64>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    compress_template: Option<String>,
    #[arg(long)]
    expand_template: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    family: ModelFamily,
    #[arg(long, default_value = "f32")]
    scalar: String,
    #[arg(long, default_value_t = kgaug::config::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    adversarial_temperature: Option<f64>,
    #[arg(long)]
    regularization: Option<f64>,
    /// 1 or 2 (TransE).
    #[arg(long)]
    norm: Option<u32>,
    /// `every:factor`, e.g. `100:0.5`; `0:1` disables decay.
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    format: Option<ExportFormat>,
    #[command(flatten)]
    llm: LlmArgs,
}

fn parse_scalar(s: &str) -> Result<ScalarKind> {
    match s {
        "f32" => Ok(ScalarKind::F32),
        "f64" => Ok(ScalarKind::F64),
        other => Err(ConfigError::Invalid(format!("unknown scalar `{other}` (expected f32 or f64)")).into()),
    }
}

fn parse_decay(s: &str) -> Result<StepDecay> {
    let bad = || ConfigError::Invalid(format!("decay `{s}` is not `every:factor`"));
    let (every, factor) = s.split_once(':').ok_or_else(bad)?;
    Ok(StepDecay {
        every: every.trim().parse().map_err(|_| bad())?,
        factor: factor.trim().parse().map_err(|_| bad())?,
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn llm_section(args: &LlmArgs) -> LlmSection {
    let mut llm = LlmSection {
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        cache_dir: args.cache_dir.clone(),
        ..LlmSection::default()
    };
    if let Some(t) = args.temperature {
        llm.temperature = t;
    }
    if let Some(c) = args.max_concurrency {
        llm.max_concurrency = c;
    }
    llm
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let (graph, _) = stages::load_graph(&a.data.dataset, a.data.layout)?;
    let decisions: Vec<RouteDecision> = stages::read_jsonl(&a.decisions)?;
    let (templates, _) = stages::load_templates(a.templates.as_deref())?;
    let mut plan = PromptPlan::default();
    if let Some(t) = a.compress_template {
        plan.compress_template = t;
    }
    if let Some(t) = a.expand_template {
        plan.expand_template = t;
    }
    let specs = plan_jobs(&decisions, &graph, &templates, &plan)?;
    let mut llm = llm_section(&a.llm);
    llm.api_key_env = a.api_key_env;
    if let Some(n) = a.max_retries {
        llm.retry = RetryPolicy {
            max_retries: n,
            ..RetryPolicy::default()
        };
    }
    let cache_dir = llm.cache_dir.clone().unwrap_or_else(|| PathBuf::from(".kgaug-cache"));
    let augmented = stages::augment(&specs, &llm, &cache_dir, &a.temperatures)?;
    let jobs: Vec<&PromptJob> = augmented.batches.iter().flat_map(|b| &b.1).collect();
    stages::write_jsonl(&a.out, jobs)?;
    let summary: Vec<_> = augmented
        .batches
        .iter()
        .map(|(t, _, s)| serde_json::json!({ "temperature": t, "stats": s }))
        .collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (graph, _) = stages::load_graph(&a.data.dataset, a.data.layout)?;
    let mut section = TrainSection::new(a.family);
    section.scalar = parse_scalar(&a.scalar)?;
    section.dim = a.dim;
    section.epochs = a.epochs;
    section.batch_size = a.batch_size;
    section.learning_rate = a.learning_rate;
    section.negatives = a.negatives;
    section.margin = a.margin;
    section.adversarial_temperature = a.adversarial_temperature;
    section.regularization = a.regularization;
    section.norm = match a.norm {
        Some(p) => {
            Some(NormOrder::from_order(p).ok_or_else(|| ConfigError::Invalid(format!("norm {p} is not 1 or 2")))?)
        }
        None => None,
    };
    section.decay = a.decay.as_deref().map(parse_decay).transpose()?;
    let config = section.resolve(a.seed);
    config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let log = stages::train(&graph, &config, section.scalar, &a.out)?;
    println!(
        "{}",
        serde_json::json!({ "checkpoint": a.out, "epochs": log.epoch_losses.len(), "final_loss": log.epoch_losses.last() })
    );
    Ok(())
}

async fn serve_stub(fixtures: Option<PathBuf>, addr: SocketAddr, latency_ms: u64) -> Result<()> {
    let mut config = match fixtures {
        Some(p) => {
            StubConfig::with_fixtures(StubFixture::load_jsonl(&p).with_context(|| format!("loading {}", p.display()))?)
        }
        None => StubConfig::echo(),
    };
    config.latency = Duration::from_millis(latency_ms);
    let server = StubServer::bind(config, addr).await?;
    println!("stub endpoint at {}", server.base_url());
    tokio::signal::ctrl_c().await?;
    server.shutdown().await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { data, vocab } => {
            let (graph, layout) = stages::load_graph(&data.dataset, data.layout)?;
            let vocab = vocab.as_deref().map(stages::load_vocab).transpose()?;
            let report = stages::stats_report(&graph, layout, vocab.as_ref());
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Route {
            data,
            vocab,
            budget,
            out,
        } => {
            let (graph, _) = stages::load_graph(&data.dataset, data.layout)?;
            let vocab = stages::load_vocab(&vocab)?;
            let routing = route(&graph, budget, &vocab)?;
            let mut text = String::new();
            for d in &routing.decisions {
                text.push_str(&serde_json::to_string(d)?);
                text.push('\n');
            }
            write_or_print(out.as_deref(), &text)?;
            eprintln!("{}", serde_json::to_string(&routing.counts)?);
        }
        Command::Augment(a) => augment_cmd(a)?,
        Command::Clean { data, jobs, rules, out } => {
            let (graph, _) = stages::load_graph(&data.dataset, data.layout)?;
            let jobs: Vec<PromptJob> = stages::read_jsonl(&jobs)?;
            let (cleaner, _) = stages::load_cleaner(rules.as_deref())?;
            let outcomes = stages::clean_jobs(&jobs, &graph, &cleaner)?;
            stages::write_jsonl(&out, &outcomes)?;
            println!("{}", serde_json::to_string_pretty(&stages::clean_report(&outcomes))?);
        }
        Command::Export {
            data,
            decisions,
            outcomes,
            format,
            out,
        } => {
            let (graph, _) = stages::load_graph(&data.dataset, data.layout)?;
            let decisions: Vec<RouteDecision> = stages::read_jsonl(&decisions)?;
            let outcomes: Vec<CleanOutcome> = stages::read_jsonl(&outcomes)?;
            stages::export_dataset(&graph, &decisions, &outcomes, format, &out)?;
        }
        Command::Train(a) => train_cmd(a)?,
        Command::Eval {
            data,
            model,
            scorer,
            split,
            tie_break,
            out,
        } => {
            let (graph, _) = stages::load_graph(&data.dataset, data.layout)?;
            let (label, report) = match (&scorer, &model) {
                (Some(_), _) => ("perfect", stages::evaluate_perfect(&graph, split, tie_break)?),
                (None, Some(m)) => ("model", stages::evaluate_checkpoint(m, &graph, split, tie_break)?),
                (None, None) => unreachable!("clap requires --model or --scorer"),
            };
            if let Some(p) = &out {
                stages::write_json(p, &report)?;
            }
            print!("{}", render_reports(&[(label, &report)]));
        }
        Command::Compare { before, after, json } => {
            let a: RankReport = stages::read_json(&before)?;
            let b: RankReport = stages::read_json(&after)?;
            let delta = compare_reports(&a, &b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&delta)?);
            } else {
                print!("{}", render_delta(&delta));
            }
        }
        Command::Run(a) => {
            let mut config = RunConfig::load(&a.config)?;
            config.apply(&Overrides {
                seed: a.seed,
                budget: a.budget,
                endpoint: a.llm.endpoint,
                model: a.llm.model,
                temperature: a.llm.temperature,
                max_concurrency: a.llm.max_concurrency,
                cache_dir: a.llm.cache_dir,
                format: a.format,
            });
            let report = run_pipeline(&config, &a.run_dir)?;
            for s in &report.stages {
                println!("{:<8} {}", s.stage, if s.skipped { "skipped" } else { "done" });
            }
            println!("requests {}", report.requests);
        }
        Command::StubServer {
            fixtures,
            addr,
            latency_ms,
        } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve_stub(fixtures, addr, latency_ms))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&cli.log));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = classify(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(class.code() as u8)
        }
    }
}

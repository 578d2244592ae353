//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Datasets are read from `KGAUG_DATA_DIR` (default `<repo>/data`), with
//! subdirectories `wn18rr`, `fb15k-237` and `umls`. A row whose inputs are
//! absent prints FAIL with the reason and does not affect the exit status;
//! any other FAIL makes the process exit non-zero. Set
//! `KGAUG_ACCEPTANCE_STRICT=1` to fail on missing inputs too.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{mini_config, snapshot, vocab_path, Stub};
use kgaug::stages::{evaluate_checkpoint, load_graph, stats_report, train};
use kgaug::{run_pipeline, Manifest, RunConfig};
use kgaug_core::assembler::{assemble_triple, truncate, AssemblyOptions, CLS, DEFAULT_JOINER, SEP};
use kgaug_core::corpus::{EntitySpec, KnowledgeGraph, Split, Triple};
use kgaug_core::embed::{gradient_check, ModelFamily, NormOrder, TrainConfig, Trainer, DEFAULT_EPSILON};
use kgaug_core::eval::{evaluate, evaluate_triples, filtered_rank, FilterIndex, Scorer, TieBreak};
use kgaug_core::prompt::TemplateSet;
use kgaug_core::tokenizer::SubwordVocabulary;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

enum Outcome {
    Pass(String),
    Fail(String),
    /// Required input data is not available.
    Missing(String),
}

use Outcome::{Fail, Missing, Pass};

fn data_dir() -> PathBuf {
    std::env::var_os("KGAUG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| common::repo_root().join("data"))
}

fn dataset(name: &str) -> Option<PathBuf> {
    let dir = data_dir().join(name);
    dir.join("train.txt").is_file().then_some(dir)
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn timed(limit: Duration, start: Instant, outcome: Outcome) -> Outcome {
    let elapsed = start.elapsed();
    match outcome {
        Pass(msg) if elapsed >= limit => Fail(format!("{msg}; took {elapsed:.1?}, limit {limit:?}")),
        Pass(msg) => Pass(format!("{msg}; {elapsed:.1?}")),
        other => other,
    }
}

/// Folds per-dataset results: any failure fails, otherwise any gap is
/// reported as missing.
fn combine(parts: Vec<Outcome>) -> Outcome {
    let mut fails = Vec::new();
    let mut missing = Vec::new();
    let mut passes = Vec::new();
    for p in parts {
        match p {
            Pass(m) => passes.push(m),
            Fail(m) => fails.push(m),
            Missing(m) => missing.push(m),
        }
    }
    let all: Vec<String> = fails.iter().chain(&missing).chain(&passes).cloned().collect();
    let msg = all.join("; ");
    if !fails.is_empty() {
        Fail(msg)
    } else if !missing.is_empty() {
        Missing(msg)
    } else {
        Pass(msg)
    }
}

fn vocab() -> SubwordVocabulary {
    SubwordVocabulary::load(&vocab_path()).expect("shipped vocabulary")
}

fn dataset_fidelity() -> Outcome {
    let start = Instant::now();
    let table = [
        ("wn18rr", [40943, 11, 86835, 3034, 3134]),
        ("fb15k-237", [14541, 237, 272115, 17535, 20466]),
        ("umls", [135, 46, 5216, 652, 661]),
    ];
    let parts = table
        .into_iter()
        .map(|(name, expected)| {
            let Some(dir) = dataset(name) else {
                return Missing(format!("{name}: dataset missing"));
            };
            let (graph, layout) = match load_graph(&dir, None) {
                Ok(g) => g,
                Err(e) => return Fail(format!("{name}: {e:#}")),
            };
            let c = stats_report(&graph, layout, None).counts;
            let got = [c.entities, c.relations, c.train, c.valid, c.test];
            let cells = format!("{}/{}/{}/{}/{}", got[0], got[1], got[2], got[3], got[4]);
            if got == expected {
                Pass(format!("{name} {cells}"))
            } else {
                Fail(format!("{name} {cells}, expected {expected:?}"))
            }
        })
        .collect();
    timed(Duration::from_secs(30), start, combine(parts))
}

fn polysemy() -> Outcome {
    let start = Instant::now();
    let parts = [("wn18rr", 31.4), ("fb15k-237", 3.5)]
        .into_iter()
        .map(|(name, target)| {
            let Some(dir) = dataset(name) else {
                return Missing(format!("{name}: dataset missing"));
            };
            let (graph, layout) = match load_graph(&dir, None) {
                Ok(g) => g,
                Err(e) => return Fail(format!("{name}: {e:#}")),
            };
            let pct = 100.0 * stats_report(&graph, layout, None).polysemy.entity_proportion;
            let msg = format!("{name} {pct:.2}% (target {target} ± 0.5)");
            if within(pct, target, 0.5) {
                Pass(msg)
            } else {
                Fail(msg)
            }
        })
        .collect();
    timed(Duration::from_secs(10), start, combine(parts))
}

fn description_lengths() -> Outcome {
    let start = Instant::now();
    let vocab = vocab();
    let parts = [("fb15k-237", 139.0, 5.0), ("umls", 212.0, 10.0)]
        .into_iter()
        .map(|(name, target, tol)| {
            let Some(dir) = dataset(name) else {
                return Missing(format!("{name}: dataset missing"));
            };
            let (graph, layout) = match load_graph(&dir, None) {
                Ok(g) => g,
                Err(e) => return Fail(format!("{name}: {e:#}")),
            };
            let lengths = stats_report(&graph, layout, Some(&vocab))
                .counts
                .description_tokens
                .expect("vocabulary given");
            if lengths.empty_descriptions == graph.num_entities() {
                return Missing(format!("{name}: no entity descriptions in {}", dir.display()));
            }
            let msg = format!("{name} mean {:.1} tokens (target {target} ± {tol})", lengths.mean);
            if within(lengths.mean, target, tol) {
                Pass(msg)
            } else {
                Fail(msg)
            }
        })
        .collect();
    timed(Duration::from_secs(30), start, combine(parts))
}

#[derive(Deserialize)]
struct GoldenPrompt {
    template: String,
    name: String,
    description: String,
    expected: String,
}

fn prompt_fidelity() -> Outcome {
    let text = fs::read_to_string(common::fixtures().join("prompt_golden.jsonl")).expect("golden prompts");
    let set = TemplateSet::builtin();
    let mut seen = std::collections::BTreeSet::new();
    let mut count = 0;
    for line in text.lines() {
        let g: GoldenPrompt = serde_json::from_str(line).expect("golden line");
        let rendered = match set.require(&g.template).and_then(|t| t.render(&g.name, &g.description)) {
            Ok(r) => r,
            Err(e) => return Fail(format!("{}: {e}", g.template)),
        };
        if rendered.as_bytes() != g.expected.as_bytes() {
            return Fail(format!("{} for {:?}: got {rendered:?}", g.template, g.name));
        }
        seen.insert(g.template);
        count += 1;
    }
    if seen.len() != 3 {
        return Fail(format!("golden file covers {seen:?}"));
    }
    Pass(format!("{count} golden prompts over 3 templates byte-identical"))
}

struct TableScorer {
    n: usize,
    r: usize,
    scores: Vec<f64>,
}

impl TableScorer {
    fn at(&self, h: usize, r: usize, t: usize) -> f64 {
        self.scores[(h * self.r + r) * self.n + t]
    }
}

impl Scorer<f64> for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }

    fn score_tails(&self, h: usize, r: usize, out: &mut [f64]) {
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.at(h, r, t);
        }
    }

    fn score_heads(&self, r: usize, t: usize, out: &mut [f64]) {
        for (h, o) in out.iter_mut().enumerate() {
            *o = self.at(h, r, t);
        }
    }
}

/// Sorts surviving candidates by descending score and reads the answer's
/// position off the run of equal scores.
fn sort_oracle(scores: &[f64], answer: usize, known: &[usize], tie: TieBreak) -> f64 {
    let mut kept: Vec<f64> = (0..scores.len())
        .filter(|e| *e == answer || !known.contains(e))
        .map(|e| scores[e])
        .collect();
    kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let s = scores[answer];
    let first = kept.iter().position(|&x| x == s).unwrap() + 1;
    let last = kept.iter().rposition(|&x| x == s).unwrap() + 1;
    match tie {
        TieBreak::Pessimistic => last as f64,
        TieBreak::Optimistic => first as f64,
        TieBreak::Mean => (first + last) as f64 / 2.0,
    }
}

fn evaluator_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut queries, mut tied) = (0usize, 0usize);
    for g in 0..200 {
        let n = rng.random_range(1..=50);
        let r = rng.random_range(1..=4);
        let discrete = g % 2 == 0;
        let scores: Vec<f64> = (0..n * r * n)
            .map(|_| {
                if discrete {
                    f64::from(rng.random_range(0u8..4))
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let scorer = TableScorer { n, r, scores };
        let m = rng.random_range(1..=3 * n);
        let triples: Vec<Triple> = (0..m)
            .map(|_| {
                Triple::new(
                    rng.random_range(0..n) as u32,
                    rng.random_range(0..r) as u32,
                    rng.random_range(0..n) as u32,
                )
            })
            .collect();
        let filter = FilterIndex::new(triples.iter().copied());
        for tie in [TieBreak::Pessimistic, TieBreak::Optimistic, TieBreak::Mean] {
            let report = match evaluate_triples(&scorer, &filter, &triples, "test", tie) {
                Ok(r) => r,
                Err(e) => return Fail(format!("graph {g}: {e}")),
            };
            let mut buf = vec![0.0; n];
            for (i, t) in triples.iter().enumerate() {
                let (h, rel, tail) = (t.head.index(), t.relation.index(), t.tail.index());
                scorer.score_tails(h, rel, &mut buf);
                let known = filter.known_tails(h, rel);
                let want = sort_oracle(&buf, tail, known, tie);
                if report.tail_ranks[i] != want || filtered_rank(&buf, tail, known, tie) != want {
                    return Fail(format!(
                        "graph {g} triple {i} tail {tie:?}: {} vs {want}",
                        report.tail_ranks[i]
                    ));
                }
                if buf.iter().filter(|&&x| x == buf[tail]).count() > 1 {
                    tied += 1;
                }
                scorer.score_heads(rel, tail, &mut buf);
                let known = filter.known_heads(rel, tail);
                let want = sort_oracle(&buf, h, known, tie);
                if report.head_ranks[i] != want || filtered_rank(&buf, h, known, tie) != want {
                    return Fail(format!(
                        "graph {g} triple {i} head {tie:?}: {} vs {want}",
                        report.head_ranks[i]
                    ));
                }
                queries += 2;
            }
        }
    }
    if tied == 0 {
        return Fail("no tied queries were generated".into());
    }
    timed(
        Duration::from_secs(60),
        start,
        Pass(format!(
            "200 graphs, {queries} ranked queries ({tied} with ties) equal to the sort oracle"
        )),
    )
}

fn umls_smoke() -> Outcome {
    let start = Instant::now();
    let Some(dir) = dataset("umls") else {
        return Missing("umls: dataset missing".into());
    };
    let graph = match KnowledgeGraph::load(&dir, None) {
        Ok(g) => g,
        Err(e) => return Fail(format!("umls: {e}")),
    };
    let outcome = match Trainer::<f32>::new(TrainConfig::default_for(ModelFamily::TransE)).and_then(|t| t.train(&graph))
    {
        Ok(o) => o,
        Err(e) => return Fail(format!("umls: {e}")),
    };
    let report = evaluate(&outcome.model, &graph, Split::Test, TieBreak::Pessimistic).expect("umls evaluation");
    let h10 = report.overall.hits10;
    let msg = format!("UMLS TransE defaults Hits@10 {h10:.3} (> 0.9)");
    let outcome = if h10 > 0.9 { Pass(msg) } else { Fail(msg) };
    timed(Duration::from_secs(300), start, outcome)
}

fn wn18rr_recipe() -> Outcome {
    let start = Instant::now();
    let Some(dir) = dataset("wn18rr") else {
        return Missing("wn18rr: dataset missing".into());
    };
    let recipe = common::repo_root().join("configs/wn18rr_transe.toml");
    let config = match RunConfig::load(&recipe) {
        Ok(c) => c,
        Err(e) => return Fail(format!("{}: {e}", recipe.display())),
    };
    let section = config.train.as_ref().expect("recipe has a [train] section");
    let train_config = section.resolve(config.seed);
    let run = || -> anyhow::Result<(f64, f64)> {
        let (graph, _) = load_graph(&dir, None)?;
        let tmp = tempfile::tempdir()?;
        let ckpt = tmp.path().join("model.ckpt");
        train(&graph, &train_config, section.scalar, &ckpt)?;
        let report = evaluate_checkpoint(&ckpt, &graph, Split::Test, config.eval.tie_break)?;
        Ok((100.0 * report.overall.mrr, 100.0 * report.overall.hits10))
    };
    let outcome = match run() {
        Ok((mrr, h10)) => {
            let msg = format!("WN18RR TransE MRR {mrr:.1} (24.3 ± 4), Hits@10 {h10:.1} (53.2 ± 4)");
            if within(mrr, 24.3, 4.0) && within(h10, 53.2, 4.0) {
                Pass(msg)
            } else {
                Fail(msg)
            }
        }
        Err(e) => Fail(format!("wn18rr: {e:#}")),
    };
    timed(Duration::from_secs(2 * 3600), start, outcome)
}

fn embedding_reproduction() -> Outcome {
    combine(vec![wn18rr_recipe(), umls_smoke()])
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let cases = [
        (ModelFamily::TransE, NormOrder::L1),
        (ModelFamily::TransE, NormOrder::L2),
        (ModelFamily::DistMult, NormOrder::L2),
        (ModelFamily::RotatE, NormOrder::L2),
    ];
    for (family, norm) in cases {
        for seed in 0..20 {
            let report = match gradient_check(family, norm, seed, DEFAULT_EPSILON) {
                Ok(r) => r,
                Err(e) => return Fail(format!("{family:?} seed {seed}: {e}")),
            };
            if report.max_relative_error >= 1e-4 {
                return Fail(format!(
                    "{family:?} {norm:?} seed {seed}: {:.2e}",
                    report.max_relative_error
                ));
            }
            if report.max_relative_error > worst.0 {
                worst = (report.max_relative_error, family.name());
            }
        }
    }
    timed(
        Duration::from_secs(60),
        start,
        Pass(format!(
            "3 families x 20 seeds, worst {:.2e} ({}) < 1e-4",
            worst.0, worst.1
        )),
    )
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let stub = Stub::mini50();
    let cache = tempfile::tempdir().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = mini_config(&stub.base_url(), Some(cache.path()));
    if let Err(e) = run_pipeline(&config, a.path()) {
        return Fail(format!("first run: {e:#}"));
    }
    let cold = stub.requests();
    if let Err(e) = run_pipeline(&config, b.path()) {
        return Fail(format!("second run: {e:#}"));
    }
    let warm = stub.requests() - cold;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let ma = Manifest::load(a.path()).ok().flatten().map(|m| m.digest_entries());
    let mb = Manifest::load(b.path()).ok().flatten().map(|m| m.digest_entries());
    let outcome = if sa != sb {
        let differing: Vec<_> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
        Fail(format!("run directories differ: {differing:?}"))
    } else if ma.is_none() || ma != mb {
        Fail("manifest digests differ".into())
    } else if warm != 0 {
        Fail(format!("{warm} requests on the warm run"))
    } else {
        Pass(format!(
            "{} files identical, manifest digests equal, {cold} cold / 0 warm requests",
            sa.len()
        ))
    };
    timed(Duration::from_secs(60), start, outcome)
}

fn read_entities(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.splitn(3, '\t').collect();
            (f[0].to_string(), f.get(2).unwrap_or(&"").to_string())
        })
        .collect()
}

fn cleaner_accounting() -> Outcome {
    let stub = Stub::mini50();
    let run = tempfile::tempdir().unwrap();
    let config = mini_config(&stub.base_url(), None);
    if let Err(e) = run_pipeline(&config, run.path()) {
        return Fail(format!("{e:#}"));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.path().join("clean/summary.json")).unwrap()).unwrap();
    let rate = summary["effective_rate"].as_f64();
    if rate != Some(47.0 / 50.0) {
        return Fail(format!("effective_rate {rate:?}, expected 0.94"));
    }
    let original = read_entities(&config.dataset.path.join("entities.txt"));
    let exported: std::collections::HashMap<_, _> = read_entities(&run.path().join("export/entities.txt"))
        .into_iter()
        .collect();
    let mut ineffective = 0;
    for line in fs::read_to_string(run.path().join("clean/outcomes.jsonl"))
        .unwrap()
        .lines()
    {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let key = v["key"].as_str().unwrap_or_default();
        if v["verdict"] == "ineffective" {
            ineffective += 1;
            let desc = &original.iter().find(|(k, _)| k == key).unwrap().1;
            if exported.get(key) != Some(desc) {
                return Fail(format!("{key} did not fall back to its original description"));
            }
        }
    }
    if ineffective != 3 {
        return Fail(format!("{ineffective} ineffective outcomes, expected 3"));
    }
    Pass("effective_rate 0.94 (47/50); 3 ineffective entities keep their original descriptions".into())
}

const WORDS: &[&str] = &[
    "the",
    "river",
    "bank",
    "of",
    "a",
    "city",
    "unbelievable",
    "photosynthesis",
    "café",
    "naïve",
    "東京",
    "x",
    "[SEP]",
    "[CLS]",
    "mid-century",
    "don't",
    "3.14",
    "electroencephalography",
    "q",
    "zzzzqqq",
    "hello,",
    "world!",
    "ünïcödé",
];

fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn assembly_invariants() -> Outcome {
    let start = Instant::now();
    let vocab = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa55e);
    let mut checked = 0usize;
    let mut truncated = 0usize;
    while checked < 10_000 {
        let n = rng.random_range(1..=30);
        let entities: Vec<EntitySpec> = (0..n)
            .map(|i| {
                let mut name = random_text(&mut rng, 3);
                if name.is_empty() {
                    name = format!("e{i}");
                }
                EntitySpec::new(format!("e{i}"), name, random_text(&mut rng, 40))
            })
            .collect();
        let relations: Vec<(String, String)> = (0..rng.random_range(1..=5))
            .map(|i| {
                let key = format!("/rel_{i}/{}", random_text(&mut rng, 4).replace(' ', "_"));
                (key.clone(), key)
            })
            .collect();
        let rows: Vec<(String, String, String)> = (0..100)
            .map(|_| {
                (
                    format!("e{}", rng.random_range(0..n)),
                    relations.choose(&mut rng).unwrap().0.clone(),
                    format!("e{}", rng.random_range(0..n)),
                )
            })
            .collect();
        let graph = match KnowledgeGraph::from_parts(entities, relations, [rows, Vec::new(), Vec::new()]) {
            Ok(g) => g,
            Err(e) => return Fail(format!("building graph: {e}")),
        };
        let budget = rng.random_range(1..=48);
        let options = AssemblyOptions::new(budget);
        for t in graph.split(Split::Train) {
            let input = match assemble_triple(&graph, t, &options, &vocab) {
                Ok(i) => i,
                Err(e) => return Fail(format!("assembling: {e}")),
            };
            let toks = &input.tokens;
            if toks.first().map(String::as_str) != Some(CLS) {
                return Fail(format!("missing leading [CLS]: {toks:?}"));
            }
            let sep_at: Vec<usize> = (0..toks.len()).filter(|&i| toks[i] == SEP).collect();
            if sep_at.len() != 3 || sep_at[2] != toks.len() - 1 || toks.iter().filter(|x| *x == CLS).count() != 1 {
                return Fail(format!("bad [CLS]/[SEP] structure: {toks:?}"));
            }
            let entity_text = |e: &kgaug_core::EntityRecord| {
                if e.description.trim().is_empty() {
                    e.name.clone()
                } else {
                    format!("{}{DEFAULT_JOINER}{}", e.name, e.description)
                }
            };
            let relation = graph.relation(t.relation).unwrap();
            let relation_words = relation
                .key
                .split(|c: char| c == '/' || c == '_' || c.is_whitespace())
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let full = [
                vocab.tokenize(&entity_text(graph.entity(t.head))),
                vocab.tokenize(&relation_words),
                vocab.tokenize(&entity_text(graph.entity(t.tail))),
            ];
            let bounds = [(1, sep_at[0]), (sep_at[0] + 1, sep_at[1]), (sep_at[1] + 1, sep_at[2])];
            for ((lo, hi), whole) in bounds.into_iter().zip(&full) {
                let seg = &toks[lo..hi];
                let cut = truncate(whole, budget);
                if seg.len() != whole.len().min(budget) || seg != &whole[..seg.len()] || seg != cut {
                    return Fail(format!(
                        "segment is not the {budget}-token prefix: {seg:?} vs {whole:?}"
                    ));
                }
                if truncate(cut, budget) != cut {
                    return Fail("truncation is not idempotent".into());
                }
                if whole.len() > budget {
                    truncated += 1;
                }
            }
            checked += 1;
            if checked == 10_000 {
                break;
            }
        }
    }
    timed(
        Duration::from_secs(30),
        start,
        Pass(format!(
            "{checked} triples well formed; {truncated} segments truncated to a prefix"
        )),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("dataset fidelity", dataset_fidelity),
        ("polysemy statistics", polysemy),
        ("length statistics", description_lengths),
        ("prompt fidelity", prompt_fidelity),
        ("evaluator oracle equivalence", evaluator_oracle),
        ("embedding reproduction", embedding_reproduction),
        ("numerical correctness", gradients),
        ("pipeline determinism", determinism),
        ("cleaner accounting", cleaner_accounting),
        ("assembly invariants", assembly_invariants),
    ];
    let strict = std::env::var("KGAUG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut failed, mut missing) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Pass(msg) => format!("PASS  {:>2} {name}: {msg}", i + 1),
            Fail(msg) => {
                failed += 1;
                format!("FAIL  {:>2} {name}: {msg}", i + 1)
            }
            Missing(msg) => {
                missing += 1;
                format!("FAIL  {:>2} {name}: {msg} [input missing]", i + 1)
            }
        };
        println!("{line}");
    }
    println!(
        "acceptance: {} passed, {failed} failed, {missing} failed on missing inputs",
        criteria.len() - failed - missing
    );
    if failed > 0 || (strict && missing > 0) {
        std::process::exit(1);
    }
}

//! Filtered link-prediction evaluation.
//!
//! Every test triple yields two queries, one predicting the head and one the
//! tail. Candidates are all entities; candidates forming another known true
//! triple (train, valid or test) are removed before ranking.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{KnowledgeGraph, Split, Triple};
use crate::embed::EmbeddingModel;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate: the {0} split is empty")]
    EmptySplit(String),
    #[error("scorer covers {scorer} entities but the graph has {graph}")]
    EntityCount { scorer: usize, graph: usize },
    #[error("triple references entity {entity} outside the {count} candidates")]
    OutOfRange { entity: u32, count: usize },
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
}

/// Scores every candidate entity for a head or tail query.
pub trait Scorer<F: Scalar>: Sync {
    fn num_entities(&self) -> usize;
    /// `out[e]` = score of `(h, r, e)`.
    fn score_tails(&self, h: usize, r: usize, out: &mut [F]);
    /// `out[e]` = score of `(e, r, t)`.
    fn score_heads(&self, r: usize, t: usize, out: &mut [F]);
}

impl<F: Scalar> Scorer<F> for EmbeddingModel<F> {
    fn num_entities(&self) -> usize {
        EmbeddingModel::num_entities(self)
    }

    fn score_tails(&self, h: usize, r: usize, out: &mut [F]) {
        self.score_all_tails(h, r, out)
    }

    fn score_heads(&self, r: usize, t: usize, out: &mut [F]) {
        self.score_all_heads(r, t, out)
    }
}

/// Scores 1 for every known triple and 0 otherwise; with filtering this
/// ranks every true answer first.
#[derive(Clone, Debug)]
pub struct KnownTriplesScorer {
    num_entities: usize,
    known: HashSet<(usize, usize, usize)>,
}

impl KnownTriplesScorer {
    pub fn new(num_entities: usize, triples: impl IntoIterator<Item = Triple>) -> Self {
        KnownTriplesScorer {
            num_entities,
            known: triples
                .into_iter()
                .map(|t| (t.head.index(), t.relation.index(), t.tail.index()))
                .collect(),
        }
    }

    pub fn for_graph(graph: &KnowledgeGraph) -> Self {
        Self::new(graph.num_entities(), graph.all_triples().copied())
    }
}

impl<F: Scalar> Scorer<F> for KnownTriplesScorer {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn score_tails(&self, h: usize, r: usize, out: &mut [F]) {
        for (e, s) in out.iter_mut().enumerate() {
            *s = if self.known.contains(&(h, r, e)) {
                F::one()
            } else {
                F::zero()
            };
        }
    }

    fn score_heads(&self, r: usize, t: usize, out: &mut [F]) {
        for (e, s) in out.iter_mut().enumerate() {
            *s = if self.known.contains(&(e, r, t)) {
                F::one()
            } else {
                F::zero()
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
}

/// Placement of the true answer among candidates with an equal score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// After every equal-scored competitor.
    #[default]
    Pessimistic,
    /// Before every equal-scored competitor.
    Optimistic,
    /// Midway between the two.
    Mean,
}

impl std::str::FromStr for TieBreak {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pessimistic" => Ok(TieBreak::Pessimistic),
            "optimistic" => Ok(TieBreak::Optimistic),
            "mean" => Ok(TieBreak::Mean),
            other => Err(format!("unknown tie-break mode `{other}`")),
        }
    }
}

/// Known true answers for every `(h, r, ?)` and `(?, r, t)` pattern.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), Vec<usize>>,
    heads: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn new(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut index = FilterIndex::default();
        for t in triples {
            let (h, r, e) = (t.head.index(), t.relation.index(), t.tail.index());
            index.tails.entry((h, r)).or_default().push(e);
            index.heads.entry((r, e)).or_default().push(h);
        }
        for list in index.tails.values_mut().chain(index.heads.values_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        index
    }

    /// Filter over train ∪ valid ∪ test.
    pub fn for_graph(graph: &KnowledgeGraph) -> Self {
        Self::new(graph.all_triples().copied())
    }

    pub fn known_tails(&self, h: usize, r: usize) -> &[usize] {
        self.tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn known_heads(&self, r: usize, t: usize) -> &[usize] {
        self.heads.get(&(r, t)).map_or(&[], Vec::as_slice)
    }
}

/// NaN sorts below every number.
fn key<F: Scalar>(x: F) -> F {
    if x.is_nan() {
        F::neg_infinity()
    } else {
        x
    }
}

/// Rank of `answer` in `scores` after dropping every candidate in `filtered`
/// except the answer itself.
pub fn filtered_rank<F: Scalar>(scores: &[F], answer: usize, filtered: &[usize], tie: TieBreak) -> f64 {
    let target = key(scores[answer]);
    let classify = |s: F| {
        let s = key(s);
        (s > target, s == target)
    };
    let (mut greater, mut equal) = (0usize, 0usize);
    for (e, &s) in scores.iter().enumerate() {
        if e == answer {
            continue;
        }
        let (g, q) = classify(s);
        greater += g as usize;
        equal += q as usize;
    }
    let owned;
    let filtered = if filtered.windows(2).all(|w| w[0] < w[1]) {
        filtered
    } else {
        let mut v = filtered.to_vec();
        v.sort_unstable();
        v.dedup();
        owned = v;
        &owned
    };
    for &e in filtered {
        if e == answer || e >= scores.len() {
            continue;
        }
        let (g, q) = classify(scores[e]);
        greater -= g as usize;
        equal -= q as usize;
    }
    let base = 1.0 + greater as f64;
    match tie {
        TieBreak::Pessimistic => base + equal as f64,
        TieBreak::Optimistic => base,
        TieBreak::Mean => base + equal as f64 / 2.0,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mean_rank: f64,
}

impl Metrics {
    /// Aggregates ranks in slice order.
    pub fn from_ranks<'a>(ranks: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut rr, mut h1, mut h3, mut h10, mut sum) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &r in ranks {
            n += 1;
            rr += 1.0 / r;
            h1 += (r <= 1.0) as u8 as f64;
            h3 += (r <= 3.0) as u8 as f64;
            h10 += (r <= 10.0) as u8 as f64;
            sum += r;
        }
        if n == 0 {
            return Metrics::default();
        }
        let d = n as f64;
        Metrics {
            count: n,
            mrr: rr / d,
            hits1: h1 / d,
            hits3: h3 / d,
            hits10: h10 / d,
            mean_rank: sum / d,
        }
    }

    fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("MRR", self.mrr),
            ("Hits@1", self.hits1),
            ("Hits@3", self.hits3),
            ("Hits@10", self.hits10),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub split: String,
    pub tie_break: TieBreak,
    pub num_entities: usize,
    /// Head-prediction rank of each evaluated triple, in input order.
    pub head_ranks: Vec<f64>,
    /// Tail-prediction rank of each evaluated triple, in input order.
    pub tail_ranks: Vec<f64>,
    pub overall: Metrics,
    pub head: Metrics,
    pub tail: Metrics,
}

impl RankReport {
    pub fn from_ranks(
        split: &str,
        tie_break: TieBreak,
        num_entities: usize,
        head_ranks: Vec<f64>,
        tail_ranks: Vec<f64>,
    ) -> Self {
        let head = Metrics::from_ranks(&head_ranks);
        let tail = Metrics::from_ranks(&tail_ranks);
        let overall = Metrics::from_ranks(head_ranks.iter().chain(&tail_ranks));
        RankReport {
            split: split.to_string(),
            tie_break,
            num_entities,
            head_ranks,
            tail_ranks,
            overall,
            head,
            tail,
        }
    }

    fn metrics(&self, direction: Option<Direction>) -> &Metrics {
        match direction {
            None => &self.overall,
            Some(Direction::Head) => &self.head,
            Some(Direction::Tail) => &self.tail,
        }
    }
}

/// Ranks head and tail queries for `triples`, filtering with `filter`.
pub fn evaluate_triples<F: Scalar, S: Scorer<F> + ?Sized>(
    scorer: &S,
    filter: &FilterIndex,
    triples: &[Triple],
    split: &str,
    tie: TieBreak,
) -> Result<RankReport, EvalError> {
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(split.to_string()));
    }
    let n = scorer.num_entities();
    for t in triples {
        for e in [t.head, t.tail] {
            if e.index() >= n {
                return Err(EvalError::OutOfRange { entity: e.0, count: n });
            }
        }
    }
    let ranks: Vec<(f64, f64)> = triples
        .par_iter()
        .map_init(
            || vec![F::zero(); n],
            |buf, t| {
                let (h, r, e) = (t.head.index(), t.relation.index(), t.tail.index());
                scorer.score_heads(r, e, buf);
                let head = filtered_rank(buf, h, filter.known_heads(r, e), tie);
                scorer.score_tails(h, r, buf);
                let tail = filtered_rank(buf, e, filter.known_tails(h, r), tie);
                (head, tail)
            },
        )
        .collect();
    let (head_ranks, tail_ranks) = ranks.into_iter().unzip();
    Ok(RankReport::from_ranks(split, tie, n, head_ranks, tail_ranks))
}

/// Evaluates one split of `graph`, filtering against all of its splits.
pub fn evaluate<F: Scalar, S: Scorer<F> + ?Sized>(
    scorer: &S,
    graph: &KnowledgeGraph,
    split: Split,
    tie: TieBreak,
) -> Result<RankReport, EvalError> {
    if scorer.num_entities() != graph.num_entities() {
        return Err(EvalError::EntityCount {
            scorer: scorer.num_entities(),
            graph: graph.num_entities(),
        });
    }
    let filter = FilterIndex::for_graph(graph);
    evaluate_triples(scorer, &filter, graph.split(split), split.name(), tie)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub direction: Option<Direction>,
    pub metric: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub split: String,
    pub rows: Vec<DeltaRow>,
}

/// Per-metric `after - before`, overall and per direction.
pub fn compare_reports(before: &RankReport, after: &RankReport) -> Result<ReportDelta, EvalError> {
    if before.split != after.split {
        return Err(EvalError::Mismatch(format!(
            "splits {} and {}",
            before.split, after.split
        )));
    }
    if before.head.count != after.head.count || before.tail.count != after.tail.count {
        return Err(EvalError::Mismatch(format!(
            "query counts {}/{} and {}/{}",
            before.head.count, before.tail.count, after.head.count, after.tail.count
        )));
    }
    let mut rows = Vec::new();
    for direction in [None, Some(Direction::Head), Some(Direction::Tail)] {
        let (a, b) = (before.metrics(direction), after.metrics(direction));
        for ((name, x), (_, y)) in a.values().into_iter().zip(b.values()) {
            rows.push(DeltaRow {
                direction,
                metric: name.to_string(),
                before: x,
                after: y,
                delta: y - x,
            });
        }
    }
    Ok(ReportDelta {
        split: before.split.clone(),
        rows,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Aligned table with one row per labelled report, metrics in percent.
pub fn render_reports(rows: &[(&str, &RankReport)]) -> String {
    let header = ["Model", "MRR", "Hits@1", "Hits@3", "Hits@10"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(label, r)| {
            let m = &r.overall;
            [label.to_string(), pct(m.mrr), pct(m.hits1), pct(m.hits3), pct(m.hits10)]
        })
        .collect();
    table(&header, &body)
}

/// Aligned delta table; positive deltas carry a `+` sign.
pub fn render_delta(delta: &ReportDelta) -> String {
    let header = ["Direction", "Metric", "Before", "After", "Delta"];
    let body: Vec<[String; 5]> = delta
        .rows
        .iter()
        .map(|row| {
            let dir = match row.direction {
                None => "both",
                Some(Direction::Head) => "head",
                Some(Direction::Tail) => "tail",
            };
            [
                dir.to_string(),
                row.metric.clone(),
                pct(row.before),
                pct(row.after),
                format!("{:+.1}", 100.0 * row.delta),
            ]
        })
        .collect();
    table(&header, &body)
}

fn table<const N: usize>(header: &[&str; N], body: &[[String; N]]) -> String {
    let mut widths: [usize; N] = header.map(str::len);
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "  {cell:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in body {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scorer_is_last_under_pessimistic_ties() {
        let scores = vec![0.5f64; 7];
        assert_eq!(filtered_rank(&scores, 3, &[], TieBreak::Pessimistic), 7.0);
        assert_eq!(filtered_rank(&scores, 3, &[], TieBreak::Optimistic), 1.0);
        assert_eq!(filtered_rank(&scores, 3, &[], TieBreak::Mean), 4.0);
    }

    #[test]
    fn filtering_removes_competitors_but_not_the_answer() {
        let scores = [0.9f64, 0.8, 0.7, 0.1];
        assert_eq!(filtered_rank(&scores, 2, &[], TieBreak::Pessimistic), 3.0);
        assert_eq!(filtered_rank(&scores, 2, &[0, 2], TieBreak::Pessimistic), 2.0);
        assert_eq!(filtered_rank(&scores, 2, &[0, 1, 2], TieBreak::Pessimistic), 1.0);
    }

    #[test]
    fn nan_scores_rank_last() {
        let scores = [f64::NAN, 0.2, 0.1];
        assert_eq!(filtered_rank(&scores, 0, &[], TieBreak::Pessimistic), 3.0);
        assert_eq!(filtered_rank(&scores, 2, &[], TieBreak::Pessimistic), 2.0);
    }

    #[test]
    fn hand_computed_aggregates() {
        // Ranks 1, 2, 4, 20: MRR = (1 + 0.5 + 0.25 + 0.05) / 4 = 0.45.
        let m = Metrics::from_ranks(&[1.0, 2.0, 4.0, 20.0]);
        assert!((m.mrr - 0.45).abs() < 1e-15);
        assert_eq!((m.hits1, m.hits3, m.hits10), (0.25, 0.5, 0.75));
        assert_eq!(m.mean_rank, 6.75);
    }

    #[test]
    fn self_comparison_is_zero() {
        let r = RankReport::from_ranks("test", TieBreak::Pessimistic, 10, vec![1.0, 3.0], vec![2.0, 9.0]);
        let d = compare_reports(&r, &r).unwrap();
        assert_eq!(d.rows.len(), 12);
        assert!(d.rows.iter().all(|row| row.delta == 0.0));
    }

    #[test]
    fn known_deltas() {
        let a = RankReport::from_ranks("test", TieBreak::Pessimistic, 10, vec![2.0], vec![2.0]);
        let b = RankReport::from_ranks("test", TieBreak::Pessimistic, 10, vec![1.0], vec![4.0]);
        let d = compare_reports(&a, &b).unwrap();
        let get = |dir, m: &str| {
            d.rows
                .iter()
                .find(|r| r.direction == dir && r.metric == m)
                .unwrap()
                .delta
        };
        assert_eq!(get(Some(Direction::Head), "MRR"), 0.5);
        assert_eq!(get(Some(Direction::Tail), "MRR"), -0.25);
        assert_eq!(get(None, "MRR"), 0.125);
        assert_eq!(get(None, "Hits@1"), 0.5);
        let text = render_delta(&d);
        assert!(text.contains("+12.5"));
        assert!(text.contains("-25.0"));
    }

    #[test]
    fn mismatched_splits_rejected() {
        let a = RankReport::from_ranks("test", TieBreak::Pessimistic, 10, vec![2.0], vec![2.0]);
        let b = RankReport::from_ranks("valid", TieBreak::Pessimistic, 10, vec![2.0], vec![2.0]);
        assert!(matches!(compare_reports(&a, &b), Err(EvalError::Mismatch(_))));
    }

    #[test]
    fn perfect_scorer() {
        let triples = vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(3, 1, 0)];
        let scorer = KnownTriplesScorer::new(5, triples.clone());
        let filter = FilterIndex::new(triples.clone());
        let r = evaluate_triples::<f32, _>(&scorer, &filter, &triples, "test", TieBreak::Pessimistic).unwrap();
        assert_eq!(r.overall.mrr, 1.0);
        assert_eq!(r.overall.hits1, 1.0);
    }

    #[test]
    fn empty_split_is_an_error() {
        let scorer = KnownTriplesScorer::new(2, vec![]);
        let err = evaluate_triples::<f64, _>(&scorer, &FilterIndex::default(), &[], "test", TieBreak::Pessimistic)
            .unwrap_err();
        assert_eq!(err, EvalError::EmptySplit("test".into()));
    }

    #[test]
    fn table_is_aligned() {
        let r = RankReport::from_ranks("test", TieBreak::Pessimistic, 10, vec![1.0], vec![2.0]);
        let text = render_reports(&[("TransE", &r), ("TransE + aug", &r)]);
        let widths: Vec<usize> = text.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
        assert!(text.contains("75.0"));
    }
}

//! Length-based routing: every entity is compressed, expanded or kept
//! depending on how its name plus description compares to the encoder
//! budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityId, EntityRecord, KnowledgeGraph};
use crate::tokenizer::SubwordVocabulary;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("token budget must be at least 1, got {0}")]
    BadBudget(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteAction {
    Compress,
    Expand,
    Keep,
}

impl RouteAction {
    pub fn for_length(length: usize, budget: usize) -> Self {
        match length.cmp(&budget) {
            std::cmp::Ordering::Greater => RouteAction::Compress,
            std::cmp::Ordering::Less => RouteAction::Expand,
            std::cmp::Ordering::Equal => RouteAction::Keep,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RouteAction::Compress => "compress",
            RouteAction::Expand => "expand",
            RouteAction::Keep => "keep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub entity: EntityId,
    /// Dataset key of the entity, carried for readable decision files.
    pub key: String,
    pub length: usize,
    pub budget: usize,
    pub action: RouteAction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteCounts {
    pub compress: usize,
    pub expand: usize,
    pub keep: usize,
}

impl RouteCounts {
    pub fn total(&self) -> usize {
        self.compress + self.expand + self.keep
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub decisions: Vec<RouteDecision>,
    pub counts: RouteCounts,
}

/// Tokens in the entity name plus tokens in its original description.
pub fn entity_length(record: &EntityRecord, vocab: &SubwordVocabulary) -> usize {
    vocab.token_length(&record.name) + vocab.token_length(&record.description)
}

/// Routes every entity, in entity order.
pub fn route(graph: &KnowledgeGraph, budget: usize, vocab: &SubwordVocabulary) -> Result<Routing, RouteError> {
    if budget < 1 {
        return Err(RouteError::BadBudget(budget));
    }
    let decisions: Vec<RouteDecision> = graph
        .entities()
        .par_iter()
        .map(|e| {
            let length = entity_length(e, vocab);
            RouteDecision {
                entity: e.id,
                key: e.key.clone(),
                length,
                budget,
                action: RouteAction::for_length(length, budget),
            }
        })
        .collect();
    let mut counts = RouteCounts::default();
    for d in &decisions {
        match d.action {
            RouteAction::Compress => counts.compress += 1,
            RouteAction::Expand => counts.expand += 1,
            RouteAction::Keep => counts.keep += 1,
        }
    }
    Ok(Routing { decisions, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySpec;

    fn vocab() -> SubwordVocabulary {
        SubwordVocabulary::from_tokens(["[UNK]", "a", "b", "c", "d", "e"]).unwrap()
    }

    fn graph(texts: &[(&str, &str)]) -> KnowledgeGraph {
        let ents = texts
            .iter()
            .enumerate()
            .map(|(i, (n, d))| EntitySpec::new(format!("e{i}"), *n, *d))
            .collect();
        KnowledgeGraph::from_parts(ents, vec![], Default::default()).unwrap()
    }

    #[test]
    fn zero_budget_rejected() {
        assert_eq!(route(&graph(&[]), 0, &vocab()).unwrap_err(), RouteError::BadBudget(0));
    }

    #[test]
    fn name_only_entity() {
        let g = graph(&[("a b", "")]);
        assert_eq!(entity_length(&g.entities()[0], &vocab()), 2);
    }

    #[test]
    fn exact_budget_is_kept() {
        let g = graph(&[("a", "b c"), ("a", "b c d e"), ("a", "")]);
        let r = route(&g, 3, &vocab()).unwrap();
        let actions: Vec<_> = r.decisions.iter().map(|d| d.action).collect();
        assert_eq!(
            actions,
            vec![RouteAction::Keep, RouteAction::Compress, RouteAction::Expand]
        );
        assert_eq!(
            r.counts,
            RouteCounts {
                compress: 1,
                expand: 1,
                keep: 1
            }
        );
    }

    #[test]
    fn large_budget_expands_everything() {
        let g = graph(&[("a", "b c"), ("a", "b c d e")]);
        let r = route(&g, 1000, &vocab()).unwrap();
        assert!(r.decisions.iter().all(|d| d.action == RouteAction::Expand));
    }
}

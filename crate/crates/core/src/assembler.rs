//! Truncation, `[CLS]`/`[SEP]` input assembly and augmented dataset export.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleaner::CleanOutcome;
use crate::corpus::{sanitize_field, write_lines, CorpusError, EntityId, EntityRecord, KnowledgeGraph, Triple};
use crate::router::{RouteAction, RouteDecision};
use crate::tokenizer::SubwordVocabulary;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const DEFAULT_JOINER: &str = ": ";

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("{} entity(ies) routed for augmentation have no cleaning outcome: {}", .0.len(), .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("unknown export format `{0}` (expected tsv or jsonl)")]
    BadFormat(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// First `budget` items of `tokens`.
pub fn truncate<T>(tokens: &[T], budget: usize) -> &[T] {
    &tokens[..tokens.len().min(budget)]
}

/// Relation label with path separators and underscores turned into
/// single spaces (`/people/person/place_of_birth` → `people person place of birth`).
pub fn relation_surface(label: &str) -> String {
    label
        .split(|c: char| c == '/' || c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `[CLS] head [SEP] relation [SEP] tail [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledInput {
    pub tokens: Vec<String>,
}

impl AssembledInput {
    pub fn segments(&self) -> Vec<&[String]> {
        let body = &self.tokens[1..];
        let mut out: Vec<&[String]> = body.split(|t| t == SEP).collect();
        // The trailing [SEP] leaves an empty final piece.
        out.pop();
        out
    }

    /// Exactly one leading `[CLS]`, three `[SEP]`, the last one final.
    pub fn is_well_formed(&self) -> bool {
        let cls = self.tokens.iter().filter(|t| *t == CLS).count();
        let sep = self.tokens.iter().filter(|t| *t == SEP).count();
        self.tokens.first().map(String::as_str) == Some(CLS)
            && self.tokens.last().map(String::as_str) == Some(SEP)
            && cls == 1
            && sep == 3
    }
}

/// Options for entity segments.
#[derive(Clone, Debug)]
pub struct AssemblyOptions {
    pub budget: usize,
    /// Placed between entity name and description.
    pub joiner: String,
}

impl AssemblyOptions {
    pub fn new(budget: usize) -> Self {
        AssemblyOptions {
            budget,
            joiner: DEFAULT_JOINER.to_string(),
        }
    }
}

/// Entity text fed to the encoder: `name: description`, or just the name
/// when there is no description.
pub fn entity_text(record: &EntityRecord, joiner: &str) -> String {
    let desc = record.final_description();
    if desc.trim().is_empty() {
        record.name.clone()
    } else {
        format!("{}{}{}", record.name, joiner, desc)
    }
}

/// Tokens reserved by the special markers never come from the text, so
/// literal `[CLS]` / `[SEP]` in text is tokenized as ordinary characters.
pub fn assemble_input(
    head: &EntityRecord,
    relation_text: &str,
    tail: &EntityRecord,
    options: &AssemblyOptions,
    vocab: &SubwordVocabulary,
) -> AssembledInput {
    let head_tokens = vocab.tokenize(&entity_text(head, &options.joiner));
    let rel_tokens = vocab.tokenize(&relation_surface(relation_text));
    let tail_tokens = vocab.tokenize(&entity_text(tail, &options.joiner));
    let mut tokens = Vec::with_capacity(4 + 3 * options.budget);
    tokens.push(CLS.to_string());
    for segment in [&head_tokens, &rel_tokens, &tail_tokens] {
        tokens.extend_from_slice(truncate(segment, options.budget));
        tokens.push(SEP.to_string());
    }
    AssembledInput { tokens }
}

pub fn assemble_triple(
    graph: &KnowledgeGraph,
    triple: &Triple,
    options: &AssemblyOptions,
    vocab: &SubwordVocabulary,
) -> Result<AssembledInput, AssembleError> {
    let n = graph.num_entities() as u32;
    for e in [triple.head, triple.tail] {
        if e.0 >= n {
            return Err(AssembleError::UnknownEntity(e.0));
        }
    }
    let relation = graph
        .relation(triple.relation)
        .ok_or(AssembleError::UnknownRelation(triple.relation.0))?;
    Ok(assemble_input(
        graph.entity(triple.head),
        &relation.key,
        graph.entity(triple.tail),
        options,
        vocab,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    /// Native layout: `entities.txt` as `id<TAB>name[<TAB>description]`.
    Tsv,
    /// Same triples, entity records as `entities.jsonl`.
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = AssembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(ExportFormat::Tsv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(AssembleError::BadFormat(other.to_string())),
        }
    }
}

#[derive(Serialize)]
struct EntityLine<'a> {
    id: &'a str,
    name: &'a str,
    description: &'a str,
}

/// Applies cleaning outcomes to a copy of `graph`, checking that every
/// entity routed for augmentation has an outcome.
pub fn resolve_descriptions(
    graph: &KnowledgeGraph,
    decisions: &[RouteDecision],
    outcomes: &[CleanOutcome],
) -> Result<KnowledgeGraph, AssembleError> {
    let by_entity: HashMap<EntityId, &CleanOutcome> = outcomes.iter().map(|o| (o.entity, o)).collect();
    let mut unresolved = Vec::new();
    let mut resolved = graph.clone();
    for d in decisions {
        if d.entity.index() >= graph.num_entities() {
            return Err(AssembleError::UnknownEntity(d.entity.0));
        }
        if d.action == RouteAction::Keep {
            continue;
        }
        match by_entity.get(&d.entity) {
            Some(o) => {
                let text = o.verdict.effective_text().map(str::to_string);
                resolved.set_augmented_description(d.entity, text);
            }
            None => unresolved.push(graph.entity(d.entity).key.clone()),
        }
    }
    if !unresolved.is_empty() {
        return Err(AssembleError::Unresolved(unresolved));
    }
    Ok(resolved)
}

/// Writes triple files unchanged plus entity text carrying each entity's
/// final description.
pub fn export(graph: &KnowledgeGraph, format: ExportFormat, out_dir: &Path) -> Result<(), AssembleError> {
    graph.write_native_with(out_dir, |e| e.final_description())?;
    if format == ExportFormat::Jsonl {
        std::fs::remove_file(out_dir.join("entities.txt"))?;
        let lines = graph.entities().iter().map(|e| {
            serde_json::to_string(&EntityLine {
                id: &e.key,
                name: &sanitize_field(&e.name),
                description: &sanitize_field(e.final_description()),
            })
            .expect("entity line serializes")
        });
        write_lines(&out_dir.join("entities.jsonl"), lines)?;
    }
    Ok(())
}

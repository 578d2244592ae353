//! Knowledge graph datasets: triple files, entity/relation text tables,
//! dataset statistics and polysemy groups.
//!
//! Three on-disk layouts are understood:
//!
//! | layout    | triples                          | entity text                                   |
//! |-----------|----------------------------------|-----------------------------------------------|
//! | `native`  | `train.txt` `valid.txt` `test.txt` | `entities.txt`: `id<TAB>name[<TAB>description]` |
//! | `kgbert`  | `train.tsv` `dev.tsv` `test.tsv`   | `entity2text.txt` names, `entity2textlong.txt` descriptions |
//! | `wordnet` | as `kgbert`                      | `entity2text.txt`: `id<TAB>name, description`  |
//!
//! Relations come from `relations.txt` (`id[<TAB>text]`) in the native
//! layout and from `relation2text.txt` / `relations.txt` otherwise.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::tokenizer::SubwordVocabulary;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{source_name}:{line}: expected 3 tab-separated fields, found {found}")]
    Malformed {
        source_name: String,
        line: usize,
        found: usize,
    },
    #[error("{source_name}:{line}: unknown entity id `{id}`")]
    UnknownEntity {
        source_name: String,
        line: usize,
        id: String,
    },
    #[error("{source_name}:{line}: unknown relation id `{id}`")]
    UnknownRelation {
        source_name: String,
        line: usize,
        id: String,
    },
    #[error("{source_name}: duplicate id `{id}` on lines {first} and {second}")]
    DuplicateId {
        source_name: String,
        id: String,
        first: usize,
        second: usize,
    },
    #[error("{source_name}:{line}: missing id field")]
    MissingId { source_name: String, line: usize },
    #[error("dataset directory {0} has no recognizable entity file")]
    UnknownLayout(PathBuf),
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("unknown dataset layout `{0}` (expected native, kgbert or wordnet)")]
    BadLayoutName(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: EntityId,
    /// Dataset identifier, e.g. a WordNet offset or a Freebase mid.
    pub key: String,
    pub name: String,
    pub description: String,
    pub augmented_description: Option<String>,
}

impl EntityRecord {
    /// Augmented text when present, otherwise the original description.
    pub fn final_description(&self) -> &str {
        self.augmented_description.as_deref().unwrap_or(&self.description)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub id: RelationId,
    pub key: String,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn candidates(self) -> &'static [&'static str] {
        match self {
            Split::Train => &["train.txt", "train.tsv"],
            Split::Valid => &["valid.txt", "dev.tsv", "valid.tsv", "dev.txt"],
            Split::Test => &["test.txt", "test.tsv"],
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Interned string ids; index order is load order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdTable {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing index when `key` is already present.
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        let i = self.keys.len() as u32;
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), i);
        i
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, i: u32) -> &str {
        &self.keys[i as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdTable {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut table = IdTable::new();
        for key in iter {
            table.intern(key.as_ref());
        }
        table
    }
}

fn trim_eol(line: &str) -> &str {
    line.strip_suffix('\r').unwrap_or(line)
}

/// Parses `head<TAB>relation<TAB>tail` lines, resolving ids against the
/// given tables. Blank lines are skipped; order is preserved.
pub fn parse_triples<R: BufRead>(
    reader: R,
    entities: &IdTable,
    relations: &IdTable,
    source_name: &str,
) -> Result<Vec<Triple>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(Path::new(source_name), e))?;
        let line = trim_eol(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::Malformed {
                source_name: source_name.to_string(),
                line: line_no,
                found: fields.len(),
            });
        }
        let entity = |id: &str| {
            entities
                .get(id)
                .map(EntityId)
                .ok_or_else(|| CorpusError::UnknownEntity {
                    source_name: source_name.to_string(),
                    line: line_no,
                    id: id.to_string(),
                })
        };
        let head = entity(fields[0])?;
        let relation = relations
            .get(fields[1])
            .map(RelationId)
            .ok_or_else(|| CorpusError::UnknownRelation {
                source_name: source_name.to_string(),
                line: line_no,
                id: fields[1].to_string(),
            })?;
        let tail = entity(fields[2])?;
        out.push(Triple { head, relation, tail });
    }
    Ok(out)
}

/// How the text column of an entity file splits into name and description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameConvention {
    /// `id<TAB>name<TAB>description`, description optional.
    NameTabDescription,
    /// `id<TAB>name, description`: split at the first `", "`.
    CommaSeparated,
    /// `id<TAB>name`; descriptions live in a separate file.
    NameOnly,
    /// `id<TAB>description`.
    DescriptionOnly,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityText {
    pub name: String,
    pub description: String,
}

/// Reads an `id<TAB>text` file into an insertion-ordered table.
pub fn load_entity_texts<R: BufRead>(
    reader: R,
    convention: NameConvention,
    source_name: &str,
) -> Result<IndexMap<String, EntityText>, CorpusError> {
    let mut table: IndexMap<String, EntityText> = IndexMap::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(Path::new(source_name), e))?;
        let line = trim_eol(&line);
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = match line.split_once('\t') {
            Some((id, rest)) => (id, rest),
            None => (line, ""),
        };
        if id.is_empty() {
            return Err(CorpusError::MissingId {
                source_name: source_name.to_string(),
                line: line_no,
            });
        }
        if let Some(&first) = first_seen.get(id) {
            return Err(CorpusError::DuplicateId {
                source_name: source_name.to_string(),
                id: id.to_string(),
                first,
                second: line_no,
            });
        }
        first_seen.insert(id.to_string(), line_no);
        let text = match convention {
            NameConvention::NameTabDescription => match rest.split_once('\t') {
                Some((name, desc)) => EntityText {
                    name: name.to_string(),
                    description: desc.to_string(),
                },
                None => EntityText {
                    name: rest.to_string(),
                    description: String::new(),
                },
            },
            NameConvention::CommaSeparated => match rest.split_once(", ") {
                Some((name, desc)) => EntityText {
                    name: name.to_string(),
                    description: desc.to_string(),
                },
                None => EntityText {
                    name: rest.to_string(),
                    description: String::new(),
                },
            },
            NameConvention::NameOnly => EntityText {
                name: rest.to_string(),
                description: String::new(),
            },
            NameConvention::DescriptionOnly => EntityText {
                name: String::new(),
                description: rest.to_string(),
            },
        };
        table.insert(id.to_string(), text);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetLayout {
    Native,
    KgBert,
    Wordnet,
}

impl DatasetLayout {
    /// `wordnet` when only `entity2text.txt` exists, `kgbert` when the long
    /// description file is also present, `native` for `entities.txt`.
    pub fn detect(dir: &Path) -> Result<Self, CorpusError> {
        if dir.join("entity2text.txt").is_file() {
            if dir.join("entity2textlong.txt").is_file() {
                Ok(DatasetLayout::KgBert)
            } else {
                Ok(DatasetLayout::Wordnet)
            }
        } else if dir.join("entities.txt").is_file() {
            Ok(DatasetLayout::Native)
        } else {
            Err(CorpusError::UnknownLayout(dir.to_path_buf()))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetLayout::Native => "native",
            DatasetLayout::KgBert => "kgbert",
            DatasetLayout::Wordnet => "wordnet",
        }
    }
}

impl std::str::FromStr for DatasetLayout {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(DatasetLayout::Native),
            "kgbert" => Ok(DatasetLayout::KgBert),
            "wordnet" => Ok(DatasetLayout::Wordnet),
            other => Err(CorpusError::BadLayoutName(other.to_string())),
        }
    }
}

/// An immutable knowledge graph plus entity text.
///
/// Augmented descriptions are the only mutable part; everything else is
/// fixed at load time.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<EntityRecord>,
    entity_ids: IdTable,
    relations: Vec<RelationRecord>,
    relation_ids: IdTable,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    warnings: Vec<String>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.train == other.train
            && self.valid == other.valid
            && self.test == other.test
    }
}

/// Entity input for [`KnowledgeGraph::from_parts`].
#[derive(Clone, Debug)]
pub struct EntitySpec {
    pub key: String,
    pub name: String,
    pub description: String,
}

impl EntitySpec {
    pub fn new(key: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        EntitySpec {
            key: key.into(),
            name: name.into(),
            description: description.into(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn find_split_file(dir: &Path, split: Split) -> Result<PathBuf, CorpusError> {
    split
        .candidates()
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| CorpusError::MissingFile(dir.join(split.candidates()[0])))
}

/// Reads a plain id list (`entities.txt` / `relations.txt` in KG-BERT
/// style); only the first column is used.
fn load_id_list(path: &Path) -> Result<Vec<String>, CorpusError> {
    let texts = load_entity_texts(open(path)?, NameConvention::NameOnly, &path.display().to_string())?;
    Ok(texts.into_keys().collect())
}

/// Entity specs plus `(key, text)` relation rows.
type Tables = (Vec<EntitySpec>, Vec<(String, String)>);

impl KnowledgeGraph {
    /// Loads a dataset directory, auto-detecting the layout when `layout` is
    /// `None`.
    pub fn load(dir: &Path, layout: Option<DatasetLayout>) -> Result<Self, CorpusError> {
        let layout = match layout {
            Some(l) => l,
            None => DatasetLayout::detect(dir)?,
        };
        let (entities, relations) = match layout {
            DatasetLayout::Native => Self::native_tables(dir)?,
            DatasetLayout::KgBert | DatasetLayout::Wordnet => Self::kgbert_tables(dir, layout)?,
        };
        let mut graph = KnowledgeGraph::default();
        for spec in entities {
            graph.push_entity(spec);
        }
        for (key, text) in relations {
            graph.push_relation(&key, &text);
        }
        for split in Split::ALL {
            let path = find_split_file(dir, split)?;
            let triples = parse_triples(
                open(&path)?,
                &graph.entity_ids,
                &graph.relation_ids,
                &path.display().to_string(),
            )?;
            graph.set_split(split, triples);
        }
        graph.check_split_overlap();
        Ok(graph)
    }

    fn native_tables(dir: &Path) -> Result<Tables, CorpusError> {
        let path = dir.join("entities.txt");
        let texts = load_entity_texts(
            open(&path)?,
            NameConvention::NameTabDescription,
            &path.display().to_string(),
        )?;
        let entities = texts
            .into_iter()
            .map(|(key, t)| EntitySpec {
                name: if t.name.is_empty() { key.clone() } else { t.name },
                key,
                description: t.description,
            })
            .collect();
        let rel_path = dir.join("relations.txt");
        let relations = load_entity_texts(
            open(&rel_path)?,
            NameConvention::NameOnly,
            &rel_path.display().to_string(),
        )?
        .into_iter()
        .map(|(key, t)| {
            let text = if t.name.is_empty() { key.clone() } else { t.name };
            (key, text)
        })
        .collect();
        Ok((entities, relations))
    }

    fn kgbert_tables(dir: &Path, layout: DatasetLayout) -> Result<Tables, CorpusError> {
        let names_path = dir.join("entity2text.txt");
        let convention = if layout == DatasetLayout::Wordnet {
            NameConvention::CommaSeparated
        } else {
            NameConvention::NameOnly
        };
        let names = load_entity_texts(open(&names_path)?, convention, &names_path.display().to_string())?;
        let long_path = dir.join("entity2textlong.txt");
        let long = if long_path.is_file() {
            load_entity_texts(
                open(&long_path)?,
                NameConvention::DescriptionOnly,
                &long_path.display().to_string(),
            )?
        } else {
            IndexMap::new()
        };
        // entity2text.txt can cover a superset (FB15k-237 ships FB15k's
        // table), so the id list wins when present.
        let ids_path = dir.join("entities.txt");
        let ids: Vec<String> = if ids_path.is_file() {
            load_id_list(&ids_path)?
        } else {
            names.keys().cloned().collect()
        };
        let entities = ids
            .into_iter()
            .map(|key| {
                let named = names.get(&key);
                let name = named
                    .map(|t| t.name.clone())
                    .filter(|n| !n.is_empty())
                    .unwrap_or_else(|| key.clone());
                let description = match long.get(&key) {
                    Some(t) => t.description.clone(),
                    None => named.map(|t| t.description.clone()).unwrap_or_default(),
                };
                EntitySpec { key, name, description }
            })
            .collect();

        let rel_text_path = dir.join("relation2text.txt");
        let rel_texts = if rel_text_path.is_file() {
            load_entity_texts(
                open(&rel_text_path)?,
                NameConvention::NameOnly,
                &rel_text_path.display().to_string(),
            )?
        } else {
            IndexMap::new()
        };
        let rel_ids_path = dir.join("relations.txt");
        let rel_ids: Vec<String> = if rel_ids_path.is_file() {
            load_id_list(&rel_ids_path)?
        } else {
            rel_texts.keys().cloned().collect()
        };
        let relations = rel_ids
            .into_iter()
            .map(|key| {
                let text = rel_texts
                    .get(&key)
                    .map(|t| t.name.clone())
                    .filter(|t| !t.is_empty())
                    .unwrap_or_else(|| key.clone());
                (key, text)
            })
            .collect();
        Ok((entities, relations))
    }

    /// Builds a graph in memory; triples are given as key strings.
    pub fn from_parts(
        entities: Vec<EntitySpec>,
        relations: Vec<(String, String)>,
        splits: [Vec<(String, String, String)>; 3],
    ) -> Result<Self, CorpusError> {
        let mut graph = KnowledgeGraph::default();
        for spec in entities {
            graph.push_entity(spec);
        }
        for (key, text) in relations {
            graph.push_relation(&key, &text);
        }
        for (split, rows) in Split::ALL.into_iter().zip(splits) {
            let mut text = String::new();
            for (h, r, t) in rows {
                text.push_str(&format!("{h}\t{r}\t{t}\n"));
            }
            let triples = parse_triples(text.as_bytes(), &graph.entity_ids, &graph.relation_ids, split.name())?;
            graph.set_split(split, triples);
        }
        graph.check_split_overlap();
        Ok(graph)
    }

    fn push_entity(&mut self, spec: EntitySpec) {
        let id = self.entity_ids.intern(&spec.key);
        debug_assert_eq!(id as usize, self.entities.len());
        self.entities.push(EntityRecord {
            id: EntityId(id),
            key: spec.key,
            name: spec.name,
            description: spec.description,
            augmented_description: None,
        });
    }

    fn push_relation(&mut self, key: &str, text: &str) {
        let id = self.relation_ids.intern(key);
        debug_assert_eq!(id as usize, self.relations.len());
        self.relations.push(RelationRecord {
            id: RelationId(id),
            key: key.to_string(),
            text: text.to_string(),
        });
    }

    fn set_split(&mut self, split: Split, triples: Vec<Triple>) {
        let mut seen = HashSet::with_capacity(triples.len());
        let mut unique = Vec::with_capacity(triples.len());
        let mut dropped = 0usize;
        for t in triples {
            if seen.insert(t) {
                unique.push(t);
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            let msg = format!("{}: dropped {dropped} duplicate triple(s)", split.name());
            warn!("{msg}");
            self.warnings.push(msg);
        }
        match split {
            Split::Train => self.train = unique,
            Split::Valid => self.valid = unique,
            Split::Test => self.test = unique,
        }
    }

    fn check_split_overlap(&mut self) {
        let mut owner: HashMap<Triple, Split> = HashMap::new();
        let mut overlaps: HashMap<(Split, Split), usize> = HashMap::new();
        for split in Split::ALL {
            for &t in self.split(split) {
                if let Some(&first) = owner.get(&t) {
                    *overlaps.entry((first, split)).or_default() += 1;
                } else {
                    owner.insert(t, split);
                }
            }
        }
        let mut pairs: Vec<_> = overlaps.into_iter().collect();
        pairs.sort_by_key(|((a, b), _)| (*a as u8, *b as u8));
        for ((a, b), n) in pairs {
            let msg = format!("{n} triple(s) appear in both {} and {}", a.name(), b.name());
            warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationRecord] {
        &self.relations
    }

    pub fn entity(&self, id: EntityId) -> &EntityRecord {
        &self.entities[id.index()]
    }

    pub fn relation(&self, id: RelationId) -> Option<&RelationRecord> {
        self.relations.get(id.index())
    }

    pub fn entity_id(&self, key: &str) -> Option<EntityId> {
        self.entity_ids.get(key).map(EntityId)
    }

    pub fn relation_id(&self, key: &str) -> Option<RelationId> {
        self.relation_ids.get(key).map(RelationId)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Load-time warnings (duplicates, split overlap).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn set_augmented_description(&mut self, id: EntityId, text: Option<String>) {
        self.entities[id.index()].augmented_description = text;
    }

    /// Writes the graph in the native layout with original descriptions.
    pub fn write_native(&self, dir: &Path) -> Result<(), CorpusError> {
        self.write_native_with(dir, |e| &e.description)
    }

    /// Writes the native layout, taking each entity's description from
    /// `description`. Tabs and line breaks inside text become spaces.
    pub fn write_native_with<'a, F>(&'a self, dir: &Path, description: F) -> Result<(), CorpusError>
    where
        F: Fn(&'a EntityRecord) -> &'a str,
    {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(split.candidates()[0]);
            write_lines(
                &path,
                self.split(split).iter().map(|t| {
                    format!(
                        "{}\t{}\t{}",
                        self.entity_ids.key(t.head.0),
                        self.relation_ids.key(t.relation.0),
                        self.entity_ids.key(t.tail.0)
                    )
                }),
            )?;
        }
        let path = dir.join("entities.txt");
        write_lines(
            &path,
            self.entities.iter().map(|e| {
                let desc = description(e);
                if desc.is_empty() {
                    format!("{}\t{}", e.key, sanitize_field(&e.name))
                } else {
                    format!("{}\t{}\t{}", e.key, sanitize_field(&e.name), sanitize_field(desc))
                }
            }),
        )?;
        let path = dir.join("relations.txt");
        write_lines(
            &path,
            self.relations
                .iter()
                .map(|r| format!("{}\t{}", r.key, sanitize_field(&r.text))),
        )?;
        Ok(())
    }
}

/// Replaces characters that would break the tab/line framing.
pub fn sanitize_field(text: &str) -> String {
    text.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

pub(crate) fn write_lines<I>(path: &Path, lines: I) -> Result<(), CorpusError>
where
    I: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// How entities are keyed when looking for shared surface forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolysemyKey {
    /// `lemma-POS-sense` names key on the lemma; other names on themselves.
    WordnetLemma,
    ExactName,
}

impl PolysemyKey {
    pub fn for_layout(layout: DatasetLayout) -> Self {
        match layout {
            DatasetLayout::Wordnet => PolysemyKey::WordnetLemma,
            _ => PolysemyKey::ExactName,
        }
    }
}

/// Strips a trailing `-POS-sense` pair (`tinsel-VB-2` → `tinsel`).
///
/// The POS field must be upper-case ASCII letters and the sense field
/// digits; anything else is returned unchanged, so names such as
/// `Spider-Man` stay intact.
pub fn wordnet_lemma(name: &str) -> &str {
    let Some((rest, sense)) = name.rsplit_once('-') else {
        return name;
    };
    let Some((lemma, pos)) = rest.rsplit_once('-') else {
        return name;
    };
    let sense_ok = !sense.is_empty() && sense.bytes().all(|b| b.is_ascii_digit());
    let pos_ok = !pos.is_empty() && pos.bytes().all(|b| b.is_ascii_uppercase());
    if sense_ok && pos_ok && !lemma.is_empty() {
        lemma
    } else {
        name
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolysemyGroup {
    pub key: String,
    pub members: Vec<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolysemyReport {
    /// Every group, singletons included, in order of first member.
    pub groups: Vec<PolysemyGroup>,
    pub entities_in_shared_groups: usize,
    pub shared_groups: usize,
    /// Entities in groups of size ≥ 2, over |E|.
    pub entity_proportion: f64,
    /// Groups of size ≥ 2, over the number of groups.
    pub group_proportion: f64,
}

impl PolysemyReport {
    pub fn shared(&self) -> impl Iterator<Item = &PolysemyGroup> {
        self.groups.iter().filter(|g| g.members.len() >= 2)
    }
}

pub fn polysemy_groups(graph: &KnowledgeGraph, key: PolysemyKey) -> PolysemyReport {
    let mut index: IndexMap<&str, Vec<EntityId>> = IndexMap::new();
    for e in graph.entities() {
        let k = match key {
            PolysemyKey::WordnetLemma => wordnet_lemma(&e.name),
            PolysemyKey::ExactName => e.name.as_str(),
        };
        index.entry(k).or_default().push(e.id);
    }
    let groups: Vec<PolysemyGroup> = index
        .into_iter()
        .map(|(k, members)| PolysemyGroup {
            key: k.to_string(),
            members,
        })
        .collect();
    let shared: Vec<&PolysemyGroup> = groups.iter().filter(|g| g.members.len() >= 2).collect();
    let entities_in_shared: usize = shared.iter().map(|g| g.members.len()).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    PolysemyReport {
        entities_in_shared_groups: entities_in_shared,
        shared_groups: shared.len(),
        entity_proportion: ratio(entities_in_shared, graph.num_entities()),
        group_proportion: ratio(shared.len(), groups.len()),
        groups,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    /// Mean description tokens over all entities (empty descriptions count
    /// as zero).
    pub mean: f64,
    /// Mean over entities with a non-empty description.
    pub mean_nonempty: f64,
    pub empty_descriptions: usize,
    /// Mean over the distinct entities mentioned by each split.
    pub per_split: IndexMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description_tokens: Option<LengthSummary>,
}

pub fn graph_stats(graph: &KnowledgeGraph, vocab: Option<&SubwordVocabulary>) -> GraphStats {
    let description_tokens = vocab.map(|vocab| {
        use rayon::prelude::*;
        let lengths: Vec<usize> = graph
            .entities()
            .par_iter()
            .map(|e| vocab.token_length(&e.description))
            .collect();
        let n = lengths.len();
        let total: usize = lengths.iter().sum();
        let nonempty: Vec<usize> = graph
            .entities()
            .iter()
            .zip(&lengths)
            .filter(|(e, _)| !e.description.trim().is_empty())
            .map(|(_, &l)| l)
            .collect();
        let mean_of = |sum: usize, count: usize| if count == 0 { 0.0 } else { sum as f64 / count as f64 };
        let mut per_split = IndexMap::new();
        for split in Split::ALL {
            let mut seen = vec![false; n];
            let (mut sum, mut count) = (0usize, 0usize);
            for t in graph.split(split) {
                for e in [t.head, t.tail] {
                    if !seen[e.index()] {
                        seen[e.index()] = true;
                        sum += lengths[e.index()];
                        count += 1;
                    }
                }
            }
            per_split.insert(split.name().to_string(), mean_of(sum, count));
        }
        LengthSummary {
            mean: mean_of(total, n),
            mean_nonempty: mean_of(nonempty.iter().sum(), nonempty.len()),
            empty_descriptions: n - nonempty.len(),
            per_split,
        }
    });
    GraphStats {
        entities: graph.num_entities(),
        relations: graph.num_relations(),
        train: graph.split(Split::Train).len(),
        valid: graph.split(Split::Valid).len(),
        test: graph.split(Split::Test).len(),
        description_tokens,
    }
}

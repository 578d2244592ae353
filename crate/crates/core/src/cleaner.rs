//! Cleaning of raw LLM responses into entity text.
//!
//! Compression keeps the cleaned summary as the new description.
//! Expansion keeps the original text and appends the cleaned generation:
//! `name, description; generation` (or `name, generation` when the
//! description is empty). Anything rejected falls back to the original
//! description downstream.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityId, KnowledgeGraph};
use crate::router::RouteAction;

pub const RULE_FILE_VERSION: u32 = 1;
/// Text of the built-in rule file.
pub const BUILTIN_RULES: &str = include_str!("../assets/clean_rules.txt");
const MAX_STRIP_ROUNDS: usize = 64;

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("rule file line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("rule file: unsupported version {0}")]
    Version(u32),
    #[error("rule file has no version line")]
    MissingVersion,
    #[error("effective rate is undefined for an empty outcome list")]
    EmptyOutcomes,
    #[error("rule file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneffectiveReason {
    Refusal,
    Echo,
    Empty,
    OffTopicMarker,
    /// The request itself failed; there is no response to judge.
    NoResponse,
}

impl IneffectiveReason {
    pub fn name(self) -> &'static str {
        match self {
            IneffectiveReason::Refusal => "refusal",
            IneffectiveReason::Echo => "echo",
            IneffectiveReason::Empty => "empty",
            IneffectiveReason::OffTopicMarker => "off_topic_marker",
            IneffectiveReason::NoResponse => "no_response",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Effective { text: String },
    Ineffective { reason: IneffectiveReason },
}

impl Verdict {
    pub fn effective_text(&self) -> Option<&str> {
        match self {
            Verdict::Effective { text } => Some(text),
            Verdict::Ineffective { .. } => None,
        }
    }

    pub fn is_effective(&self) -> bool {
        matches!(self, Verdict::Effective { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOutcome {
    pub entity: EntityId,
    pub key: String,
    pub source_action: RouteAction,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub struct CleaningRules {
    prefixes: Vec<Regex>,
    suffixes: Vec<Regex>,
    unwraps: Vec<Regex>,
    refusals: Vec<String>,
    off_topic: Vec<String>,
}

impl CleaningRules {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("built-in rules are valid")
    }

    pub fn load(path: &Path) -> Result<Self, CleanError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, CleanError> {
        let mut rules = CleaningRules {
            prefixes: Vec::new(),
            suffixes: Vec::new(),
            unwraps: Vec::new(),
            refusals: Vec::new(),
            off_topic: Vec::new(),
        };
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, pattern) = line.split_once('\t').ok_or_else(|| CleanError::Rule {
                line: line_no,
                message: "expected <kind><TAB><pattern>".into(),
            })?;
            let regex = |p: &str| {
                Regex::new(p).map_err(|e| CleanError::Rule {
                    line: line_no,
                    message: e.to_string(),
                })
            };
            match kind {
                "version" => {
                    let v: u32 = pattern.trim().parse().map_err(|_| CleanError::Rule {
                        line: line_no,
                        message: format!("bad version `{pattern}`"),
                    })?;
                    if v != RULE_FILE_VERSION {
                        return Err(CleanError::Version(v));
                    }
                    version = Some(v);
                }
                "prefix" => rules.prefixes.push(regex(pattern)?),
                "suffix" => rules.suffixes.push(regex(pattern)?),
                "unwrap" => {
                    let re = regex(pattern)?;
                    if re.captures_len() < 2 {
                        return Err(CleanError::Rule {
                            line: line_no,
                            message: "unwrap pattern needs a capture group".into(),
                        });
                    }
                    rules.unwraps.push(re);
                }
                "refusal" => rules.refusals.push(pattern.to_lowercase()),
                "off_topic" => rules.off_topic.push(pattern.to_lowercase()),
                other => {
                    return Err(CleanError::Rule {
                        line: line_no,
                        message: format!("unknown rule kind `{other}`"),
                    })
                }
            }
        }
        if version.is_none() {
            return Err(CleanError::MissingVersion);
        }
        Ok(rules)
    }

    pub fn refusal_keywords(&self) -> &[String] {
        &self.refusals
    }

    fn contains_any(haystack: &str, needles: &[String]) -> bool {
        let lower = haystack.to_lowercase();
        needles.iter().any(|n| lower.contains(n.as_str()))
    }

    fn is_refusal(&self, text: &str) -> bool {
        Self::contains_any(text, &self.refusals)
    }

    /// Applies prefix/suffix/unwrap rules until nothing changes.
    pub fn strip(&self, text: &str) -> String {
        let mut current = text.trim().to_string();
        for _ in 0..MAX_STRIP_ROUNDS {
            let before = current.clone();
            for re in &self.prefixes {
                if let Some(m) = re.find(&current) {
                    if m.start() == 0 && m.end() > 0 {
                        current = current[m.end()..].trim_start().to_string();
                    }
                }
            }
            for re in &self.suffixes {
                if let Some(m) = re.find(&current) {
                    if m.end() == current.len() && m.start() < m.end() {
                        current = current[..m.start()].trim_end().to_string();
                    }
                }
            }
            for re in &self.unwraps {
                if let Some(inner) = re.captures(&current).and_then(|c| c.get(1)) {
                    current = inner.as_str().trim().to_string();
                }
            }
            if current == before {
                break;
            }
        }
        current
    }
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Lowercased alphanumeric words joined by single spaces.
fn normalized(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn trim_separators(text: &str) -> &str {
    text.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ';' | ',' | ':' | '.' | '-'))
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, ';' | ',' | ':' | '-'))
}

/// Text assembled for an effective expansion.
pub fn expansion_text(name: &str, original_desc: &str, generation: &str) -> String {
    if original_desc.trim().is_empty() {
        format!("{name}, {generation}")
    } else {
        format!("{name}, {original_desc}; {generation}")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Cleaner {
    rules: CleaningRules,
}

impl Cleaner {
    pub fn new(rules: CleaningRules) -> Self {
        Cleaner { rules }
    }

    pub fn rules(&self) -> &CleaningRules {
        &self.rules
    }

    /// Steps shared by both routes: empty, refusal, wrapper stripping,
    /// off-topic markers.
    fn prepare(&self, raw: &str) -> Result<String, IneffectiveReason> {
        if raw.trim().is_empty() {
            return Err(IneffectiveReason::Empty);
        }
        if self.rules.is_refusal(raw) {
            return Err(IneffectiveReason::Refusal);
        }
        let text = self.rules.strip(raw);
        if normalized(&text).is_empty() {
            return Err(IneffectiveReason::Empty);
        }
        if CleaningRules::contains_any(&text, &self.rules.off_topic) {
            return Err(IneffectiveReason::OffTopicMarker);
        }
        Ok(text)
    }

    fn finish(&self, text: String) -> Verdict {
        if self.rules.is_refusal(&text) {
            Verdict::Ineffective {
                reason: IneffectiveReason::Refusal,
            }
        } else {
            Verdict::Effective { text }
        }
    }

    pub fn clean_compression(&self, raw: &str, _name: &str, original_desc: &str) -> Verdict {
        let text = match self.prepare(raw) {
            Ok(t) => t,
            Err(reason) => return Verdict::Ineffective { reason },
        };
        if normalized(&text) == normalized(original_desc) {
            return Verdict::Ineffective {
                reason: IneffectiveReason::Echo,
            };
        }
        self.finish(text)
    }

    pub fn clean_expansion(&self, raw: &str, name: &str, original_desc: &str) -> Verdict {
        let mut text = match self.prepare(raw) {
            Ok(t) => t,
            Err(reason) => return Verdict::Ineffective { reason },
        };
        // A response that already carries the assembled prefix (re-cleaning
        // our own output) is reduced to its generated part.
        let assembled = expansion_text(name, original_desc, "");
        if let Some(rest) = text.strip_prefix(assembled.trim_end()) {
            text = rest.to_string();
        }
        if normalized(&text) == normalized(original_desc) {
            return Verdict::Ineffective {
                reason: IneffectiveReason::Echo,
            };
        }
        let desc = original_desc.trim();
        if !desc.is_empty() {
            while text.contains(desc) {
                text = text.replacen(desc, " ", 1);
            }
        }
        let mut generation = trim_separators(&text).split_whitespace().collect::<Vec<_>>().join(" ");
        while generation.contains("; ;") {
            generation = generation.replace("; ;", ";");
        }
        if normalized(&generation).is_empty() {
            return Verdict::Ineffective {
                reason: IneffectiveReason::Echo,
            };
        }
        self.finish(expansion_text(name, original_desc, &generation))
    }

    /// Dispatches on the route action; `None` means the request failed.
    pub fn clean(
        &self,
        entity: EntityId,
        key: &str,
        action: RouteAction,
        raw: Option<&str>,
        name: &str,
        original_desc: &str,
    ) -> CleanOutcome {
        let verdict = match (raw, action) {
            (None, _) | (_, RouteAction::Keep) => Verdict::Ineffective {
                reason: IneffectiveReason::NoResponse,
            },
            (Some(raw), RouteAction::Compress) => self.clean_compression(raw, name, original_desc),
            (Some(raw), RouteAction::Expand) => self.clean_expansion(raw, name, original_desc),
        };
        CleanOutcome {
            entity,
            key: key.to_string(),
            source_action: action,
            verdict,
        }
    }
}

/// Share of effective outcomes.
pub fn effective_rate(outcomes: &[CleanOutcome]) -> Result<f64, CleanError> {
    if outcomes.is_empty() {
        return Err(CleanError::EmptyOutcomes);
    }
    let effective = outcomes.iter().filter(|o| o.verdict.is_effective()).count();
    Ok(effective as f64 / outcomes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSummary {
    pub total: usize,
    pub effective: usize,
    pub effective_rate: f64,
    pub ineffective_by_reason: BTreeMap<String, usize>,
    pub effective_by_action: BTreeMap<String, usize>,
}

pub fn summarize(outcomes: &[CleanOutcome]) -> Result<CleanSummary, CleanError> {
    let rate = effective_rate(outcomes)?;
    let mut by_reason = BTreeMap::new();
    let mut by_action = BTreeMap::new();
    let mut effective = 0;
    for o in outcomes {
        match &o.verdict {
            Verdict::Effective { .. } => {
                effective += 1;
                *by_action.entry(o.source_action.name().to_string()).or_insert(0) += 1;
            }
            Verdict::Ineffective { reason } => {
                *by_reason.entry(reason.name().to_string()).or_insert(0) += 1;
            }
        }
    }
    Ok(CleanSummary {
        total: outcomes.len(),
        effective,
        effective_rate: rate,
        ineffective_by_reason: by_reason,
        effective_by_action: by_action,
    })
}

/// Stores effective texts as augmented descriptions; ineffective outcomes
/// clear any augmentation so the original description is used.
pub fn apply_outcomes(graph: &mut KnowledgeGraph, outcomes: &[CleanOutcome]) {
    for o in outcomes {
        let text = o.verdict.effective_text().map(str::to_string);
        graph.set_augmented_description(o.entity, text);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cleaner() -> Cleaner {
        Cleaner::default()
    }

    fn effective(text: &str) -> Verdict {
        Verdict::Effective { text: text.into() }
    }

    fn ineffective(reason: IneffectiveReason) -> Verdict {
        Verdict::Ineffective { reason }
    }

    #[test]
    fn compression_strips_conversational_prefix() {
        let v = cleaner().clean_compression(
            "Sure, here is a one-sentence summary: X is a city in Y.",
            "X",
            "X is a large city located in the country of Y, known for many things.",
        );
        assert_eq!(v, effective("X is a city in Y."));
    }

    #[test]
    fn compression_refusal_and_empty() {
        let c = cleaner();
        assert_eq!(
            c.clean_compression("I'm sorry, I cannot help with that.", "X", "d"),
            ineffective(IneffectiveReason::Refusal)
        );
        assert_eq!(c.clean_compression("", "X", "d"), ineffective(IneffectiveReason::Empty));
        assert_eq!(
            c.clean_compression("  \"\"  ", "X", "d"),
            ineffective(IneffectiveReason::Empty)
        );
    }

    #[test]
    fn quotes_and_trailing_chatter_removed() {
        let v = cleaner().clean_compression(
            "\"Paris is the capital of France.\" I hope this helps!",
            "Paris",
            "long text",
        );
        assert_eq!(v, effective("Paris is the capital of France."));
    }

    #[test]
    fn expansion_appends_usage() {
        let v = cleaner().clean_expansion(
            "adorn with tinsel; snow flakes tinseled the trees",
            "tinsel-VB-2",
            "adorn with tinsel",
        );
        assert_eq!(
            v,
            effective("tinsel-VB-2, adorn with tinsel; snow flakes tinseled the trees")
        );
    }

    #[test]
    fn expansion_echo_is_ineffective() {
        let d = "stitch or sew together; quilt the skirt";
        assert_eq!(
            cleaner().clean_expansion(d, "quilt", d),
            ineffective(IneffectiveReason::Echo)
        );
        assert_eq!(
            cleaner().clean_expansion(&format!("{}.", d.to_uppercase()), "quilt", d),
            ineffective(IneffectiveReason::Echo)
        );
    }

    #[test]
    fn expansion_strips_intro_prefix() {
        let v = cleaner().clean_expansion(
            "Here's a short introduction: You can quilt a blanket by hand.",
            "quilt",
            "stitch or sew together",
        );
        assert_eq!(
            v,
            effective("quilt, stitch or sew together; You can quilt a blanket by hand.")
        );
    }

    #[test]
    fn expansion_with_empty_description() {
        let v = cleaner().clean_expansion("A film from 2002.", "Spider-Man", "");
        assert_eq!(v, effective("Spider-Man, A film from 2002."));
    }

    #[test]
    fn refusal_inside_name_is_never_effective() {
        let v = cleaner().clean_expansion("a fine usage example", "As an AI", "d");
        assert_eq!(v, ineffective(IneffectiveReason::Refusal));
    }

    #[test]
    fn off_topic_marker() {
        let v = cleaner().clean_compression("[Insert summary here]", "X", "d");
        assert_eq!(v, ineffective(IneffectiveReason::OffTopicMarker));
    }

    #[test]
    fn rate_counts() {
        let mk = |eff: bool| CleanOutcome {
            entity: EntityId(0),
            key: "e".into(),
            source_action: RouteAction::Compress,
            verdict: if eff {
                effective("t")
            } else {
                ineffective(IneffectiveReason::Echo)
            },
        };
        let outcomes: Vec<_> = (0..50).map(|i| mk(i >= 3)).collect();
        assert_eq!(effective_rate(&outcomes).unwrap(), 0.94);
        let all: Vec<_> = (0..4).map(|_| mk(true)).collect();
        assert_eq!(effective_rate(&all).unwrap(), 1.0);
        assert!(matches!(effective_rate(&[]), Err(CleanError::EmptyOutcomes)));
    }

    #[test]
    fn rule_file_errors() {
        assert!(matches!(
            CleaningRules::parse("prefix\tx\n"),
            Err(CleanError::MissingVersion)
        ));
        assert!(matches!(
            CleaningRules::parse("version\t9\n"),
            Err(CleanError::Version(9))
        ));
        assert!(matches!(
            CleaningRules::parse("version\t1\nbogus\tx\n"),
            Err(CleanError::Rule { line: 2, .. })
        ));
        assert!(matches!(
            CleaningRules::parse("version\t1\nunwrap\tabc\n"),
            Err(CleanError::Rule { line: 2, .. })
        ));
    }
}

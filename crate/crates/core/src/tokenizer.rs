//! BERT-style subword tokenization used as the length function for entity
//! text.
//!
//! Text is cleaned (control characters dropped, whitespace unified),
//! CJK ideographs are isolated, each whitespace-separated word is
//! lowercased, stripped of combining accents and split at punctuation, and
//! every resulting word is segmented by greedy longest-match against the
//! vocabulary. Word-internal pieces carry the continuation prefix (`##`).
//! Special tokens such as `[CLS]` are never counted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNKNOWN_TOKEN: &str = "[UNK]";
pub const DEFAULT_MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("reading vocabulary: {0}")]
    Io(#[from] io::Error),
    #[error("vocabulary line {line}: duplicate token `{token}`")]
    Duplicate { token: String, line: usize },
    #[error("unknown token `{0}` is not in the vocabulary")]
    MissingUnknown(String),
    #[error("continuation prefix must be non-empty and must not be a vocabulary entry")]
    BadPrefix,
}

/// An ordered subword vocabulary. Line index in the vocab file is the
/// token id.
#[derive(Clone, Debug)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    continuation_prefix: String,
    unknown_token: String,
    max_word_chars: usize,
    lowercase: bool,
}

impl SubwordVocabulary {
    /// Builds a vocabulary with the `##` / `[UNK]` conventions.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_conventions(tokens, DEFAULT_CONTINUATION_PREFIX, DEFAULT_UNKNOWN_TOKEN)
    }

    pub fn with_conventions<I, S>(tokens: I, continuation_prefix: &str, unknown_token: &str) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for (i, tok) in tokens.into_iter().enumerate() {
            let tok: String = tok.into();
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(VocabError::Duplicate {
                    token: tok,
                    line: i + 1,
                });
            }
            list.push(tok);
        }
        if !index.contains_key(unknown_token) {
            return Err(VocabError::MissingUnknown(unknown_token.to_string()));
        }
        if continuation_prefix.is_empty() || index.contains_key(continuation_prefix) {
            return Err(VocabError::BadPrefix);
        }
        Ok(SubwordVocabulary {
            tokens: list,
            index,
            continuation_prefix: continuation_prefix.to_string(),
            unknown_token: unknown_token.to_string(),
            max_word_chars: DEFAULT_MAX_WORD_CHARS,
            lowercase: true,
        })
    }

    /// Reads a vocab file: one token per line, UTF-8.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let tok = line.strip_suffix('\r').unwrap_or(&line);
            tokens.push(tok.to_string());
        }
        // A trailing blank line is common in hand-edited files.
        while tokens.last().is_some_and(|t| t.is_empty()) {
            tokens.pop();
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    /// Words longer than `chars` map to the unknown token.
    pub fn with_max_word_chars(mut self, chars: usize) -> Self {
        self.max_word_chars = chars;
        self
    }

    /// Cased vocabularies keep the original letter case.
    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn unknown_token(&self) -> &str {
        &self.unknown_token
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.continuation_prefix
    }

    /// Splits `text` into subword tokens.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_piece(text, |piece| out.push(piece.into_owned()));
        out
    }

    /// Number of subword tokens in `text`; equal to `tokenize(text).len()`.
    pub fn token_length(&self, text: &str) -> usize {
        let mut n = 0;
        self.for_each_piece(text, |_| n += 1);
        n
    }

    fn for_each_piece<'a>(&'a self, text: &str, mut emit: impl FnMut(std::borrow::Cow<'a, str>)) {
        let mut scratch = String::new();
        for word in basic_words(text, self.lowercase) {
            self.wordpiece(&word, &mut scratch, &mut emit);
        }
    }

    fn wordpiece<'a>(&'a self, word: &str, scratch: &mut String, emit: &mut impl FnMut(std::borrow::Cow<'a, str>)) {
        let unknown = || std::borrow::Cow::Borrowed(self.unknown_token.as_str());
        let char_count = word.chars().count();
        if char_count > self.max_word_chars {
            emit(unknown());
            return;
        }
        // Char boundaries, so slicing never splits a code point.
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces: Vec<u32> = Vec::new();
        let mut start = 0usize;
        while start < char_count {
            let mut end = char_count;
            let mut found = None;
            while start < end {
                let sub = &word[bounds[start]..bounds[end]];
                let candidate: &str = if start > 0 {
                    scratch.clear();
                    scratch.push_str(&self.continuation_prefix);
                    scratch.push_str(sub);
                    scratch
                } else {
                    sub
                };
                if let Some(&id) = self.index.get(candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    emit(unknown());
                    return;
                }
            }
        }
        for id in pieces {
            emit(std::borrow::Cow::Borrowed(self.tokens[id as usize].as_str()));
        }
    }
}

fn is_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r') || get_general_category(c) == GeneralCategory::SpaceSeparator
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(
        get_general_category(c),
        GeneralCategory::Control | GeneralCategory::Format
    )
}

fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    if (33..=47).contains(&cp) || (58..=64).contains(&cp) || (91..=96).contains(&cp) || (123..=126).contains(&cp) {
        return true;
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn is_cjk(c: char) -> bool {
    let cp = c as u32;
    (0x4E00..=0x9FFF).contains(&cp)
        || (0x3400..=0x4DBF).contains(&cp)
        || (0x20000..=0x2A6DF).contains(&cp)
        || (0x2A700..=0x2B73F).contains(&cp)
        || (0x2B740..=0x2B81F).contains(&cp)
        || (0x2B820..=0x2CEAF).contains(&cp)
        || (0xF900..=0xFAFF).contains(&cp)
        || (0x2F800..=0x2FA1F).contains(&cp)
}

/// Pre-tokenization: cleaned, case-folded, accent-stripped words split at
/// punctuation.
fn basic_words(text: &str, lowercase: bool) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_control(c) {
            continue;
        }
        if is_whitespace(c) {
            cleaned.push(' ');
        } else if is_cjk(c) {
            cleaned.push(' ');
            cleaned.push(c);
            cleaned.push(' ');
        } else {
            cleaned.push(c);
        }
    }
    let mut words = Vec::new();
    for raw in cleaned.split(' ').filter(|w| !w.is_empty()) {
        let folded: String = if lowercase {
            raw.to_lowercase()
                .nfd()
                .filter(|&c| get_general_category(c) != GeneralCategory::NonspacingMark)
                .collect()
        } else {
            raw.to_string()
        };
        let mut current = String::new();
        for c in folded.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SubwordVocabulary {
        SubwordVocabulary::from_tokens(["[UNK]", "play", "##ing", "##s", "un", "##able", "a", ",", "!"]).unwrap()
    }

    #[test]
    fn empty_text() {
        assert!(toy().tokenize("").is_empty());
        assert_eq!(toy().token_length(""), 0);
        assert_eq!(toy().token_length("  \t\n"), 0);
    }

    #[test]
    fn greedy_longest_match() {
        assert_eq!(toy().tokenize("playing"), vec!["play", "##ing"]);
        assert_eq!(toy().tokenize("Plays!"), vec!["play", "##s", "!"]);
    }

    #[test]
    fn unmatchable_word_is_one_unknown() {
        assert_eq!(toy().tokenize("playx a"), vec!["[UNK]", "a"]);
    }

    #[test]
    fn long_words_are_unknown() {
        let v = toy().with_max_word_chars(4);
        assert_eq!(v.tokenize("play playing"), vec!["play", "[UNK]"]);
    }

    #[test]
    fn accents_and_case_fold() {
        assert_eq!(toy().tokenize("PLÁY"), vec!["play"]);
    }

    #[test]
    fn vocab_invariants_are_checked() {
        assert!(matches!(
            SubwordVocabulary::from_tokens(["a", "a", "[UNK]"]),
            Err(VocabError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(
            SubwordVocabulary::from_tokens(["a"]),
            Err(VocabError::MissingUnknown(_))
        ));
        assert!(matches!(
            SubwordVocabulary::from_tokens(["[UNK]", "##"]),
            Err(VocabError::BadPrefix)
        ));
    }

    #[test]
    fn control_characters_are_dropped() {
        assert_eq!(toy().tokenize("play\u{0}ing\u{200B}"), vec!["play", "##ing"]);
    }
}

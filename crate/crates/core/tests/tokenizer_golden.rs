use std::path::PathBuf;

use kgaug_core::router::entity_length;
use kgaug_core::{EntityId, EntityRecord, SubwordVocabulary};
use serde::Deserialize;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn vocab() -> SubwordVocabulary {
    SubwordVocabulary::load(&repo().join("data/vocab/bert-base-uncased.txt")).unwrap()
}

#[derive(Deserialize)]
struct Golden {
    text: String,
    tokens: Vec<String>,
}

#[test]
fn matches_reference_tokenizer_on_golden_corpus() {
    let vocab = vocab();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tokenizer_golden.jsonl");
    let text = std::fs::read_to_string(path).unwrap();
    let mut n = 0;
    for line in text.lines() {
        let g: Golden = serde_json::from_str(line).unwrap();
        assert_eq!(vocab.tokenize(&g.text), g.tokens, "text: {:?}", g.text);
        assert_eq!(vocab.token_length(&g.text), g.tokens.len());
        n += 1;
    }
    assert_eq!(n, 100);
}

#[test]
fn shipped_vocab_shape() {
    let vocab = vocab();
    assert_eq!(vocab.len(), 30522);
    assert!(vocab.contains("[UNK]"));
    assert_eq!(vocab.tokenize("sew"), ["se", "##w"]);
}

#[test]
fn entity_length_is_name_plus_description() {
    let vocab = vocab();
    let record = EntityRecord {
        id: EntityId(0),
        key: "raise".into(),
        name: "raise".into(),
        description: "move upwards; lift one's eyes".into(),
        augmented_description: None,
    };
    let name = vocab.tokenize("raise").len();
    let desc = vocab.tokenize("move upwards; lift one's eyes").len();
    assert_eq!((name, desc), (1, 8));
    assert_eq!(entity_length(&record, &vocab), 9);
}

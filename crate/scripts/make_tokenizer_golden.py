"""Writes the tokenizer golden file from the reference BERT tokenizer.

Usage: python scripts/make_tokenizer_golden.py
Requires the `transformers` package. Output: one JSON object per line,
{"text": ..., "tokens": [...]}.
"""
import json
import random
from pathlib import Path

from transformers import BertTokenizer

ROOT = Path(__file__).resolve().parent.parent
VOCAB = ROOT / "data" / "vocab" / "bert-base-uncased.txt"
OUT = ROOT / "crates" / "core" / "tests" / "fixtures" / "tokenizer_golden.jsonl"

HANDWRITTEN = [
    "",
    "playing",
    "The quick brown fox jumps over the lazy dog.",
    "move upwards; lift one's eyes",
    "Paris is the capital and most populous city of France.",
    "unaffable, unaffableness and unafraid",
    "Café déjà vu — naïve résumé façade",
    "Hello,world!How are(you)?",
    "e-mail: someone@example.com, http://example.org/path?q=1",
    "The year 1984 had 366 days; 3.14159 is pi.",
    "东京 is the capital of 日本.",
    "Ünïcödé ÀÉÎÕÜ ñ ç ß",
    "supercalifragilisticexpialidocious antidisestablishmentarianism",
    "a" * 120,
    "tab\tseparated\twords\nand newlines",
    "quotes \"double\" and 'single' and `backtick`",
    "Dr. Smith's 2nd-floor office (room #42) opens at 9:30am.",
    "C++ and C# are programming languages; so is Rust.",
    "¿Dónde está la biblioteca? ¡Aquí!",
    "Α β γ δ: Greek letters in mathematics",
    "Привет мир",
    "emoji 😀 and symbols ™ © ® ± × ÷",
    "multiple     spaces    between   words",
    "hyphenated-compound-word and under_scored_word",
    "frock: a one-piece garment for a woman; has skirt and bodice",
    "tinsel: a thread of metal coated with glittering material",
    "dress in a frock",
    "Amino Acid, Peptide, or Protein",
    "[CLS] literal markers [SEP] inside text [MASK]",
    "ellipsis... and dashes -- and slashes /usr/local/bin",
]


def generated(rng):
    words = []
    for line in (ROOT / "data" / "umls" / "entities.txt").read_text().splitlines():
        words.extend(line.split("\t", 1)[1].split())
    for line in (ROOT / "data" / "umls" / "relations.txt").read_text().splitlines():
        words.extend(line.split("\t", 1)[1].replace("_", " ").split())
    punct = [",", ";", ".", "!", "?", ":", " -", " (", ")"]
    out = []
    while len(out) < 100 - len(HANDWRITTEN):
        n = rng.randint(3, 18)
        parts = []
        for _ in range(n):
            w = rng.choice(words)
            r = rng.random()
            if r < 0.15:
                w = w.upper()
            elif r < 0.3:
                w = w.capitalize()
            parts.append(w)
            if rng.random() < 0.15:
                parts[-1] += rng.choice(punct)
        out.append(" ".join(parts))
    return out


def main():
    # Marker strings inside entity text are ordinary characters, never
    # special tokens.
    tok = BertTokenizer(str(VOCAB), do_lower_case=True, split_special_tokens=True)
    rng = random.Random(20240101)
    texts = HANDWRITTEN + generated(rng)
    assert len(texts) == 100
    with OUT.open("w", encoding="utf-8") as f:
        for t in texts:
            f.write(json.dumps({"text": t, "tokens": tok.tokenize(t)}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()

//! Seeded random datasets whose token boundaries are known by construction.

use rand::seq::SliceRandom;
use rand::Rng;

use errspan_core::decoding::standard_grid;
use errspan_core::rng::rng_from_seed;
use errspan_core::{
    Annotation, CharSpan, Dataset, ErrorSpan, ErrorType, GenerationRecord, Severity,
};

/// Words and stand-alone punctuation. Each entry is exactly one token.
const VOCAB: &[&str] = &[
    "the", "river", "ran", "past", "café", "naïve", "state-of-the-art", "mill", "1,000",
    "bread", "über", "town", "o'clock", "walls", "rain", ",", ".", "!", "?", ";", ":",
];

const TOPICS: &[&str] = &["travel", "food", "science"];
const SOURCES: &[&str] = &["human", "toy-bigram", "other-lm"];

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Character span of every token, by generation position.
    pub tokens: Vec<Vec<CharSpan>>,
}

/// Joins words with single spaces and records where each one lands.
fn layout(words: &[&str]) -> (String, Vec<CharSpan>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(words.len());
    let mut pos = 0;
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            pos += 1;
        }
        let len = w.chars().count();
        spans.push(CharSpan::new(pos, pos + len));
        text.push_str(w);
        pos += len;
    }
    (text, spans)
}

fn token_range(rng: &mut impl Rng, n_tokens: usize) -> (usize, usize) {
    let len = rng.gen_range(1..=n_tokens.min(12));
    let start = rng.gen_range(0..=n_tokens - len);
    (start, start + len)
}

/// `n_generations` texts of 5 to 60 tokens, each with up to
/// `max_annotations` annotations of up to 6 snapped spans.
pub fn synthetic_dataset(seed: u64, n_generations: usize, max_annotations: usize) -> Synthetic {
    let mut rng = rng_from_seed(seed);
    let grid = standard_grid();
    let mut generations = Vec::with_capacity(n_generations);
    let mut annotations = Vec::new();
    let mut tokens = Vec::with_capacity(n_generations);
    for g in 0..n_generations {
        let n_tokens = rng.gen_range(5..=60);
        let words: Vec<&str> = (0..n_tokens)
            .map(|_| *VOCAB.choose(&mut rng).expect("non-empty"))
            .collect();
        let (text, spans) = layout(&words);
        let id = format!("s{seed}-g{g}");
        let source = *SOURCES.choose(&mut rng).expect("non-empty");
        let config = (source != "human").then(|| *grid.choose(&mut rng).expect("non-empty"));
        let mut record = GenerationRecord::new(&id, "Prompt.", text, source, config);
        record.topic = rng
            .gen_bool(0.8)
            .then(|| TOPICS.choose(&mut rng).expect("non-empty").to_string());
        generations.push(record);

        for a in 0..rng.gen_range(0..=max_annotations) {
            let mut ann_spans = Vec::new();
            for _ in 0..rng.gen_range(0..=6) {
                let error_type = *ErrorType::ALL.choose(&mut rng).expect("non-empty");
                let severity = Severity::new(rng.gen_range(1..=3)).expect("1..=3");
                let (s, e) = token_range(&mut rng, n_tokens);
                let span = CharSpan::new(spans[s].start, spans[e - 1].end);
                let mut error = ErrorSpan::new(span, error_type, severity, "x");
                if error_type.supports_antecedent() && rng.gen_bool(0.5) {
                    let (s, e) = token_range(&mut rng, n_tokens);
                    let antecedent = CharSpan::new(spans[s].start, spans[e - 1].end);
                    if antecedent != span {
                        error = error.with_antecedent(antecedent);
                    }
                }
                ann_spans.push(error);
            }
            let mut annotation = Annotation::new(format!("{id}-a{a}"), &id, format!("w{a}"), ann_spans);
            annotation.duration_seconds = Some(rng.gen_range(10.0..300.0));
            annotations.push(annotation);
        }
        tokens.push(spans);
    }
    Synthetic {
        dataset: Dataset::new(generations, annotations),
        tokens,
    }
}

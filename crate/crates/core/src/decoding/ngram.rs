//! Order-2 interpolated count model, small enough to ship with the crate.
//!
//! `P(w | prev) = λ · c(prev, w) / c(prev, ·) + (1 - λ) · (c(w) + 1) / (N + V)`,
//! falling back to the add-one unigram term when `prev` was never followed by
//! anything. Scores are natural-log probabilities.
//!
//! The JSON file format (`format = "errspan-ngram"`, `version = 1`) stores the
//! vocabulary in id order, unigram counts in the same order and bigram counts
//! as sorted `[prev, next, count]` triples.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::textproc::tokenize;

const FORMAT: &str = "errspan-ngram";
const VERSION: u32 = 1;
const TOY_CORPUS: &str = include_str!("../../data/toy_corpus.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    name: String,
    lambda: f64,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    unigram: Vec<u64>,
    total: u64,
    followers: Vec<BTreeMap<usize, u64>>,
    follower_totals: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: u32,
    name: String,
    lambda: f64,
    vocab: Vec<String>,
    unigram: Vec<u64>,
    bigram: Vec<[u64; 3]>,
}

impl NgramModel {
    /// Trains on the tokens of `corpus`. The vocabulary is sorted so the
    /// model does not depend on corpus order beyond the counts.
    pub fn train(name: impl Into<String>, corpus: &str, lambda: f64) -> Self {
        let map = tokenize(corpus);
        let tokens = map.token_texts(corpus);
        let mut vocab: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        vocab.sort();
        vocab.dedup();
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ids: Vec<usize> = tokens.iter().map(|t| index[*t]).collect();
        let mut unigram = vec![0u64; vocab.len()];
        for &id in &ids {
            unigram[id] += 1;
        }
        let mut bigram = Vec::new();
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for pair in ids.windows(2) {
            *counts.entry((pair[0], pair[1])).or_default() += 1;
        }
        for ((a, b), c) in counts {
            bigram.push([a as u64, b as u64, c]);
        }
        Self::assemble(name.into(), lambda, vocab, unigram, &bigram)
            .expect("trained tables are consistent")
    }

    /// The model trained on the bundled corpus.
    pub fn toy() -> Self {
        Self::train("toy-bigram", TOY_CORPUS, 0.95)
    }

    fn assemble(
        name: String,
        lambda: f64,
        vocab: Vec<String>,
        unigram: Vec<u64>,
        bigram: &[[u64; 3]],
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::ModelFormat(format!("lambda {lambda} not in [0, 1]")));
        }
        if unigram.len() != vocab.len() {
            return Err(Error::ModelFormat(format!(
                "{} unigram counts for {} vocabulary entries",
                unigram.len(),
                vocab.len()
            )));
        }
        let mut followers = vec![BTreeMap::new(); vocab.len()];
        let mut follower_totals = vec![0u64; vocab.len()];
        for &[a, b, c] in bigram {
            let (a, b) = (a as usize, b as usize);
            if a >= vocab.len() || b >= vocab.len() {
                return Err(Error::ModelFormat(format!("bigram ({a}, {b}) out of range")));
            }
            followers[a].insert(b, c);
            follower_totals[a] += c;
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(NgramModel {
            name,
            lambda,
            total: unigram.iter().sum(),
            vocab,
            index,
            unigram,
            followers,
            follower_totals,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let bigram = self
            .followers
            .iter()
            .enumerate()
            .flat_map(|(a, f)| f.iter().map(move |(&b, &c)| [a as u64, b as u64, c]))
            .collect();
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            order: 2,
            name: self.name.clone(),
            lambda: self.lambda,
            vocab: self.vocab.clone(),
            unigram: self.unigram.clone(),
            bigram,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format != FORMAT || file.version != VERSION || file.order != 2 {
            return Err(Error::ModelFormat(format!(
                "unsupported model file {} v{} order {}",
                file.format, file.version, file.order
            )));
        }
        Self::assemble(file.name, file.lambda, file.vocab, file.unigram, &file.bigram)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn probability(&self, prev: Option<usize>, next: usize) -> f64 {
        let v = self.vocab.len() as f64;
        let uni = (self.unigram[next] + 1) as f64 / (self.total as f64 + v);
        match prev {
            Some(p) if self.follower_totals[p] > 0 => {
                let bi = self.followers[p].get(&next).copied().unwrap_or(0) as f64
                    / self.follower_totals[p] as f64;
                self.lambda * bi + (1.0 - self.lambda) * uni
            }
            _ => uni,
        }
    }
}

impl LanguageModel for NgramModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_scores(&self, context: &[usize]) -> Vec<f64> {
        let prev = context.last().copied().filter(|&p| p < self.vocab.len());
        (0..self.vocab.len())
            .map(|w| self.probability(prev, w).ln())
            .collect()
    }

    fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

//! Frequency penalty, temperature, nucleus sampling and the
//! length-controlled generation loop.
//!
//! One decoding step runs, in order: frequency penalty on the raw scores,
//! temperature (or argmax), nucleus filtering, and a draw from the result.

mod ngram;

pub use ngram::NgramModel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodingConfig, GenerationRecord};
use crate::rng::{derive_seed, hash_str, rng_from_seed, SeededRng};
use crate::textproc::{detokenize, ends_sentence, tokenize, Abbreviations};
use rand::Rng;

/// A next-token scorer over a fixed vocabulary.
pub trait LanguageModel {
    fn name(&self) -> &str;

    fn vocabulary(&self) -> &[String];

    /// Raw, unnormalized scores for every vocabulary entry given the token
    /// ids generated so far. Must be deterministic.
    fn next_scores(&self, context: &[usize]) -> Vec<f64>;

    fn token_id(&self, token: &str) -> Option<usize> {
        self.vocabulary().iter().position(|t| t == token)
    }
}

/// `score[t] - count[t] * alpha_f` for every token.
pub fn apply_frequency_penalty(scores: &[f64], counts: &[u64], alpha_f: f64) -> Result<Vec<f64>> {
    if scores.len() != counts.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: counts.len(),
        });
    }
    if alpha_f.is_nan() || alpha_f < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "frequency penalty must be >= 0, got {alpha_f}"
        )));
    }
    Ok(scores
        .iter()
        .zip(counts)
        .map(|(&s, &c)| if c == 0 { s } else { s - c as f64 * alpha_f })
        .collect())
}

/// Index of the highest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() || s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Numerically stable softmax; `-inf` entries get probability 0.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| !s.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoFiniteScore);
    }
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoFiniteScore);
    }
    let log_sum = scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln() + max;
    Ok(scores.iter().map(|&s| s - log_sum).collect())
}

/// `softmax(scores / t)` for `t > 0`; a one-hot vector on the argmax for `t = 0`.
pub fn apply_temperature(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature.is_nan() || temperature < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be >= 0, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        let best = argmax(scores).ok_or(Error::NoFiniteScore)?;
        let mut probs = vec![0.0; scores.len()];
        probs[best] = 1.0;
        return Ok(probs);
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax(&scaled)
}

/// Keeps the smallest set of most probable tokens whose mass reaches `p`
/// (ties broken by lower index) and renormalizes.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_p must be in (0, 1], got {p}"
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        if probs[i] <= 0.0 {
            break;
        }
        kept[i] = probs[i];
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    if mass <= 0.0 {
        return Err(Error::NoFiniteScore);
    }
    Ok(kept.into_iter().map(|x| x / mass).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &q) in probs.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// What the language model's scores are taken to be before the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// The model output as-is.
    #[default]
    Raw,
    /// Log-softmax of the model output.
    LogSoftmax,
}

/// Per-sequence sampling state: token counts so far and the random stream.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub counts: Vec<u64>,
    pub rng: SeededRng,
    pub config: DecodingConfig,
    pub score_mode: ScoreMode,
}

impl SamplerState {
    pub fn new(vocab_size: usize, config: DecodingConfig, seed: u64) -> Self {
        SamplerState {
            counts: vec![0; vocab_size],
            rng: rng_from_seed(seed),
            config,
            score_mode: ScoreMode::Raw,
        }
    }

    /// Distribution the next token is drawn from, before the draw.
    pub fn distribution(&self, raw_scores: &[f64]) -> Result<Vec<f64>> {
        let scores = match self.score_mode {
            ScoreMode::Raw => raw_scores.to_vec(),
            ScoreMode::LogSoftmax => log_softmax(raw_scores)?,
        };
        let scores =
            apply_frequency_penalty(&scores, &self.counts, self.config.frequency_penalty)?;
        let probs = apply_temperature(&scores, self.config.temperature)?;
        match (self.config.is_argmax(), self.config.top_p) {
            (false, Some(p)) => nucleus_filter(&probs, p),
            _ => Ok(probs),
        }
    }

    /// Picks the next token and records it in the counts.
    pub fn step(&mut self, raw_scores: &[f64]) -> Result<usize> {
        let probs = self.distribution(raw_scores)?;
        let token = if self.config.is_argmax() {
            argmax(&probs).ok_or(Error::NoFiniteScore)?
        } else {
            sample_index(&probs, &mut self.rng)
        };
        self.counts[token] += 1;
        Ok(token)
    }
}

/// Runs `n` decoding steps with no stopping rule.
pub fn sample_tokens<L: LanguageModel + ?Sized>(
    lm: &L,
    context: &[usize],
    config: DecodingConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut state = SamplerState::new(lm.vocabulary().len(), config, seed);
    let mut ctx = context.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = state.step(&lm.next_scores(&ctx))?;
        ctx.push(t);
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_retries: usize,
    pub seed: u64,
    /// Seed the frequency counts with the prompt's tokens.
    pub count_prompt_tokens: bool,
    pub score_mode: ScoreMode,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            min_tokens: 80,
            max_tokens: 145,
            max_retries: 10,
            seed: 0,
            count_prompt_tokens: false,
            score_mode: ScoreMode::Raw,
        }
    }
}

/// Generates a continuation of `prompt` that stops at the first sentence end
/// at or after `min_tokens` tokens. An attempt that reaches `max_tokens`
/// without one is discarded and retried with a fresh derived seed; argmax
/// decoding is deterministic and gets a single attempt.
pub fn generate<L: LanguageModel + ?Sized>(
    lm: &L,
    prompt: &str,
    config: DecodingConfig,
    options: &GenerateOptions,
) -> Result<GenerationRecord> {
    config.validate().map_err(Error::InvalidArgument)?;
    if options.min_tokens == 0 || options.min_tokens > options.max_tokens {
        return Err(Error::InvalidArgument(format!(
            "need 0 < min_tokens <= max_tokens, got {} and {}",
            options.min_tokens, options.max_tokens
        )));
    }
    let prompt_map = tokenize(prompt);
    if prompt_map.is_empty() {
        return Err(Error::InvalidArgument("prompt has no tokens".into()));
    }
    let prompt_ids: Vec<usize> = prompt_map
        .token_texts(prompt)
        .into_iter()
        .filter_map(|t| lm.token_id(t))
        .collect();
    let vocab = lm.vocabulary();
    let abbreviations = Abbreviations::builtin();
    let attempts = if config.is_argmax() {
        1
    } else {
        options.max_retries.max(1)
    };

    for attempt in 0..attempts {
        let mut state = SamplerState::new(
            vocab.len(),
            config,
            derive_seed(options.seed, &[attempt as u64]),
        );
        state.score_mode = options.score_mode;
        if options.count_prompt_tokens {
            for &t in &prompt_ids {
                state.counts[t] += 1;
            }
        }
        let mut context = prompt_ids.clone();
        let mut emitted: Vec<&str> = Vec::with_capacity(options.max_tokens);
        while emitted.len() < options.max_tokens {
            let token = state.step(&lm.next_scores(&context))?;
            context.push(token);
            emitted.push(&vocab[token]);
            let last = emitted.len() - 1;
            if emitted.len() >= options.min_tokens && ends_sentence(&emitted, last, abbreviations)
            {
                let text = detokenize(&emitted);
                let id = derive_seed(
                    options.seed,
                    &[hash_str(prompt), hash_str(&config.label())],
                );
                return Ok(GenerationRecord::new(
                    format!("{}-{id:016x}", lm.name()),
                    prompt,
                    text,
                    lm.name(),
                    Some(config),
                ));
            }
        }
        log::debug!("attempt {attempt} reached {} tokens without a sentence end", options.max_tokens);
    }
    Err(Error::NoSentenceBoundary {
        min_tokens: options.min_tokens,
        max_tokens: options.max_tokens,
        attempts,
    })
}

/// The annotated decoding grid: top-p varied at t = 1, temperature varied at
/// p = 0.96 (t = 0 is argmax), each with and without a full frequency penalty.
pub fn standard_grid() -> Vec<DecodingConfig> {
    let mut grid = Vec::with_capacity(14);
    for fp in [0.0, 1.0] {
        for p in [0.4, 0.7, 0.9] {
            grid.push(DecodingConfig {
                top_p: Some(p),
                temperature: 1.0,
                frequency_penalty: fp,
            });
        }
        grid.push(DecodingConfig {
            top_p: None,
            temperature: 0.0,
            frequency_penalty: fp,
        });
        for t in [0.4, 0.7, 1.0] {
            grid.push(DecodingConfig {
                top_p: Some(0.96),
                temperature: t,
                frequency_penalty: fp,
            });
        }
    }
    grid
}

/// Generates every prompt under every configuration. Each (prompt, config)
/// pair gets its own derived seed; pairs that exhaust their retries are
/// logged and left out.
pub fn sweep<L: LanguageModel + ?Sized>(
    lm: &L,
    prompts: &[String],
    grid: &[DecodingConfig],
    options: &GenerateOptions,
) -> Vec<GenerationRecord> {
    let mut out = Vec::with_capacity(prompts.len() * grid.len());
    for (pi, prompt) in prompts.iter().enumerate() {
        for (ci, config) in grid.iter().enumerate() {
            let opts = GenerateOptions {
                seed: derive_seed(options.seed, &[pi as u64, ci as u64]),
                ..*options
            };
            match generate(lm, prompt, *config, &opts) {
                Ok(record) => out.push(record),
                Err(e) => log::warn!("prompt {pi} with {}: {e}", config.label()),
            }
        }
    }
    out
}

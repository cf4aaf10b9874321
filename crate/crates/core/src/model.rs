//! Domain types and the error taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// The three groups the ten error types fall into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    Language,
    Factual,
    ReaderIssue,
}

/// The ten span labels an annotator can choose from.
///
/// The wire names (`Grammar_Usage`, `Off_Prompt`, ...) are fixed by the
/// annotation file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    #[serde(rename = "Grammar_Usage")]
    GrammarUsage,
    #[serde(rename = "Off_Prompt")]
    OffPrompt,
    Redundant,
    #[serde(rename = "Self_Contradiction")]
    SelfContradiction,
    Incoherent,
    #[serde(rename = "Bad_Math")]
    BadMath,
    Encyclopedic,
    Commonsense,
    #[serde(rename = "Needs_Google")]
    NeedsGoogle,
    #[serde(rename = "Technical_Jargon")]
    TechnicalJargon,
}

impl ErrorType {
    pub const ALL: [ErrorType; 10] = [
        ErrorType::GrammarUsage,
        ErrorType::OffPrompt,
        ErrorType::Redundant,
        ErrorType::SelfContradiction,
        ErrorType::Incoherent,
        ErrorType::BadMath,
        ErrorType::Encyclopedic,
        ErrorType::Commonsense,
        ErrorType::NeedsGoogle,
        ErrorType::TechnicalJargon,
    ];

    pub fn category(self) -> ErrorCategory {
        use ErrorType::*;
        match self {
            GrammarUsage | OffPrompt | Redundant | SelfContradiction | Incoherent => {
                ErrorCategory::Language
            }
            BadMath | Encyclopedic | Commonsense => ErrorCategory::Factual,
            NeedsGoogle | TechnicalJargon => ErrorCategory::ReaderIssue,
        }
    }

    pub fn is_reader_issue(self) -> bool {
        self.category() == ErrorCategory::ReaderIssue
    }

    /// Only repetition and contradiction errors point back at an earlier mention.
    pub fn supports_antecedent(self) -> bool {
        matches!(self, ErrorType::Redundant | ErrorType::SelfContradiction)
    }

    pub fn wire_name(self) -> &'static str {
        use ErrorType::*;
        match self {
            GrammarUsage => "Grammar_Usage",
            OffPrompt => "Off_Prompt",
            Redundant => "Redundant",
            SelfContradiction => "Self_Contradiction",
            Incoherent => "Incoherent",
            BadMath => "Bad_Math",
            Encyclopedic => "Encyclopedic",
            Commonsense => "Commonsense",
            NeedsGoogle => "Needs_Google",
            TechnicalJargon => "Technical_Jargon",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorType::ALL
            .into_iter()
            .find(|t| t.wire_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown error type {s:?}"))
    }
}

/// Impact of an error: 1 barely matters, 3 makes the text hard to understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Severity(u8);

impl Severity {
    pub const MINOR: Severity = Severity(1);
    pub const MODERATE: Severity = Severity(2);
    pub const MAJOR: Severity = Severity(3);

    pub fn new(level: u8) -> Option<Self> {
        (1..=3).contains(&level).then_some(Severity(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Severity {
    type Error = String;

    fn try_from(level: u8) -> Result<Self, Self::Error> {
        Severity::new(level).ok_or_else(|| format!("severity must be 1, 2 or 3, got {level}"))
    }
}

impl From<Severity> for u8 {
    fn from(s: Severity) -> u8 {
        s.0
    }
}

/// Half-open range of Unicode scalar value offsets into a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &CharSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// One labeled problem region inside a generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpan {
    #[serde(flatten)]
    pub span: CharSpan,
    pub error_type: ErrorType,
    pub severity: Severity,
    pub explanation: String,
    pub antecedent: Option<CharSpan>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ErrorSpan {
    pub fn new(
        span: CharSpan,
        error_type: ErrorType,
        severity: Severity,
        explanation: impl Into<String>,
    ) -> Self {
        ErrorSpan {
            span,
            error_type,
            severity,
            explanation: explanation.into(),
            antecedent: None,
            extra: Map::new(),
        }
    }

    pub fn with_antecedent(mut self, antecedent: CharSpan) -> Self {
        self.antecedent = Some(antecedent);
        self
    }
}

/// One annotator's pass over one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub generation_id: String,
    pub annotator_id: String,
    pub duration_seconds: Option<f64>,
    pub spans: Vec<ErrorSpan>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Annotation {
    pub fn new(
        annotation_id: impl Into<String>,
        generation_id: impl Into<String>,
        annotator_id: impl Into<String>,
        spans: Vec<ErrorSpan>,
    ) -> Self {
        Annotation {
            annotation_id: annotation_id.into(),
            generation_id: generation_id.into(),
            annotator_id: annotator_id.into(),
            duration_seconds: None,
            spans,
            extra: Map::new(),
        }
    }

    pub fn spans_of(&self, error_type: ErrorType) -> impl Iterator<Item = &ErrorSpan> {
        self.spans.iter().filter(move |s| s.error_type == error_type)
    }
}

/// Sampling hyperparameters. A temperature of 0 means argmax decoding, in
/// which case `top_p` has no effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub top_p: Option<f64>,
    pub temperature: f64,
    pub frequency_penalty: f64,
}

impl DecodingConfig {
    /// p = 0.96, t = 1, no frequency penalty: the setting shared by every
    /// model in cross-model comparisons.
    pub const APPLES_TO_APPLES: DecodingConfig = DecodingConfig {
        top_p: Some(0.96),
        temperature: 1.0,
        frequency_penalty: 0.0,
    };

    pub fn is_argmax(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("top_p must be in (0, 1], got {p}"));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            ));
        }
        if !self.frequency_penalty.is_finite() || self.frequency_penalty < 0.0 {
            return Err(format!(
                "frequency_penalty must be finite and >= 0, got {}",
                self.frequency_penalty
            ));
        }
        Ok(())
    }

    /// Short stable label used as a grouping key, e.g. `p=0.96,t=1,fp=0`.
    pub fn label(&self) -> String {
        if self.is_argmax() {
            format!("p=n/a,t=argmax,fp={}", self.frequency_penalty)
        } else {
            let p = self
                .top_p
                .map(|p| p.to_string())
                .unwrap_or_else(|| "1".to_string());
            format!("p={p},t={},fp={}", self.temperature, self.frequency_penalty)
        }
    }
}

pub const HUMAN_SOURCE: &str = "human";

/// A prompt and the paragraph written as its continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation_id: String,
    pub prompt: String,
    pub generation: String,
    pub source: String,
    pub topic: Option<String>,
    pub config: Option<DecodingConfig>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GenerationRecord {
    pub fn new(
        generation_id: impl Into<String>,
        prompt: impl Into<String>,
        generation: impl Into<String>,
        source: impl Into<String>,
        config: Option<DecodingConfig>,
    ) -> Self {
        GenerationRecord {
            generation_id: generation_id.into(),
            prompt: prompt.into(),
            generation: generation.into(),
            source: source.into(),
            topic: None,
            config,
            extra: Map::new(),
        }
    }

    pub fn is_human(&self) -> bool {
        self.source == HUMAN_SOURCE
    }

    /// Grouping key for per-model / per-configuration breakdowns.
    pub fn source_config_key(&self) -> String {
        match &self.config {
            Some(c) => format!("{}|{}", self.source, c.label()),
            None => self.source.clone(),
        }
    }

    pub fn text_length(&self) -> usize {
        self.generation.chars().count()
    }
}

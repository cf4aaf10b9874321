//! JSONL wire formats and dataset validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Annotation, CharSpan, GenerationRecord};
use crate::textproc::{tokenize, TokenMap};

/// Parses one record per non-blank line. Errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    read_jsonl(BufReader::new(file))
}

/// Canonical single-line encoding: fixed field order, compact separators.
pub fn to_line<T: Serialize>(record: &T) -> Result<String> {
    Ok(serde_json::to_string(record)?)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> Result<()> {
    for r in records {
        writeln!(writer, "{}", to_line(r)?)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateGenerationId,
    EmptyPrompt,
    EmptyGeneration,
    HumanWithConfig,
    InvalidConfig,
    DuplicateAnnotationId,
    DanglingReference,
    NegativeDuration,
    InvalidSpan,
    SpanOutOfBounds,
    NotSnapped,
    EmptyExplanation,
    AntecedentNotSupported,
    AntecedentEqualsSpan,
    AntecedentOutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Generation or annotation id of the offending record.
    pub record_id: String,
    /// Index of the offending span inside the annotation, if any.
    pub span_index: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} in {}", self.kind, self.record_id)?;
        if let Some(i) = self.span_index {
            write!(f, " (span {i})")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub generations: usize,
    pub annotations: usize,
    pub spans: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub generations: usize,
    pub annotations: usize,
    pub spans: usize,
    /// Keyed by `source|config-label` (or just the source for human text).
    pub breakdown: BTreeMap<String, Breakdown>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>8} {:>8} {:>8}", "group", "gens", "anns", "spans")?;
        for (key, b) in &self.breakdown {
            writeln!(
                f,
                "{:<40} {:>8} {:>8} {:>8}",
                key, b.generations, b.annotations, b.spans
            )?;
        }
        writeln!(
            f,
            "{:<40} {:>8} {:>8} {:>8}",
            "total", self.generations, self.annotations, self.spans
        )?;
        writeln!(f, "violations: {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Generations and their annotations, indexed and tokenized once.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    generations: Vec<GenerationRecord>,
    annotations: Vec<Annotation>,
    token_maps: Vec<TokenMap>,
    index: HashMap<String, usize>,
    by_generation: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(generations: Vec<GenerationRecord>, annotations: Vec<Annotation>) -> Self {
        let token_maps = generations.iter().map(|g| tokenize(&g.generation)).collect();
        let mut index = HashMap::with_capacity(generations.len());
        for (i, g) in generations.iter().enumerate() {
            index.entry(g.generation_id.clone()).or_insert(i);
        }
        let mut by_generation = vec![Vec::new(); generations.len()];
        for (a, ann) in annotations.iter().enumerate() {
            if let Some(&g) = index.get(&ann.generation_id) {
                by_generation[g].push(a);
            }
        }
        Dataset {
            generations,
            annotations,
            token_maps,
            index,
            by_generation,
        }
    }

    pub fn load(generations: &Path, annotations: &Path) -> Result<Self> {
        Ok(Dataset::new(
            read_jsonl_file(generations)?,
            read_jsonl_file(annotations)?,
        ))
    }

    pub fn generations(&self) -> &[GenerationRecord] {
        &self.generations
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn position(&self, generation_id: &str) -> Option<usize> {
        self.index.get(generation_id).copied()
    }

    pub fn generation(&self, generation_id: &str) -> Option<&GenerationRecord> {
        self.position(generation_id).map(|i| &self.generations[i])
    }

    pub fn token_map(&self, position: usize) -> &TokenMap {
        &self.token_maps[position]
    }

    /// Annotations of the generation at `position`, in input order.
    pub fn annotations_of(&self, position: usize) -> impl Iterator<Item = &Annotation> + '_ {
        self.by_generation[position]
            .iter()
            .map(move |&a| &self.annotations[a])
    }

    pub fn annotation_count(&self, position: usize) -> usize {
        self.by_generation[position].len()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen_generations = HashSet::new();
        for g in &self.generations {
            report.generations += 1;
            report
                .breakdown
                .entry(g.source_config_key())
                .or_default()
                .generations += 1;
            check_generation(g, &mut seen_generations, &mut report.violations);
        }

        let mut seen_annotations = HashSet::new();
        for ann in &self.annotations {
            report.annotations += 1;
            report.spans += ann.spans.len();
            if !seen_annotations.insert(ann.annotation_id.as_str()) {
                report.violations.push(Violation {
                    kind: ViolationKind::DuplicateAnnotationId,
                    record_id: ann.annotation_id.clone(),
                    span_index: None,
                    detail: "annotation_id already used".into(),
                });
            }
            match self.position(&ann.generation_id) {
                None => report.violations.push(Violation {
                    kind: ViolationKind::DanglingReference,
                    record_id: ann.annotation_id.clone(),
                    span_index: None,
                    detail: format!("unknown generation_id {:?}", ann.generation_id),
                }),
                Some(pos) => {
                    let b = report
                        .breakdown
                        .entry(self.generations[pos].source_config_key())
                        .or_default();
                    b.annotations += 1;
                    b.spans += ann.spans.len();
                    report
                        .violations
                        .extend(annotation_violations(ann, &self.token_maps[pos]));
                }
            }
        }
        report
    }

    /// Fails with [`Error::InvalidDataset`] unless the dataset is clean or
    /// `force` is set.
    pub fn ensure_valid(&self, force: bool) -> Result<ValidationReport> {
        let report = self.validate();
        if !report.is_valid() && !force {
            return Err(Error::InvalidDataset(report.violations.len()));
        }
        Ok(report)
    }
}

/// Streams both files through [`Dataset::validate`].
pub fn validate_dataset<G: BufRead, A: BufRead>(
    generations: G,
    annotations: A,
) -> Result<ValidationReport> {
    let dataset = Dataset::new(read_jsonl(generations)?, read_jsonl(annotations)?);
    Ok(dataset.validate())
}

fn check_generation<'a>(
    g: &'a GenerationRecord,
    seen: &mut HashSet<&'a str>,
    out: &mut Vec<Violation>,
) {
    let mut push = |kind, detail: String| {
        out.push(Violation {
            kind,
            record_id: g.generation_id.clone(),
            span_index: None,
            detail,
        })
    };
    if !seen.insert(g.generation_id.as_str()) {
        push(
            ViolationKind::DuplicateGenerationId,
            "generation_id already used".into(),
        );
    }
    if g.prompt.trim().is_empty() {
        push(ViolationKind::EmptyPrompt, "prompt is empty".into());
    }
    if g.generation.trim().is_empty() {
        push(ViolationKind::EmptyGeneration, "generation is empty".into());
    }
    if g.is_human() && g.config.is_some() {
        push(
            ViolationKind::HumanWithConfig,
            "human text must not carry a decoding config".into(),
        );
    }
    if let Some(Err(e)) = g.config.as_ref().map(|c| c.validate()) {
        push(ViolationKind::InvalidConfig, e);
    }
}

/// Checks one annotation against the text it refers to.
pub fn annotation_violations(ann: &Annotation, token_map: &TokenMap) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, span_index, detail: String| {
        out.push(Violation {
            kind,
            record_id: ann.annotation_id.clone(),
            span_index,
            detail,
        })
    };
    if let Some(d) = ann.duration_seconds {
        if d.is_nan() || d < 0.0 {
            push(
                ViolationKind::NegativeDuration,
                None,
                format!("duration_seconds = {d}"),
            );
        }
    }
    for (i, s) in ann.spans.iter().enumerate() {
        if let Some(kind) = span_geometry_violation(s.span, token_map) {
            push(kind, Some(i), format!("span {}", s.span));
        }
        if s.explanation.trim().is_empty() {
            push(ViolationKind::EmptyExplanation, Some(i), "explanation is empty".into());
        }
        if let Some(ante) = s.antecedent {
            if !s.error_type.supports_antecedent() {
                push(
                    ViolationKind::AntecedentNotSupported,
                    Some(i),
                    format!("{} spans cannot have an antecedent", s.error_type),
                );
            }
            if ante == s.span {
                push(
                    ViolationKind::AntecedentEqualsSpan,
                    Some(i),
                    format!("antecedent {ante} equals the span"),
                );
            }
            match span_geometry_violation(ante, token_map) {
                Some(ViolationKind::NotSnapped) => push(
                    ViolationKind::NotSnapped,
                    Some(i),
                    format!("antecedent {ante}"),
                ),
                Some(_) => push(
                    ViolationKind::AntecedentOutOfBounds,
                    Some(i),
                    format!("antecedent {ante}"),
                ),
                None => {}
            }
        }
    }
    out
}

fn span_geometry_violation(span: CharSpan, token_map: &TokenMap) -> Option<ViolationKind> {
    if span.start >= span.end {
        return Some(ViolationKind::InvalidSpan);
    }
    if span.end > token_map.text_length {
        return Some(ViolationKind::SpanOutOfBounds);
    }
    match token_map.snap(span) {
        Ok(snapped) if snapped == span => None,
        _ => Some(ViolationKind::NotSnapped),
    }
}

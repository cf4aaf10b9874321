//! Report rendering shared by the CLI and the `/api/reports/{kind}` endpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use errspan_core::agreement::{
    agreement_csv, agreement_table, bootstrap_counts, bootstrap_csv, AgreementOptions,
    BootstrapConfig,
};
use errspan_core::metrics::{
    length_stats, metric_reports, reports_to_csv, topic_heatmap, BootstrapOptions, GroupBy,
    MetricOptions, Normalize, OverlapMode, Weighting,
};
use errspan_core::{CharSpan, Dataset, ErrorCategory, ErrorType, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Validation,
    Metrics,
    Agreement,
    Bootstrap,
    Heatmap,
    Lengths,
    Overlay,
}

impl ReportKind {
    pub fn parse(s: &str) -> Option<Self> {
        <Self as clap::ValueEnum>::from_str(s, true).ok()
    }
}

/// Knobs for every report kind; each kind reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportParams {
    pub format: Format,
    pub weighting: Weighting,
    pub group_by: GroupBy,
    pub overlap: OverlapMode,
    pub include_antecedents: bool,
    pub keep_severity1_grammar: bool,
    pub exclude_reader_issues: bool,
    pub resamples: usize,
    pub confidence: f64,
    pub n_generations: usize,
    pub with_replacement: bool,
    pub normalize: Normalize,
    pub seed: u64,
    pub generation_id: Option<String>,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            format: Format::Json,
            weighting: Weighting::Coverage,
            group_by: GroupBy::SourceConfig,
            overlap: OverlapMode::Stack,
            include_antecedents: false,
            keep_severity1_grammar: false,
            exclude_reader_issues: false,
            resamples: 1000,
            confidence: 0.95,
            n_generations: 50,
            with_replacement: false,
            normalize: Normalize::ByTopic,
            seed: 0,
            generation_id: None,
        }
    }
}

impl ReportParams {
    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            drop_severity1_grammar: !self.keep_severity1_grammar,
            include_reader_issues: !self.exclude_reader_issues,
            include_antecedents: self.include_antecedents,
            weighting: self.weighting,
            overlap: self.overlap,
        }
    }

    pub fn agreement_options(&self) -> AgreementOptions {
        AgreementOptions {
            drop_severity1_grammar: !self.keep_severity1_grammar,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{0}")]
    BadRequest(String),
    #[error("generation {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] errspan_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySpan {
    pub start: usize,
    pub end: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub error_type: ErrorType,
    pub category: ErrorCategory,
    pub severity: Severity,
    pub antecedent: Option<CharSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub annotation_id: String,
    pub annotator_id: String,
    pub spans: Vec<OverlaySpan>,
}

/// Every annotation of one generation stacked as rows over its tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub generation_id: String,
    pub prompt: String,
    pub text: String,
    pub tokens: Vec<CharSpan>,
    pub rows: Vec<OverlayRow>,
    /// Spans per error type over all rows.
    pub type_counts: BTreeMap<ErrorType, usize>,
}

pub fn overlay(dataset: &Dataset, generation_id: &str) -> Result<Overlay, ReportError> {
    let pos = dataset
        .position(generation_id)
        .ok_or_else(|| ReportError::NotFound(generation_id.to_string()))?;
    let g = &dataset.generations()[pos];
    let map = dataset.token_map(pos);
    let mut type_counts = BTreeMap::new();
    let mut rows = Vec::new();
    for a in dataset.annotations_of(pos) {
        let mut spans = Vec::with_capacity(a.spans.len());
        for s in &a.spans {
            let range = map.span_tokens(s.span)?;
            *type_counts.entry(s.error_type).or_insert(0) += 1;
            spans.push(OverlaySpan {
                start: s.span.start,
                end: s.span.end,
                token_start: range.start,
                token_end: range.end,
                error_type: s.error_type,
                category: s.error_type.category(),
                severity: s.severity,
                antecedent: s.antecedent,
            });
        }
        rows.push(OverlayRow {
            annotation_id: a.annotation_id.clone(),
            annotator_id: a.annotator_id.clone(),
            spans,
        });
    }
    Ok(Overlay {
        generation_id: g.generation_id.clone(),
        prompt: g.prompt.clone(),
        text: g.generation.clone(),
        tokens: map.tokens.clone(),
        rows,
        type_counts,
    })
}

fn json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(value).map_err(errspan_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn csv_unsupported(kind: ReportKind) -> ReportError {
    ReportError::BadRequest(format!("{kind:?} reports are JSON only"))
}

/// Renders one report. The output depends only on the dataset and `params`.
pub fn render(kind: ReportKind, dataset: &Dataset, params: &ReportParams) -> Result<String, ReportError> {
    let csv = params.format == Format::Csv;
    match kind {
        ReportKind::Validation => {
            let report = dataset.validate();
            if csv {
                Ok(report.to_string())
            } else {
                json(&report)
            }
        }
        ReportKind::Metrics => {
            let boot = BootstrapOptions {
                resamples: params.resamples,
                seed: params.seed,
                confidence: params.confidence,
            };
            let reports = metric_reports(dataset, params.group_by, &params.metric_options(), &boot)?;
            if csv {
                Ok(reports_to_csv(&reports, params.weighting == Weighting::Count)?)
            } else {
                json(&reports)
            }
        }
        ReportKind::Agreement => {
            let rows = agreement_table(dataset, &params.agreement_options())?;
            if csv {
                Ok(agreement_csv(&rows))
            } else {
                json(&rows)
            }
        }
        ReportKind::Bootstrap => {
            let n = params.n_generations.min(dataset.generations().len());
            let result = bootstrap_counts(
                dataset,
                &BootstrapConfig {
                    n_generations: n,
                    n_resamples: params.resamples,
                    seed: params.seed,
                    with_replacement: params.with_replacement,
                },
            )?;
            if csv {
                Ok(bootstrap_csv(&result))
            } else {
                json(&result)
            }
        }
        ReportKind::Heatmap => {
            if csv {
                return Err(csv_unsupported(kind));
            }
            json(&topic_heatmap(dataset, params.normalize, &params.metric_options())?)
        }
        ReportKind::Lengths => {
            if csv {
                return Err(csv_unsupported(kind));
            }
            json(&length_stats(dataset)?)
        }
        ReportKind::Overlay => {
            if csv {
                return Err(csv_unsupported(kind));
            }
            let id = params
                .generation_id
                .as_deref()
                .ok_or_else(|| ReportError::BadRequest("overlay needs generation_id".into()))?;
            json(&overlay(dataset, id)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use errspan_core::{Annotation, ErrorSpan, GenerationRecord};

    fn dataset() -> Dataset {
        let g = GenerationRecord::new("g1", "P.", "It rained. It rained again.", "m", None);
        let ann = Annotation::new(
            "a1",
            "g1",
            "w1",
            vec![ErrorSpan::new(
                CharSpan::new(11, 26),
                ErrorType::Redundant,
                Severity::MODERATE,
                "said twice",
            )
            .with_antecedent(CharSpan::new(0, 9))],
        );
        Dataset::new(vec![g], vec![ann])
    }

    #[test]
    fn overlay_rows() {
        let o = overlay(&dataset(), "g1").unwrap();
        assert_eq!(o.rows.len(), 1);
        let s = &o.rows[0].spans[0];
        assert_eq!((s.token_start, s.token_end), (3, 6));
        assert_eq!(o.type_counts[&ErrorType::Redundant], 1);
        assert!(matches!(overlay(&dataset(), "zz"), Err(ReportError::NotFound(_))));
    }

    #[test]
    fn count_csv_lists_present_types_only() {
        let params = ReportParams {
            format: Format::Csv,
            weighting: Weighting::Count,
            group_by: GroupBy::All,
            resamples: 0,
            ..Default::default()
        };
        let csv = render(ReportKind::Metrics, &dataset(), &params).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3, "{csv}");
        assert!(lines[1].starts_with("all,Redundant,count,1.000000"));
        assert!(lines[2].starts_with("all,total,count"));
    }

    #[test]
    fn rendering_is_repeatable() {
        let params = ReportParams {
            n_generations: 1,
            resamples: 20,
            ..Default::default()
        };
        for kind in [ReportKind::Metrics, ReportKind::Agreement, ReportKind::Bootstrap] {
            let a = render(kind, &dataset(), &params).unwrap();
            assert_eq!(a, render(kind, &dataset(), &params).unwrap());
        }
    }

    #[test]
    fn kinds_parse() {
        assert_eq!(ReportKind::parse("metrics"), Some(ReportKind::Metrics));
        assert_eq!(ReportKind::parse("nope"), None);
    }
}

//! Span coverage, coverage × severity and span counts.
//!
//! Every annotation is scored on its own (an annotation without spans scores
//! 0) and scores are averaged over annotations. Per-annotation scores are
//! exact rationals; group means are exact as well and only converted to
//! `f64` for reporting. Confidence intervals come from a seeded percentile
//! bootstrap that resamples whole generations.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Annotation, ErrorSpan, ErrorType, GenerationRecord, Severity};
use crate::rng::{derive_seed, hash_str, index, rng_from_seed};
use crate::textproc::{tokenize, TokenMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Coverage,
    CoverageTimesSeverity,
    Count,
}

impl Weighting {
    pub fn name(self) -> &'static str {
        match self {
            Weighting::Coverage => "coverage",
            Weighting::CoverageTimesSeverity => "coverage_x_severity",
            Weighting::Count => "count",
        }
    }
}

/// How overlapping spans of one type inside one annotation combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Every span counts in full, so coverage has no upper bound.
    #[default]
    Stack,
    /// Covered tokens are counted once; with severity weighting each token
    /// takes the highest severity covering it.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub drop_severity1_grammar: bool,
    /// Only consulted by [`stacked_totals`]; per-type statistics are always
    /// computed for the type asked for.
    pub include_reader_issues: bool,
    pub include_antecedents: bool,
    pub weighting: Weighting,
    pub overlap: OverlapMode,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            drop_severity1_grammar: true,
            include_reader_issues: true,
            include_antecedents: false,
            weighting: Weighting::Coverage,
            overlap: OverlapMode::Stack,
        }
    }
}

impl MetricOptions {
    pub fn with_weighting(weighting: Weighting) -> Self {
        MetricOptions {
            weighting,
            ..Default::default()
        }
    }

    /// Defaults for the stacked "all errors" totals: reader issues left out.
    pub fn stacked(weighting: Weighting) -> Self {
        MetricOptions {
            weighting,
            include_reader_issues: false,
            ..Default::default()
        }
    }

    fn counts_span(&self, span: &ErrorSpan) -> bool {
        !(self.drop_severity1_grammar
            && span.error_type == ErrorType::GrammarUsage
            && span.severity == Severity::MINOR)
    }

    fn includes_type(&self, error_type: ErrorType) -> bool {
        self.include_reader_issues || !error_type.is_reader_issue()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    /// Zero disables the interval.
    pub resamples: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            resamples: 1000,
            seed: 0,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    SourceConfig,
    Topic,
    All,
}

impl GroupBy {
    pub fn key(self, g: &GenerationRecord) -> String {
        match self {
            GroupBy::SourceConfig => g.source_config_key(),
            GroupBy::Topic => g.topic.clone().unwrap_or_else(|| "(none)".to_string()),
            GroupBy::All => "all".to_string(),
        }
    }
}

/// Exact per-annotation score: a token ratio for coverage weightings, a plain
/// count for [`Weighting::Count`].
pub type Score = Ratio<u64>;

/// Scores one annotation for one error type.
pub fn annotation_score(
    annotation: &Annotation,
    generation: &GenerationRecord,
    token_map: &TokenMap,
    error_type: ErrorType,
    options: &MetricOptions,
) -> Result<Score> {
    if annotation.generation_id != generation.generation_id {
        return Err(Error::GenerationMismatch {
            annotation_id: annotation.annotation_id.clone(),
            expected: annotation.generation_id.clone(),
            actual: generation.generation_id.clone(),
        });
    }
    let spans: Vec<&ErrorSpan> = annotation
        .spans_of(error_type)
        .filter(|s| options.counts_span(s))
        .collect();

    if options.weighting == Weighting::Count {
        for s in &spans {
            token_map.span_tokens(s.span)?;
        }
        return Ok(Score::from_integer(spans.len() as u64));
    }

    let severity_weighted = options.weighting == Weighting::CoverageTimesSeverity;
    let weight = |s: &ErrorSpan| {
        if severity_weighted {
            u64::from(s.severity.level())
        } else {
            1
        }
    };
    let numerator = match options.overlap {
        OverlapMode::Stack => {
            let mut total = 0u64;
            for s in spans {
                total += weight(s) * token_map.span_tokens(s.span)?.len() as u64;
                if let (true, Some(ante)) = (options.include_antecedents, s.antecedent) {
                    total += weight(s) * token_map.span_tokens(ante)?.len() as u64;
                }
            }
            total
        }
        OverlapMode::Union => {
            let mut per_token: BTreeMap<usize, u64> = BTreeMap::new();
            for s in spans {
                let mut regions = vec![s.span];
                if options.include_antecedents {
                    regions.extend(s.antecedent);
                }
                for region in regions {
                    for t in token_map.span_tokens(region)? {
                        let w = per_token.entry(t).or_insert(0);
                        *w = (*w).max(weight(s));
                    }
                }
            }
            per_token.values().sum()
        }
    };
    if token_map.is_empty() {
        return Ok(Score::zero());
    }
    Ok(Score::new(numerator, token_map.len() as u64))
}

/// Summary of one statistic over the annotations of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStat {
    /// `None` when the group has no annotations.
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_annotations: usize,
    #[serde(skip)]
    pub exact_mean: Option<BigRational>,
}

impl TypeStat {
    pub fn is_defined(&self) -> bool {
        self.mean.is_some()
    }
}

/// All statistics of one group under one weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub group: String,
    pub weighting: Weighting,
    pub per_type: BTreeMap<ErrorType, TypeStat>,
    pub total: TypeStat,
}

/// Scores of every annotation, grouped by key and then by generation.
type GroupedScores = BTreeMap<String, Vec<Vec<Score>>>;

fn grouped_scores<F>(dataset: &Dataset, group_by: GroupBy, mut score: F) -> Result<GroupedScores>
where
    F: FnMut(&Annotation, &GenerationRecord, &TokenMap) -> Result<Score>,
{
    let mut groups: GroupedScores = BTreeMap::new();
    for (pos, g) in dataset.generations().iter().enumerate() {
        let token_map = dataset.token_map(pos);
        let scores = dataset
            .annotations_of(pos)
            .map(|a| score(a, g, token_map))
            .collect::<Result<Vec<_>>>()?;
        groups.entry(group_by.key(g)).or_default().push(scores);
    }
    Ok(groups)
}

fn to_big(r: &Score) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

fn ratio_to_f64(r: &Score) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn summarize(
    generations: &[Vec<Score>],
    bootstrap: &BootstrapOptions,
    seed_key: &[u64],
) -> TypeStat {
    let n: usize = generations.iter().map(Vec::len).sum();
    if n == 0 {
        return TypeStat {
            mean: None,
            ci_low: None,
            ci_high: None,
            n_annotations: 0,
            exact_mean: None,
        };
    }
    let sum = generations
        .iter()
        .flatten()
        .fold(BigRational::zero(), |acc, s| acc + to_big(s));
    let exact = sum / BigRational::from_integer(BigInt::from(n));
    let mean = exact.to_f64().unwrap_or(f64::NAN);

    let (ci_low, ci_high) = if bootstrap.resamples == 0 {
        (None, None)
    } else {
        let (lo, hi) = percentile_interval(generations, bootstrap, seed_key);
        let floats = generations.iter().flatten().map(ratio_to_f64);
        let min = floats.clone().fold(f64::INFINITY, f64::min);
        let max = floats.fold(f64::NEG_INFINITY, f64::max);
        // A resampled mean can never leave [min, max]; clamping removes
        // rounding noise so constant data gives a zero-width interval.
        let lo = lo.clamp(min, max).min(mean);
        let hi = hi.clamp(min, max).max(mean);
        (Some(lo), Some(hi))
    };
    TypeStat {
        mean: Some(mean),
        ci_low,
        ci_high,
        n_annotations: n,
        exact_mean: Some(exact),
    }
}

fn percentile_interval(
    generations: &[Vec<Score>],
    bootstrap: &BootstrapOptions,
    seed_key: &[u64],
) -> (f64, f64) {
    let per_generation: Vec<(f64, usize)> = generations
        .iter()
        .map(|scores| (scores.iter().map(ratio_to_f64).sum(), scores.len()))
        .collect();
    let mut rng = rng_from_seed(derive_seed(bootstrap.seed, seed_key));
    let g = per_generation.len();
    let mut means = Vec::with_capacity(bootstrap.resamples);
    for _ in 0..bootstrap.resamples {
        let (mut sum, mut count) = (0.0, 0usize);
        for _ in 0..g {
            let (s, c) = per_generation[index(&mut rng, g)];
            sum += s;
            count += c;
        }
        if count > 0 {
            means.push(sum / count as f64);
        }
    }
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - bootstrap.confidence) / 2.0;
    (quantile(&means, tail), quantile(&means, 1.0 - tail))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn seed_key(group: &str, label: &str, weighting: Weighting) -> [u64; 3] {
    [hash_str(group), hash_str(label), hash_str(weighting.name())]
}

/// Mean score of `error_type` per group, with a bootstrap interval.
pub fn aggregate(
    dataset: &Dataset,
    group_by: GroupBy,
    error_type: ErrorType,
    options: &MetricOptions,
    bootstrap: &BootstrapOptions,
) -> Result<BTreeMap<String, TypeStat>> {
    let groups = grouped_scores(dataset, group_by, |a, g, tm| {
        annotation_score(a, g, tm, error_type, options)
    })?;
    Ok(groups
        .into_iter()
        .map(|(key, gens)| {
            let stat = summarize(
                &gens,
                bootstrap,
                &seed_key(&key, error_type.wire_name(), options.weighting),
            );
            (key, stat)
        })
        .collect())
}

/// Per-annotation sum over all included error types, summarized per group.
pub fn stacked_totals(
    dataset: &Dataset,
    group_by: GroupBy,
    options: &MetricOptions,
    bootstrap: &BootstrapOptions,
) -> Result<BTreeMap<String, TypeStat>> {
    let types: Vec<ErrorType> = ErrorType::ALL
        .into_iter()
        .filter(|&t| options.includes_type(t))
        .collect();
    let groups = grouped_scores(dataset, group_by, |a, g, tm| {
        types.iter().try_fold(Score::zero(), |acc, &t| {
            Ok(acc + annotation_score(a, g, tm, t, options)?)
        })
    })?;
    Ok(groups
        .into_iter()
        .map(|(key, gens)| {
            let stat = summarize(&gens, bootstrap, &seed_key(&key, "total", options.weighting));
            (key, stat)
        })
        .collect())
}

/// Per-type and stacked statistics for every group.
pub fn metric_reports(
    dataset: &Dataset,
    group_by: GroupBy,
    options: &MetricOptions,
    bootstrap: &BootstrapOptions,
) -> Result<Vec<MetricReport>> {
    let mut per_type: BTreeMap<String, BTreeMap<ErrorType, TypeStat>> = BTreeMap::new();
    for t in ErrorType::ALL {
        for (key, stat) in aggregate(dataset, group_by, t, options, bootstrap)? {
            per_type.entry(key).or_default().insert(t, stat);
        }
    }
    let totals = stacked_totals(dataset, group_by, options, bootstrap)?;
    Ok(totals
        .into_iter()
        .map(|(group, total)| MetricReport {
            per_type: per_type.remove(&group).unwrap_or_default(),
            group,
            weighting: options.weighting,
            total,
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".to_string())
}

pub const REPORT_CSV_HEADER: [&str; 7] =
    ["group", "type", "weighting", "mean", "ci_low", "ci_high", "n"];

/// One row per group × type plus a `total` row per group.
///
/// With `only_present`, types whose mean is zero are left out.
pub fn reports_to_csv(reports: &[MetricReport], only_present: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(REPORT_CSV_HEADER).map_err(csv_err)?;
    for r in reports {
        let rows = r
            .per_type
            .iter()
            .filter(|(_, s)| !only_present || s.mean.is_some_and(|m| m > 0.0))
            .map(|(t, s)| (t.wire_name(), s))
            .chain(std::iter::once(("total", &r.total)));
        for (name, s) in rows {
            w.write_record([
                r.group.as_str(),
                name,
                r.weighting.name(),
                &fmt_opt(s.mean),
                &fmt_opt(s.ci_low),
                &fmt_opt(s.ci_high),
                &s.n_annotations.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    /// Each topic column sums to 1.
    ByTopic,
    /// Each error-type row sums to 1.
    ByErrorType,
}

/// Error type × topic table of mean span coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub types: Vec<ErrorType>,
    pub topics: Vec<String>,
    /// `raw[type][topic]`
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub normalize: Normalize,
    /// Rows or columns whose sum was zero and were left at zero.
    pub zero_rows: Vec<ErrorType>,
    pub zero_columns: Vec<String>,
}

pub fn topic_heatmap(
    dataset: &Dataset,
    normalize: Normalize,
    options: &MetricOptions,
) -> Result<Heatmap> {
    let no_ci = BootstrapOptions {
        resamples: 0,
        ..Default::default()
    };
    let topics: Vec<String> = dataset
        .generations()
        .iter()
        .map(|g| GroupBy::Topic.key(g))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let types = ErrorType::ALL.to_vec();
    let mut raw = vec![vec![0.0; topics.len()]; types.len()];
    for (row, &t) in types.iter().enumerate() {
        let stats = aggregate(dataset, GroupBy::Topic, t, options, &no_ci)?;
        for (col, topic) in topics.iter().enumerate() {
            raw[row][col] = stats.get(topic).and_then(|s| s.mean).unwrap_or(0.0);
        }
    }

    let mut normalized = raw.clone();
    let mut zero_rows = Vec::new();
    let mut zero_columns = Vec::new();
    match normalize {
        Normalize::ByErrorType => {
            for (row, &t) in types.iter().enumerate() {
                let sum: f64 = raw[row].iter().sum();
                if sum > 0.0 {
                    normalized[row].iter_mut().for_each(|v| *v /= sum);
                } else {
                    zero_rows.push(t);
                    normalized[row].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        Normalize::ByTopic => {
            for (col, topic) in topics.iter().enumerate() {
                let sum: f64 = raw.iter().map(|r| r[col]).sum();
                if sum > 0.0 {
                    normalized.iter_mut().for_each(|r| r[col] /= sum);
                } else {
                    zero_columns.push(topic.clone());
                    normalized.iter_mut().for_each(|r| r[col] = 0.0);
                }
            }
        }
    }
    Ok(Heatmap {
        types,
        topics,
        raw,
        normalized,
        normalize,
        zero_rows,
        zero_columns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStat {
    pub n_spans: usize,
    pub mean_span_tokens: f64,
    pub mean_explanation_tokens: f64,
}

/// Mean span length and explanation length per error type, over all spans.
///
/// Types without spans are absent from the result.
pub fn length_stats(dataset: &Dataset) -> Result<BTreeMap<ErrorType, LengthStat>> {
    let mut sums: BTreeMap<ErrorType, (usize, usize, usize)> = BTreeMap::new();
    for pos in 0..dataset.generations().len() {
        let token_map = dataset.token_map(pos);
        for a in dataset.annotations_of(pos) {
            for s in &a.spans {
                let span_len = token_map.span_tokens(s.span)?.len();
                let expl_len = tokenize(&s.explanation).len();
                let e = sums.entry(s.error_type).or_default();
                e.0 += 1;
                e.1 += span_len;
                e.2 += expl_len;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(t, (n, span, expl))| {
            (
                t,
                LengthStat {
                    n_spans: n,
                    mean_span_tokens: span as f64 / n as f64,
                    mean_explanation_tokens: expl as f64 / n as f64,
                },
            )
        })
        .collect())
}

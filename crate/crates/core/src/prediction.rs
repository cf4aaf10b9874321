//! Span classification: gold token sets, candidate spans, training-data
//! export with negative sampling, and token-level precision/recall/F1.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Annotation, CharSpan, ErrorType, GenerationRecord};
use crate::rng::{derive_seed, hash_str, rng_from_seed, sample_without_replacement};
use crate::textproc::TokenMap;

/// Longest candidate span, in tokens.
pub const MAX_CANDIDATE_TOKENS: usize = 30;
/// Negatives drawn per positive span (or per distinct length).
pub const NEGATIVES_PER_POSITIVE: usize = 3;

/// A span class: one of the error types or no error at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpanLabel {
    Error(ErrorType),
    NoError,
}

impl fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpanLabel::Error(t) => f.write_str(t.wire_name()),
            SpanLabel::NoError => f.write_str("No_Error"),
        }
    }
}

impl FromStr for SpanLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("No_Error") {
            Ok(SpanLabel::NoError)
        } else {
            s.parse().map(SpanLabel::Error)
        }
    }
}

impl Serialize for SpanLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpanLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub generation_id: String,
    #[serde(flatten)]
    pub span: CharSpan,
    pub label: SpanLabel,
    #[serde(default)]
    pub score: Option<f64>,
}

/// One line of a training/dev/test file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub generation_id: String,
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
}

/// Token indices labeled by any annotator, per error type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldTokenSets {
    pub generation_id: String,
    pub per_type: BTreeMap<ErrorType, BTreeSet<usize>>,
}

impl GoldTokenSets {
    pub fn tokens(&self, t: ErrorType) -> impl Iterator<Item = usize> + '_ {
        self.per_type.get(&t).into_iter().flatten().copied()
    }
}

fn annotation_token_sets(
    annotations: &[&Annotation],
    token_map: &TokenMap,
) -> Result<BTreeMap<ErrorType, BTreeSet<usize>>> {
    let mut sets: BTreeMap<ErrorType, BTreeSet<usize>> = BTreeMap::new();
    for a in annotations {
        for s in &a.spans {
            let range = token_map.span_tokens(s.span)?;
            if !range.is_empty() {
                sets.entry(s.error_type).or_default().extend(range);
            }
        }
    }
    Ok(sets)
}

/// Union over all annotators of each type's span tokens, per generation.
/// No severity filter; antecedents are not part of the gold set.
pub fn build_gold(dataset: &Dataset) -> Result<Vec<GoldTokenSets>> {
    (0..dataset.generations().len())
        .map(|pos| {
            let anns: Vec<&Annotation> = dataset.annotations_of(pos).collect();
            Ok(GoldTokenSets {
                generation_id: dataset.generations()[pos].generation_id.clone(),
                per_type: annotation_token_sets(&anns, dataset.token_map(pos))?,
            })
        })
        .collect()
}

/// Every contiguous window of 1 to [`MAX_CANDIDATE_TOKENS`] tokens.
pub fn enumerate_candidates(token_map: &TokenMap) -> Vec<CharSpan> {
    let t = token_map.len();
    let mut out = Vec::new();
    for len in 1..=MAX_CANDIDATE_TOKENS.min(t) {
        for start in 0..=t - len {
            out.push(token_map.window(start..start + len));
        }
    }
    out
}

/// How many texts go to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSizes {
    Counts { train: usize, dev: usize, test: usize },
    /// Fractions of the dataset; test takes whatever rounding leaves.
    Proportions { train: f64, dev: f64 },
}

impl SplitSizes {
    /// 1063 / 100 / 100 texts.
    pub const RELEASED: SplitSizes = SplitSizes::Counts {
        train: 1063,
        dev: 100,
        test: 100,
    };

    fn resolve(self, n: usize) -> Result<(usize, usize, usize)> {
        match self {
            SplitSizes::Counts { train, dev, test } => {
                if train + dev + test > n {
                    return Err(Error::InvalidArgument(format!(
                        "split sizes {train}/{dev}/{test} exceed {n} generations"
                    )));
                }
                Ok((train, dev, test))
            }
            SplitSizes::Proportions { train, dev } => {
                let tr = ((train * n as f64).round() as usize).min(n);
                let dv = ((dev * n as f64).round() as usize).min(n - tr);
                Ok((tr, dv, n - tr - dv))
            }
        }
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes::Proportions {
            train: 0.84,
            dev: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Three negatives for every positive span instance.
    #[default]
    PerSpan,
    /// Three negatives for every distinct positive span length in a text.
    PerLength,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub generation_ids: Vec<String>,
    pub examples: Vec<TrainingExample>,
}

impl Split {
    pub fn positives(&self) -> usize {
        self.examples
            .iter()
            .filter(|e| e.label != SpanLabel::NoError)
            .count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingData {
    pub train: Split,
    pub dev: Split,
    pub test: Split,
    /// Negatives that could not be placed because a text was too short.
    pub missing_negatives: usize,
}

/// Splits generations by a seeded hash of their id and emits positive and
/// sampled negative spans for each split.
pub fn export_training_data(
    dataset: &Dataset,
    sizes: SplitSizes,
    seed: u64,
    mode: NegativeMode,
) -> Result<TrainingData> {
    let mut order: Vec<usize> = (0..dataset.generations().len()).collect();
    let key = |pos: &usize| {
        let id = &dataset.generations()[*pos].generation_id;
        (derive_seed(seed, &[hash_str(id)]), id.clone())
    };
    order.sort_by_cached_key(key);
    let (n_train, n_dev, n_test) = sizes.resolve(order.len())?;

    let mut data = TrainingData::default();
    let buckets = [
        (&order[..n_train], 0),
        (&order[n_train..n_train + n_dev], 1),
        (&order[n_train + n_dev..n_train + n_dev + n_test], 2),
    ];
    for (positions, which) in buckets {
        let mut split = Split::default();
        let mut sorted = positions.to_vec();
        sorted.sort_unstable();
        for pos in sorted {
            let g = &dataset.generations()[pos];
            split.generation_ids.push(g.generation_id.clone());
            let missing = text_examples(dataset, pos, seed, mode, &mut split.examples)?;
            data.missing_negatives += missing;
        }
        match which {
            0 => data.train = split,
            1 => data.dev = split,
            _ => data.test = split,
        }
    }
    Ok(data)
}

fn text_examples(
    dataset: &Dataset,
    pos: usize,
    seed: u64,
    mode: NegativeMode,
    out: &mut Vec<TrainingExample>,
) -> Result<usize> {
    let g = &dataset.generations()[pos];
    let token_map = dataset.token_map(pos);
    let labeled: HashSet<CharSpan> = dataset
        .annotations_of(pos)
        .flat_map(|a| a.spans.iter().map(|s| s.span))
        .collect();

    let mut lengths = Vec::new();
    for a in dataset.annotations_of(pos) {
        for s in &a.spans {
            out.push(TrainingExample {
                generation_id: g.generation_id.clone(),
                start: s.span.start,
                end: s.span.end,
                label: SpanLabel::Error(s.error_type),
            });
            lengths.push(token_map.span_tokens(s.span)?.len());
        }
    }
    if mode == NegativeMode::PerLength {
        lengths.sort_unstable();
        lengths.dedup();
    }

    let mut rng = rng_from_seed(derive_seed(seed, &[hash_str(&g.generation_id), 1]));
    let mut missing = 0;
    for len in lengths {
        let windows: Vec<CharSpan> = if len == 0 || len > token_map.len() {
            Vec::new()
        } else {
            (0..=token_map.len() - len)
                .map(|s| token_map.window(s..s + len))
                .filter(|w| !labeled.contains(w))
                .collect()
        };
        let k = NEGATIVES_PER_POSITIVE.min(windows.len());
        if k < NEGATIVES_PER_POSITIVE {
            log::warn!(
                "{}: only {k} negative window(s) of {len} tokens available",
                g.generation_id
            );
            missing += NEGATIVES_PER_POSITIVE - k;
        }
        for i in sample_without_replacement(&mut rng, windows.len(), k) {
            out.push(TrainingExample {
                generation_id: g.generation_id.clone(),
                start: windows[i].start,
                end: windows[i].end,
                label: SpanLabel::NoError,
            });
        }
    }
    Ok(missing)
}

/// Token-level precision, recall and F1. `None` marks a division by zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Prf {
    pub fn from_counts(true_positive: usize, predicted: usize, gold: usize) -> Self {
        let precision = (predicted > 0).then(|| true_positive as f64 / predicted as f64);
        let recall = (gold > 0).then(|| true_positive as f64 / gold as f64);
        // 2PR/(P+R) reduces to 2tp/(pred+gold)
        let f1 = (predicted > 0 && gold > 0)
            .then(|| 2.0 * true_positive as f64 / (predicted + gold) as f64);
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Two decimals, or `--` when undefined.
pub fn format_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "--".to_string())
}

/// Pools token counts over all generations in `gold` and scores each type
/// against its own gold set.
pub fn score_predictions(
    dataset: &Dataset,
    predictions: &[PredictedSpan],
    gold: &[GoldTokenSets],
) -> Result<BTreeMap<ErrorType, Prf>> {
    let mut predicted: HashMap<&str, BTreeMap<ErrorType, BTreeSet<usize>>> = HashMap::new();
    for p in predictions {
        let SpanLabel::Error(t) = p.label else {
            continue;
        };
        let pos = dataset
            .position(&p.generation_id)
            .ok_or_else(|| Error::UnknownGeneration(p.generation_id.clone()))?;
        let range = dataset.token_map(pos).span_tokens(p.span)?;
        predicted
            .entry(p.generation_id.as_str())
            .or_default()
            .entry(t)
            .or_default()
            .extend(range);
    }
    let mut counts: BTreeMap<ErrorType, (usize, usize, usize)> =
        ErrorType::ALL.iter().map(|&t| (t, (0, 0, 0))).collect();
    for g in gold {
        let pred = predicted.get(g.generation_id.as_str());
        for t in ErrorType::ALL {
            let gold_set = g.per_type.get(&t);
            let pred_set = pred.and_then(|p| p.get(&t));
            let c = counts.get_mut(&t).expect("all types present");
            let gold_n = gold_set.map_or(0, BTreeSet::len);
            let pred_n = pred_set.map_or(0, BTreeSet::len);
            let tp = match (gold_set, pred_set) {
                (Some(a), Some(b)) => a.intersection(b).count(),
                _ => 0,
            };
            c.0 += tp;
            c.1 += pred_n;
            c.2 += gold_n;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(t, (tp, p, g))| (t, Prf::from_counts(tp, p, g)))
        .collect())
}

/// Scores each annotator against the union of the other annotators of the
/// same generation and averages over (generation, annotator) pairs; each
/// metric is averaged over the pairs where it is defined.
pub fn human_one_vs_rest(dataset: &Dataset) -> Result<BTreeMap<ErrorType, Prf>> {
    let mut sums: BTreeMap<ErrorType, [(f64, usize); 3]> = BTreeMap::new();
    for pos in 0..dataset.generations().len() {
        let anns: Vec<&Annotation> = dataset.annotations_of(pos).collect();
        if anns.len() < 2 {
            continue;
        }
        let token_map = dataset.token_map(pos);
        let own: Vec<BTreeMap<ErrorType, BTreeSet<usize>>> = anns
            .iter()
            .map(|a| annotation_token_sets(std::slice::from_ref(a), token_map))
            .collect::<Result<_>>()?;
        for i in 0..anns.len() {
            for t in ErrorType::ALL {
                let mine = own[i].get(&t).cloned().unwrap_or_default();
                let rest: BTreeSet<usize> = own
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .filter_map(|(_, sets)| sets.get(&t))
                    .flatten()
                    .copied()
                    .collect();
                let tp = mine.intersection(&rest).count();
                let prf = Prf::from_counts(tp, mine.len(), rest.len());
                let entry = sums.entry(t).or_insert([(0.0, 0); 3]);
                for (slot, v) in entry.iter_mut().zip([prf.precision, prf.recall, prf.f1]) {
                    if let Some(v) = v {
                        slot.0 += v;
                        slot.1 += 1;
                    }
                }
            }
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(ErrorType::ALL
        .into_iter()
        .map(|t| {
            let [p, r, f] = sums.get(&t).copied().unwrap_or([(0.0, 0); 3]);
            (
                t,
                Prf {
                    precision: mean(p),
                    recall: mean(r),
                    f1: mean(f),
                },
            )
        })
        .collect())
}

/// Model and human columns side by side, one row per error type.
pub fn scores_csv(
    model: Option<&BTreeMap<ErrorType, Prf>>,
    human: Option<&BTreeMap<ErrorType, Prf>>,
) -> String {
    let mut out = String::from("type,model_p,model_r,model_f1,human_p,human_r,human_f1\n");
    for t in ErrorType::ALL {
        let cells = |m: Option<&BTreeMap<ErrorType, Prf>>| {
            let prf = m.and_then(|m| m.get(&t)).copied().unwrap_or_default();
            [prf.precision, prf.recall, prf.f1].map(format_cell).join(",")
        };
        out.push_str(&format!("{t},{},{}\n", cells(model), cells(human)));
    }
    out
}

/// Flags every repeat of an exact token 4-gram as `Redundant`.
pub fn baseline_redundancy_predictor(
    generation: &GenerationRecord,
    token_map: &TokenMap,
) -> Vec<PredictedSpan> {
    const N: usize = 4;
    let texts = token_map.token_texts(&generation.generation);
    let mut seen: HashSet<&[&str]> = HashSet::new();
    let mut out = Vec::new();
    for start in 0..texts.len().saturating_sub(N - 1) {
        let gram = &texts[start..start + N];
        if !seen.insert(gram) {
            out.push(PredictedSpan {
                generation_id: generation.generation_id.clone(),
                span: token_map.window(start..start + N),
                label: SpanLabel::Error(ErrorType::Redundant),
                score: None,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorSpan, Severity};
    use crate::textproc::tokenize;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    fn tokens(start: usize, len: usize) -> CharSpan {
        CharSpan::new(2 * start, 2 * (start + len) - 1)
    }

    fn espan(span: CharSpan, t: ErrorType) -> ErrorSpan {
        ErrorSpan::new(span, t, Severity::MODERATE, "x")
    }

    fn ds(n_tokens: usize, anns: Vec<Vec<ErrorSpan>>) -> Dataset {
        let g = GenerationRecord::new("g", "P.", words(n_tokens), "m", None);
        let anns = anns
            .into_iter()
            .enumerate()
            .map(|(i, s)| Annotation::new(format!("a{i}"), "g", format!("w{i}"), s))
            .collect();
        Dataset::new(vec![g], anns)
    }

    #[test]
    fn gold_is_union() {
        let d = ds(
            6,
            vec![
                vec![espan(tokens(1, 2), ErrorType::OffPrompt)],
                vec![espan(tokens(2, 2), ErrorType::OffPrompt)],
            ],
        );
        let gold = build_gold(&d).unwrap();
        assert_eq!(
            gold[0].per_type[&ErrorType::OffPrompt],
            BTreeSet::from([1, 2, 3])
        );
        assert_eq!(gold[0].tokens(ErrorType::BadMath).count(), 0);
    }

    #[test]
    fn gold_ignores_antecedents() {
        let d = ds(
            6,
            vec![vec![espan(tokens(4, 1), ErrorType::Redundant).with_antecedent(tokens(0, 2))]],
        );
        let gold = build_gold(&d).unwrap();
        assert_eq!(gold[0].per_type[&ErrorType::Redundant], BTreeSet::from([4]));
    }

    #[test]
    fn candidate_counts() {
        for (t, expected) in [(0, 0), (3, 6), (30, 465), (31, 30 * 31 / 2 + 30)] {
            assert_eq!(enumerate_candidates(&tokenize(&words(t))).len(), expected, "T = {t}");
        }
    }

    #[test]
    fn three_negatives_per_positive() {
        let d = ds(
            20,
            vec![vec![
                espan(tokens(0, 3), ErrorType::OffPrompt),
                espan(tokens(5, 3), ErrorType::Incoherent),
                espan(tokens(10, 7), ErrorType::Redundant),
            ]],
        );
        let all = SplitSizes::Counts {
            train: 1,
            dev: 0,
            test: 0,
        };
        let data = export_training_data(&d, all, 9, NegativeMode::PerSpan).unwrap();
        let negatives = data
            .train
            .examples
            .iter()
            .filter(|e| e.label == SpanLabel::NoError)
            .count();
        assert_eq!(data.train.positives(), 3);
        assert_eq!(negatives, 9);
        assert_eq!(data.missing_negatives, 0);

        let data = export_training_data(&d, all, 9, NegativeMode::PerLength).unwrap();
        assert_eq!(data.train.examples.len() - data.train.positives(), 6);
    }

    #[test]
    fn no_positives_no_negatives() {
        let d = ds(10, vec![vec![], vec![]]);
        let data = export_training_data(&d, SplitSizes::default(), 1, NegativeMode::PerSpan).unwrap();
        let total: usize = [&data.train, &data.dev, &data.test]
            .iter()
            .map(|s| s.examples.len())
            .sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn short_text_logs_shortfall() {
        // 2 tokens; the positive covers both, no other window of length 2.
        let d = ds(2, vec![vec![espan(tokens(0, 2), ErrorType::OffPrompt)]]);
        let all = SplitSizes::Counts {
            train: 1,
            dev: 0,
            test: 0,
        };
        let data = export_training_data(&d, all, 0, NegativeMode::PerSpan).unwrap();
        assert_eq!(data.missing_negatives, 3);
    }

    #[test]
    fn proportions_round() {
        assert_eq!(SplitSizes::default().resolve(100).unwrap(), (84, 8, 8));
        assert_eq!(SplitSizes::default().resolve(1263).unwrap(), (1061, 101, 101));
        assert!(SplitSizes::RELEASED.resolve(1000).is_err());
    }

    fn predict(spans: &[(usize, usize)], t: ErrorType) -> Vec<PredictedSpan> {
        spans
            .iter()
            .map(|&(s, l)| PredictedSpan {
                generation_id: "g".into(),
                span: tokens(s, l),
                label: SpanLabel::Error(t),
                score: None,
            })
            .collect()
    }

    #[test]
    fn token_level_scores() {
        // gold tokens {2..7}, predictions {0..4}
        let d = ds(10, vec![vec![espan(tokens(2, 6), ErrorType::OffPrompt)]]);
        let gold = build_gold(&d).unwrap();
        let scores =
            score_predictions(&d, &predict(&[(0, 5)], ErrorType::OffPrompt), &gold).unwrap();
        let s = scores[&ErrorType::OffPrompt];
        assert_eq!(s.precision, Some(0.6));
        assert_eq!(s.recall, Some(0.5));
        assert!((s.f1.unwrap() - 6.0 / 11.0).abs() < 1e-15);

        let none = score_predictions(&d, &[], &gold).unwrap()[&ErrorType::OffPrompt];
        assert_eq!((none.precision, none.recall, none.f1), (None, Some(0.0), None));
        assert_eq!(format_cell(none.precision), "--");
    }

    #[test]
    fn unknown_generation_in_predictions() {
        let d = ds(4, vec![]);
        let mut p = predict(&[(0, 1)], ErrorType::OffPrompt);
        p[0].generation_id = "zzz".into();
        assert!(score_predictions(&d, &p, &build_gold(&d).unwrap()).is_err());
    }

    #[test]
    fn identical_annotators_score_perfectly() {
        let same = || vec![espan(tokens(1, 3), ErrorType::Incoherent)];
        let d = ds(8, vec![same(), same(), same()]);
        let h = human_one_vs_rest(&d).unwrap();
        let s = h[&ErrorType::Incoherent];
        assert_eq!((s.precision, s.recall, s.f1), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(h[&ErrorType::BadMath].precision, None);
    }

    #[test]
    fn silent_annotator_has_zero_recall() {
        let d = ds(
            8,
            vec![
                vec![espan(tokens(1, 3), ErrorType::Incoherent)],
                vec![espan(tokens(1, 3), ErrorType::Incoherent)],
                vec![],
            ],
        );
        let h = human_one_vs_rest(&d).unwrap();
        // pairs: a0 vs {a1,a2}: P=R=1; a1 vs {a0,a2}: P=R=1; a2 vs {a0,a1}: P undefined, R=0
        let s = h[&ErrorType::Incoherent];
        assert_eq!(s.precision, Some(1.0));
        assert!((s.recall.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn redundancy_baseline() {
        let text = "the cat sat down and the cat sat down and the cat sat down";
        let g = GenerationRecord::new("g", "P.", text, "m", None);
        let map = tokenize(text);
        let preds = baseline_redundancy_predictor(&g, &map);
        let starts: Vec<usize> = preds
            .iter()
            .map(|p| map.span_tokens(p.span).unwrap().start)
            .collect();
        // 4-grams repeat from token 5 on: "the cat sat down" at 5 and 10, plus
        // the shifted grams that also recur.
        assert!(starts.contains(&5) && starts.contains(&10));
        assert!(!starts.contains(&0));

        let g = GenerationRecord::new("g", "P.", "one two three four five six", "m", None);
        assert!(baseline_redundancy_predictor(&g, &tokenize(&g.generation)).is_empty());

        let text = "a b c d x a b c d y a b c d";
        let g = GenerationRecord::new("g", "P.", text, "m", None);
        let map = tokenize(text);
        let starts: Vec<usize> = baseline_redundancy_predictor(&g, &map)
            .iter()
            .map(|p| map.span_tokens(p.span).unwrap().start)
            .collect();
        assert_eq!(starts, [5, 10]);
    }

    #[test]
    fn label_wire_format() {
        let p = PredictedSpan {
            generation_id: "g".into(),
            span: CharSpan::new(0, 3),
            label: SpanLabel::NoError,
            score: Some(0.5),
        };
        let line = serde_json::to_string(&p).unwrap();
        assert_eq!(line, r#"{"generation_id":"g","start":0,"end":3,"label":"No_Error","score":0.5}"#);
        assert_eq!(serde_json::from_str::<PredictedSpan>(&line).unwrap(), p);
    }

    fn arb_annotations() -> impl Strategy<Value = Vec<Vec<(usize, usize, usize)>>> {
        proptest::collection::vec(
            proptest::collection::vec((0usize..12, 1usize..5, 0usize..10), 0..5),
            1..5,
        )
    }

    fn build(anns: &[Vec<(usize, usize, usize)>]) -> Dataset {
        ds(
            16,
            anns.iter()
                .map(|a| {
                    a.iter()
                        .map(|&(s, l, t)| espan(tokens(s, l), ErrorType::ALL[t]))
                        .collect()
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn gold_is_order_insensitive(mut anns in arb_annotations()) {
            let before = build_gold(&build(&anns)).unwrap();
            anns.reverse();
            prop_assert_eq!(before, build_gold(&build(&anns)).unwrap());
        }

        #[test]
        fn gold_as_predictions_is_perfect(anns in arb_annotations()) {
            let d = build(&anns);
            let gold = build_gold(&d).unwrap();
            let preds: Vec<PredictedSpan> = d.annotations().iter()
                .flat_map(|a| a.spans.iter())
                .map(|s| PredictedSpan { generation_id: "g".into(), span: s.span, label: SpanLabel::Error(s.error_type), score: None })
                .collect();
            let scores = score_predictions(&d, &preds, &gold).unwrap();
            for (t, s) in scores {
                if gold[0].tokens(t).next().is_some() {
                    prop_assert_eq!((s.precision, s.recall, s.f1), (Some(1.0), Some(1.0), Some(1.0)));
                }
            }
        }

        #[test]
        fn negatives_never_match_labeled_spans(anns in arb_annotations(), seed in any::<u64>()) {
            let d = build(&anns);
            let all = SplitSizes::Counts { train: 1, dev: 0, test: 0 };
            let data = export_training_data(&d, all, seed, NegativeMode::PerSpan).unwrap();
            let labeled: HashSet<(usize, usize)> = d.annotations().iter()
                .flat_map(|a| a.spans.iter().map(|s| (s.span.start, s.span.end)))
                .collect();
            let n_labeled: usize = d.annotations().iter().map(|a| a.spans.len()).sum();
            prop_assert_eq!(data.train.positives(), n_labeled);
            for e in &data.train.examples {
                if e.label == SpanLabel::NoError {
                    prop_assert!(!labeled.contains(&(e.start, e.end)));
                }
            }
        }

        #[test]
        fn f1_bounded(tp in 0usize..20, extra_p in 0usize..20, extra_g in 0usize..20) {
            let s = Prf::from_counts(tp, tp + extra_p, tp + extra_g);
            if let (Some(p), Some(r), Some(f)) = (s.precision, s.recall, s.f1) {
                prop_assert!(f <= p.max(r) + 1e-15);
                prop_assert!(f >= p.min(r) - 1e-15);
            }
        }
    }
}

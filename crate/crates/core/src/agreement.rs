//! Per-token inter-annotator agreement and count bootstrap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Annotation, ErrorType, Severity};
use crate::rng::{rng_from_seed, sample_with_replacement, sample_without_replacement, PRNG_NAME};
use crate::textproc::TokenMap;

/// Binary coverage of one error type: one row per annotation, one column per
/// token of the generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLabelMatrix {
    pub generation_id: String,
    pub error_type: ErrorType,
    pub rows: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementOptions {
    /// Leave severity-1 grammar spans out of the Grammar_Usage matrices.
    pub drop_severity1_grammar: bool,
}

impl Default for AgreementOptions {
    fn default() -> Self {
        AgreementOptions {
            drop_severity1_grammar: true,
        }
    }
}

fn label_row(
    annotation: &Annotation,
    token_map: &TokenMap,
    error_type: ErrorType,
    options: &AgreementOptions,
) -> Result<Vec<bool>> {
    let mut row = vec![false; token_map.len()];
    for s in annotation.spans_of(error_type) {
        if options.drop_severity1_grammar
            && error_type == ErrorType::GrammarUsage
            && s.severity == Severity::MINOR
        {
            continue;
        }
        for t in token_map.span_tokens(s.span)? {
            row[t] = true;
        }
    }
    Ok(row)
}

impl TokenLabelMatrix {
    pub fn build(
        dataset: &Dataset,
        position: usize,
        error_type: ErrorType,
        options: &AgreementOptions,
    ) -> Result<Self> {
        let token_map = dataset.token_map(position);
        let rows = dataset
            .annotations_of(position)
            .map(|a| label_row(a, token_map, error_type, options))
            .collect::<Result<_>>()?;
        Ok(TokenLabelMatrix {
            generation_id: dataset.generations()[position].generation_id.clone(),
            error_type,
            rows,
        })
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Self {
        TokenLabelMatrix {
            generation_id: String::new(),
            error_type: ErrorType::OffPrompt,
            rows,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    Value(f64),
    /// Every value in the matrix is the same, so expected disagreement is 0.
    Degenerate,
}

impl Alpha {
    /// Degenerate matrices count as perfect agreement.
    pub fn value(self) -> f64 {
        match self {
            Alpha::Value(a) => a,
            Alpha::Degenerate => 1.0,
        }
    }
}

/// Nominal Krippendorff's α over binary labels with tokens as units and no
/// missing values.
///
/// Built from the coincidence matrix: each unit with `m` coders, `k` of which
/// said 1, contributes `k(m-k)/(m-1)` to each off-diagonal cell. With
/// `n = units * m` pairable values and marginals `n1`, `n0`,
/// `α = 1 - (n - 1) * o10 / (n1 * n0)`.
pub fn krippendorff_alpha(matrix: &TokenLabelMatrix) -> Result<Alpha> {
    let coders = matrix.rows.len();
    if coders < 2 {
        return Err(Error::InvalidArgument(format!(
            "Krippendorff's alpha needs at least 2 annotators, got {coders}"
        )));
    }
    let units = matrix.n_tokens();
    if units == 0 {
        return Err(Error::InvalidArgument("matrix has no tokens".into()));
    }
    if let Some(bad) = matrix.rows.iter().find(|r| r.len() != units) {
        return Err(Error::LengthMismatch {
            expected: units,
            actual: bad.len(),
        });
    }
    let m = coders as u64;
    let mut ones_total = 0u64;
    // Accumulate o10 * (m - 1) in integers.
    let mut mismatched_pairs = 0u64;
    for u in 0..units {
        let k = matrix.rows.iter().filter(|r| r[u]).count() as u64;
        ones_total += k;
        mismatched_pairs += k * (m - k);
    }
    let n = units as u64 * m;
    let n1 = ones_total;
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Ok(Alpha::Degenerate);
    }
    let o10 = mismatched_pairs as f64 / (m - 1) as f64;
    Ok(Alpha::Value(1.0 - (n - 1) as f64 * o10 / (n1 as f64 * n0 as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAlpha {
    pub mean: Option<f64>,
    pub n_generations: usize,
    pub n_degenerate: usize,
}

/// α per generation with at least two annotations, averaged.
pub fn mean_alpha(
    dataset: &Dataset,
    error_type: ErrorType,
    options: &AgreementOptions,
) -> Result<MeanAlpha> {
    let mut sum = 0.0;
    let mut n = 0;
    let mut degenerate = 0;
    for pos in 0..dataset.generations().len() {
        if dataset.annotation_count(pos) < 2 || dataset.token_map(pos).is_empty() {
            continue;
        }
        let matrix = TokenLabelMatrix::build(dataset, pos, error_type, options)?;
        let alpha = krippendorff_alpha(&matrix)?;
        if alpha == Alpha::Degenerate {
            degenerate += 1;
        }
        sum += alpha.value();
        n += 1;
    }
    Ok(MeanAlpha {
        mean: (n > 0).then(|| sum / n as f64),
        n_generations: n,
        n_degenerate: degenerate,
    })
}

/// Pooled Two-Agree counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TwoAgree {
    pub labeled_by_one: usize,
    pub labeled_by_two: usize,
}

impl TwoAgree {
    /// `None` when no token was labeled at all.
    pub fn percent(&self) -> Option<f64> {
        (self.labeled_by_one > 0)
            .then(|| 100.0 * self.labeled_by_two as f64 / self.labeled_by_one as f64)
    }

    pub fn add_matrix(&mut self, matrix: &TokenLabelMatrix) {
        for u in 0..matrix.n_tokens() {
            let k = matrix.rows.iter().filter(|r| r[u]).count();
            if k >= 1 {
                self.labeled_by_one += 1;
            }
            if k >= 2 {
                self.labeled_by_two += 1;
            }
        }
    }
}

/// Share of tokens labeled by some annotator that at least one other
/// annotator also labeled, pooled over all tokens of all generations.
pub fn two_agree(
    dataset: &Dataset,
    error_type: ErrorType,
    options: &AgreementOptions,
) -> Result<TwoAgree> {
    let mut acc = TwoAgree::default();
    for pos in 0..dataset.generations().len() {
        if dataset.annotation_count(pos) == 0 {
            continue;
        }
        acc.add_matrix(&TokenLabelMatrix::build(dataset, pos, error_type, options)?);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub error_type: ErrorType,
    pub alpha: Option<f64>,
    pub two_agree_pct: Option<f64>,
    pub n_generations: usize,
}

pub fn agreement_table(dataset: &Dataset, options: &AgreementOptions) -> Result<Vec<AgreementRow>> {
    ErrorType::ALL
        .into_iter()
        .map(|t| {
            let alpha = mean_alpha(dataset, t, options)?;
            let agree = two_agree(dataset, t, options)?;
            Ok(AgreementRow {
                error_type: t,
                alpha: alpha.mean,
                two_agree_pct: agree.percent(),
                n_generations: alpha.n_generations,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, precision: usize) -> String {
    v.map(|x| format!("{x:.precision$}"))
        .unwrap_or_else(|| "NA".to_string())
}

pub fn agreement_csv(rows: &[AgreementRow]) -> String {
    let mut out = String::from("type,alpha,two_agree_pct,n_generations\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.error_type,
            fmt_opt(r.alpha, 4),
            fmt_opt(r.two_agree_pct, 2),
            r.n_generations
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_generations: usize,
    pub n_resamples: usize,
    pub seed: u64,
    pub with_replacement: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_generations: 50,
            n_resamples: 1000,
            seed: 0,
            with_replacement: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStat {
    pub mean: f64,
    pub std: f64,
    /// `100 * std / mean`; `None` when the mean is 0.
    pub cov_percent: Option<f64>,
}

impl CountStat {
    fn from_samples(samples: &[u64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<u64>() as f64 / n;
        let std = if samples.len() < 2 {
            0.0
        } else {
            let ss: f64 = samples.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        CountStat {
            mean,
            std,
            cov_percent: (mean > 0.0).then(|| 100.0 * std / mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub per_type: BTreeMap<ErrorType, CountStat>,
    pub total: CountStat,
    pub n_generations_per_sample: usize,
    pub n_resamples: usize,
    pub seed: u64,
    pub prng: String,
    pub with_replacement: bool,
    /// Fewer than two resamples: the standard deviation is reported as 0.
    pub low_sample: bool,
}

/// Span counts per generation and type.
pub fn span_counts(dataset: &Dataset) -> Vec<[u64; 10]> {
    (0..dataset.generations().len())
        .map(|pos| {
            let mut counts = [0u64; 10];
            for a in dataset.annotations_of(pos) {
                for s in &a.spans {
                    counts[type_index(s.error_type)] += 1;
                }
            }
            counts
        })
        .collect()
}

fn type_index(t: ErrorType) -> usize {
    ErrorType::ALL.iter().position(|&x| x == t).expect("listed type")
}

/// Repeatedly draws `n_generations` generations and sums their span counts.
///
/// Each resample uses its own ChaCha8 stream, so the result does not depend on
/// the order resamples are evaluated in.
pub fn bootstrap_counts(dataset: &Dataset, config: &BootstrapConfig) -> Result<BootstrapResult> {
    bootstrap_counts_from(&span_counts(dataset), config)
}

pub fn bootstrap_counts_from(
    counts: &[[u64; 10]],
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if config.n_resamples == 0 {
        return Err(Error::InvalidArgument("n_resamples must be positive".into()));
    }
    if config.n_generations == 0 {
        return Err(Error::InvalidArgument("n_generations must be positive".into()));
    }
    if !config.with_replacement && counts.len() < config.n_generations {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {} generations from {}",
            config.n_generations,
            counts.len()
        )));
    }
    if counts.is_empty() {
        return Err(Error::InvalidArgument("dataset has no generations".into()));
    }
    let mut per_type: Vec<Vec<u64>> = (0..10).map(|_| Vec::with_capacity(config.n_resamples)).collect();
    let mut totals = Vec::with_capacity(config.n_resamples);
    for r in 0..config.n_resamples {
        let mut rng = rng_from_seed(config.seed);
        rng.set_stream(r as u64);
        let draw = if config.with_replacement {
            sample_with_replacement(&mut rng, counts.len(), config.n_generations)
        } else {
            sample_without_replacement(&mut rng, counts.len(), config.n_generations)
        };
        let mut sums = [0u64; 10];
        for g in draw {
            for (s, c) in sums.iter_mut().zip(counts[g]) {
                *s += c;
            }
        }
        for (t, s) in sums.iter().enumerate() {
            per_type[t].push(*s);
        }
        totals.push(sums.iter().sum());
    }
    Ok(BootstrapResult {
        per_type: ErrorType::ALL
            .into_iter()
            .zip(&per_type)
            .map(|(t, samples)| (t, CountStat::from_samples(samples)))
            .collect(),
        total: CountStat::from_samples(&totals),
        n_generations_per_sample: config.n_generations,
        n_resamples: config.n_resamples,
        seed: config.seed,
        prng: PRNG_NAME.to_string(),
        with_replacement: config.with_replacement,
        low_sample: config.n_resamples < 2,
    })
}

pub fn bootstrap_csv(result: &BootstrapResult) -> String {
    let mut out = String::from("type,mean,std,cov_pct,n,resamples,seed\n");
    let rows = result
        .per_type
        .iter()
        .map(|(t, s)| (t.wire_name(), s))
        .chain(std::iter::once(("total", &result.total)));
    for (name, s) in rows {
        out.push_str(&format!(
            "{name},{:.2},{:.2},{},{},{},{}\n",
            s.mean,
            s.std,
            fmt_opt(s.cov_percent, 1),
            result.n_generations_per_sample,
            result.n_resamples,
            result.seed
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovRow {
    pub sample_size: usize,
    pub overall: Option<f64>,
    pub per_type: BTreeMap<ErrorType, Option<f64>>,
}

/// Coefficient of variation of span counts as the sample size grows.
pub fn cov_curve(
    dataset: &Dataset,
    sample_sizes: &[usize],
    n_resamples: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<CovRow>> {
    let counts = span_counts(dataset);
    sample_sizes
        .iter()
        .map(|&size| {
            let result = bootstrap_counts_from(
                &counts,
                &BootstrapConfig {
                    n_generations: size,
                    n_resamples,
                    seed,
                    with_replacement,
                },
            )?;
            Ok(CovRow {
                sample_size: size,
                overall: result.total.cov_percent,
                per_type: result
                    .per_type
                    .into_iter()
                    .map(|(t, s)| (t, s.cov_percent))
                    .collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CharSpan, ErrorSpan, GenerationRecord};
    use proptest::prelude::*;

    fn m(rows: &[&[u8]]) -> TokenLabelMatrix {
        TokenLabelMatrix::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&v| v == 1).collect())
                .collect(),
        )
    }

    /// Textbook pairwise form: α = 1 - (n-1) * Σ_u (#disagreeing ordered pairs in u)/(m_u-1)
    /// / Σ_{c≠k} n_c n_k, written independently of the coincidence shortcut.
    fn alpha_oracle(rows: &[Vec<bool>]) -> Option<f64> {
        let m = rows.len();
        let units = rows[0].len();
        let mut o = [[0.0f64; 2]; 2];
        for u in 0..units {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        o[rows[i][u] as usize][rows[j][u] as usize] += 1.0 / (m - 1) as f64;
                    }
                }
            }
        }
        let n_c = [o[0][0] + o[0][1], o[1][0] + o[1][1]];
        let n = n_c[0] + n_c[1];
        let d_o = (o[0][1] + o[1][0]) / n;
        let d_e = 2.0 * n_c[0] * n_c[1] / (n * (n - 1.0));
        (d_e > 0.0).then(|| 1.0 - d_o / d_e)
    }

    #[test]
    fn hand_fixture() {
        let a = krippendorff_alpha(&m(&[&[1, 1, 0, 0], &[1, 0, 0, 0]])).unwrap();
        assert!((a.value() - (1.0 - 14.0 / 30.0)).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_are_degenerate_or_one() {
        assert_eq!(krippendorff_alpha(&m(&[&[0, 0], &[0, 0]])).unwrap(), Alpha::Degenerate);
        assert_eq!(krippendorff_alpha(&m(&[&[0, 0], &[0, 0]])).unwrap().value(), 1.0);
        let a = krippendorff_alpha(&m(&[&[1, 0, 1], &[1, 0, 1], &[1, 0, 1]])).unwrap();
        assert_eq!(a, Alpha::Value(1.0));
    }

    #[test]
    fn two_coders_full_disagreement() {
        // o10 = o01 = 2, n1 = n0 = 2, n = 4: 1 - 3 * 2 / 4 = -0.5
        let a = krippendorff_alpha(&m(&[&[1, 0], &[0, 1]])).unwrap();
        assert!((a.value() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn alpha_errors() {
        assert!(krippendorff_alpha(&m(&[&[1, 0]])).is_err());
        assert!(krippendorff_alpha(&m(&[&[], &[]])).is_err());
        assert!(krippendorff_alpha(&m(&[&[1, 0], &[1]])).is_err());
    }

    #[test]
    fn flipping_an_agreeing_token_lowers_alpha() {
        let base = krippendorff_alpha(&m(&[&[1, 1, 0, 0, 1], &[1, 1, 0, 0, 0]])).unwrap();
        let flipped = krippendorff_alpha(&m(&[&[1, 1, 0, 0, 1], &[1, 0, 0, 0, 0]])).unwrap();
        assert!(flipped.value() < base.value());
    }

    fn labeled_dataset(sets: &[&[usize]]) -> Dataset {
        let text = ["w"; 6].join(" ");
        let g = GenerationRecord::new("g", "P.", text, "m", None);
        let anns = sets
            .iter()
            .enumerate()
            .map(|(i, toks)| {
                let spans = toks
                    .iter()
                    .map(|&t| {
                        ErrorSpan::new(
                            CharSpan::new(2 * t, 2 * t + 1),
                            ErrorType::OffPrompt,
                            Severity::MODERATE,
                            "x",
                        )
                    })
                    .collect();
                Annotation::new(format!("a{i}"), "g", format!("w{i}"), spans)
            })
            .collect();
        Dataset::new(vec![g], anns)
    }

    #[test]
    fn two_agree_fixtures() {
        let opts = AgreementOptions::default();
        let ds = labeled_dataset(&[&[1, 2], &[2], &[]]);
        assert_eq!(two_agree(&ds, ErrorType::OffPrompt, &opts).unwrap().percent(), Some(50.0));
        let ds = labeled_dataset(&[&[0, 3], &[0, 3], &[0, 3]]);
        assert_eq!(two_agree(&ds, ErrorType::OffPrompt, &opts).unwrap().percent(), Some(100.0));
        let ds = labeled_dataset(&[&[], &[]]);
        assert_eq!(two_agree(&ds, ErrorType::OffPrompt, &opts).unwrap().percent(), None);
    }

    #[test]
    fn mean_alpha_all_degenerate() {
        let ds = labeled_dataset(&[&[], &[], &[]]);
        let r = mean_alpha(&ds, ErrorType::OffPrompt, &AgreementOptions::default()).unwrap();
        assert_eq!(r.mean, Some(1.0));
        assert_eq!(r.n_degenerate, 1);
    }

    #[test]
    fn constant_counts_bootstrap() {
        let mut counts = vec![[0u64; 10]; 60];
        for c in &mut counts {
            c[type_index(ErrorType::Redundant)] = 2;
        }
        let r = bootstrap_counts_from(&counts, &BootstrapConfig::default()).unwrap();
        let red = &r.per_type[&ErrorType::Redundant];
        assert_eq!((red.mean, red.std, red.cov_percent), (100.0, 0.0, Some(0.0)));
        assert_eq!(r.per_type[&ErrorType::BadMath].cov_percent, None);
        assert!(!r.low_sample);
    }

    #[test]
    fn single_resample_is_flagged() {
        let counts = vec![[1u64; 10]; 5];
        let r = bootstrap_counts_from(
            &counts,
            &BootstrapConfig {
                n_generations: 3,
                n_resamples: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.low_sample);
        assert_eq!(r.total.std, 0.0);
    }

    #[test]
    fn too_few_generations() {
        let counts = vec![[1u64; 10]; 5];
        assert!(bootstrap_counts_from(&counts, &BootstrapConfig::default()).is_err());
        let with = BootstrapConfig {
            with_replacement: true,
            ..Default::default()
        };
        assert!(bootstrap_counts_from(&counts, &with).is_ok());
    }

    #[test]
    fn empty_cov_curve() {
        let ds = labeled_dataset(&[&[1]]);
        assert!(cov_curve(&ds, &[], 10, 0, false).unwrap().is_empty());
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
        (2usize..6, 1usize..12).prop_flat_map(|(coders, units)| {
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), units), coders)
        })
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(rows in matrix_strategy()) {
            let fast = krippendorff_alpha(&TokenLabelMatrix::from_rows(rows.clone())).unwrap();
            match alpha_oracle(&rows) {
                Some(expected) => prop_assert!((fast.value() - expected).abs() < 1e-9),
                None => prop_assert_eq!(fast, Alpha::Degenerate),
            }
        }

        #[test]
        fn permutation_invariant(rows in matrix_strategy(), seed in any::<u64>()) {
            let base = krippendorff_alpha(&TokenLabelMatrix::from_rows(rows.clone())).unwrap();
            let mut shuffled = rows.clone();
            let rot = (seed as usize) % shuffled.len();
            shuffled.rotate_left(rot);
            let units = rows[0].len();
            let shift = (seed as usize / 7) % units;
            for r in &mut shuffled {
                r.rotate_left(shift);
                r.reverse();
            }
            let other = krippendorff_alpha(&TokenLabelMatrix::from_rows(shuffled)).unwrap();
            match (base, other) {
                (Alpha::Value(a), Alpha::Value(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn two_agree_bounds_and_superset(rows in matrix_strategy()) {
            let mut acc = TwoAgree::default();
            let matrix = TokenLabelMatrix::from_rows(rows.clone());
            acc.add_matrix(&matrix);
            if let Some(p) = acc.percent() {
                prop_assert!((0.0..=100.0).contains(&p));
            }
            let union: Vec<bool> = (0..matrix.n_tokens())
                .map(|u| rows.iter().any(|r| r[u]))
                .collect();
            let mut extended = rows;
            extended.push(union);
            let mut acc2 = TwoAgree::default();
            acc2.add_matrix(&TokenLabelMatrix::from_rows(extended));
            match (acc.percent(), acc2.percent()) {
                (Some(a), Some(b)) => prop_assert!(b >= a),
                (None, b) => prop_assert_eq!(b, None),
                (Some(_), None) => prop_assert!(false),
            }
        }
    }
}

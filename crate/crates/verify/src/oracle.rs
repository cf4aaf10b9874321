//! Brute-force recounts in exact arithmetic.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use errspan_core::metrics::Weighting;
use errspan_core::{Annotation, CharSpan, ErrorSpan, ErrorType};

use crate::synthetic::Synthetic;

fn big(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Which spans a recount looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Filter {
    pub drop_severity1_grammar: bool,
}

impl Filter {
    fn keeps(self, s: &ErrorSpan) -> bool {
        !(self.drop_severity1_grammar
            && s.error_type == ErrorType::GrammarUsage
            && s.severity.level() == 1)
    }
}

fn touches(span: CharSpan, token: CharSpan) -> bool {
    span.start < token.end && token.start < span.end
}

/// Walks every token and every span: one unit per covering span for
/// coverage, its severity for coverage x severity, one per span for counts.
pub fn recount(
    annotation: &Annotation,
    tokens: &[CharSpan],
    types: &[ErrorType],
    weighting: Weighting,
    filter: Filter,
) -> BigRational {
    let spans: Vec<&ErrorSpan> = annotation
        .spans
        .iter()
        .filter(|s| types.contains(&s.error_type) && filter.keeps(s))
        .collect();
    match weighting {
        Weighting::Count => big(spans.len() as u64),
        Weighting::Coverage | Weighting::CoverageTimesSeverity => {
            if tokens.is_empty() {
                return BigRational::zero();
            }
            let mut total = 0u64;
            for &token in tokens {
                for s in &spans {
                    if touches(s.span, token) {
                        total += match weighting {
                            Weighting::Coverage => 1,
                            _ => u64::from(s.severity.level()),
                        };
                    }
                }
            }
            BigRational::new(BigInt::from(total), BigInt::from(tokens.len()))
        }
    }
}

/// Mean recount per group; `None` for groups without annotations.
pub fn group_means<K>(
    data: &Synthetic,
    key: K,
    types: &[ErrorType],
    weighting: Weighting,
    filter: Filter,
) -> BTreeMap<String, Option<BigRational>>
where
    K: Fn(usize) -> String,
{
    let mut sums: BTreeMap<String, (BigRational, u64)> = BTreeMap::new();
    for pos in 0..data.dataset.generations().len() {
        let entry = sums.entry(key(pos)).or_insert_with(|| (BigRational::zero(), 0));
        for a in data.dataset.annotations_of(pos) {
            entry.0 += recount(a, &data.tokens[pos], types, weighting, filter);
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (sum, n))| (k, (n > 0).then(|| sum / big(n))))
        .collect()
}

/// Spans per type for every generation, in `ErrorType::ALL` order.
pub fn span_counts(data: &Synthetic) -> Vec<Vec<u64>> {
    (0..data.dataset.generations().len())
        .map(|pos| {
            ErrorType::ALL
                .iter()
                .map(|t| {
                    data.dataset
                        .annotations_of(pos)
                        .flat_map(|a| &a.spans)
                        .filter(|s| s.error_type == *t)
                        .count() as u64
                })
                .collect()
        })
        .collect()
}

/// Next k-subset of `0..n` in lexicographic order.
fn advance(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Column sums averaged over every `k`-subset of rows, plus the number of
/// subsets visited.
pub fn exhaustive_subset_means(rows: &[Vec<u64>], k: usize) -> (Vec<BigRational>, u64) {
    let width = rows.first().map_or(0, Vec::len);
    let mut sums = vec![0u128; width];
    let mut visited = 0u64;
    if k == 0 || k > rows.len() {
        return (vec![BigRational::zero(); width], 0);
    }
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        for &r in &subset {
            for (s, &c) in sums.iter_mut().zip(&rows[r]) {
                *s += u128::from(c);
            }
        }
        visited += 1;
        if !advance(&mut subset, rows.len()) {
            break;
        }
    }
    let means = sums
        .into_iter()
        .map(|s| BigRational::new(BigInt::from(s), BigInt::from(visited)))
        .collect();
    (means, visited)
}

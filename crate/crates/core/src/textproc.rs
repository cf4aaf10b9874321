//! Tokenization, word-boundary snapping and sentence-end detection.
//!
//! All offsets are Unicode scalar value offsets. The tokenizer splits on
//! whitespace and then peels leading and trailing punctuation characters off
//! each chunk into single-character tokens, so `"kids."` becomes `kids` and
//! `.` while `state-of-the-art` and `don't` stay whole.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::CharSpan;

const ABBREVIATIONS_V1: &str = include_str!("../data/abbreviations.txt");

/// Ordered, non-overlapping token spans of a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenMap {
    pub tokens: Vec<CharSpan>,
    pub text_length: usize,
}

impl TokenMap {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token strings, borrowed from the text the map was built from.
    pub fn token_texts<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let bytes = char_to_byte_offsets(text);
        self.tokens
            .iter()
            .map(|t| &text[bytes[t.start]..bytes[t.end]])
            .collect()
    }

    pub fn span_text<'t>(&self, text: &'t str, span: CharSpan) -> &'t str {
        let bytes = char_to_byte_offsets(text);
        &text[bytes[span.start]..bytes[span.end]]
    }

    /// Indices of every token sharing at least one character with `span`.
    ///
    /// Overlapped tokens are always contiguous, so the set is returned as a
    /// range. A span that only covers whitespace yields an empty range.
    pub fn span_tokens(&self, span: CharSpan) -> Result<Range<usize>> {
        if span.start >= span.end || span.end > self.text_length {
            return Err(Error::SpanOutOfBounds {
                span,
                text_length: self.text_length,
            });
        }
        let first = self.tokens.partition_point(|t| t.end <= span.start);
        let last = self.tokens.partition_point(|t| t.start < span.end);
        Ok(first..last.max(first))
    }

    /// Widens `raw` to cover every token it touches.
    pub fn snap(&self, raw: CharSpan) -> Result<CharSpan> {
        let range = self.span_tokens(raw)?;
        if range.is_empty() {
            return Err(Error::SnapEmpty(raw));
        }
        Ok(CharSpan::new(
            self.tokens[range.start].start,
            self.tokens[range.end - 1].end,
        ))
    }

    /// Character span covering tokens `range`.
    pub fn window(&self, range: Range<usize>) -> CharSpan {
        CharSpan::new(self.tokens[range.start].start, self.tokens[range.end - 1].end)
    }
}

fn char_to_byte_offsets(text: &str) -> Vec<usize> {
    let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    offsets.push(text.len());
    offsets
}

/// Punctuation that is split off the edges of a whitespace chunk.
pub fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{2013}' | '\u{2014}' | '\u{2026}' | '«' | '»' | '¿' | '¡'
        )
}

fn is_closing(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | ')' | ']' | '}' | '\u{2019}' | '\u{201D}' | '»'
    )
}

pub fn tokenize(text: &str) -> TokenMap {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, chunk_start, i, &mut tokens);
    }
    TokenMap {
        tokens,
        text_length: chars.len(),
    }
}

fn split_chunk(chars: &[char], start: usize, end: usize, out: &mut Vec<CharSpan>) {
    let mut lo = start;
    while lo < end && is_edge_punctuation(chars[lo]) {
        out.push(CharSpan::new(lo, lo + 1));
        lo += 1;
    }
    let mut hi = end;
    while hi > lo && is_edge_punctuation(chars[hi - 1]) {
        hi -= 1;
    }
    if lo < hi {
        out.push(CharSpan::new(lo, hi));
    }
    out.extend((hi..end).map(|c| CharSpan::new(c, c + 1)));
}

pub fn snap_to_word_boundaries(raw: CharSpan, token_map: &TokenMap) -> Result<CharSpan> {
    token_map.snap(raw)
}

/// Lowercase abbreviations (without the trailing period) that do not end a
/// sentence when followed by `.`.
#[derive(Debug, Clone)]
pub struct Abbreviations {
    entries: HashSet<String>,
}

impl Abbreviations {
    /// Parses the one-per-line format; blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Self {
        let entries = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.trim_end_matches('.').to_lowercase())
            .collect();
        Abbreviations { entries }
    }

    pub fn builtin() -> &'static Abbreviations {
        static BUILTIN: OnceLock<Abbreviations> = OnceLock::new();
        BUILTIN.get_or_init(|| Abbreviations::parse(ABBREVIATIONS_V1))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether token `index` closes a sentence.
///
/// A closing token is `.`, `!` or `?`, or a token ending in one of those
/// followed only by closing quotes and brackets. A period directly after a
/// listed abbreviation does not count.
pub fn ends_sentence(tokens: &[&str], index: usize, abbreviations: &Abbreviations) -> bool {
    let Some(token) = tokens.get(index) else {
        return false;
    };
    let trimmed = token.trim_end_matches(is_closing);
    let Some(last) = trimmed.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '!' | '?') {
        return false;
    }
    if last != '.' {
        return true;
    }
    let word = &trimmed[..trimmed.len() - 1];
    let word = if word.is_empty() {
        match index.checked_sub(1) {
            Some(prev) => tokens[prev],
            None => return true,
        }
    } else {
        word
    };
    !abbreviations.contains(word)
}

/// Smallest token index `>= min_index` that ends a sentence.
pub fn find_sentence_end(token_map: &TokenMap, text: &str, min_index: usize) -> Option<usize> {
    find_sentence_end_with(token_map, text, min_index, Abbreviations::builtin())
}

pub fn find_sentence_end_with(
    token_map: &TokenMap,
    text: &str,
    min_index: usize,
    abbreviations: &Abbreviations,
) -> Option<usize> {
    let texts = token_map.token_texts(text);
    (min_index..texts.len()).find(|&i| ends_sentence(&texts, i, abbreviations))
}

/// Joins tokens back into text such that [`tokenize`] recovers them exactly.
///
/// Closing punctuation attaches to the previous token and opening brackets
/// to the next one; everything else is separated by a single space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for token in tokens {
        let token = token.as_ref();
        let attach_left = matches!(token, "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "}");
        if !glue_next && !attach_left {
            out.push(' ');
        }
        out.push_str(token);
        glue_next = matches!(token, "(" | "[" | "{");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<String> {
        tokenize(text)
            .token_texts(text)
            .into_iter()
            .map(String::from)
            .collect()
    }

    #[test]
    fn splits_trailing_period() {
        assert_eq!(texts("Dogs are the new kids."), ["Dogs", "are", "the", "new", "kids", "."]);
    }

    #[test]
    fn empty_text() {
        let map = tokenize("");
        assert!(map.is_empty());
        assert_eq!(map.text_length, 0);
    }

    #[test]
    fn interior_punctuation_stays() {
        assert_eq!(texts("state-of-the-art, really"), ["state-of-the-art", ",", "really"]);
        assert_eq!(texts("don't (really)"), ["don't", "(", "really", ")"]);
        assert_eq!(texts("\u{201C}Yes.\u{201D}"), ["\u{201C}", "Yes", ".", "\u{201D}"]);
    }

    #[test]
    fn offsets_are_chars_not_bytes() {
        let text = "café au lait";
        let map = tokenize(text);
        assert_eq!(map.tokens[0], CharSpan::new(0, 4));
        assert_eq!(map.tokens[1], CharSpan::new(5, 7));
        assert_eq!(map.text_length, 12);
    }

    #[test]
    fn span_tokens_overlap_rule() {
        // tokens: a0 bb1 ccc2 dddd3 e4 ff5
        let text = "a bb ccc dddd e ff";
        let map = tokenize(text);
        // exactly tokens 3..=5
        assert_eq!(map.span_tokens(CharSpan::new(9, 18)).unwrap(), 3..6);
        // last char of token 2 and all of token 3
        assert_eq!(map.span_tokens(CharSpan::new(7, 13)).unwrap(), 2..4);
        // whitespace between tokens
        assert!(map.span_tokens(CharSpan::new(8, 9)).unwrap().is_empty());
        assert!(map.span_tokens(CharSpan::new(10, 40)).is_err());
        assert!(map.span_tokens(CharSpan::new(3, 3)).is_err());
    }

    #[test]
    fn snapping() {
        let text = "a bb ccc dddd e ff";
        let map = tokenize(text);
        // mid token 2 through mid token 4
        assert_eq!(map.snap(CharSpan::new(6, 15)).unwrap(), CharSpan::new(5, 15));
        // trailing whitespace is dropped
        assert_eq!(map.snap(CharSpan::new(6, 14)).unwrap(), CharSpan::new(5, 13));
        assert_eq!(map.snap(CharSpan::new(5, 15)).unwrap(), CharSpan::new(5, 15));
        assert_eq!(map.snap(CharSpan::new(10, 11)).unwrap(), CharSpan::new(9, 13));
        assert!(matches!(
            map.snap(CharSpan::new(8, 9)),
            Err(Error::SnapEmpty(_))
        ));
    }

    #[test]
    fn sentence_ends() {
        let text = "He left. She stayed.";
        let map = tokenize(text);
        assert_eq!(find_sentence_end(&map, text, 0), Some(2));
        assert_eq!(find_sentence_end(&map, text, 3), Some(5));
        assert_eq!(find_sentence_end(&map, text, 6), None);
        assert_eq!(find_sentence_end(&map, text, 60), None);

        let text = "Dr. Smith arrived";
        assert_eq!(find_sentence_end(&tokenize(text), text, 0), None);

        let text = "He moved to the U.S. in May!";
        assert_eq!(find_sentence_end(&tokenize(text), text, 0), Some(8));
    }

    #[test]
    fn unsplit_terminal_tokens() {
        let abbr = Abbreviations::builtin();
        assert!(ends_sentence(&["end.\""], 0, abbr));
        assert!(!ends_sentence(&["Mr."], 0, abbr));
        assert!(ends_sentence(&["really?)"], 0, abbr));
        assert!(!ends_sentence(&["word"], 0, abbr));
    }

    #[test]
    fn abbreviation_file() {
        let abbr = Abbreviations::builtin();
        assert!(abbr.contains("Mrs"));
        assert!(abbr.contains("e.g"));
        assert!(abbr.contains("Jan"));
        assert!(!abbr.contains("may"));
        assert!(!abbr.contains("# one lowercase abbreviation per line"));
    }

    fn token_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-zA-Z]{1,6}",
            "[a-z]{1,3}-[a-z]{1,3}",
            "[a-z]{1,3}'[a-z]",
            Just(".".to_string()),
            Just(",".to_string()),
            Just("(".to_string()),
            Just(")".to_string()),
            Just("\"".to_string()),
            Just("?".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn gaps_reconstruct_text(text in "[a-z ,.()'\\-\n\t\u{e9}]{0,60}") {
            let map = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for t in &map.tokens {
                prop_assert!(t.start >= cursor && t.start < t.end && t.end <= map.text_length);
                rebuilt.extend(&chars[cursor..t.start]);
                rebuilt.extend(&chars[t.start..t.end]);
                cursor = t.end;
            }
            rebuilt.extend(&chars[cursor..]);
            prop_assert_eq!(rebuilt, text.clone());
            prop_assert_eq!(tokenize(&text), map);
        }

        #[test]
        fn snap_is_idempotent_and_monotone(text in "[a-z ,.]{1,40}", a in 0usize..40, b in 0usize..40) {
            let map = tokenize(&text);
            let n = map.text_length;
            let (lo, hi) = (a.min(b) % n, (a.max(b) % n) + 1);
            prop_assume!(lo < hi);
            let raw = CharSpan::new(lo, hi);
            if let Ok(snapped) = map.snap(raw) {
                prop_assert_eq!(map.span_tokens(snapped).unwrap(), map.span_tokens(raw).unwrap());
                let chars: Vec<char> = text.chars().collect();
                for (i, c) in chars.iter().enumerate().take(raw.end).skip(raw.start) {
                    prop_assert!(c.is_whitespace() || (snapped.start <= i && i < snapped.end));
                }
                prop_assert_eq!(map.snap(snapped).unwrap(), snapped);
            }
        }

        #[test]
        fn detokenize_round_trips(tokens in proptest::collection::vec(token_strategy(), 0..30)) {
            let text = detokenize(&tokens);
            let map = tokenize(&text);
            prop_assert_eq!(map.token_texts(&text), tokens.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}

//! Emotion flow: per-segment emotion and polarity percentages of a synopsis.
//!
//! The lexicon file holds `word<TAB>emotion<TAB>flag` triples, one per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Fixed dimension order of every emotion vector.
pub const DIMENSIONS: [&str; 10] =
    ["anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust", "negative", "positive"];

pub const N_DIMENSIONS: usize = DIMENSIONS.len();
pub const DEFAULT_SEGMENTS: usize = 20;

pub type EmotionVector = [f64; N_DIMENSIONS];

pub fn dimension_index(label: &str) -> Option<usize> {
    DIMENSIONS.iter().position(|&d| d == label)
}

/// Bit `d` of an association set corresponds to `DIMENSIONS[d]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Associations(u16);

impl Associations {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Option<Self> {
        let mut bits = 0u16;
        for label in labels {
            bits |= 1 << dimension_index(label)?;
        }
        Some(Self(bits))
    }

    pub fn has(self, d: usize) -> bool {
        self.0 & (1 << d) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmotionLexicon {
    entries: HashMap<String, Associations>,
}

impl EmotionLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::parse(format!("{}:{location}", path.display()), message),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, Associations> = HashMap::new();
        // Explicit flags seen per (word, dimension): bit set means a flag was read.
        let mut seen: HashMap<String, (u16, u16)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let location = format!("line {}", i + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(location, format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let word = fields[0].trim().to_lowercase();
            let label = fields[1].trim();
            let d = dimension_index(label)
                .ok_or_else(|| Error::parse(location.clone(), format!("unknown emotion label {label:?}")))?;
            let flag = match fields[2].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(location, format!("flag must be 0 or 1, found {other:?}"))),
            };
            let (read, set) = seen.entry(word.clone()).or_default();
            let bit = 1u16 << d;
            if *read & bit != 0 && (*set & bit != 0) != flag {
                return Err(Error::Validation(format!("conflicting flags for ({word}, {label}) at {location}")));
            }
            *read |= bit;
            if flag {
                *set |= bit;
            }
            let entry = entries.entry(word).or_default();
            if flag {
                entry.0 |= bit;
            }
        }
        Ok(Self { entries })
    }

    pub fn from_entries<'a, I, L>(entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, L)>,
        L: IntoIterator<Item = &'a str>,
    {
        let entries = entries
            .into_iter()
            .map(|(w, labels)| {
                let a = Associations::from_labels(labels).expect("known emotion labels");
                (w.to_lowercase(), a)
            })
            .collect();
        Self { entries }
    }

    /// Number of distinct words, including words with no associations.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Associations {
        self.entries.get(word).copied().unwrap_or_default()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }
}

/// Splits `tokens` into `n` contiguous segments; with `len = q*n + r` the
/// first `r` segments hold `q + 1` tokens.
pub fn segment_words<T>(tokens: &[T], n: usize) -> Vec<&[T]> {
    assert!(n >= 1, "segment count must be at least 1");
    let (q, r) = (tokens.len() / n, tokens.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = if i < r { q + 1 } else { q };
        out.push(&tokens[start..start + len]);
        start += len;
    }
    out
}

/// Percentage of segment words associated with each dimension.
pub fn emotion_vector<S: AsRef<str>>(segment: &[S], lexicon: &EmotionLexicon) -> EmotionVector {
    let mut counts = [0usize; N_DIMENSIONS];
    for word in segment {
        let a = lexicon.get(word.as_ref());
        for (d, c) in counts.iter_mut().enumerate() {
            if a.has(d) {
                *c += 1;
            }
        }
    }
    let mut v = [0.0; N_DIMENSIONS];
    if !segment.is_empty() {
        let total = segment.len() as f64;
        for (out, &c) in v.iter_mut().zip(&counts) {
            *out = 100.0 * c as f64 / total;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionFlow {
    rows: Vec<EmotionVector>,
}

impl EmotionFlow {
    pub fn from_rows(rows: Vec<EmotionVector>) -> Self {
        Self { rows }
    }

    pub fn zeros(n_segments: usize) -> Self {
        Self { rows: vec![[0.0; N_DIMENSIONS]; n_segments] }
    }

    pub fn n_segments(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[EmotionVector] {
        &self.rows
    }

    /// Row-major `n_segments * 10` values.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment");
        for d in DIMENSIONS {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Emotion flow of the tokenized text, stopwords included.
pub fn emotion_flow(text: &str, lexicon: &EmotionLexicon, n_segments: usize) -> EmotionFlow {
    let tokens = tokenize(text);
    flow_from_tokens(&tokens, lexicon, n_segments)
}

pub fn flow_from_tokens<S: AsRef<str>>(tokens: &[S], lexicon: &EmotionLexicon, n_segments: usize) -> EmotionFlow {
    let rows = segment_words(tokens, n_segments).into_iter().map(|seg| emotion_vector(seg, lexicon)).collect();
    EmotionFlow { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> EmotionLexicon {
        EmotionLexicon::from_entries([("w1", vec!["joy"]), ("w2", vec!["fear", "negative"])])
    }

    #[test]
    fn triples_map_directly() {
        let lex = EmotionLexicon::parse("abduction\tfear\t1\nabduction\tjoy\t0\n").unwrap();
        assert_eq!(lex.len(), 1);
        let a = lex.get("abduction");
        for (d, name) in DIMENSIONS.iter().enumerate() {
            assert_eq!(a.has(d), *name == "fear", "{name}");
        }
    }

    #[test]
    fn empty_file_gives_empty_lexicon() {
        assert!(EmotionLexicon::parse("").unwrap().is_empty());
    }

    #[test]
    fn words_are_case_folded() {
        let lex = EmotionLexicon::parse("Hope\tjoy\t1\n").unwrap();
        assert!(lex.get("hope").has(dimension_index("joy").unwrap()));
    }

    #[test]
    fn zero_only_words_are_counted() {
        let lex = EmotionLexicon::parse("calm\tjoy\t0\ncalm\tfear\t0\n").unwrap();
        assert_eq!(lex.len(), 1);
        assert!(lex.get("calm").is_empty());
    }

    #[test]
    fn unknown_label_is_parse_error() {
        let err = EmotionLexicon::parse("abduction\tfear\t1\nabduction\tboredom\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "line 2"), "{err}");
    }

    #[test]
    fn conflicting_duplicate_is_validation_error() {
        let err = EmotionLexicon::parse("a\tfear\t1\na\tfear\t0\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(EmotionLexicon::parse("a\tfear\t1\na\tfear\t1\n").is_ok());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(EmotionLexicon::parse("a\tfear\n"), Err(Error::Parse { .. })));
        assert!(matches!(EmotionLexicon::parse("a\tfear\t2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn segment_sizes() {
        let sizes = |len: usize| -> Vec<usize> {
            let t: Vec<usize> = (0..len).collect();
            segment_words(&t, 20).iter().map(|s| s.len()).collect()
        };
        assert_eq!(sizes(100), vec![5; 20]);
        let mut expect = vec![3; 3];
        expect.extend(vec![2; 17]);
        assert_eq!(sizes(43), expect);
        let mut expect = vec![1; 5];
        expect.extend(vec![0; 15]);
        assert_eq!(sizes(5), expect);
    }

    #[test]
    fn vector_hand_count() {
        let v = emotion_vector(&["w1", "w1", "w2", "w3"], &toy());
        let mut expect = [0.0; N_DIMENSIONS];
        expect[dimension_index("joy").unwrap()] = 50.0;
        expect[dimension_index("fear").unwrap()] = 25.0;
        expect[dimension_index("negative").unwrap()] = 25.0;
        assert_eq!(v, expect);
    }

    #[test]
    fn vector_without_hits_or_words_is_zero() {
        assert_eq!(emotion_vector(&["x", "y"], &toy()), [0.0; N_DIMENSIONS]);
        assert_eq!(emotion_vector::<&str>(&[], &toy()), [0.0; N_DIMENSIONS]);
    }

    #[test]
    fn uniform_joy_text() {
        let text = vec!["w1"; 40].join(" ");
        let flow = emotion_flow(&text, &toy(), DEFAULT_SEGMENTS);
        assert_eq!(flow.n_segments(), 20);
        let mut expect = [0.0; N_DIMENSIONS];
        expect[dimension_index("joy").unwrap()] = 100.0;
        assert!(flow.rows().iter().all(|r| *r == expect));
    }

    #[test]
    fn stopwords_count_toward_denominator() {
        // "the" and "and" are stopwords but still belong to the segment.
        let flow = emotion_flow("the w1 and w2", &toy(), 1);
        assert_eq!(flow.rows()[0][dimension_index("joy").unwrap()], 25.0);
    }

    #[test]
    fn csv_layout() {
        let csv = EmotionFlow::zeros(2).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "segment,anger,anticipation,disgust,fear,joy,sadness,surprise,trust,negative,positive");
        assert_eq!(lines[1], "1,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000");
        assert_eq!(lines.len(), 3);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["w1", "w2", "w3", "joyful", "the", "and"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn segments_partition_tokens(tokens in prop::collection::vec(word(), 0..200), n in 1usize..40) {
            let segs = segment_words(&tokens, n);
            prop_assert_eq!(segs.len(), n);
            let joined: Vec<String> = segs.concat();
            prop_assert_eq!(joined, tokens.clone());
            let max = segs.iter().map(|s| s.len()).max().unwrap();
            let min = segs.iter().map(|s| s.len()).min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(segs.windows(2).all(|w| w[0].len() >= w[1].len()));
        }

        #[test]
        fn entries_are_bounded(tokens in prop::collection::vec(word(), 0..200)) {
            let flow = flow_from_tokens(&tokens, &toy(), DEFAULT_SEGMENTS);
            prop_assert_eq!(flow.n_segments(), DEFAULT_SEGMENTS);
            for row in flow.rows() {
                for &v in row {
                    prop_assert!((0.0..=100.0).contains(&v));
                }
            }
        }

        #[test]
        fn repeating_words_in_place_keeps_vectors(
            tokens in (1usize..4).prop_flat_map(|j| prop::collection::vec(word(), 20 * j)),
            k in 1usize..5,
        ) {
            let repeated: Vec<String> = tokens.iter().flat_map(|w| std::iter::repeat_n(w.clone(), k)).collect();
            let a = flow_from_tokens(&tokens, &toy(), DEFAULT_SEGMENTS);
            let b = flow_from_tokens(&repeated, &toy(), DEFAULT_SEGMENTS);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn flow_is_deterministic(text in "[a-z ]{0,300}") {
            prop_assert_eq!(emotion_flow(&text, &toy(), 20), emotion_flow(&text, &toy(), 20));
        }
    }
}

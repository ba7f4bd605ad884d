//! Synopsis corpus ingestion, vocabularies and example encoding.
//!
//! Corpus files are delimiter-separated with a header row and the columns
//! `movie_id, title, plot_synopsis, tags, split, synopsis_source`. The tags
//! column holds a comma-separated list inside one quoted field.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token index reserved for left padding.
pub const PAD: u32 = 0;
/// Token index for words outside the vocabulary.
pub const OOV: u32 = 1;
/// Marker emitted by [`Vocabulary::decode`] for out-of-vocabulary positions.
pub const OOV_MARKER: &str = "<oov>";

pub const DEFAULT_MAX_WORDS: usize = 5000;
pub const DEFAULT_SEQ_LEN: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynopsisRecord {
    pub movie_id: String,
    pub title: String,
    pub synopsis: String,
    pub tags: BTreeSet<String>,
    pub split: Split,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// Comma-separated, as the MPST corpus is distributed.
    MpstCsv,
    /// Same columns, tab-separated.
    MpstTsv,
}

impl CorpusFormat {
    fn delimiter(self) -> u8 {
        match self {
            Self::MpstCsv => b',',
            Self::MpstTsv => b'\t',
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpst-csv" | "csv" => Ok(Self::MpstCsv),
            "mpst-tsv" | "tsv" => Ok(Self::MpstTsv),
            other => Err(Error::Validation(format!("unknown corpus format `{other}`"))),
        }
    }
}

const COLUMNS: usize = 6;

/// Reads every row of a corpus file.
///
/// Split values `val`/`validation` are folded into [`Split::Train`]: the
/// published corpus carves its validation rows out of the training portion.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<SynopsisRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, format)
}

pub fn read_corpus(reader: impl std::io::Read, format: CorpusFormat) -> Result<Vec<SynopsisRecord>> {
    let mut rdr =
        csv::ReaderBuilder::new().delimiter(format.delimiter()).has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("row 1", e.to_string()))?.clone();
    if headers.len() != COLUMNS {
        return Err(Error::parse("row 1", format!("expected {COLUMNS} header columns, found {}", headers.len())));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let location = format!("row {row_no}");
        let row = row.map_err(|e| Error::parse(&location, e.to_string()))?;
        let tags = parse_tags(&row[3]);
        if tags.is_empty() {
            return Err(Error::Validation(format!("{location}: empty tag set")));
        }
        let synopsis = row[2].to_string();
        if synopsis.trim().is_empty() {
            return Err(Error::Validation(format!("{location}: empty synopsis")));
        }
        let split = match row[4].trim().to_lowercase().as_str() {
            "train" | "val" | "validation" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::parse(location, format!("unknown split `{other}`")));
            }
        };
        records.push(SynopsisRecord {
            movie_id: row[0].trim().to_string(),
            title: row[1].to_string(),
            synopsis,
            tags,
            split,
            source: row[5].trim().to_string(),
        });
    }
    Ok(records)
}

/// Writes records in the comma-separated corpus layout.
pub fn write_corpus(writer: impl std::io::Write, records: &[SynopsisRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Validation(format!("cannot write corpus: {e}"));
    w.write_record(["imdb_id", "title", "plot_synopsis", "tags", "split", "synopsis_source"]).map_err(wrap)?;
    for r in records {
        let tags = r.tags.iter().cloned().collect::<Vec<_>>().join(", ");
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        w.write_record([&r.movie_id, &r.title, &r.synopsis, &tags, split, &r.source]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Validation(format!("cannot write corpus: {e}")))
}

fn parse_tags(field: &str) -> BTreeSet<String> {
    field.split(',').map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect()
}

/// English stopword list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled 179-word English list.
    pub fn english() -> Self {
        Self::parse(include_str!("../data/stopwords_en.txt"))
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// One word per line; blank lines are ignored.
    pub fn parse(text: &str) -> Self {
        Self(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// Lowercases, splits on Unicode whitespace and strips leading and trailing
/// non-alphanumeric characters from each piece. Empty pieces are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// [`tokenize`] followed by stopword removal.
pub fn preprocess(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let mut tokens = tokenize(text);
    tokens.retain(|t| !stopwords.contains(t));
    tokens
}

/// Word index with `0` for padding, `1` for unknown words and content words
/// from `2` upwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `max_words` most frequent preprocessed tokens of the training
    /// synopses. Frequency is counted per token occurrence; ties go to the
    /// lexicographically smaller word.
    pub fn build(records: &[SynopsisRecord], stopwords: &Stopwords, max_words: usize) -> Self {
        Self::from_token_lists(records.iter().map(|r| preprocess(&r.synopsis, stopwords)), max_words)
    }

    pub fn from_token_lists<I, T>(lists: I, max_words: usize) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = String>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for list in lists {
            for tok in list {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect())
    }

    /// Restores a vocabulary from content words in index order.
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32 + 2)).collect();
        Self { words, index }
    }

    /// Content words in index order (index `i + 2` for position `i`).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of content words, excluding the two reserved indices.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Rows needed by an embedding table over this vocabulary.
    pub fn table_size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn index_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(OOV)
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        index.checked_sub(2).and_then(|i| self.words.get(i as usize)).map(String::as_str)
    }

    /// Maps tokens to indices, keeps the last `max_len` and left-pads with
    /// [`PAD`].
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<u32> {
        let tail = &tokens[tokens.len().saturating_sub(max_len)..];
        let mut seq = vec![PAD; max_len - tail.len()];
        seq.extend(tail.iter().map(|t| self.index_of(t)));
        seq
    }

    /// Inverse of [`encode`](Self::encode) over non-padding positions.
    pub fn decode(&self, seq: &[u32]) -> Vec<String> {
        seq.iter().filter(|&&i| i != PAD).map(|&i| self.word(i).unwrap_or(OOV_MARKER).to_string()).collect()
    }
}

/// Ordered tag index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocabulary {
    /// All distinct tags of the given records, sorted.
    pub fn from_records(records: &[SynopsisRecord]) -> Self {
        let tags: BTreeSet<&String> = records.iter().flat_map(|r| &r.tags).collect();
        Self::from_tags(tags.into_iter().cloned().collect())
    }

    pub fn from_tags(tags: Vec<String>) -> Self {
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tags, index }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    /// Indices of the known tags in `tags`; unknown tags are returned separately.
    pub fn indices<'a>(&self, tags: impl IntoIterator<Item = &'a String>) -> (BTreeSet<usize>, Vec<String>) {
        let mut known = BTreeSet::new();
        let mut unknown = Vec::new();
        for t in tags {
            match self.index_of(t) {
                Some(i) => {
                    known.insert(i);
                }
                None => unknown.push(t.clone()),
            }
        }
        (known, unknown)
    }
}

/// Uniform probability mass over a movie's known tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution(pub Vec<f64>);

impl TargetDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Spreads mass `1/k` over the `k` tags present in `tag_vocab`. Unknown tags
/// are dropped with a warning; a set with no known tag is an error.
pub fn make_target(tags: &BTreeSet<String>, tag_vocab: &TagVocabulary) -> Result<TargetDistribution> {
    let (known, unknown) = tag_vocab.indices(tags);
    if !unknown.is_empty() {
        log::warn!("dropping tags outside the tag vocabulary: {}", unknown.join(", "));
    }
    if known.is_empty() {
        return Err(Error::Validation(format!("none of the tags {tags:?} is in the tag vocabulary")));
    }
    let mass = 1.0 / known.len() as f64;
    let mut dist = vec![0.0; tag_vocab.len()];
    for i in known {
        dist[i] = mass;
    }
    Ok(TargetDistribution(dist))
}

/// Random partition into `(train, validation)` with a validation share of
/// `floor(len * fraction)`. Each part keeps the input order.
pub fn validation_split<T: Clone>(records: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(fraction > 0.0 && fraction < 1.0, "validation fraction must lie in (0, 1), got {fraction}");
    let n_val = (records.len() as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; records.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(records.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (r, v) in records.iter().zip(is_val) {
        if v {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, val)
}

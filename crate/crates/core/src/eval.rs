//! Tag-prediction metrics, trivial baselines and prediction diagnostics.
//!
//! Metrics are fractions in `[0, 1]`; reports render them as percentages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SynopsisRecord, TagVocabulary};
use crate::{Error, Result};

/// Ground-truth tag sets keyed by movie id.
pub type Truths = BTreeMap<String, BTreeSet<String>>;

pub fn truths_from_records(records: &[SynopsisRecord]) -> Truths {
    records.iter().map(|r| (r.movie_id.clone(), r.tags.clone())).collect()
}

/// Ranked tags for one movie, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct MoviePrediction {
    pub movie_id: String,
    pub tags: Vec<String>,
    /// Model probabilities aligned with `tags`; baselines have none.
    pub probabilities: Option<Vec<f64>>,
}

/// Top-k predictions for a list of movies, all with the same `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    k: usize,
    movies: Vec<MoviePrediction>,
}

impl PredictionSet {
    /// Requires unique movie ids and exactly `k` distinct tags per movie.
    pub fn new(k: usize, movies: Vec<MoviePrediction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &movies {
            if !seen.insert(m.movie_id.as_str()) {
                return Err(Error::Validation(format!("movie {} predicted twice", m.movie_id)));
            }
            if m.tags.len() != k {
                return Err(Error::Validation(format!(
                    "movie {} has {} predicted tags, expected {k}",
                    m.movie_id,
                    m.tags.len()
                )));
            }
            if m.tags.iter().collect::<HashSet<_>>().len() != k {
                return Err(Error::Validation(format!("movie {} repeats a predicted tag", m.movie_id)));
            }
            if m.probabilities.as_ref().is_some_and(|p| p.len() != k) {
                return Err(Error::Validation(format!("movie {} has misaligned probabilities", m.movie_id)));
            }
        }
        Ok(Self { k, movies })
    }

    /// Builds a set from plain tag lists.
    pub fn from_lists<I, S, T>(k: usize, lists: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
        T: Into<String>,
    {
        let movies = lists
            .into_iter()
            .map(|(id, tags)| MoviePrediction {
                movie_id: id.into(),
                tags: tags.into_iter().map(Into::into).collect(),
                probabilities: None,
            })
            .collect();
        Self::new(k, movies)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn movies(&self) -> &[MoviePrediction] {
        &self.movies
    }

    pub fn len(&self) -> usize {
        self.movies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.movies.is_empty()
    }

    pub fn get(&self, movie_id: &str) -> Option<&MoviePrediction> {
        self.movies.iter().find(|m| m.movie_id == movie_id)
    }

    /// Keeps the first `k` tags of every movie.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k > self.k {
            return Err(Error::Validation(format!("cannot widen top-{} predictions to {k}", self.k)));
        }
        let movies = self
            .movies
            .iter()
            .map(|m| MoviePrediction {
                movie_id: m.movie_id.clone(),
                tags: m.tags[..k].to_vec(),
                probabilities: m.probabilities.as_ref().map(|p| p[..k].to_vec()),
            })
            .collect();
        Ok(Self { k, movies })
    }

    /// Writes `movie_id, rank, tag, probability` rows with a header; ranks
    /// start at 1 and the probability is empty for baselines.
    pub fn write_tsv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
        let io = |e: csv::Error| Error::Validation(format!("writing predictions: {e}"));
        w.write_record(["movie_id", "rank", "tag", "probability"]).map_err(io)?;
        for m in &self.movies {
            for (r, tag) in m.tags.iter().enumerate() {
                let p = m.probabilities.as_ref().map(|p| p[r].to_string()).unwrap_or_default();
                w.write_record([m.movie_id.as_str(), &(r + 1).to_string(), tag, &p]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Validation(format!("writing predictions: {e}")))?;
        Ok(())
    }

    /// Reads the format of [`write_tsv`](Self::write_tsv). A movie's rows
    /// must be contiguous with ranks `1..=k` in order.
    pub fn read_tsv(reader: impl Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(reader);
        let mut movies: Vec<MoviePrediction> = Vec::new();
        let mut with_probs: Vec<Vec<Option<f64>>> = Vec::new();
        for (i, row) in r.records().enumerate() {
            let line = format!("line {}", i + 2);
            let row = row.map_err(|e| Error::parse(&line, e.to_string()))?;
            if row.len() != 4 {
                return Err(Error::parse(&line, format!("expected 4 fields, found {}", row.len())));
            }
            let rank: usize = row[1].parse().map_err(|_| Error::parse(&line, format!("bad rank {:?}", &row[1])))?;
            let prob = match &row[3] {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|_| Error::parse(&line, format!("bad probability {s:?}")))?),
            };
            if rank == 1 {
                movies.push(MoviePrediction { movie_id: row[0].to_string(), tags: Vec::new(), probabilities: None });
                with_probs.push(Vec::new());
            }
            match movies.last_mut() {
                Some(m) if m.movie_id == row[0] && m.tags.len() + 1 == rank => {
                    m.tags.push(row[2].to_string());
                    with_probs.last_mut().unwrap().push(prob);
                }
                _ => return Err(Error::parse(&line, format!("rank {rank} of {} out of order", &row[0]))),
            }
        }
        for (m, probs) in movies.iter_mut().zip(with_probs) {
            if probs.iter().all(Option::is_some) {
                m.probabilities = Some(probs.into_iter().flatten().collect());
            } else if probs.iter().any(Option::is_some) {
                return Err(Error::Validation(format!("movie {} has partial probabilities", m.movie_id)));
            }
        }
        let k = movies.first().map_or(0, |m| m.tags.len());
        Self::new(k, movies)
    }
}

fn truth_of<'a>(truths: &'a Truths, movie_id: &str) -> Result<&'a BTreeSet<String>> {
    truths.get(movie_id).ok_or_else(|| Error::Validation(format!("no ground truth for movie {movie_id}")))
}

/// Pooled true-positive, false-positive and false-negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts over the predicted movies only; truths of other movies are ignored.
pub fn pooled_counts(preds: &PredictionSet, truths: &Truths) -> Result<Counts> {
    let mut c = Counts::default();
    for m in preds.movies() {
        let truth = truth_of(truths, &m.movie_id)?;
        let tp = m.tags.iter().filter(|t| truth.contains(*t)).count();
        c.tp += tp;
        c.fp += m.tags.len() - tp;
        c.fn_ += truth.len() - tp;
    }
    Ok(c)
}

/// Micro-averaged F1 over all (movie, tag) pairs.
pub fn micro_f1(preds: &PredictionSet, truths: &Truths) -> Result<f64> {
    Ok(pooled_counts(preds, truths)?.f1())
}

/// Mean per-tag recall over the whole tag vocabulary, together with the
/// per-tag recalls. Tags without any truth instance count as recall 0.
pub fn tag_recall(preds: &PredictionSet, truths: &Truths, tag_vocab: &TagVocabulary) -> Result<(f64, Vec<f64>)> {
    let n = tag_vocab.len();
    let mut hits = vec![0usize; n];
    let mut total = vec![0usize; n];
    for m in preds.movies() {
        let truth = truth_of(truths, &m.movie_id)?;
        for tag in truth {
            let t = tag_vocab.index_of(tag).ok_or_else(|| {
                Error::Validation(format!("tag {tag:?} of movie {} is not in the vocabulary", m.movie_id))
            })?;
            total[t] += 1;
            if m.tags.contains(tag) {
                hits[t] += 1;
            }
        }
    }
    let per_tag: Vec<f64> = hits.iter().zip(&total).map(|(&h, &t)| ratio(h, t)).collect();
    let mean = if n == 0 { 0.0 } else { per_tag.iter().sum::<f64>() / n as f64 };
    Ok((mean, per_tag))
}

/// Number of distinct tags predicted for any movie.
pub fn tags_learned(preds: &PredictionSet) -> usize {
    preds.movies().iter().flat_map(|m| &m.tags).collect::<HashSet<_>>().len()
}

/// Metrics of one prediction set at one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub n_movies: usize,
    pub tags_learned: usize,
    pub micro_f1: f64,
    pub tag_recall: f64,
    /// Tag names aligned with `per_tag_recall`.
    pub tags: Vec<String>,
    pub per_tag_recall: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn compute(preds: &PredictionSet, truths: &Truths, tag_vocab: &TagVocabulary) -> Result<Self> {
        let (tag_recall, per_tag_recall) = tag_recall(preds, truths, tag_vocab)?;
        Ok(Self {
            k: preds.k(),
            n_movies: preds.len(),
            tags_learned: tags_learned(preds),
            micro_f1: micro_f1(preds, truths)?,
            tag_recall,
            tags: tag_vocab.tags().to_vec(),
            per_tag_recall,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("metrics report", e.to_string()))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "top-{}: TL {} F1 {:.2} TR {:.2} ({} movies)",
            self.k,
            self.tags_learned,
            100.0 * self.micro_f1,
            100.0 * self.tag_recall,
            self.n_movies
        )
    }
}

/// Training-set tag counts in descending order, ties broken by tag name.
pub fn tags_by_frequency(train: &[SynopsisRecord], tag_vocab: &TagVocabulary) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; tag_vocab.len()];
    for r in train {
        for tag in &r.tags {
            if let Some(t) = tag_vocab.index_of(tag) {
                counts[t] += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = tag_vocab.tags().iter().cloned().zip(counts).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Predicts the `k` most frequent training tags for every movie.
pub fn baseline_most_frequent<S: AsRef<str>>(
    train: &[SynopsisRecord],
    tag_vocab: &TagVocabulary,
    k: usize,
    movie_ids: &[S],
) -> Result<PredictionSet> {
    check_k(k, tag_vocab)?;
    let top: Vec<String> = tags_by_frequency(train, tag_vocab).into_iter().take(k).map(|(t, _)| t).collect();
    PredictionSet::from_lists(k, movie_ids.iter().map(|id| (id.as_ref(), top.clone())))
}

/// Predicts `k` distinct uniformly random tags per movie, seeded.
pub fn baseline_random<S: AsRef<str>>(
    tag_vocab: &TagVocabulary,
    movie_ids: &[S],
    k: usize,
    seed: u64,
) -> Result<PredictionSet> {
    check_k(k, tag_vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PredictionSet::from_lists(
        k,
        movie_ids.iter().map(|id| {
            let tags: Vec<&str> = sample(&mut rng, tag_vocab.len(), k).into_iter().map(|t| tag_vocab.tag(t)).collect();
            (id.as_ref(), tags)
        }),
    )
}

fn check_k(k: usize, tag_vocab: &TagVocabulary) -> Result<()> {
    if k == 0 || k > tag_vocab.len() {
        return Err(Error::Validation(format!("k = {k} must lie in 1..={}", tag_vocab.len())));
    }
    Ok(())
}

/// Micro-F1 of the random baseline in expectation: each truth tag is hit
/// with probability `k / n_tags`, so the expected hits follow from the
/// truth-set sizes alone.
pub fn expected_random_f1<S: AsRef<str>>(truths: &Truths, movie_ids: &[S], n_tags: usize, k: usize) -> Result<f64> {
    let mut truth_total = 0usize;
    for id in movie_ids {
        truth_total += truth_of(truths, id.as_ref())?.len();
    }
    let hits = truth_total as f64 * k as f64 / n_tags as f64;
    let p = hits / (movie_ids.len() * k) as f64;
    let r = hits / truth_total as f64;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Signed change of one tag's recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallDelta {
    pub tag: String,
    pub delta: f64,
}

/// Per-tag `recall(a) - recall(b)`, sorted by magnitude, largest first;
/// equal magnitudes keep vocabulary order.
pub fn recall_delta(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<RecallDelta>> {
    if a.tags != b.tags {
        return Err(Error::Validation("reports use different tag vocabularies".into()));
    }
    if a.k != b.k {
        return Err(Error::Validation(format!("reports use different k ({} vs {})", a.k, b.k)));
    }
    let mut out: Vec<RecallDelta> = a
        .tags
        .iter()
        .zip(a.per_tag_recall.iter().zip(&b.per_tag_recall))
        .map(|(tag, (ra, rb))| RecallDelta { tag: tag.clone(), delta: ra - rb })
        .collect();
    out.sort_by(|x, y| y.delta.abs().total_cmp(&x.delta.abs()));
    Ok(out)
}

/// Whether `tag` occurs in `text` ignoring case, bounded on both sides by a
/// non-alphanumeric character or the end of the text.
pub fn contains_tag(text: &str, tag: &str) -> bool {
    let text = text.to_lowercase();
    let tag = tag.to_lowercase();
    if tag.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric();
    text.match_indices(&tag).any(|(i, _)| {
        let before = text[..i].chars().next_back().is_none_or(|c| !is_word(c));
        let after = text[i + tag.len()..].chars().next().is_none_or(|c| !is_word(c));
        before && after
    })
}

/// Fraction of predicted tag instances found verbatim in their movie's synopsis.
pub fn tag_in_text_rate(preds: &PredictionSet, synopses: &HashMap<String, String>) -> Result<f64> {
    let mut found = 0usize;
    let mut total = 0usize;
    for m in preds.movies() {
        let text = synopses
            .get(&m.movie_id)
            .ok_or_else(|| Error::Validation(format!("no synopsis for movie {}", m.movie_id)))?;
        total += m.tags.len();
        found += m.tags.iter().filter(|t| contains_tag(text, t)).count();
    }
    Ok(ratio(found, total))
}

/// Overlap bands: `>= 80%`, `[40%, 80%)`, `[20%, 40%)`, `< 20%`.
pub const OVERLAP_BANDS: [&str; 4] = [">=80%", "40-80%", "20-40%", "<20%"];

fn band(shared: usize, k: usize) -> usize {
    // Integer comparisons keep the band edges exact.
    let pct = shared * 100;
    if pct >= 80 * k {
        0
    } else if pct >= 40 * k {
        1
    } else if pct >= 20 * k {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieOverlap {
    pub movie_id: String,
    pub shared: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    pub movies: Vec<MovieOverlap>,
    /// Movie counts per entry of [`OVERLAP_BANDS`].
    pub band_counts: [usize; 4],
}

impl OverlapReport {
    pub fn band_fractions(&self) -> [f64; 4] {
        self.band_counts.map(|c| ratio(c, self.movies.len()))
    }
}

/// Per-movie `|a ∩ b| / k` and its banded histogram. Both sets must cover
/// the same movies with the same `k`.
pub fn prediction_overlap(a: &PredictionSet, b: &PredictionSet) -> Result<OverlapReport> {
    if a.k() != b.k() {
        return Err(Error::Validation(format!("prediction sets use different k ({} vs {})", a.k(), b.k())));
    }
    if a.len() != b.len() {
        return Err(Error::Validation(format!("prediction sets cover {} and {} movies", a.len(), b.len())));
    }
    let index: HashMap<&str, &MoviePrediction> = b.movies().iter().map(|m| (m.movie_id.as_str(), m)).collect();
    let k = a.k();
    let mut band_counts = [0usize; 4];
    let mut movies = Vec::with_capacity(a.len());
    for m in a.movies() {
        let other = index
            .get(m.movie_id.as_str())
            .ok_or_else(|| Error::Validation(format!("movie {} missing from the second prediction set", m.movie_id)))?;
        let shared = m.tags.iter().filter(|t| other.tags.contains(t)).count();
        band_counts[band(shared, k)] += 1;
        movies.push(MovieOverlap { movie_id: m.movie_id.clone(), shared, fraction: ratio(shared, k) });
    }
    Ok(OverlapReport { k, movies, band_counts })
}

#[cfg(test)]
mod tests;

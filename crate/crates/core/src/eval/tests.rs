use super::*;
use crate::corpus::Split;
use proptest::prelude::*;

fn truths(items: &[(&str, &[&str])]) -> Truths {
    items.iter().map(|(id, tags)| (id.to_string(), tags.iter().map(|t| t.to_string()).collect())).collect()
}

fn preds(k: usize, items: &[(&str, &[&str])]) -> PredictionSet {
    PredictionSet::from_lists(k, items.iter().map(|(id, tags)| (*id, tags.to_vec()))).unwrap()
}

fn vocab(tags: &[&str]) -> TagVocabulary {
    TagVocabulary::from_tags(tags.iter().map(|t| t.to_string()).collect())
}

fn record(id: &str, tags: &[&str]) -> SynopsisRecord {
    SynopsisRecord {
        movie_id: id.into(),
        title: String::new(),
        synopsis: String::new(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        split: Split::Train,
        source: "test".into(),
    }
}

#[test]
fn micro_f1_pools_counts_across_movies() {
    let p = preds(3, &[("m1", &["a", "b", "c"]), ("m2", &["a", "e", "f"])]);
    let t = truths(&[("m1", &["a", "d"]), ("m2", &["e"])]);
    let c = pooled_counts(&p, &t).unwrap();
    assert_eq!(c, Counts { tp: 2, fp: 4, fn_: 1 });
    assert!((micro_f1(&p, &t).unwrap() - 4.0 / 9.0).abs() < 1e-15);
}

#[test]
fn micro_f1_perfect_and_disjoint() {
    let t = truths(&[("m1", &["a", "b"]), ("m2", &["c", "d"])]);
    assert_eq!(micro_f1(&preds(2, &[("m1", &["b", "a"]), ("m2", &["c", "d"])]), &t).unwrap(), 1.0);
    assert_eq!(micro_f1(&preds(2, &[("m1", &["c", "d"]), ("m2", &["a", "b"])]), &t).unwrap(), 0.0);
}

#[test]
fn missing_truth_is_an_error() {
    let t = truths(&[("m1", &["a"])]);
    let p = preds(1, &[("m1", &["a"]), ("m9", &["a"])]);
    assert!(matches!(micro_f1(&p, &t), Err(Error::Validation(_))));
    assert!(matches!(tag_recall(&p, &t, &vocab(&["a"])), Err(Error::Validation(_))));
}

#[test]
fn tag_recall_examples() {
    let t = truths(&[("m1", &["A", "B"]), ("m2", &["A"])]);
    let p = preds(1, &[("m1", &["A"]), ("m2", &["B"])]);
    let (tr, per_tag) = tag_recall(&p, &t, &vocab(&["A", "B"])).unwrap();
    assert_eq!(per_tag, vec![0.5, 0.0]);
    assert_eq!(tr, 0.25);

    let p = preds(2, &[("m1", &["A", "B"]), ("m2", &["A", "X"])]);
    let t = truths(&[("m1", &["A", "B"]), ("m2", &["A"]), ("m3", &["B"])]);
    let p3 = PredictionSet::from_lists(
        2,
        p.movies()
            .iter()
            .map(|m| (m.movie_id.clone(), m.tags.clone()))
            .chain([("m3".to_string(), vec!["Y".to_string(), "Z".to_string()])]),
    )
    .unwrap();
    // A: 2 of 2 recalled, B: 1 of 2 recalled.
    let (tr, _) = tag_recall(&p3, &t, &vocab(&["A", "B"])).unwrap();
    assert_eq!(tr, 0.75);
    let (tr, per_tag) = tag_recall(&p3, &t, &vocab(&["A", "B", "C", "D"])).unwrap();
    assert_eq!(tr, 0.375);
    assert_eq!(per_tag, vec![1.0, 0.5, 0.0, 0.0]);
}

#[test]
fn tag_recall_rejects_unknown_truth_tags() {
    let t = truths(&[("m1", &["A", "Q"])]);
    let p = preds(1, &[("m1", &["A"])]);
    assert!(tag_recall(&p, &t, &vocab(&["A"])).is_err());
}

#[test]
fn tags_learned_counts_the_union() {
    let p = preds(2, &[("m1", &["a", "b"]), ("m2", &["b", "c"]), ("m3", &["a", "b"])]);
    assert_eq!(tags_learned(&p), 3);
    assert_eq!(tags_learned(&preds(1, &[])), 0);
}

#[test]
fn prediction_set_validation() {
    assert!(PredictionSet::from_lists(2, [("m1", vec!["a"])]).is_err());
    assert!(PredictionSet::from_lists(2, [("m1", vec!["a", "a"])]).is_err());
    assert!(PredictionSet::from_lists(1, [("m1", vec!["a"]), ("m1", vec!["b"])]).is_err());
    let p = preds(3, &[("m1", &["a", "b", "c"])]);
    assert_eq!(p.truncate(2).unwrap().movies()[0].tags, vec!["a", "b"]);
    assert!(p.truncate(4).is_err());
}

#[test]
fn most_frequent_baseline_breaks_ties_by_name() {
    let train = [
        record("1", &["drama", "murder", "comedy"]),
        record("2", &["murder", "comedy"]),
        record("3", &["cult", "violence"]),
        record("4", &["violence"]),
    ];
    let tags = TagVocabulary::from_records(&train);
    let ranked = tags_by_frequency(&train, &tags);
    assert_eq!(
        ranked.iter().map(|(t, c)| (t.as_str(), *c)).collect::<Vec<_>>(),
        [("comedy", 2), ("murder", 2), ("violence", 2), ("cult", 1), ("drama", 1)]
    );
    let p = baseline_most_frequent(&train, &tags, 4, &["x", "y"]).unwrap();
    assert_eq!(p.movies()[1].tags, ["comedy", "murder", "violence", "cult"]);
    assert_eq!(tags_learned(&p), 4);
    assert!(baseline_most_frequent(&train, &tags, 6, &["x"]).is_err());
}

#[test]
fn random_baseline_is_seeded_and_exhaustive_at_full_k() {
    let tags = vocab(&["a", "b", "c", "d", "e"]);
    let ids: Vec<String> = (0..30).map(|i| format!("m{i}")).collect();
    let a = baseline_random(&tags, &ids, 2, 7).unwrap();
    assert_eq!(a, baseline_random(&tags, &ids, 2, 7).unwrap());
    assert_ne!(a, baseline_random(&tags, &ids, 2, 8).unwrap());
    let all = baseline_random(&tags, &ids, 5, 1).unwrap();
    for m in all.movies() {
        let set: BTreeSet<&String> = m.tags.iter().collect();
        assert_eq!(set.len(), 5);
    }
}

#[test]
fn random_baseline_matches_its_expectation() {
    let records = crate::synthetic::tag_set_stand_in(400, 3);
    let tags = TagVocabulary::from_records(&records);
    let t = truths_from_records(&records);
    let ids: Vec<&str> = records.iter().map(|r| r.movie_id.as_str()).collect();
    for k in [3, 5, 10] {
        let mean =
            (0..40).map(|seed| micro_f1(&baseline_random(&tags, &ids, k, seed).unwrap(), &t).unwrap()).sum::<f64>()
                / 40.0;
        let expected = expected_random_f1(&t, &ids, tags.len(), k).unwrap();
        assert!((mean - expected).abs() < 0.005, "k={k}: {mean} vs {expected}");
    }
}

#[test]
fn expected_random_f1_closed_form() {
    // Three truth tags per movie, 71 tags, k = 3: P = R = 3/71.
    let t = truths(&[("m1", &["a", "b", "c"]), ("m2", &["a", "b", "d"])]);
    let f = expected_random_f1(&t, &["m1", "m2"], 71, 3).unwrap();
    assert!((f - 3.0 / 71.0).abs() < 1e-15);
}

fn report(tags: &[&str], recalls: &[f64], k: usize) -> MetricsReport {
    MetricsReport {
        k,
        n_movies: 1,
        tags_learned: 0,
        micro_f1: 0.0,
        tag_recall: 0.0,
        tags: tags.iter().map(|t| t.to_string()).collect(),
        per_tag_recall: recalls.to_vec(),
        metadata: BTreeMap::new(),
    }
}

#[test]
fn recall_delta_examples() {
    let a = report(&["x", "y", "z"], &[0.5, 0.25, 0.75], 3);
    let b = report(&["x", "y", "z"], &[0.25, 0.75, 0.5], 3);
    let d = recall_delta(&a, &b).unwrap();
    let got: Vec<(&str, f64)> = d.iter().map(|d| (d.tag.as_str(), d.delta)).collect();
    assert_eq!(got, [("y", -0.5), ("x", 0.25), ("z", 0.25)]);
    assert!(recall_delta(&a, &a).unwrap().iter().all(|d| d.delta == 0.0));
    assert!(recall_delta(&a, &report(&["x", "y", "w"], &[0.0; 3], 3)).is_err());
    assert!(recall_delta(&a, &report(&["x", "y", "z"], &[0.0; 3], 5)).is_err());
}

#[test]
fn tag_matching_respects_word_boundaries() {
    assert!(!contains_tag("The murdered man", "murder"));
    assert!(contains_tag("A Murder, then another.", "murder"));
    assert!(contains_tag("it is a good versus evil tale", "good versus evil"));
    assert!(contains_tag("sci-fi", "sci-fi"));
    assert!(!contains_tag("prosci-fi", "sci-fi"));
    assert!(contains_tag("murder", "MURDER"));
    assert!(!contains_tag("anything", ""));
}

#[test]
fn tag_in_text_rate_counts_instances() {
    let p = preds(2, &[("m1", &["murder", "comedy"]), ("m2", &["romance", "cult"])]);
    let synopses: HashMap<String, String> =
        [("m1".to_string(), "A murder in the town.".to_string()), ("m2".to_string(), "Romantic".to_string())].into();
    assert_eq!(tag_in_text_rate(&p, &synopses).unwrap(), 0.25);
    let missing: HashMap<String, String> = HashMap::new();
    assert!(tag_in_text_rate(&p, &missing).is_err());
}

#[test]
fn overlap_examples() {
    let a = preds(5, &[("m", &["1", "2", "3", "4", "5"])]);
    let b = preds(5, &[("m", &["1", "2", "3", "8", "9"])]);
    let o = prediction_overlap(&a, &b).unwrap();
    assert_eq!(o.movies[0].fraction, 0.6);
    assert_eq!(o.band_counts, [0, 1, 0, 0]);
    assert_eq!(prediction_overlap(&a, &a).unwrap().band_fractions(), [1.0, 0.0, 0.0, 0.0]);
    let c = preds(5, &[("m", &["6", "7", "8", "9", "10"])]);
    assert_eq!(prediction_overlap(&a, &c).unwrap().band_counts, [0, 0, 0, 1]);
    assert!(prediction_overlap(&a, &preds(5, &[("n", &["1", "2", "3", "4", "5"])])).is_err());
    assert!(prediction_overlap(&a, &a.truncate(3).unwrap()).is_err());
}

#[test]
fn band_edges_are_exact() {
    // 4 of 5 is exactly 80%; 2 of 5 is exactly 40%; 1 of 5 is exactly 20%.
    assert_eq!(band(4, 5), 0);
    assert_eq!(band(3, 5), 1);
    assert_eq!(band(2, 5), 1);
    assert_eq!(band(1, 5), 2);
    assert_eq!(band(0, 5), 3);
    assert_eq!(band(2, 10), 2);
    assert_eq!(band(1, 10), 3);
}

#[test]
fn tsv_round_trip() {
    let mut p = preds(2, &[("m1", &["a", "b"]), ("m2", &["c", "a"])]);
    let mut buf = Vec::new();
    p.write_tsv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().next(), Some("movie_id\trank\ttag\tprobability"));
    assert_eq!(PredictionSet::read_tsv(&buf[..]).unwrap(), p);

    p = PredictionSet::new(
        2,
        vec![MoviePrediction {
            movie_id: "m1".into(),
            tags: vec!["a".into(), "b".into()],
            probabilities: Some(vec![0.625, 0.125]),
        }],
    )
    .unwrap();
    let mut buf = Vec::new();
    p.write_tsv(&mut buf).unwrap();
    assert_eq!(PredictionSet::read_tsv(&buf[..]).unwrap(), p);

    let bad = "movie_id\trank\ttag\tprobability\nm1\t2\ta\t\n";
    assert!(PredictionSet::read_tsv(bad.as_bytes()).is_err());
}

#[test]
fn report_json_round_trip() {
    let p = preds(1, &[("m1", &["a"])]);
    let t = truths(&[("m1", &["a", "b"])]);
    let r = MetricsReport::compute(&p, &t, &vocab(&["a", "b"])).unwrap().with_metadata("variant", "cnn_fe");
    assert_eq!(MetricsReport::from_json(&r.to_json()).unwrap(), r);
    assert_eq!(r.to_string(), "top-1: TL 1 F1 66.67 TR 50.00 (1 movies)");
}

/// Brute-force pooled counts by scanning the full (movie, tag) grid.
fn grid_f1(p: &PredictionSet, t: &Truths, universe: &[String]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for m in p.movies() {
        for tag in universe {
            match (m.tags.contains(tag), t[&m.movie_id].contains(tag)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// (n_tags, [(truth, ranked predictions)] per movie).
type ToyInstance = (usize, Vec<(Vec<usize>, Vec<usize>)>);

fn toy_instance() -> impl Strategy<Value = ToyInstance> {
    (1usize..=10, 1usize..=10).prop_flat_map(|(n_tags, n_movies)| {
        (1..=n_tags).prop_flat_map(move |k| {
            let movie = (
                proptest::sample::subsequence((0..n_tags).collect::<Vec<_>>(), k).prop_shuffle(),
                proptest::sample::subsequence((0..n_tags).collect::<Vec<_>>(), 0..=n_tags),
            );
            (Just(n_tags), proptest::collection::vec(movie, n_movies))
        })
    })
}

fn build(n_tags: usize, movies: &[(Vec<usize>, Vec<usize>)]) -> (PredictionSet, Truths, TagVocabulary) {
    let name = |t: &usize| format!("t{t}");
    let k = movies[0].0.len();
    let p = PredictionSet::from_lists(
        k,
        movies.iter().enumerate().map(|(i, (pred, _))| (format!("m{i}"), pred.iter().map(name).collect())),
    )
    .unwrap();
    let t =
        movies.iter().enumerate().map(|(i, (_, truth))| (format!("m{i}"), truth.iter().map(name).collect())).collect();
    (p, t, TagVocabulary::from_tags((0..n_tags).map(|t| name(&t)).collect()))
}

proptest! {
    #[test]
    fn metrics_match_grid_oracle((n_tags, movies) in toy_instance()) {
        let (p, t, v) = build(n_tags, &movies);
        prop_assert!((micro_f1(&p, &t).unwrap() - grid_f1(&p, &t, v.tags())).abs() <= 1e-12);
        let union: BTreeSet<&usize> = movies.iter().flat_map(|(pred, _)| pred).collect();
        prop_assert_eq!(tags_learned(&p), union.len());
    }

    #[test]
    fn micro_f1_ignores_movie_order((n_tags, mut movies) in toy_instance()) {
        let (p, t, _) = build(n_tags, &movies);
        let f = micro_f1(&p, &t).unwrap();
        movies.reverse();
        // Relabelled ids keep each movie paired with its own truth.
        let (q, u, _) = build(n_tags, &movies);
        prop_assert!((micro_f1(&q, &u).unwrap() - f).abs() <= 1e-12);
    }

    #[test]
    fn tag_recall_ignores_rank_order((n_tags, mut movies) in toy_instance()) {
        let (p, t, v) = build(n_tags, &movies);
        let before = tag_recall(&p, &t, &v).unwrap();
        for (pred, _) in &mut movies {
            pred.reverse();
        }
        let (q, _, _) = build(n_tags, &movies);
        prop_assert_eq!(tag_recall(&q, &t, &v).unwrap(), before);
    }
}

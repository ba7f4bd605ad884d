//! Acceptance criteria, one printed line each.
//!
//! Criteria that need the full MPST corpus read it from `MPST_CORPUS`. Without
//! it they report BLOCKED and run a stand-in check of the same machinery; a
//! BLOCKED line is not a pass. Any FAIL makes the target exit non-zero.

use std::collections::{BTreeSet, HashMap};
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use plottag::corpus::{
    load_corpus, tokenize, CorpusFormat, Split, Stopwords, SynopsisRecord, TagVocabulary, Vocabulary,
};
use plottag::emotion::{emotion_flow, segment_words, EmotionFlow, EmotionLexicon, DEFAULT_SEGMENTS, DIMENSIONS};
use plottag::eval::{
    baseline_most_frequent, baseline_random, expected_random_f1, micro_f1, tag_recall, tags_learned,
    truths_from_records, PredictionSet, Truths,
};
use plottag::gradcheck::{GradCheck, GradCheckReport};
use plottag::model::{encode_examples, load_checkpoint, predict_top_k, save_checkpoint, Model, ModelConfig, Variant};
use plottag::nn::{compute_class_weights, Activation, Attention, BiLstm, Bound, ConvBank, Dense, LstmCell, ParamSet};
use plottag::synthetic::{separable_corpus, separable_lexicon, tag_name, tag_set_stand_in, SeparableSpec};
use plottag::tensor::{Array, Graph, Var, KL_EPS};
use plottag::train::{evaluate_loss, train, TrainConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

type Criterion = (&'static str, fn() -> Outcome);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn mpst() -> Option<Vec<SynopsisRecord>> {
    let path = std::env::var_os("MPST_CORPUS")?;
    Some(load_corpus(PathBuf::from(path), CorpusFormat::MpstCsv).expect("MPST_CORPUS must point to a readable corpus"))
}

fn split(records: Vec<SynopsisRecord>) -> (Vec<SynopsisRecord>, Vec<SynopsisRecord>) {
    records.into_iter().partition(|r| r.split == Split::Train)
}

fn ids(records: &[SynopsisRecord]) -> Vec<String> {
    records.iter().map(|r| r.movie_id.clone()).collect()
}

/// Stand-in with the corpus's training and test sizes and 71 tags.
fn stand_in() -> (Vec<SynopsisRecord>, Vec<SynopsisRecord>) {
    let mut test = tag_set_stand_in(2966, 2);
    for r in &mut test {
        r.movie_id = format!("test-{}", r.movie_id);
        r.split = Split::Test;
    }
    (tag_set_stand_in(11_862, 1), test)
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

// ---- 1: most-frequent baseline ---------------------------------------------

fn criterion_1() -> Outcome {
    let Some(records) = mpst() else {
        let (train, test) = stand_in();
        let tags = TagVocabulary::from_records(&train);
        let truths = truths_from_records(&test);
        let mut notes = Vec::new();
        let mut ok = true;
        for k in [3, 5, 10] {
            let p = baseline_most_frequent(&train, &tags, k, &ids(&test)).unwrap();
            let (tr, _) = tag_recall(&p, &truths, &tags).unwrap();
            // Every movie receives the same k tags, so each has recall 1.
            ok &= tags_learned(&p) == k && (tr - k as f64 / 71.0).abs() < 1e-12;
            notes.push(format!("k={k} TR {:.2}", pct(tr)));
        }
        let detail = format!("MPST_CORPUS not set; stand-in check TL=k, TR=k/71: {}", notes.join(", "));
        return if ok { Blocked(detail) } else { Fail(detail) };
    };
    let (train, test) = split(records);
    let tags = TagVocabulary::from_records(&train);
    let truths = truths_from_records(&test);
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, f1_ref, tr_ref) in [(3, 29.7, 4.23), (5, 28.4, 14.08), (10, 28.4, 13.73)] {
        let p = baseline_most_frequent(&train, &tags, k, &ids(&test)).unwrap();
        let f1 = pct(micro_f1(&p, &truths).unwrap());
        let tr = pct(tag_recall(&p, &truths, &tags).unwrap().0);
        let good = (f1 - f1_ref).abs() <= 1.0 && (tr - tr_ref).abs() <= 1.0;
        ok &= good;
        notes.push(format!(
            "k={k} F1 {f1:.2} (ref {f1_ref}) TR {tr:.2} (ref {tr_ref}){}",
            if good { "" } else { " OUT" }
        ));
    }
    verdict(ok, notes.join("; "))
}

// ---- 2: random baseline ------------------------------------------------------

fn random_baseline_check(train: &[SynopsisRecord], test: &[SynopsisRecord], refs: Option<[f64; 3]>) -> (bool, String) {
    let tags = TagVocabulary::from_records(train);
    let truths = truths_from_records(test);
    let movie_ids = ids(test);
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, k) in [3usize, 5, 10].into_iter().enumerate() {
        let mut full = 0;
        let mut f1_sum = 0.0;
        for seed in 0..20 {
            let p = baseline_random(&tags, &movie_ids, k, seed).unwrap();
            full += usize::from(tags_learned(&p) == tags.len());
            f1_sum += micro_f1(&p, &truths).unwrap();
        }
        let mean = pct(f1_sum / 20.0);
        let expected = pct(expected_random_f1(&truths, &movie_ids, tags.len(), k).unwrap());
        let target = refs.map_or(expected, |r| r[i]);
        let good = full >= 19 && (mean - target).abs() <= 1.0;
        ok &= good;
        notes.push(format!(
            "k={k} TL=71 in {full}/20, mean F1 {mean:.2} (target {target:.2}, analytic {expected:.2}){}",
            if good { "" } else { " OUT" }
        ));
    }
    (ok, notes.join("; "))
}

fn criterion_2() -> Outcome {
    match mpst() {
        Some(records) => {
            let (train, test) = split(records);
            let (ok, detail) = random_baseline_check(&train, &test, Some([4.2, 6.4, 6.6]));
            verdict(ok, detail)
        }
        None => {
            let (train, test) = stand_in();
            let (ok, detail) = random_baseline_check(&train, &test, None);
            let detail = format!("MPST_CORPUS not set; stand-in against the analytic expectation: {detail}");
            if ok {
                Blocked(detail)
            } else {
                Fail(detail)
            }
        }
    }
}

// ---- 3: gradient checks ------------------------------------------------------

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array<f64> {
    let n = shape.iter().product();
    Array::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn probe(g: &Graph<f64>, x: Var, r: &Array<f64>) -> Var {
    g.sum(g.mul(x, g.constant(r.clone())))
}

/// Checks a layer with respect to its input (`v[0]`) and every parameter
/// of `params` (`v[1..]`, in parameter order).
fn check_layer(
    params: &ParamSet<f64>,
    input: Array<f64>,
    check: &GradCheck,
    forward: impl Fn(&Graph<f64>, &Bound, Var) -> Var,
) -> GradCheckReport {
    let mut inputs = vec![input];
    inputs.extend(params.arrays().map(|(_, a)| a.clone()));
    check.run(&inputs, |g, v| forward(g, &Bound::from_vars(v[1..].to_vec()), v[0]))
}

fn criterion_3() -> Outcome {
    let strict = GradCheck::with_tolerance(1e-5, 1e-4, 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut results: Vec<(&str, GradCheckReport)> = Vec::new();

    let mut p = ParamSet::new();
    let bank = ConvBank::new(&mut p, "conv", &[2, 3, 4, 5], 6, 8, &mut rng);
    for &b in &bank.biases {
        let v = random(&mut rng, &[6], 0.1);
        p.set(b, v);
    }
    let x = random(&mut rng, &[12, 8], 1.0);
    let r = random(&mut rng, &[1, 24], 1.0);
    results.push(("conv bank", check_layer(&p, x, &strict, |g, b, x| probe(g, bank.forward(g, b, x, 0), &r))));

    let mut p = ParamSet::new();
    let cell = LstmCell::new(&mut p, "cell", 10, 16, &mut rng);
    let x = random(&mut rng, &[6, 10], 2.0);
    let r = random(&mut rng, &[6, 16], 1.0);
    results.push((
        "lstm cell",
        check_layer(&p, x, &strict, |g, b, x| {
            let steps: Vec<Var> = (0..6).map(|t| g.slice_rows(x, t..t + 1)).collect();
            probe(g, g.concat_rows(&cell.run(g, b, &steps)), &r)
        }),
    ));

    let mut p = ParamSet::new();
    let bi = BiLstm::new(&mut p, "bilstm", 10, 16, &mut rng);
    let x = random(&mut rng, &[5, 10], 2.0);
    let (r1, r2) = (random(&mut rng, &[5, 32], 1.0), random(&mut rng, &[1, 32], 1.0));
    results.push((
        "bidirectional lstm",
        check_layer(&p, x, &strict, |g, b, x| {
            let out = bi.forward(g, b, x);
            g.add(probe(g, out.states, &r1), probe(g, out.last, &r2))
        }),
    ));

    let mut p = ParamSet::new();
    let att = Attention::new(&mut p, "att", 32, 32, &mut rng);
    let v = random(&mut rng, &[32], 0.5);
    p.set(att.b_a, v);
    let x = random(&mut rng, &[8, 32], 1.0);
    let (r1, r2) = (random(&mut rng, &[1, 32], 1.0), random(&mut rng, &[1, 8], 1.0));
    results.push((
        "attention",
        check_layer(&p, x, &strict, |g, b, x| {
            let out = att.forward(g, b, x);
            g.add(probe(g, out.context, &r1), probe(g, out.weights, &r2))
        }),
    ));

    let mut p = ParamSet::new();
    let d1 = Dense::new(&mut p, "d1", 20, 12, Activation::Relu, &mut rng);
    let d2 = Dense::new(&mut p, "d2", 12, 8, Activation::Identity, &mut rng);
    let (b1, b2) = (random(&mut rng, &[12], 0.1), random(&mut rng, &[8], 0.1));
    p.set(d1.b, b1);
    p.set(d2.b, b2);
    let x = random(&mut rng, &[1, 20], 1.0);
    let r = random(&mut rng, &[1, 8], 1.0);
    results.push(("dense", check_layer(&p, x, &strict, |g, b, x| probe(g, d2.forward(g, b, d1.forward(g, b, x)), &r))));

    let logits = random(&mut rng, &[1, 71], 3.0);
    let mut target = vec![0.0; 71];
    for t in [4, 30, 65] {
        target[t] = 1.0 / 3.0;
    }
    let weights: Vec<f64> = (0..71).map(|t| 0.5 + t as f64 / 20.0).collect();
    let empty = ParamSet::new();
    results.push((
        "softmax+kl",
        check_layer(&empty, logits.clone(), &strict, |g, _, x| g.kl_div(&target, g.softmax(x), None, KL_EPS)),
    ));
    results.push((
        "softmax+weighted kl",
        check_layer(&empty, logits, &strict, |g, _, x| g.kl_div(&target, g.softmax(x), Some(&weights), KL_EPS)),
    ));

    let config = ModelConfig {
        variant: Variant::CnnFe,
        vocab_size: 30,
        seq_len: 40,
        embed_dim: 6,
        filters_per_size: 4,
        n_segments: 4,
        dense_sizes: vec![12, 8],
        seed: 301,
        ..ModelConfig::default()
    };
    let model = Model::<f64>::build(config).unwrap();
    let tokens: Vec<u32> = (0..40).map(|i| if i < 9 { 0 } else { rng.gen_range(1..32) }).collect();
    let rows: Vec<[f64; 10]> = (0..4).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..60.0))).collect();
    let flow = EmotionFlow::from_rows(rows);
    let inputs: Vec<Array<f64>> = model.params().arrays().map(|(_, a)| a.clone()).collect();
    let end_to_end = GradCheck { max_entries: Some(25), seed: 302, ..GradCheck::with_tolerance(1e-5, 1e-3, 1e-7) };
    results.push((
        "end-to-end (rtol 1e-3)",
        end_to_end.run(&inputs, |g, v| {
            let probs = model.forward_graph(g, &Bound::from_vars(v.to_vec()), &tokens, Some(&flow), None).unwrap();
            g.kl_div(&target, probs, None, KL_EPS)
        }),
    ));

    let failed: Vec<&str> = results.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
    let checked: usize = results.iter().map(|(_, r)| r.checked).sum();
    let worst_abs = results.iter().map(|(_, r)| r.max_abs_err).fold(0.0, f64::max);
    let worst_rel = results.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    let detail = format!(
        "{} checks, {checked} entries, max abs error {worst_abs:.1e}, max rel error above atol {worst_rel:.1e}{}",
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    verdict(failed.is_empty(), detail)
}

// ---- 4: metric oracle --------------------------------------------------------

struct Toy {
    n_tags: usize,
    preds: Vec<Vec<usize>>,
    truths: Vec<BTreeSet<usize>>,
}

fn toy(rng: &mut ChaCha8Rng) -> Toy {
    let n_tags = rng.gen_range(1..=10);
    let n_movies = rng.gen_range(1..=10);
    let k = rng.gen_range(1..=n_tags);
    Toy {
        n_tags,
        preds: (0..n_movies).map(|_| sample(rng, n_tags, k).into_vec()).collect(),
        truths: (0..n_movies).map(|_| (0..n_tags).filter(|_| rng.gen_bool(0.3)).collect()).collect(),
    }
}

/// Pooled F1, mean per-tag recall and predicted-tag count by direct counting.
fn brute_force(t: &Toy) -> (f64, f64, usize) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, truth) in t.preds.iter().zip(&t.truths) {
        for tag in 0..t.n_tags {
            let (in_p, in_t) = (p.contains(&tag), truth.contains(&tag));
            tp += usize::from(in_p && in_t);
            fp += usize::from(in_p && !in_t);
            fn_ += usize::from(!in_p && in_t);
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    let mut recall_sum = 0.0;
    for tag in 0..t.n_tags {
        let relevant = t.truths.iter().filter(|s| s.contains(&tag)).count();
        let hit = t.preds.iter().zip(&t.truths).filter(|(p, s)| s.contains(&tag) && p.contains(&tag)).count();
        if relevant > 0 {
            recall_sum += hit as f64 / relevant as f64;
        }
    }
    let learned = (0..t.n_tags).filter(|tag| t.preds.iter().any(|p| p.contains(tag))).count();
    (f1, recall_sum / t.n_tags as f64, learned)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let t = toy(&mut rng);
        let name = |i: &usize| format!("t{i}");
        let vocab = TagVocabulary::from_tags((0..t.n_tags).map(|i| name(&i)).collect());
        let k = t.preds[0].len();
        let preds = PredictionSet::from_lists(
            k,
            t.preds.iter().enumerate().map(|(m, p)| (format!("m{m}"), p.iter().map(name).collect())),
        )
        .unwrap();
        let truths: Truths =
            t.truths.iter().enumerate().map(|(m, s)| (format!("m{m}"), s.iter().map(name).collect())).collect();
        let (f1, tr, tl) = brute_force(&t);
        let df1 = (micro_f1(&preds, &truths).unwrap() - f1).abs();
        let dtr = (tag_recall(&preds, &truths, &vocab).unwrap().0 - tr).abs();
        worst = worst.max(df1).max(dtr);
        if df1 > 1e-12 || dtr > 1e-12 || tags_learned(&preds) != tl {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 toy instances, {mismatches} mismatches, max deviation {worst:.1e}"))
}

// ---- 5: emotion flow ---------------------------------------------------------

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn criterion_5() -> Outcome {
    let lexicon = EmotionLexicon::load(core_fixture("emotion_lexicon.txt")).unwrap();
    let text = std::fs::read_to_string(core_fixture("emotion_synopsis.txt")).unwrap();
    let golden = std::fs::read_to_string(core_fixture("emotion_flow_golden.csv")).unwrap();
    let golden_ok = emotion_flow(&text, &lexicon, DEFAULT_SEGMENTS).to_csv() == golden;

    let words = ["love", "hope", "murder", "grief", "storm", "gift", "calm", "town", "river", "the", "a"];
    let seps = [" ", " ", ", ", ". ", "! ", "\n"];
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..120);
        let text: String = (0..n)
            .map(|_| format!("{}{}", words[rng.gen_range(0..words.len())], seps[rng.gen_range(0..seps.len())]))
            .collect();
        let tokens = tokenize(&text);
        let segments = segment_words(&tokens, DEFAULT_SEGMENTS);
        let lens: Vec<usize> = segments.iter().map(|s| s.len()).collect();
        let partition = segments.len() == DEFAULT_SEGMENTS
            && segments.concat() == tokens
            && lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1;
        let flow = emotion_flow(&text, &lexicon, DEFAULT_SEGMENTS);
        let shape = flow.n_segments() == DEFAULT_SEGMENTS && flow.rows().iter().all(|r| r.len() == DIMENSIONS.len());
        let bounded = flow.flat().iter().all(|v| (0.0..=100.0).contains(v));
        violations += usize::from(!(partition && shape && bounded));
    }
    verdict(
        golden_ok && violations == 0,
        format!(
            "golden CSV {}; 1000 random texts, {violations} property violations",
            if golden_ok { "byte-identical" } else { "DIFFERS" }
        ),
    )
}

// ---- 6: overfit smoke test ---------------------------------------------------

fn criterion_6() -> Outcome {
    let records = separable_corpus(&SeparableSpec::default());
    let stopwords = Stopwords::english();
    let vocab = Vocabulary::build(&records, &stopwords, 5000);
    let tags = TagVocabulary::from_tags((0..71).map(tag_name).collect());
    let config = ModelConfig {
        variant: Variant::CnnFe,
        vocab_size: vocab.len(),
        seq_len: 256,
        filters_per_size: 64,
        ..ModelConfig::default()
    };
    let examples = encode_examples(&records, &vocab, &tags, &stopwords, Some(&separable_lexicon()), &config).unwrap();
    let model = Model::<f32>::build(config).unwrap();
    // The training set doubles as the monitored set, so the recorded
    // validation loss is the training KL in evaluation mode.
    let train_config =
        TrainConfig { batch_size: 10, max_epochs: 200, patience: 199, lr: 1e-3, seed: 1, use_class_weights: false };
    let (model, history) = train(model, &examples, &examples, &train_config, None, |r| {
        if r.val_loss < 0.05 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let kl = evaluate_loss(&model, &examples).unwrap();
    let covered = examples
        .iter()
        .filter(|e| {
            let top: BTreeSet<usize> = predict_top_k(&model.predict_example(e).unwrap(), 3).into_iter().collect();
            e.target.as_slice().iter().enumerate().all(|(t, &p)| p == 0.0 || top.contains(&t))
        })
        .count();
    let coverage = covered as f64 / examples.len() as f64;
    verdict(
        kl < 0.05 && coverage >= 0.9,
        format!(
            "{} examples, KL {kl:.4} after {} epochs (best epoch {}), top-3 covers all true tags for {:.0}%",
            examples.len(),
            history.epochs.len(),
            history.best_epoch,
            pct(coverage)
        ),
    )
}

// ---- 7: class weights ---------------------------------------------------------

fn class_weight_identity(train: &[SynopsisRecord], n_docs: usize) -> (bool, String) {
    let tags = TagVocabulary::from_records(train);
    let cw = compute_class_weights(train, &tags).unwrap();
    // Independent recount of M_t.
    let mut recount: HashMap<&str, usize> = HashMap::new();
    for r in train {
        for t in &r.tags {
            *recount.entry(t.as_str()).or_default() += 1;
        }
    }
    let n_tags = cw.n_tags();
    let exact = (0..n_tags)
        .filter(|&t| {
            let m = cw.tag_counts[t];
            // CW_t = n_docs / (n_tags * m) as an exact fraction.
            let (num, den) = (cw.n_docs, n_tags * m);
            recount[tags.tag(t)] == m && (num * 71 * m).is_multiple_of(den) && num * 71 * m / den == n_docs
        })
        .count();
    let rounded =
        (0..n_tags).filter(|&t| (cw.weight(t) * 71.0 * cw.tag_counts[t] as f64).round() as usize == n_docs).count();
    let ok = n_tags == 71 && cw.n_docs == n_docs && exact == 71 && rounded == 71;
    (
        ok,
        format!(
            "|D| = {}, {n_tags} tags, CW_t * 71 * M_t = {n_docs} exactly for {exact}/71, float weights agree for {rounded}/71",
            cw.n_docs
        ),
    )
}

fn criterion_7() -> Outcome {
    match mpst() {
        Some(records) => {
            let (train, _) = split(records);
            let (ok, detail) = class_weight_identity(&train, 11_862);
            verdict(ok, detail)
        }
        None => {
            let (train, _) = stand_in();
            let (ok, detail) = class_weight_identity(&train, 11_862);
            let detail = format!("MPST_CORPUS not set; stand-in of the same size: {detail}");
            if ok {
                Blocked(detail)
            } else {
                Fail(detail)
            }
        }
    }
}

// ---- 8: full-scale run ---------------------------------------------------------

fn criterion_8() -> Outcome {
    Blocked("optional multi-hour full-scale run; not part of the automated suite (see README)".into())
}

// ---- 9: checkpoint round trip ------------------------------------------------

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let mut identical = 0;
    let mut total = 0;
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let config = ModelConfig {
            variant,
            vocab_size: 40,
            seq_len: 48,
            embed_dim: 12,
            filters_per_size: 8,
            dense_sizes: vec![24, 16],
            seed: 910 + i as u64,
            ..ModelConfig::default()
        };
        let model = Model::<f32>::build(config).unwrap();
        let vocab = Vocabulary::from_words((0..40).map(|w| format!("w{w}")).collect());
        let tags = TagVocabulary::from_tags((0..71).map(tag_name).collect());
        let path = dir.path().join(format!("{variant}.ptag"));
        save_checkpoint(&model, &vocab, &tags, None, &path).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        for _ in 0..25 {
            let len = rng.gen_range(0..=48);
            let tokens: Vec<u32> = (0..48).map(|p| if p < 48 - len { 0 } else { rng.gen_range(1..42) }).collect();
            let flow = variant.uses_emotion_flow().then(|| {
                EmotionFlow::from_rows((0..20).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..100.0))).collect())
            });
            let a = model.predict(&tokens, flow.as_ref()).unwrap();
            let b = loaded.model.predict(&tokens, flow.as_ref()).unwrap();
            total += 1;
            identical += usize::from(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
    verdict(identical == total, format!("{identical}/{total} random inputs bit-identical across 4 variants"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("most-frequent baseline reproduction", criterion_1),
        ("random baseline", criterion_2),
        ("gradient verification", criterion_3),
        ("metric oracle equivalence", criterion_4),
        ("emotion-flow golden and properties", criterion_5),
        ("overfit smoke test", criterion_6),
        ("class-weight exactness", criterion_7),
        ("full-scale reproduction", criterion_8),
        ("checkpoint round trip", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!("acceptance criteria");
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Blocked(d) => ("BLOCKED", d),
        };
        println!("criterion {id} {tag:<7} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

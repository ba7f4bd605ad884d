use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use plottag::corpus::{
    load_corpus, preprocess, validation_split, CorpusFormat, Split, Stopwords, SynopsisRecord, TagVocabulary,
    Vocabulary,
};
use plottag::emotion::{self, EmotionLexicon};
use plottag::eval::{
    baseline_most_frequent, baseline_random, expected_random_f1, prediction_overlap, recall_delta, tags_learned,
    truths_from_records, MetricsReport, MoviePrediction, PredictionSet, Truths, OVERLAP_BANDS,
};
use plottag::model::{encode_examples, load_checkpoint, predict_top_k, save_checkpoint, Checkpoint, Model};
use plottag::nn::compute_class_weights;
use plottag::train::train as fit;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use toml::Value;

use crate::config::{resolve, variant_flag, RunConfig, Sources, RESOLVED_CONFIG};
use crate::{
    BaselinesArgs, CompareArgs, EmotionFlowArgs, EvaluateArgs, Failure, PredictArgs, SplitArg, Stage, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ptag";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const COMMAND_FILE: &str = "command.toml";

fn output<'a>(path: &'a Path, what: &'a str) -> impl Fn(std::io::Error) -> Failure + 'a {
    move |e| Failure::Runtime(format!("writing {what} {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(output(path, "file"))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(output(path, "directory"))
}

/// Records the arguments of a command next to its artifacts.
fn write_command(path: &Path, name: &str, args: &impl Serialize) -> Result<(), Failure> {
    let mut table = toml::Table::new();
    table.insert("command".into(), Value::String(name.into()));
    table.insert(
        "args".into(),
        Value::try_from(args).map_err(|e| Failure::Runtime(format!("serializing arguments: {e}")))?,
    );
    write_file(path, toml::to_string_pretty(&table).expect("table serializes"))
}

/// `foo/preds.tsv` becomes `foo/preds.tsv.command.toml`.
fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".");
    name.push(COMMAND_FILE);
    PathBuf::from(name)
}

fn corpus_format(s: &str) -> Result<CorpusFormat, Failure> {
    s.parse().map_err(|e: plottag::Error| Failure::Config(e.to_string()))
}

fn read_corpus(path: &Path, format: &str) -> Result<Vec<SynopsisRecord>, Failure> {
    let format = corpus_format(format)?;
    let records = load_corpus(path, format).stage("loading corpus")?;
    log::info!("loaded {} records from {}", records.len(), path.display());
    Ok(records)
}

fn select(records: Vec<SynopsisRecord>, split: SplitArg) -> Vec<SynopsisRecord> {
    records
        .into_iter()
        .filter(|r| match split {
            SplitArg::All => true,
            SplitArg::Train => r.split == Split::Train,
            SplitArg::Test => r.split == Split::Test,
        })
        .collect()
}

fn stopwords(path: Option<&Path>) -> Result<Stopwords, Failure> {
    match path {
        Some(p) => Stopwords::load(p).stage("loading stopwords"),
        None => Ok(Stopwords::english()),
    }
}

fn lexicon(path: Option<&Path>) -> Result<Option<EmotionLexicon>, Failure> {
    path.map(|p| EmotionLexicon::load(p).stage("loading lexicon")).transpose()
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut flags = Vec::new();
    let path_flag = |key: &str, p: &PathBuf| (key.to_string(), Value::String(p.to_string_lossy().into_owned()));
    if let Some(p) = &args.corpus {
        flags.push(path_flag("corpus", p));
    }
    if let Some(p) = &args.lexicon {
        flags.push(path_flag("lexicon", p));
    }
    if let Some(p) = &args.out {
        flags.push(path_flag("out", p));
    }
    if let Some(v) = args.variant {
        flags.push(variant_flag(v));
    }
    if let Some(seed) = args.seed {
        let seed = i64::try_from(seed).map_err(|_| Failure::Config(format!("seed {seed} too large")))?;
        flags.push(("model.seed".into(), Value::Integer(seed)));
        flags.push(("train.seed".into(), Value::Integer(seed)));
    }
    let mut config = resolve(&Sources { file: args.config.clone(), overrides: args.overrides.clone(), flags })?;
    config.validate()?;
    run_training(&mut config)
}

fn run_training(config: &mut RunConfig) -> Result<(), Failure> {
    let variant = config.model.variant;
    let records = read_corpus(config.corpus.as_deref().expect("validated"), &config.corpus_format)?;
    let lexicon = if variant.uses_emotion_flow() { lexicon(config.lexicon.as_deref())? } else { None };
    let stopwords = stopwords(config.stopwords.as_deref())?;

    let train_records: Vec<SynopsisRecord> = select(records, SplitArg::Train);
    if train_records.len() < 2 {
        return Err(Failure::Data(format!("{} training records; need at least 2", train_records.len())));
    }
    let (fit_records, val_records) = validation_split(&train_records, config.val_fraction, config.train.seed);
    if val_records.is_empty() {
        return Err(Failure::Data("validation split is empty; raise val_fraction".into()));
    }
    let vocab = Vocabulary::build(&fit_records, &stopwords, config.model.vocab_size);
    let tags = TagVocabulary::from_records(&train_records);
    config.model.vocab_size = vocab.len();
    config.model.n_tags = tags.len();
    config.model.validate().stage("model configuration")?;
    log::info!(
        "{} train / {} validation records, {} words, {} tags, variant {variant}",
        fit_records.len(),
        val_records.len(),
        vocab.len(),
        tags.len()
    );

    let out = config.out.clone();
    create_dir(&out)?;
    write_file(&out.join(RESOLVED_CONFIG), config.to_toml())?;

    let class_weights = if config.train.use_class_weights {
        Some(compute_class_weights(&fit_records, &tags).stage("class weights")?)
    } else {
        None
    };
    let mut model = Model::<f32>::build(config.model.clone()).stage("building model")?;
    if variant.uses_pretrained_embeddings() {
        let path = config.embeddings.as_deref().expect("validated");
        let coverage = model.load_pretrained(path, &vocab).stage("loading embeddings")?;
        log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * coverage.ratio());
    }
    let fit_set = encode_examples(&fit_records, &vocab, &tags, &stopwords, lexicon.as_ref(), &config.model)
        .stage("encoding training records")?;
    let val_set = encode_examples(&val_records, &vocab, &tags, &stopwords, lexicon.as_ref(), &config.model)
        .stage("encoding validation records")?;

    let history_path = out.join(HISTORY_FILE);
    let mut log_file = BufWriter::new(File::create(&history_path).map_err(output(&history_path, "run log"))?);
    let mut log_error = None;
    let (model, history) = fit(model, &fit_set, &val_set, &config.train, class_weights.as_ref(), |r| {
        let line = serde_json::to_string(r).expect("record serializes");
        match writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                log_error = Some(e);
                ControlFlow::Break(())
            }
        }
    })
    .stage("training")?;
    if let Some(e) = log_error {
        return Err(output(&history_path, "run log")(e));
    }
    log::info!(
        "best epoch {} of {} with validation loss {:.6}",
        history.best_epoch,
        history.epochs.len(),
        history.best_val_loss()
    );

    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &vocab, &tags, class_weights.as_ref(), &ckpt)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&out.join("vocabulary.txt"), lines(vocab.words()))?;
    write_file(&out.join("tags.txt"), lines(tags.tags()))?;
    if let Some(cw) = &class_weights {
        write_file(&out.join("class_weights.json"), serde_json::to_string_pretty(cw).expect("weights serialize"))?;
    }
    log::info!("wrote {}", ckpt.display());
    Ok(())
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn open_checkpoint(path: &Path, expected: Option<plottag::model::Variant>) -> Result<Checkpoint, Failure> {
    let ckpt = load_checkpoint::<f32>(path).stage("loading checkpoint")?;
    if let Some(v) = expected {
        ckpt.require_variant(v).stage("checking variant")?;
    }
    Ok(ckpt)
}

/// Top-`k` predictions with probabilities for `(movie_id, synopsis)` pairs.
fn predict_texts(
    ckpt: &Checkpoint,
    texts: &[(String, String)],
    lexicon_path: Option<&Path>,
    stopwords_path: Option<&Path>,
    k: usize,
) -> Result<PredictionSet, Failure> {
    let config = ckpt.model.config();
    if k == 0 || k > ckpt.tags.len() {
        return Err(Failure::Config(format!("k = {k} must lie in 1..={}", ckpt.tags.len())));
    }
    let lexicon = if config.variant.uses_emotion_flow() {
        if lexicon_path.is_none() {
            return Err(Failure::Config(format!("variant {} needs --lexicon", config.variant)));
        }
        lexicon(lexicon_path)?
    } else {
        None
    };
    let stopwords = stopwords(stopwords_path)?;
    let movies: Vec<MoviePrediction> = texts
        .par_iter()
        .map(|(id, text)| {
            let tokens = ckpt.vocabulary.encode(&preprocess(text, &stopwords), config.seq_len);
            let flow = lexicon.as_ref().map(|lex| emotion::emotion_flow(text, lex, config.n_segments));
            let probs = ckpt.model.predict(&tokens, flow.as_ref()).stage("predicting")?;
            let top = predict_top_k(&probs, k);
            Ok(MoviePrediction {
                movie_id: id.clone(),
                tags: top.iter().map(|&t| ckpt.tags.tag(t).to_string()).collect(),
                probabilities: Some(top.iter().map(|&t| f64::from(probs[t])).collect()),
            })
        })
        .collect::<Result<_, Failure>>()?;
    PredictionSet::new(k, movies).stage("collecting predictions")
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let ckpt = open_checkpoint(&args.checkpoint, args.variant)?;
    let texts: Vec<(String, String)> = if let Some(text) = &args.source.text {
        vec![("text".into(), text.clone())]
    } else if let Some(path) = &args.source.input {
        let content =
            fs::read_to_string(path).map_err(|e| Failure::Data(format!("reading {}: {e}", path.display())))?;
        content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| (format!("line{}", i + 1), l.to_string()))
            .collect()
    } else {
        let path = args.source.corpus.as_deref().expect("clap enforces one source");
        select(read_corpus(path, &args.corpus_format)?, args.split)
            .into_iter()
            .map(|r| (r.movie_id, r.synopsis))
            .collect()
    };
    let preds = predict_texts(&ckpt, &texts, args.lexicon.as_deref(), args.stopwords.as_deref(), args.k)?;
    match &args.out {
        Some(path) => {
            let file = File::create(path).map_err(output(path, "predictions"))?;
            preds.write_tsv(BufWriter::new(file)).map_err(|e| Failure::Runtime(e.to_string()))?;
            write_command(&sidecar(path), "predict", &args)?;
        }
        None => preds.write_tsv(std::io::stdout().lock()).map_err(|e| Failure::Runtime(e.to_string()))?,
    }
    Ok(())
}

/// Truths restricted to tags the scorer knows about.
fn known_truths(records: &[SynopsisRecord], tags: &TagVocabulary) -> Truths {
    let mut dropped = 0usize;
    let truths = truths_from_records(records)
        .into_iter()
        .map(|(id, set)| {
            let before = set.len();
            let kept: std::collections::BTreeSet<String> =
                set.into_iter().filter(|t| tags.index_of(t).is_some()).collect();
            dropped += before - kept.len();
            (id, kept)
        })
        .collect();
    if dropped > 0 {
        log::warn!("ignored {dropped} truth tag instances outside the tag vocabulary");
    }
    truths
}

fn check_ks(ks: &[usize]) -> Result<Vec<usize>, Failure> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Failure::Config("--k needs positive values".into()));
    }
    Ok(ks)
}

fn report_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("metrics_k{k}.json"))
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let ks = check_ks(&args.k)?;
    let max_k = *ks.last().unwrap();
    let records = select(read_corpus(&args.corpus, &args.corpus_format)?, args.split);
    if records.is_empty() {
        return Err(Failure::Data("no records in the selected split".into()));
    }
    let (preds, tags, source) = match (&args.checkpoint, &args.predictions) {
        (Some(path), _) => {
            let ckpt = open_checkpoint(path, args.variant)?;
            let texts: Vec<(String, String)> =
                records.iter().map(|r| (r.movie_id.clone(), r.synopsis.clone())).collect();
            let preds = predict_texts(&ckpt, &texts, args.lexicon.as_deref(), args.stopwords.as_deref(), max_k)?;
            let variant = ckpt.model.variant().to_string();
            (preds, ckpt.tags, variant)
        }
        (None, Some(path)) => {
            let file = File::open(path).map_err(|e| Failure::Data(format!("reading {}: {e}", path.display())))?;
            let preds = PredictionSet::read_tsv(file).stage("reading predictions")?;
            if preds.k() < max_k {
                return Err(Failure::Config(format!("predictions hold top-{}, asked for k={max_k}", preds.k())));
            }
            (preds, TagVocabulary::from_records(&records), path.display().to_string())
        }
        (None, None) => unreachable!("clap requires one of --checkpoint and --predictions"),
    };
    let truths = known_truths(&records, &tags);
    create_dir(&args.out)?;
    for &k in &ks {
        let top = preds.truncate(k).stage("selecting predictions")?;
        let report = MetricsReport::compute(&top, &truths, &tags)
            .stage("scoring")?
            .with_metadata("source", &source)
            .with_metadata("corpus", args.corpus.display());
        println!("{report}");
        write_file(&report_path(&args.out, k), report.to_json())?;
    }
    let pred_path = args.out.join("predictions.tsv");
    let file = File::create(&pred_path).map_err(output(&pred_path, "predictions"))?;
    preds.write_tsv(BufWriter::new(file)).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_command(&args.out.join(COMMAND_FILE), "evaluate", &args)
}

#[derive(Serialize)]
struct RandomSummary {
    k: usize,
    seeds: Vec<u64>,
    micro_f1: Vec<f64>,
    tag_recall: Vec<f64>,
    tags_learned: Vec<usize>,
    mean_micro_f1: f64,
    mean_tag_recall: f64,
    expected_micro_f1: f64,
}

pub fn baselines(args: BaselinesArgs) -> Result<(), Failure> {
    let ks = check_ks(&args.k)?;
    if args.seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".into()));
    }
    let records = read_corpus(&args.corpus, &args.corpus_format)?;
    let (train, test): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split == Split::Train);
    if train.is_empty() || test.is_empty() {
        return Err(Failure::Data(format!("{} train and {} test records; need both", train.len(), test.len())));
    }
    let tags = TagVocabulary::from_records(&train);
    let truths = known_truths(&test, &tags);
    let ids: Vec<&str> = test.iter().map(|r| r.movie_id.as_str()).collect();
    let mf_dir = args.out.join("most_frequent");
    create_dir(&mf_dir)?;
    let mut random = Vec::new();
    for &k in &ks {
        let preds = baseline_most_frequent(&train, &tags, k, &ids).stage("most-frequent baseline")?;
        let report =
            MetricsReport::compute(&preds, &truths, &tags).stage("scoring")?.with_metadata("baseline", "most_frequent");
        println!("most frequent {report}");
        write_file(&report_path(&mf_dir, k), report.to_json())?;

        let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
        let mut runs = Vec::new();
        for &seed in &seeds {
            let preds = baseline_random(&tags, &ids, k, seed).stage("random baseline")?;
            runs.push(MetricsReport::compute(&preds, &truths, &tags).stage("scoring")?);
        }
        let n = runs.len() as f64;
        let summary = RandomSummary {
            k,
            micro_f1: runs.iter().map(|r| r.micro_f1).collect(),
            tag_recall: runs.iter().map(|r| r.tag_recall).collect(),
            tags_learned: runs.iter().map(|r| r.tags_learned).collect(),
            mean_micro_f1: runs.iter().map(|r| r.micro_f1).sum::<f64>() / n,
            mean_tag_recall: runs.iter().map(|r| r.tag_recall).sum::<f64>() / n,
            expected_micro_f1: expected_random_f1(&truths, &ids, tags.len(), k).stage("expected F1")?,
            seeds,
        };
        println!(
            "random top-{k}: mean F1 {:.2} (expected {:.2}) mean TR {:.2} over {} seeds",
            100.0 * summary.mean_micro_f1,
            100.0 * summary.expected_micro_f1,
            100.0 * summary.mean_tag_recall,
            summary.seeds.len()
        );
        random.push(summary);
    }
    write_file(&args.out.join("random.json"), serde_json::to_string_pretty(&random).expect("summary serializes"))?;
    write_command(&args.out.join(COMMAND_FILE), "baselines", &args)
}

fn read_predictions(path: &Path) -> Result<PredictionSet, Failure> {
    let file = File::open(path).map_err(|e| Failure::Data(format!("reading {}: {e}", path.display())))?;
    PredictionSet::read_tsv(file).stage(&format!("reading {}", path.display()))
}

pub fn compare(args: CompareArgs) -> Result<(), Failure> {
    let a = read_predictions(&args.preds_a)?;
    let b = read_predictions(&args.preds_b)?;
    let overlap = prediction_overlap(&a, &b).stage("comparing predictions")?;
    let bands: serde_json::Map<String, serde_json::Value> =
        OVERLAP_BANDS.iter().zip(overlap.band_fractions()).map(|(name, f)| (name.to_string(), json!(f))).collect();
    let mut doc = json!({
        "k": overlap.k,
        "movies": overlap.movies.len(),
        "tags_learned": [tags_learned(&a), tags_learned(&b)],
        "band_counts": overlap.band_counts,
        "band_fractions": bands,
        "overlap": overlap.movies,
    });
    for (name, f) in OVERLAP_BANDS.iter().zip(overlap.band_fractions()) {
        eprintln!("{name:>7}: {:.1}%", 100.0 * f);
    }
    if let Some(path) = &args.corpus {
        let records = read_corpus(path, &args.corpus_format)?;
        let tags = TagVocabulary::from_records(&records);
        let truths = known_truths(&records, &tags);
        let ra = MetricsReport::compute(&a, &truths, &tags).stage("scoring first predictions")?;
        let rb = MetricsReport::compute(&b, &truths, &tags).stage("scoring second predictions")?;
        doc["recall_delta"] = json!(recall_delta(&ra, &rb).stage("recall deltas")?);
    }
    let text = serde_json::to_string_pretty(&doc).expect("comparison serializes");
    match &args.out {
        Some(path) => {
            write_file(path, text + "\n")?;
            write_command(&sidecar(path), "compare", &args)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

pub fn emotion_flow(args: EmotionFlowArgs) -> Result<(), Failure> {
    if args.segments == 0 {
        return Err(Failure::Config("--segments must be positive".into()));
    }
    let lex = EmotionLexicon::load(&args.lexicon).stage("loading lexicon")?;
    let text = match (&args.text, &args.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => fs::read_to_string(p).map_err(|e| Failure::Data(format!("reading {}: {e}", p.display())))?,
        (None, None) => unreachable!("clap requires --text or --input"),
    };
    let csv = emotion::emotion_flow(&text, &lex, args.segments).to_csv();
    match &args.out {
        Some(path) => {
            write_file(path, csv)?;
            write_command(&sidecar(path), "emotion-flow", &args)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

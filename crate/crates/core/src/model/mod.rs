//! The four tag-prediction variants, prediction and persistence.
//!
//! Every variant encodes the synopsis with an embedding table and a
//! convolution bank. The emotion variants also run a Bi-LSTM with attention
//! over the emotion flow and feed `[cnn | attention context | final state]`
//! to the dense stack. Outputs are softmax probabilities over the tag set.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    make_target, preprocess, Stopwords, SynopsisRecord, TagVocabulary, TargetDistribution, Vocabulary, PAD,
};
use crate::emotion::{emotion_flow, EmotionFlow, EmotionLexicon, N_DIMENSIONS};
use crate::error::{Error, Result};
use crate::nn::{Activation, Attention, BiLstm, Bound, ConvBank, Dense, Embedding, ParamSet};
use crate::tensor::{Array, Graph, Scalar, Var};

mod checkpoint;
mod pretrained;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use pretrained::{load_pretrained_embeddings, Coverage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cnn,
    CnnCw,
    CnnFe,
    CnnFePretrained,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cnn, Variant::CnnCw, Variant::CnnFe, Variant::CnnFePretrained];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::CnnCw => "cnn_cw",
            Variant::CnnFe => "cnn_fe",
            Variant::CnnFePretrained => "cnn_fe_pretrained",
        }
    }

    pub fn uses_emotion_flow(self) -> bool {
        matches!(self, Variant::CnnFe | Variant::CnnFePretrained)
    }

    /// Whether training weights the loss per tag unless told otherwise.
    pub fn default_class_weights(self) -> bool {
        !matches!(self, Variant::Cnn)
    }

    pub fn uses_pretrained_embeddings(self) -> bool {
        matches!(self, Variant::CnnFePretrained)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s.trim().to_lowercase().replace('-', "_")).ok_or_else(|| {
            Error::Validation(format!("unknown variant {s:?}; expected one of cnn, cnn_cw, cnn_fe, cnn_fe_pretrained"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Content words; the embedding table has `vocab_size + 2` rows.
    pub vocab_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub n_segments: usize,
    pub lstm_units: usize,
    pub attention_dim: usize,
    pub dense_sizes: Vec<usize>,
    pub n_tags: usize,
    pub dropout: f64,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::CnnFe,
            vocab_size: 5000,
            seq_len: 1500,
            embed_dim: 300,
            filter_sizes: vec![2, 3, 4, 5],
            filters_per_size: 1024,
            n_segments: 20,
            lstm_units: 16,
            attention_dim: 32,
            dense_sizes: vec![500, 200],
            n_tags: 71,
            dropout: 0.4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            return fail(format!("filter sizes must be non-empty and positive, got {:?}", self.filter_sizes));
        }
        let widest = *self.filter_sizes.iter().max().unwrap();
        if self.seq_len < widest {
            return fail(format!("seq_len {} is shorter than the widest filter {widest}", self.seq_len));
        }
        for (name, v) in
            [("embed_dim", self.embed_dim), ("filters_per_size", self.filters_per_size), ("n_tags", self.n_tags)]
        {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.variant.uses_emotion_flow() {
            for (name, v) in [
                ("n_segments", self.n_segments),
                ("lstm_units", self.lstm_units),
                ("attention_dim", self.attention_dim),
            ] {
                if v == 0 {
                    return fail(format!("{name} must be positive for variant {}", self.variant));
                }
            }
        }
        if self.dense_sizes.contains(&0) {
            return fail(format!("dense sizes must be positive, got {:?}", self.dense_sizes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn table_rows(&self) -> usize {
        self.vocab_size + 2
    }

    /// Width of the vector entering the first dense layer.
    pub fn feature_width(&self) -> usize {
        let cnn = self.filters_per_size * self.filter_sizes.len();
        if self.variant.uses_emotion_flow() {
            cnn + 4 * self.lstm_units
        } else {
            cnn
        }
    }
}

#[derive(Debug, Clone)]
struct EmotionBranch {
    bilstm: BiLstm,
    attention: Attention,
}

/// Emotion percentages enter the recurrent branch as fractions.
const FLOW_SCALE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Model<F: Scalar = f32> {
    config: ModelConfig,
    params: ParamSet<F>,
    embedding: Embedding,
    conv: ConvBank,
    emotion: Option<EmotionBranch>,
    hidden: Vec<Dense>,
    output: Dense,
}

/// One movie ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub movie_id: String,
    pub tokens: Vec<u32>,
    pub flow: Option<EmotionFlow>,
    pub target: TargetDistribution,
}

impl<F: Scalar> Model<F> {
    /// Initializes every parameter from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let embedding = Embedding::new(&mut params, "embedding", config.table_rows(), config.embed_dim, &mut rng);
        let conv = ConvBank::new(
            &mut params,
            "conv",
            &config.filter_sizes,
            config.filters_per_size,
            config.embed_dim,
            &mut rng,
        );
        let emotion = config.variant.uses_emotion_flow().then(|| {
            let bilstm = BiLstm::new(&mut params, "bilstm", N_DIMENSIONS, config.lstm_units, &mut rng);
            let attention =
                Attention::new(&mut params, "attention", bilstm.output_width(), config.attention_dim, &mut rng);
            EmotionBranch { bilstm, attention }
        });
        let mut width = config.feature_width();
        let mut hidden = Vec::new();
        for (i, &size) in config.dense_sizes.iter().enumerate() {
            hidden.push(Dense::new(&mut params, &format!("dense{i}"), width, size, Activation::Relu, &mut rng));
            width = size;
        }
        let output = Dense::new(&mut params, "output", width, config.n_tags, Activation::Identity, &mut rng);
        Ok(Self { config, params, embedding, conv, emotion, hidden, output })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn output_layer(&self) -> &Dense {
        &self.output
    }

    /// Replaces embedding rows of vocabulary words found in a vector file.
    pub fn load_pretrained(&mut self, path: impl AsRef<std::path::Path>, vocab: &Vocabulary) -> Result<Coverage> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary has {} words, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        let table = self.embedding.table;
        load_pretrained_embeddings(path, vocab, self.params.get_mut(table))
    }

    /// Checks the input contract shared by every forward entry point.
    pub fn check_input(&self, tokens: &[u32], flow: Option<&EmotionFlow>) -> Result<()> {
        let widest = self.conv.max_width();
        if tokens.len() < widest {
            return Err(Error::Input(format!("{} tokens, fewer than the widest filter ({widest})", tokens.len())));
        }
        let rows = self.config.table_rows();
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= rows) {
            return Err(Error::Input(format!("token index {t} outside an embedding table of {rows} rows")));
        }
        match (self.config.variant.uses_emotion_flow(), flow) {
            (true, None) => Err(Error::Input(format!("variant {} needs an emotion flow", self.config.variant))),
            (false, Some(_)) => Err(Error::Input(format!("variant {} takes no emotion flow", self.config.variant))),
            (true, Some(f)) if f.n_segments() != self.config.n_segments => Err(Error::Input(format!(
                "emotion flow has {} segments, expected {}",
                f.n_segments(),
                self.config.n_segments
            ))),
            _ => Ok(()),
        }
    }

    /// Records the forward pass on `g` and returns the `[1, n_tags]`
    /// probabilities. Dropout is applied only when `dropout_rng` is given.
    pub fn forward_graph(
        &self,
        g: &Graph<F>,
        bound: &Bound,
        tokens: &[u32],
        flow: Option<&EmotionFlow>,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_input(tokens, flow)?;
        let embedded = self.embedding.forward(g, bound, tokens);
        // The zero-prefix shortcut needs an exactly zero padding row.
        let pad_row_zero = g.value(bound.var(self.embedding.table)).row(PAD as usize).iter().all(|v| v.is_zero());
        let leading_pad = if pad_row_zero { tokens.iter().take_while(|&&t| t == PAD).count() } else { 0 };
        let mut features = self.conv.forward(g, bound, embedded, leading_pad);
        if let (Some(branch), Some(flow)) = (&self.emotion, flow) {
            let scaled: Vec<f64> = flow.flat().iter().map(|v| v * FLOW_SCALE).collect();
            let seq = g.constant(Array::from_f64(&[flow.n_segments(), N_DIMENSIONS], &scaled));
            let states = branch.bilstm.forward(g, bound, seq);
            let attended = branch.attention.forward(g, bound, states.states);
            features = g.concat(&[features, attended.context, states.last]);
        }
        let mut rng = dropout_rng;
        let mut x = features;
        for layer in &self.hidden {
            x = layer.forward(g, bound, x);
            if let Some(rng) = rng.as_deref_mut() {
                x = g.dropout(x, self.config.dropout, rng);
            }
        }
        let logits = self.output.forward(g, bound, x);
        Ok(g.softmax(logits))
    }

    /// Evaluation-mode probabilities.
    pub fn predict(&self, tokens: &[u32], flow: Option<&EmotionFlow>) -> Result<Vec<F>> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let probs = self.forward_graph(&g, &bound, tokens, flow, None)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Probabilities with dropout active, drawn from `rng`.
    pub fn predict_train_mode(
        &self,
        tokens: &[u32],
        flow: Option<&EmotionFlow>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<F>> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false);
        let probs = self.forward_graph(&g, &bound, tokens, flow, Some(rng))?;
        Ok(g.value(probs).data().to_vec())
    }

    pub fn predict_example(&self, example: &EncodedExample) -> Result<Vec<F>> {
        self.predict(&example.tokens, example.flow.as_ref())
    }

    /// Converts to another precision, keeping every parameter value.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        let mut params = ParamSet::new();
        for (name, a) in self.params.arrays() {
            params.add(name, a.cast());
        }
        Model {
            config: self.config.clone(),
            params,
            embedding: self.embedding.clone(),
            conv: self.conv.clone(),
            emotion: self.emotion.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
        }
    }
}

/// Indices of the `k` largest probabilities, descending, ties by lower index.
pub fn predict_top_k<F: Scalar>(probs: &[F], k: usize) -> Vec<usize> {
    assert!(k <= probs.len(), "k = {k} exceeds {} tags", probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].as_f64().total_cmp(&probs[a].as_f64()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Tokenizes, encodes and attaches flows and targets. Flows are computed only
/// when `lexicon` is given.
pub fn encode_examples(
    records: &[SynopsisRecord],
    vocab: &Vocabulary,
    tag_vocab: &TagVocabulary,
    stopwords: &Stopwords,
    lexicon: Option<&EmotionLexicon>,
    config: &ModelConfig,
) -> Result<Vec<EncodedExample>> {
    records
        .iter()
        .map(|r| {
            let tokens = vocab.encode(&preprocess(&r.synopsis, stopwords), config.seq_len);
            let flow = lexicon.map(|lex| emotion_flow(&r.synopsis, lex, config.n_segments));
            let target = make_target(&r.tags, tag_vocab)?;
            Ok(EncodedExample { movie_id: r.movie_id.clone(), tokens, flow, target })
        })
        .collect()
}

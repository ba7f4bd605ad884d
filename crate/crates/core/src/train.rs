//! Mini-batch RMSprop training with validation early stopping.
//!
//! Each example gets its own graph. Examples of a batch run in parallel in
//! groups of the worker count, and their gradients are summed in example
//! order, so a run is bitwise reproducible for a fixed seed regardless of
//! scheduling. Dropout draws from a stream keyed by `(epoch, example index)`.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedExample, Model};
use crate::nn::ClassWeights;
use crate::tensor::{Array, Graph, RmspropState, Scalar, KL_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, max_epochs: 100, patience: 5, lr: 1e-4, seed: 0, use_class_weights: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Validation("max_epochs must be at least 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Validation(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    /// `(train_loss, val_loss)` per epoch, without timings.
    pub fn losses(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|e| serde_json::to_string(e).expect("epoch records serialize") + "\n").collect()
    }
}

fn dropout_rng(seed: u64, epoch: usize, example: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | example as u64);
    rng
}

/// Loss and gradients of one example, scaled by `scale`.
fn example_gradients<F: Scalar>(
    model: &Model<F>,
    example: &EncodedExample,
    weights: Option<&[F]>,
    scale: F,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Array<F>>)> {
    let g = Graph::new();
    let bound = model.params().bind(&g, true);
    let probs = model.forward_graph(&g, &bound, &example.tokens, example.flow.as_ref(), Some(rng))?;
    let target: Vec<F> = example.target.0.iter().map(|&p| F::from_f64_lossy(p)).collect();
    let loss = g.kl_div(&target, probs, weights, F::from_f64_lossy(KL_EPS));
    let value = g.value(loss).data()[0].as_f64();
    let scaled = g.scale(loss, scale);
    let mut grads = g.backward(scaled);
    let mut grads = model.params().collect_grads(&bound, &mut grads);
    model.embedding().mask_padding_grad(&mut grads);
    Ok((value, grads))
}

/// Mean loss and summed gradients of a batch; the sum runs in batch order.
fn batch_gradients<F: Scalar>(
    model: &Model<F>,
    examples: &[EncodedExample],
    batch: &[usize],
    epoch: usize,
    seed: u64,
    weights: Option<&[F]>,
) -> Result<(f64, Vec<Array<F>>)> {
    let scale = F::from_f64_lossy(1.0 / batch.len() as f64);
    let group = rayon::current_num_threads().max(1);
    let mut total: Option<Vec<Array<F>>> = None;
    let mut loss_sum = 0.0;
    for chunk in batch.chunks(group) {
        let results: Vec<Result<(f64, Vec<Array<F>>)>> = chunk
            .par_iter()
            .map(|&i| {
                let mut rng = dropout_rng(seed, epoch, i);
                example_gradients(model, &examples[i], weights, scale, &mut rng)
            })
            .collect();
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
    }
    Ok((loss_sum / batch.len() as f64, total.expect("non-empty batch")))
}

/// Trains `model` and returns the parameters of the epoch with the lowest
/// validation loss. `on_epoch` sees every record as soon as it is complete
/// and may end training early by returning `ControlFlow::Break`.
///
/// Training stops once `max(patience, 1)` consecutive epochs fail to lower
/// the validation loss, or after `max_epochs`.
pub fn train<F: Scalar>(
    model: Model<F>,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    config: &TrainConfig,
    class_weights: Option<&ClassWeights>,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<(Model<F>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let weights: Option<Vec<F>> = if config.use_class_weights {
        let cw = class_weights
            .ok_or_else(|| Error::Validation("class weighting is enabled but no class weights were given".into()))?;
        if cw.n_tags() != model.config().n_tags {
            return Err(Error::Validation(format!("{} class weights for {} tags", cw.n_tags(), model.config().n_tags)));
        }
        Some(cw.weights().into_iter().map(F::from_f64_lossy).collect())
    } else {
        None
    };

    let mut model = model;
    let shapes = model.params().shapes();
    let mut optimizer = RmspropState::new(config.lr, shapes.iter().map(Vec::as_slice));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best_params = model.params().clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = batch_gradients(&model, train_set, batch, epoch, config.seed, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            model.params_mut().apply(&mut optimizer, &grads)?;
            loss_total += loss * batch.len() as f64;
        }
        let val_loss = evaluate_loss(&model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_total / train_set.len() as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train {:.6} val {:.6} ({:.1}s)", record.train_loss, record.val_loss, record.seconds);
        let flow = on_epoch(&record);
        history.epochs.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params().clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.max(1) {
                break;
            }
        }
        if flow.is_break() {
            break;
        }
    }
    if history.best_epoch == 0 {
        // Every validation loss was NaN.
        return Err(Error::NonFiniteLoss { epoch: history.epochs.len(), batch: 0 });
    }
    *model.params_mut() = best_params;
    Ok((model, history))
}

/// Mean unweighted KL divergence over `examples` in evaluation mode.
pub fn evaluate_loss<F: Scalar>(model: &Model<F>, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty set".into()));
    }
    let losses: Vec<Result<f64>> = examples
        .par_iter()
        .map(|ex| {
            let probs = model.predict_example(ex)?;
            Ok(kl_unchecked(&ex.target.0, &probs))
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// `Σ p ln(p / max(q, KL_EPS))` without distribution validation.
fn kl_unchecked<F: Scalar>(target: &[f64], pred: &[F]) -> f64 {
    target.iter().zip(pred).filter(|(&p, _)| p > 0.0).map(|(&p, &q)| p * (p.ln() - q.as_f64().max(KL_EPS).ln())).sum()
}

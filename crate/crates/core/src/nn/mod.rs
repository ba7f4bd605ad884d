//! Network layers over the differentiation tape.
//!
//! Parameters live in a [`ParamSet`] and layers refer to them by [`ParamId`].
//! A forward pass first binds the whole set onto a [`Graph`] with
//! [`ParamSet::bind`]; gradients are then read back per parameter in set
//! order. Row vectors are `[1, n]`; weight matrices are stored `out x in` and
//! applied as `x · Wᵀ`.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SynopsisRecord, TagVocabulary};
use crate::error::{Error, Result};
use crate::tensor::{self, Array, Gradients, Graph, Scalar, TensorError, Var};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct ParamEntry<F> {
    name: String,
    value: Arc<Array<F>>,
}

/// Ordered, named collection of trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<F>) -> ParamId {
        let name = name.into();
        assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, value: Arc::new(value) });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array<F> {
        &self.entries[id.0].value
    }

    /// Mutable access; clones the storage if a graph still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<F> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Array<F>) {
        assert_eq!(value.shape(), self.get(id).shape(), "shape of replacement for {}", self.entries[id.0].name);
        self.entries[id.0].value = Arc::new(value);
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.entries.iter().map(|e| e.value.shape().to_vec()).collect()
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &Array<F>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &*e.value))
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Binds every parameter onto `graph`, as trainable leaves when
    /// `trainable` and as frozen leaves otherwise.
    pub fn bind(&self, graph: &Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let v = Arc::clone(&e.value);
                if trainable {
                    graph.param(v)
                } else {
                    graph.frozen(v)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradient per parameter in set order, zeros where unreachable.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<F>) -> Vec<Array<F>> {
        bound.vars.iter().map(|&v| grads.take_or_zeros(v)).collect()
    }

    /// One optimizer step over every parameter.
    pub fn apply(&mut self, optimizer: &mut tensor::RmspropState<F>, grads: &[Array<F>]) -> Result<(), TensorError> {
        let names: Vec<String> = self.entries.iter().map(|e| e.name.clone()).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut params: Vec<&mut Array<F>> = self.entries.iter_mut().map(|e| Arc::make_mut(&mut e.value)).collect();
        optimizer.step(&mut params, grads, &name_refs)
    }
}

/// Graph variables of a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Variables in parameter-set order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize) -> Array<F> {
    let bound = (6.0 / (out + inp) as f64).sqrt();
    let data = (0..out * inp).map(|_| F::from_f64_lossy(rng.gen_range(-bound..=bound))).collect();
    Array::from_vec(vec![out, inp], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    /// Row 0 starts at zero; the remaining rows are Xavier-initialized.
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut table = xavier_uniform::<F, _>(rng, rows, dim);
        table.row_mut(0).iter_mut().for_each(|v| *v = F::zero());
        let table = params.add(format!("{name}.table"), table);
        Self { table, rows, dim }
    }

    pub fn forward<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, tokens: &[u32]) -> Var {
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        g.gather(bound.var(self.table), &idx)
    }

    /// Keeps the padding row inert: zeroes its gradient.
    pub fn mask_padding_grad<F: Scalar>(&self, grads: &mut [Array<F>]) {
        grads[self.table.0].row_mut(0).iter_mut().for_each(|v| *v = F::zero());
    }

    /// Zeroes the padding row of the stored table.
    pub fn reset_padding<F: Scalar>(&self, params: &mut ParamSet<F>) {
        params.get_mut(self.table).row_mut(0).iter_mut().for_each(|v| *v = F::zero());
    }
}

/// Parallel 1-D convolutions with ReLU and max-over-time pooling, one filter
/// set per width, concatenated in width order.
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl ConvBank {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        widths: &[usize],
        filters: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(!widths.is_empty(), "conv bank needs at least one width");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &c in widths {
            weights.push(params.add(format!("{name}.w{c}"), xavier_uniform(rng, filters, c * dim)));
            biases.push(params.add(format!("{name}.b{c}"), Array::zeros(&[filters])));
        }
        Self { widths: widths.to_vec(), filters, weights, biases }
    }

    pub fn output_width(&self) -> usize {
        self.filters * self.widths.len()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    /// `input` is `[T, D]` with `T >= max_width()`; returns `[1, filters * widths]`.
    ///
    /// The first `leading_zero_rows` rows of `input` must be exactly zero.
    pub fn forward<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, input: Var, leading_zero_rows: usize) -> Var {
        let parts: Vec<Var> = self
            .widths
            .iter()
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(&c, (&w, &b))| g.conv_relu_max(input, bound.var(w), bound.var(b), c, leading_zero_rows))
            .collect();
        g.concat(&parts)
    }
}

/// Peephole LSTM cell over row vectors.
///
/// `i = σ(s·W_siᵀ + h·W_hiᵀ + c·W_ciᵀ + b_i)`,
/// `f = σ(s·W_sfᵀ + h·W_hfᵀ + c·W_cfᵀ + b_f)`,
/// `c' = f∘c + i∘tanh(s·W_scᵀ + h·W_hcᵀ + b_c)`,
/// `o = σ(s·W_soᵀ + h·W_hoᵀ + b_o)`, `h' = o∘tanh(c')`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub w_si: ParamId,
    pub w_hi: ParamId,
    pub w_ci: ParamId,
    pub b_i: ParamId,
    pub w_sf: ParamId,
    pub w_hf: ParamId,
    pub w_cf: ParamId,
    pub b_f: ParamId,
    pub w_sc: ParamId,
    pub w_hc: ParamId,
    pub b_c: ParamId,
    pub w_so: ParamId,
    pub w_ho: ParamId,
    pub b_o: ParamId,
}

impl LstmCell {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |params: &mut ParamSet<F>, suffix: &str, inp: usize| {
            params.add(format!("{name}.{suffix}"), xavier_uniform(rng, hidden, inp))
        };
        let w_si = w(params, "w_si", input);
        let w_hi = w(params, "w_hi", hidden);
        let w_ci = w(params, "w_ci", hidden);
        let w_sf = w(params, "w_sf", input);
        let w_hf = w(params, "w_hf", hidden);
        let w_cf = w(params, "w_cf", hidden);
        let w_sc = w(params, "w_sc", input);
        let w_hc = w(params, "w_hc", hidden);
        let w_so = w(params, "w_so", input);
        let w_ho = w(params, "w_ho", hidden);
        let b_i = params.add(format!("{name}.b_i"), Array::zeros(&[hidden]));
        let b_f = params.add(format!("{name}.b_f"), Array::full(&[hidden], F::one()));
        let b_c = params.add(format!("{name}.b_c"), Array::zeros(&[hidden]));
        let b_o = params.add(format!("{name}.b_o"), Array::zeros(&[hidden]));
        Self { input, hidden, w_si, w_hi, w_ci, b_i, w_sf, w_hf, w_cf, b_f, w_sc, w_hc, b_c, w_so, w_ho, b_o }
    }

    pub fn param_ids(&self) -> [ParamId; 14] {
        [
            self.w_si, self.w_hi, self.w_ci, self.b_i, self.w_sf, self.w_hf, self.w_cf, self.b_f, self.w_sc, self.w_hc,
            self.b_c, self.w_so, self.w_ho, self.b_o,
        ]
    }

    /// One step from `(h, c)`; all three are `[1, ·]` row vectors.
    pub fn step<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, s: Var, h: Var, c: Var) -> (Var, Var) {
        let lin = |x: Var, w: ParamId| g.matmul_bt(x, bound.var(w));
        let gate = |ws: ParamId, wh: ParamId, wc: Option<ParamId>, b: ParamId| {
            let mut z = g.add(lin(s, ws), lin(h, wh));
            if let Some(wc) = wc {
                z = g.add(z, lin(c, wc));
            }
            g.add(z, bound.var(b))
        };
        let i = g.sigmoid(gate(self.w_si, self.w_hi, Some(self.w_ci), self.b_i));
        let f = g.sigmoid(gate(self.w_sf, self.w_hf, Some(self.w_cf), self.b_f));
        let candidate = g.tanh(gate(self.w_sc, self.w_hc, None, self.b_c));
        let c_next = g.add(g.mul(f, c), g.mul(i, candidate));
        let o = g.sigmoid(gate(self.w_so, self.w_ho, None, self.b_o));
        let h_next = g.mul(o, g.tanh(c_next));
        (h_next, c_next)
    }

    /// Hidden states for each row of `seq` (`[N, input]`), in the given
    /// order, from `h₀ = c₀ = 0`.
    pub fn run<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, steps: &[Var]) -> Vec<Var> {
        let mut h = g.constant(Array::zeros(&[1, self.hidden]));
        let mut c = g.constant(Array::zeros(&[1, self.hidden]));
        let mut out = Vec::with_capacity(steps.len());
        for &s in steps {
            (h, c) = self.step(g, bound, s, h, c);
            out.push(h);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Outputs of [`BiLstm::forward`].
#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    /// `[N, 2·hidden]`, row `i` is `[→h_i; ←h_i]`.
    pub states: Var,
    /// `[1, 2·hidden]`, `[→h_N; ←h_1]`.
    pub last: Var,
}

impl BiLstm {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let forward = LstmCell::new(params, &format!("{name}.fwd"), input, hidden, rng);
        let backward = LstmCell::new(params, &format!("{name}.bwd"), input, hidden, rng);
        Self { forward, backward }
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `seq` is `[N, input]` with `N >= 1`.
    pub fn forward<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, seq: Var) -> BiLstmOutput {
        let n = g.shape(seq)[0];
        assert!(n >= 1, "contract violation in bilstm: empty sequence");
        let rows: Vec<Var> = (0..n).map(|t| g.slice_rows(seq, t..t + 1)).collect();
        let fwd = self.forward.run(g, bound, &rows);
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let mut bwd = self.backward.run(g, bound, &reversed);
        bwd.reverse();
        let per_step: Vec<Var> = fwd.iter().zip(&bwd).map(|(&f, &b)| g.concat(&[f, b])).collect();
        BiLstmOutput { states: g.concat_rows(&per_step), last: g.concat(&[fwd[n - 1], bwd[0]]) }
    }
}

/// Additive attention: `score_i = vᵀ tanh(W_a h_i + b_a)`, `α = softmax(score)`,
/// `r = Σ α_i h_i`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub v: ParamId,
    pub input: usize,
    pub dim: usize,
}

/// Outputs of [`Attention::forward`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[1, input]`.
    pub context: Var,
    /// `[1, N]`.
    pub weights: Var,
}

impl Attention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        input: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let w_a = params.add(format!("{name}.w_a"), xavier_uniform(rng, dim, input));
        let b_a = params.add(format!("{name}.b_a"), Array::zeros(&[dim]));
        let v = params.add(format!("{name}.v"), xavier_uniform(rng, 1, dim));
        Self { w_a, b_a, v, input, dim }
    }

    /// `states` is `[N, input]` with `N >= 1`.
    pub fn forward<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, states: Var) -> AttentionOutput {
        let n = g.shape(states)[0];
        let hidden = g.tanh(g.add(g.matmul_bt(states, bound.var(self.w_a)), bound.var(self.b_a)));
        let scores = g.reshape(g.matmul_bt(hidden, bound.var(self.v)), &[1, n]);
        let weights = g.softmax(scores);
        AttentionOutput { context: g.matmul(weights, states), weights }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<F>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let w = params.add(format!("{name}.w"), xavier_uniform(rng, output, input));
        let b = params.add(format!("{name}.b"), Array::zeros(&[output]));
        Self { w, b, activation, input, output }
    }

    /// `x` is `[1, input]`.
    pub fn forward<F: Scalar>(&self, g: &Graph<F>, bound: &Bound, x: Var) -> Var {
        let z = g.add(g.matmul_bt(x, bound.var(self.w)), bound.var(self.b));
        match self.activation {
            Activation::Relu => g.relu(z),
            Activation::Identity => z,
        }
    }
}

/// Per-tag loss weights `CW_t = |D| / (|T| · M_t)`, kept as the exact integer
/// terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// `|D|`, the number of training movies.
    pub n_docs: usize,
    /// `M_t` per tag, in tag-vocabulary order; `|T|` is its length.
    pub tag_counts: Vec<usize>,
}

impl ClassWeights {
    pub fn n_tags(&self) -> usize {
        self.tag_counts.len()
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.n_docs as f64 / (self.n_tags() as f64 * self.tag_counts[t] as f64)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_tags()).map(|t| self.weight(t)).collect()
    }

    pub fn uniform(n_tags: usize) -> Self {
        Self { n_docs: n_tags, tag_counts: vec![1; n_tags] }
    }
}

/// Counts, per tag, the training movies carrying it.
pub fn compute_class_weights(train: &[SynopsisRecord], tag_vocab: &TagVocabulary) -> Result<ClassWeights> {
    let mut counts = vec![0usize; tag_vocab.len()];
    for record in train {
        let (indices, _) = tag_vocab.indices(&record.tags);
        let indices: BTreeSet<usize> = indices;
        for t in indices {
            counts[t] += 1;
        }
    }
    if let Some(t) = counts.iter().position(|&m| m == 0) {
        return Err(Error::Validation(format!("tag {:?} never occurs in the training set", tag_vocab.tag(t))));
    }
    Ok(ClassWeights { n_docs: train.len(), tag_counts: counts })
}

/// `Σ_t CW_t · p_t · ln(p_t / q_t)`.
pub fn weighted_kl_loss(true_dist: &[f64], pred_dist: &[f64], weights: &ClassWeights) -> Result<f64, TensorError> {
    tensor::weighted_kl(true_dist, pred_dist, Some(&weights.weights()))
}

//! Tape-based reverse-mode differentiation over dense arrays.
//!
//! A [`Graph`] records every primitive applied to values that require a
//! gradient, in execution order. [`Graph::backward`] walks that record in exact
//! reverse, so the tape order is a valid topological order by construction.
//! Values that do not depend on any trainable leaf are computed but never
//! recorded.
//!
//! Shape mismatches are contract violations and panic with both shapes in the
//! message.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use super::{Array, Scalar};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        b_transposed: bool,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: F,
    },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Log(usize),
    Concat(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows {
        a: usize,
        start: usize,
    },
    Reshape(usize),
    Unfold {
        a: usize,
        width: usize,
    },
    MaxOverAxis {
        a: usize,
        argmax: Vec<usize>,
    },
    Sum(usize),
    Softmax(usize),
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    Dropout {
        a: usize,
        mask: Vec<F>,
    },
    ConvReluMax {
        input: usize,
        weight: usize,
        bias: usize,
        width: usize,
        /// Winning window per filter, `None` when the pooled value is not positive.
        argmax: Vec<Option<usize>>,
    },
    Kl {
        pred: usize,
        /// d(loss)/d(pred_t), fixed at forward time.
        local_grad: Vec<F>,
    },
}

struct Node<F> {
    value: Arc<Array<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// A single-use differentiation tape.
pub struct Graph<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Array<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient of `v`, substituting zeros when `v` is unreachable.
    pub fn take_or_zeros(&mut self, v: Var) -> Array<F> {
        self.grads[v.0].take().unwrap_or_else(|| Array::zeros(&self.shapes[v.0]))
    }

    pub fn wrt(&self, v: Var) -> Array<F> {
        self.get(v).cloned().unwrap_or_else(|| Array::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("contract violation in {op}: incompatible shapes {a:?} and {b:?}")
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array<F>, op: Op<F>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op: if requires_grad { op } else { Op::Leaf }, requires_grad });
        Var(nodes.len() - 1)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf sharing storage with `value`.
    pub fn param(&self, value: Arc<Array<F>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(nodes.len() - 1)
    }

    /// Leaf sharing storage with `value` that never receives a gradient.
    pub fn frozen(&self, value: Arc<Array<F>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Arc<Array<F>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Matrix product of two 2-D values.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`, with `b` stored as `n x k`.
    pub fn matmul_bt(&self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, b_transposed: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 {
            shape_err("matmul", sa, sb);
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n, b_strides) =
            if b_transposed { (sb[1], sb[0], (1, sb[1] as isize)) } else { (sb[0], sb[1], (sb[1] as isize, 1)) };
        if k != kb {
            shape_err("matmul", sa, sb);
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, F::one(), av.data(), (k as isize, 1), bv.data(), b_strides, F::zero(), &mut out);
        let rg = self.requires(&[a, b]);
        self.push(Array::from_vec(vec![m, n], out), Op::MatMul { a: a.0, b: b.0, b_transposed }, rg)
    }

    /// Element-wise sum. `b` may also be a vector matching the last axis of
    /// `a`, in which case it is broadcast over the leading axis.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y);
            Array::from_vec(av.shape().to_vec(), data.collect())
        } else if bv.shape().len() == 1 && av.cols() == bv.len() {
            let c = av.cols();
            let data = av.data().iter().enumerate().map(|(i, &x)| x + bv.data()[i % c]);
            Array::from_vec(av.shape().to_vec(), data.collect())
        } else {
            shape_err("add", av.shape(), bv.shape())
        };
        let rg = self.requires(&[a, b]);
        self.push(out, Op::Add { a: a.0, b: b.0 }, rg)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            shape_err("mul", av.shape(), bv.shape());
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y);
        let out = Array::from_vec(av.shape().to_vec(), data.collect());
        let rg = self.requires(&[a, b]);
        self.push(out, Op::Mul { a: a.0, b: b.0 }, rg)
    }

    pub fn scale(&self, a: Var, factor: F) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.requires(&[a]);
        self.push(out, Op::Scale { a: a.0, factor }, rg)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.requires(&[a]);
        self.push(out, Op::Tanh(a.0), rg)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.requires(&[a]);
        self.push(out, Op::Sigmoid(a.0), rg)
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(F::zero()));
        let rg = self.requires(&[a]);
        self.push(out, Op::Relu(a.0), rg)
    }

    pub fn log(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.ln());
        let rg = self.requires(&[a]);
        self.push(out, Op::Log(a.0), rg)
    }

    /// Concatenation along the last axis. All parts must share the number of
    /// rows; 1-D parts produce a 1-D result.
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "contract violation in concat: no inputs");
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values[0].rows();
        let all_vectors = values.iter().all(|v| v.shape().len() == 1);
        for v in &values[1..] {
            if v.rows() != rows {
                shape_err("concat", values[0].shape(), v.shape());
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        let rg = self.requires(parts);
        self.push(Array::from_vec(shape, data), Op::Concat(parts.iter().map(|p| p.0).collect()), rg)
    }

    /// Stacks parts along the leading axis; vectors count as single rows.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "contract violation in concat_rows: no inputs");
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values[0].cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for v in &values {
            if v.cols() != cols || v.shape().len() > 2 {
                shape_err("concat_rows", values[0].shape(), v.shape());
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.requires(parts);
        self.push(Array::from_vec(vec![rows, cols], data), Op::ConcatRows(parts.iter().map(|p| p.0).collect()), rg)
    }

    pub fn slice_rows(&self, a: Var, range: Range<usize>) -> Var {
        let av = self.value(a);
        if av.shape().len() != 2 || range.end > av.rows() || range.start > range.end {
            panic!("contract violation in slice_rows: range {range:?} out of bounds for {:?}", av.shape());
        }
        let c = av.cols();
        let data = av.data()[range.start * c..range.end * c].to_vec();
        let rg = self.requires(&[a]);
        self.push(Array::from_vec(vec![range.len(), c], data), Op::SliceRows { a: a.0, start: range.start }, rg)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        let n: usize = shape.iter().product();
        if n != av.len() {
            shape_err("reshape", av.shape(), shape);
        }
        let out = Array::from_vec(shape.to_vec(), av.data().to_vec());
        let rg = self.requires(&[a]);
        self.push(out, Op::Reshape(a.0), rg)
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row: `[T, D] -> [T - width + 1, width * D]`.
    pub fn unfold(&self, a: Var, width: usize) -> Var {
        let av = self.value(a);
        if av.shape().len() != 2 || width == 0 || av.rows() < width {
            panic!("contract violation in unfold: width {width} does not fit {:?}", av.shape());
        }
        let d = av.cols();
        let windows = av.rows() - width + 1;
        let mut data = Vec::with_capacity(windows * width * d);
        for t in 0..windows {
            data.extend_from_slice(&av.data()[t * d..(t + width) * d]);
        }
        let rg = self.requires(&[a]);
        self.push(Array::from_vec(vec![windows, width * d], data), Op::Unfold { a: a.0, width }, rg)
    }

    /// Maximum of a 2-D value along `axis`; the first maximal entry wins ties.
    pub fn max_over_axis(&self, a: Var, axis: usize) -> Var {
        let av = self.value(a);
        if av.shape().len() != 2 || axis > 1 {
            panic!("contract violation in max_over_axis: axis {axis} for shape {:?}", av.shape());
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        assert!(r > 0 && c > 0, "contract violation in max_over_axis: empty input");
        // Flat index of element i within slice o is o * outer_stride + i * inner_stride.
        let (outer, inner, outer_stride, inner_stride) = if axis == 0 { (c, r, 1, c) } else { (r, c, c, 1) };
        let at = |o: usize, i: usize| o * outer_stride + i * inner_stride;
        let mut values = Vec::with_capacity(outer);
        let mut argmax = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = at(o, 0);
            for i in 1..inner {
                let idx = at(o, i);
                if av.data()[idx] > av.data()[best] {
                    best = idx;
                }
            }
            values.push(av.data()[best]);
            argmax.push(best);
        }
        let rg = self.requires(&[a]);
        self.push(Array::from_vec(vec![outer], values), Op::MaxOverAxis { a: a.0, argmax }, rg)
    }

    /// Sum of all entries, as a one-element array.
    pub fn sum(&self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        let rg = self.requires(&[a]);
        self.push(out, Op::Sum(a.0), rg)
    }

    /// Row-wise softmax over the last axis, shifted by the row maximum.
    pub fn softmax(&self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for r in 0..av.rows() {
            let row = av.row(r);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = row.iter().map(|&x| (x - max).exp()).collect();
            let total: F = exps.iter().copied().sum();
            data.extend(exps.into_iter().map(|e| e / total));
        }
        debug_assert_eq!(data.len(), av.rows() * c);
        let rg = self.requires(&[a]);
        self.push(Array::from_vec(av.shape().to_vec(), data), Op::Softmax(a.0), rg)
    }

    /// Row lookup: `[V, D]` table and `n` indices give `[n, D]`.
    pub fn gather(&self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            panic!("contract violation in gather: table must be 2-D, got {:?}", tv.shape());
        }
        let d = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= tv.rows() {
                panic!("contract violation in gather: index {i} out of range for {:?}", tv.shape());
            }
            data.extend_from_slice(tv.row(i));
        }
        let rg = self.requires(&[table]);
        self.push(
            Array::from_vec(vec![indices.len(), d], data),
            Op::Gather { table: table.0, indices: indices.to_vec() },
            rg,
        )
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales the
    /// survivors by `1 / (1 - p)`. `p == 0` returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&self, a: Var, p: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "contract violation in dropout: rate {p} outside [0, 1)");
        if p == 0.0 {
            return a;
        }
        let av = self.value(a);
        let keep = F::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..av.len()).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect();
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m);
        let out = Array::from_vec(av.shape().to_vec(), data.collect());
        let rg = self.requires(&[a]);
        self.push(out, Op::Dropout { a: a.0, mask }, rg)
    }

    /// Fused 1-D convolution, ReLU and max-over-time pooling.
    ///
    /// `input` is `[T, D]`, `weight` is `[F, width * D]` and `bias` is `[F]`;
    /// the result is `[1, F]`. The first `leading_zero_rows` rows of `input`
    /// must be exactly zero: every window lying entirely inside them has the
    /// same pre-activation `bias`, so a single representative (window 0) is
    /// scored instead of all of them.
    pub fn conv_relu_max(&self, input: Var, weight: Var, bias: Var, width: usize, leading_zero_rows: usize) -> Var {
        let (iv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        let (t, d) = (iv.rows(), iv.cols());
        if iv.shape().len() != 2 || width == 0 || t < width {
            panic!("contract violation in conv: input {:?} shorter than filter width {width}", iv.shape());
        }
        if wv.shape().len() != 2 || wv.cols() != width * d {
            shape_err("conv weight", iv.shape(), wv.shape());
        }
        let filters = wv.rows();
        if bv.shape() != [filters] {
            shape_err("conv bias", wv.shape(), bv.shape());
        }
        let zero_rows = leading_zero_rows.min(t);
        debug_assert!(iv.data()[..zero_rows * d].iter().all(|v| v.is_zero()), "leading rows claimed zero are not");
        let windows = t - width + 1;
        let has_zero_window = zero_rows >= width;
        let first = if has_zero_window { zero_rows - width + 1 } else { 0 };
        let scored = windows - first;
        let mut pre = vec![F::zero(); scored * filters];
        let kd = width * d;
        F::gemm(
            scored,
            kd,
            filters,
            F::one(),
            &iv.data()[first * d..],
            (d as isize, 1),
            wv.data(),
            (1, kd as isize),
            F::zero(),
            &mut pre,
        );
        let mut values = Vec::with_capacity(filters);
        let mut argmax = Vec::with_capacity(filters);
        for f in 0..filters {
            let b = bv.data()[f];
            let (mut best_t, mut best) = if has_zero_window { (0, b) } else { (first, pre[f] + b) };
            let start = if has_zero_window { 0 } else { 1 };
            for s in start..scored {
                let v = pre[s * filters + f] + b;
                if v > best {
                    best = v;
                    best_t = first + s;
                }
            }
            if best > F::zero() {
                values.push(best);
                argmax.push(Some(best_t));
            } else {
                values.push(F::zero());
                argmax.push(None);
            }
        }
        let rg = self.requires(&[input, weight, bias]);
        self.push(
            Array::from_vec(vec![1, filters], values),
            Op::ConvReluMax { input: input.0, weight: weight.0, bias: bias.0, width, argmax },
            rg,
        )
    }

    /// `Σ_t w_t · p_t · ln(p_t / q_t)` for a fixed target `p` and predicted `q`.
    ///
    /// Terms with `p_t == 0` contribute nothing; `q_t` is clamped to at least
    /// `eps` before the logarithm and the clamped entries get no gradient.
    pub fn kl_div(&self, target: &[F], pred: Var, weights: Option<&[F]>, eps: F) -> Var {
        let qv = self.value(pred);
        if qv.len() != target.len() {
            shape_err("kl_div", &[target.len()], qv.shape());
        }
        if let Some(w) = weights {
            if w.len() != target.len() {
                shape_err("kl_div weights", &[target.len()], &[w.len()]);
            }
        }
        let mut loss = F::zero();
        let mut local_grad = vec![F::zero(); target.len()];
        for (i, (&p, &q)) in target.iter().zip(qv.data()).enumerate() {
            assert!(
                p >= F::zero() && (q >= F::zero() || q.is_nan()),
                "contract violation in kl_div: negative probability at {i} (target {p}, pred {q})"
            );
            if p.is_zero() {
                continue;
            }
            let w = weights.map_or(F::one(), |w| w[i]);
            // NaN predictions propagate into the loss.
            let clamped = if q.is_nan() { q } else { q.max(eps) };
            loss += w * p * (p.ln() - clamped.ln());
            if q > eps {
                local_grad[i] = -w * p / q;
            }
        }
        let rg = self.requires(&[pred]);
        self.push(Array::scalar(loss), Op::Kl { pred: pred.0, local_grad }, rg)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Array<F>>> = (0..nodes.len()).map(|_| None).collect();
        let lv = &nodes[loss.0].value;
        if lv.len() != 1 {
            panic!("contract violation in backward: loss must be scalar, got shape {:?}", lv.shape());
        }
        if !nodes[loss.0].requires_grad {
            return Gradients { grads, shapes };
        }
        grads[loss.0] = Some(Array::full(lv.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
        }
        Gradients { grads, shapes }
    }
}

/// Gradient slot for node `idx`, allocated as zeros on first use.
fn slot<'a, F: Scalar>(nodes: &[Node<F>], grads: &'a mut [Option<Array<F>>], idx: usize) -> Option<&'a mut Array<F>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(grads[idx].get_or_insert_with(|| Array::zeros(nodes[idx].value.shape())))
}

fn backprop_node<F: Scalar>(nodes: &[Node<F>], node: &Node<F>, g: &Array<F>, grads: &mut [Option<Array<F>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, b_transposed } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = out.shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = dC · Bᵀ
                let b_strides = if *b_transposed { (k as isize, 1) } else { (1, n as isize) };
                F::gemm(m, n, k, F::one(), g.data(), (n as isize, 1), bv.data(), b_strides, F::one(), ga.data_mut());
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                if *b_transposed {
                    // d(B stored n x k) = dCᵀ · A
                    F::gemm(
                        n,
                        m,
                        k,
                        F::one(),
                        g.data(),
                        (1, n as isize),
                        av.data(),
                        (k as isize, 1),
                        F::one(),
                        gb.data_mut(),
                    );
                } else {
                    // dB = Aᵀ · dC
                    F::gemm(
                        k,
                        m,
                        n,
                        F::one(),
                        av.data(),
                        (1, k as isize),
                        g.data(),
                        (n as isize, 1),
                        F::one(),
                        gb.data_mut(),
                    );
                }
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.add_assign(g);
            }
            let broadcast = nodes[*b].value.shape() != g.shape();
            if let Some(gb) = slot(nodes, grads, *b) {
                if broadcast {
                    let c = gb.len();
                    for (i, &v) in g.data().iter().enumerate() {
                        gb.data_mut()[i % c] += v;
                    }
                } else {
                    gb.add_assign(g);
                }
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (Arc::clone(&nodes[*a].value), Arc::clone(&nodes[*b].value));
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((d, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *d += gv * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((d, &gv), &x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *d += gv * x;
                }
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (d, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *d += gv * *factor;
                }
            }
        }
        Op::Tanh(a) => unary(nodes, grads, *a, g, |_, y| F::one() - y * y, out),
        Op::Sigmoid(a) => unary(nodes, grads, *a, g, |_, y| y * (F::one() - y), out),
        Op::Relu(a) => unary(nodes, grads, *a, g, |x, _| if x > F::zero() { F::one() } else { F::zero() }, out),
        Op::Log(a) => unary(nodes, grads, *a, g, |x, _| F::one() / x, out),
        Op::Concat(parts) => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if let Some(gp) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        let src = &g.data()[r * total + offset..r * total + offset + pc];
                        for (d, &s) in gp.row_mut(r).iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                if let Some(gp) = slot(nodes, grads, p) {
                    for (d, &s) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                        *d += s;
                    }
                }
                offset += n;
            }
        }
        Op::SliceRows { a, start } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let c = ga.cols();
                let dst = &mut ga.data_mut()[start * c..start * c + g.len()];
                for (d, &s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (d, &s) in ga.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
        Op::Unfold { a, width } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let d = ga.cols();
                let row_len = width * d;
                for t in 0..g.rows() {
                    let src = &g.data()[t * row_len..(t + 1) * row_len];
                    let dst = &mut ga.data_mut()[t * d..t * d + row_len];
                    for (x, &s) in dst.iter_mut().zip(src) {
                        *x += s;
                    }
                }
            }
        }
        Op::MaxOverAxis { a, argmax } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    ga.data_mut()[idx] += gv;
                }
            }
        }
        Op::Sum(a) => {
            let gv = g.data()[0];
            if let Some(ga) = slot(nodes, grads, *a) {
                for d in ga.data_mut() {
                    *d += gv;
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let c = out.cols();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = &g.data()[r * c..(r + 1) * c];
                    let dot: F = y.iter().zip(gy).map(|(&yi, &gi)| yi * gi).sum();
                    for ((d, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::Gather { table, indices } => {
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &s) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
            }
        }
        Op::Dropout { a, mask } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((d, &gv), &m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *d += gv * m;
                }
            }
        }
        Op::ConvReluMax { input, weight, bias, width, argmax } => {
            let (iv, wv) = (Arc::clone(&nodes[*input].value), Arc::clone(&nodes[*weight].value));
            let d = iv.cols();
            let kd = width * d;
            let winners = || argmax.iter().enumerate().filter_map(|(f, t)| t.map(|t| (f, t, g.data()[f])));
            if let Some(gb) = slot(nodes, grads, *bias) {
                for (f, _, gv) in winners() {
                    gb.data_mut()[f] += gv;
                }
            }
            if let Some(gw) = slot(nodes, grads, *weight) {
                for (f, t, gv) in winners() {
                    let window = &iv.data()[t * d..t * d + kd];
                    for (x, &s) in gw.row_mut(f).iter_mut().zip(window) {
                        *x += gv * s;
                    }
                }
            }
            if let Some(gi) = slot(nodes, grads, *input) {
                for (f, t, gv) in winners() {
                    let dst = &mut gi.data_mut()[t * d..t * d + kd];
                    for (x, &w) in dst.iter_mut().zip(wv.row(f)) {
                        *x += gv * w;
                    }
                }
            }
        }
        Op::Kl { pred, local_grad } => {
            let gv = g.data()[0];
            if let Some(gp) = slot(nodes, grads, *pred) {
                for (d, &l) in gp.data_mut().iter_mut().zip(local_grad) {
                    *d += gv * l;
                }
            }
        }
    }
}

/// Applies an element-wise derivative `f'(x, y)` where `y = f(x)`.
fn unary<F: Scalar>(
    nodes: &[Node<F>],
    grads: &mut [Option<Array<F>>],
    a: usize,
    g: &Array<F>,
    deriv: impl Fn(F, F) -> F,
    out: &Array<F>,
) {
    let av = Arc::clone(&nodes[a].value);
    if let Some(ga) = slot(nodes, grads, a) {
        for (((d, &gv), &x), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()).zip(out.data()) {
            *d += gv * deriv(x, y);
        }
    }
}

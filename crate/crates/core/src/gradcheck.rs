//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only ever evaluates forward values; it never reads the tape's
//! backward rules, so it stays independent of the code it verifies.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Array, Graph, Var};

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Finite-difference step.
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on checked entries per input; `None` checks everything.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { h: 1e-5, rtol: 1e-4, atol: 1e-6, max_entries: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

impl GradCheck {
    pub fn with_tolerance(h: f64, rtol: f64, atol: f64) -> Self {
        Self { h, rtol, atol, ..Self::default() }
    }

    /// Compares `d loss / d input` from the tape against central differences.
    ///
    /// `build` must record a scalar loss from the variables bound to `inputs`,
    /// in order.
    pub fn run<B>(&self, inputs: &[Array<f64>], build: B) -> GradCheckReport
    where
        B: Fn(&Graph<f64>, &[Var]) -> Var,
    {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.param(Arc::new(a.clone()))).collect();
        let loss = build(&g, &vars);
        let grads = g.backward(loss);
        let analytic: Vec<Array<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
        drop(g);

        let eval = |values: &[Array<f64>]| -> f64 {
            let g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|a| g.constant(a.clone())).collect();
            let loss = build(&g, &vars);
            g.value(loss).data()[0]
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport::default();
        let mut work: Vec<Array<f64>> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let entries: Vec<usize> = match self.max_entries {
                Some(m) if m < input.len() => sample(&mut rng, input.len(), m).into_vec(),
                _ => (0..input.len()).collect(),
            };
            for e in entries {
                let original = input.data()[e];
                work[i].data_mut()[e] = original + self.h;
                let plus = eval(&work);
                work[i].data_mut()[e] = original - self.h;
                let minus = eval(&work);
                work[i].data_mut()[e] = original;
                let numeric = (plus - minus) / (2.0 * self.h);
                let a = analytic[i].data()[e];
                let abs = (a - numeric).abs();
                let rel = abs / numeric.abs().max(1e-12);
                report.checked += 1;
                report.max_abs_err = report.max_abs_err.max(abs);
                if abs > self.atol {
                    report.max_rel_err = report.max_rel_err.max(rel);
                }
                if abs > self.atol + self.rtol * numeric.abs() {
                    report.failures.push(Mismatch { input: i, entry: e, analytic: a, numeric });
                }
            }
        }
        report
    }
}

use super::{Array, Scalar, TensorError};

/// RMSprop with a running average of squared gradients:
///
/// `v <- rho * v + (1 - rho) * g^2`, `p <- p - lr * g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmspropState<F> {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    mean_square: Vec<Array<F>>,
}

impl<F: Scalar> RmspropState<F> {
    /// Zeroed state for parameters of the given shapes, `rho = 0.9`, `eps = 1e-8`.
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Self::with_hyperparameters(lr, 0.9, 1e-8, shapes)
    }

    pub fn with_hyperparameters<'a>(
        lr: f64,
        rho: f64,
        eps: f64,
        shapes: impl IntoIterator<Item = &'a [usize]>,
    ) -> Self {
        Self { lr, rho, eps, mean_square: shapes.into_iter().map(Array::zeros).collect() }
    }

    pub fn mean_square(&self) -> &[Array<F>] {
        &self.mean_square
    }

    /// Applies one update in place. Nothing is modified when any gradient is
    /// non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut Array<F>],
        grads: &[Array<F>],
        names: &[&str],
    ) -> Result<(), TensorError> {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        assert_eq!(params.len(), self.mean_square.len(), "state mirrors parameters");
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient {
                    param: names.get(i).map_or_else(|| format!("#{i}"), |n| n.to_string()),
                });
            }
            if g.shape() != params[i].shape() {
                panic!("contract violation in rmsprop: gradient {:?} for parameter {:?}", g.shape(), params[i].shape());
            }
        }
        let rho = F::from_f64_lossy(self.rho);
        let one_minus_rho = F::from_f64_lossy(1.0 - self.rho);
        let lr = F::from_f64_lossy(self.lr);
        let eps = F::from_f64_lossy(self.eps);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.mean_square) {
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = rho * *vi + one_minus_rho * gi * gi;
                *pi -= lr * gi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use super::tensor::LayerState;
use crate::error::{Error, Result};

/// Plain mini-batch SGD with L2 weight decay and step learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Learning rate.
    pub alpha: f64,
    /// Weight-decay coefficient, applied to weights only.
    pub lambda: f64,
    /// Samples whose gradients were summed into each update.
    pub batch_size: usize,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::arg(format!(
                "learning rate {} is invalid",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::arg("weight decay must be non-negative"));
        }
        if self.decay_every == 0 || !(self.decay_factor > 0.0) {
            return Err(Error::arg("learning-rate decay must be positive"));
        }
        Ok(())
    }

    /// Learning rate in force at 1-based iteration `iteration`:
    /// `alpha * decay_factor^floor(iteration / decay_every)`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.decay_every) as i32;
        self.alpha * self.decay_factor.powi(steps)
    }
}

/// `W <- W - alpha * (dW / m + lambda * W)`, `b <- b - alpha * db / m`,
/// then zero the gradients.
pub fn sgd_step(layer: &mut LayerState, alpha: f64, lambda: f64, batch_size: usize) {
    let inv_m = 1.0 / batch_size as f64;
    let (gw, gb) = layer.grads_mut();
    let gw = gw.data().to_vec();
    let gb = gb.data().to_vec();
    for (w, g) in layer.weights.data_mut().iter_mut().zip(&gw) {
        *w -= alpha * (g * inv_m + lambda * *w);
    }
    for (b, g) in layer.bias.data_mut().iter_mut().zip(&gb) {
        *b -= alpha * (g * inv_m);
    }
    layer.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_layer(w: f64, b: f64, dw: f64, db: f64) -> LayerState {
        let mut l = LayerState::new(
            Tensor::new(vec![1], vec![w]).unwrap(),
            Tensor::new(vec![1], vec![b]).unwrap(),
        );
        let (gw, gb) = l.grads_mut();
        gw.data_mut()[0] = dw;
        gb.data_mut()[0] = db;
        l
    }

    #[test]
    fn hand_evaluated_updates() {
        let mut l = scalar_layer(1.0, 1.0, 2.0, 2.0);
        sgd_step(&mut l, 0.1, 0.1, 2);
        assert!((l.weights.data()[0] - 0.89).abs() < 1e-12);
        assert!((l.bias.data()[0] - 0.9).abs() < 1e-12);
        assert_eq!(l.grad_w().unwrap().data(), &[0.0]);

        for lambda in [0.0, 0.5, 3.0] {
            let mut l = scalar_layer(1.0, 1.0, 2.0, 2.0);
            sgd_step(&mut l, 0.1, lambda, 2);
            assert!((l.bias.data()[0] - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_points() {
        let mut l = scalar_layer(0.7, -0.3, 0.0, 0.0);
        sgd_step(&mut l, 0.5, 0.0, 4);
        assert_eq!((l.weights.data()[0], l.bias.data()[0]), (0.7, -0.3));
        let mut l = scalar_layer(0.7, -0.3, 5.0, 2.0);
        sgd_step(&mut l, 0.0, 0.0, 4);
        assert_eq!((l.weights.data()[0], l.bias.data()[0]), (0.7, -0.3));
    }

    #[test]
    fn step_schedule() {
        let cfg = SgdConfig {
            alpha: 1e-5,
            lambda: 5e-4,
            batch_size: 25,
            decay_factor: 0.1,
            decay_every: 20_000,
        };
        assert_eq!(cfg.learning_rate(1), 1e-5);
        assert_eq!(cfg.learning_rate(19_999), 1e-5);
        for k in 0..4 {
            assert_eq!(cfg.learning_rate(20_000 * k), 1e-5 * 0.1f64.powi(k as i32));
        }
    }
}

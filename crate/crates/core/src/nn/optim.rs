use super::network::{Gradients, ParameterSet};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub momentum: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.01,
            decay_factor: 10.0,
            decay_every_epochs: 10,
            momentum: 0.9,
            l2_weight: 5e-4,
            epochs: 30,
            dropout_rate: 0.5,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.decay_factor > 0.0
            && self.decay_every_epochs > 0
            && (0.0..1.0).contains(&self.momentum)
            && self.l2_weight >= 0.0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.dropout_rate)
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer configuration {self:?}")))
        }
    }

    /// Step schedule for 1-based `epoch`:
    /// `base_lr / decay_factor^floor((epoch-1)/decay_every_epochs)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = (epoch.max(1) - 1) / self.decay_every_epochs;
        self.base_lr / self.decay_factor.powi(steps as i32)
    }
}

/// Nesterov momentum on flat buffers:
/// `v ← μ·v − lr·g; w ← w + μ·v − lr·g`.
pub fn nesterov_update<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], lr: f64, momentum: f64) {
    let lr = T::of(lr);
    let mu = T::of(momentum);
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi - lr * gi;
        *wi += mu * *vi - lr * gi;
    }
}

/// Applies one Nesterov step to every parameter and its velocity.
/// Rejects non-finite gradients without touching the parameters.
pub fn nesterov_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &Gradients<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::invalid("gradient layer count does not match parameters"));
    }
    for (i, (g, p)) in grads.layers.iter().zip(&params.layers).enumerate() {
        if g.weights.shape() != p.weights.shape() || g.biases.shape() != p.biases.shape() {
            return Err(Error::invalid(format!("gradient shape mismatch in layer {i}")));
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for ((p, v), g) in params.layers.iter_mut().zip(&mut params.velocities).zip(&grads.layers) {
        nesterov_update(p.weights.data_mut(), v.weights.data_mut(), g.weights.data(), lr, momentum);
        nesterov_update(p.biases.data_mut(), v.biases.data_mut(), g.biases.data(), lr, momentum);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerParams, Tensor};

    #[test]
    fn hand_evaluated_step() {
        let (mut w, mut v) = ([1.0f64], [0.0f64]);
        nesterov_update(&mut w, &mut v, &[0.2], 0.01, 0.9);
        assert!((v[0] + 0.002).abs() < 1e-15);
        assert!((w[0] - 0.9962).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let (mut w, mut v) = ([0.5f64, -2.0], [0.0f64, 0.0]);
        nesterov_update(&mut w, &mut v, &[1.0, -3.0], 0.1, 0.0);
        assert_eq!(w, [0.5 - 0.1, -2.0 + 0.3]);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let (mut w, mut v) = ([0.25f32, 3.0], [0.0f32, 0.0]);
        nesterov_update(&mut w, &mut v, &[0.0, 0.0], 0.01, 0.9);
        assert_eq!(w, [0.25, 3.0]);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let layer = LayerParams {
            weights: Tensor::<f32>::full(&[2, 2], 1.0),
            biases: Tensor::zeros(&[2]),
        };
        let mut params = ParameterSet::new(vec![layer.clone()]);
        let mut bad = layer.zeros_like();
        bad.weights.data_mut()[1] = f32::NAN;
        let before = params.clone();
        let err = nesterov_step(&mut params, &Gradients { layers: vec![bad] }, 0.01, 0.9).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(params, before);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = OptimizerConfig::default();
        for e in 1..=10 {
            assert_eq!(cfg.learning_rate(e), 0.01);
        }
        for e in 11..=20 {
            assert!((cfg.learning_rate(e) - 0.001).abs() < 1e-15);
        }
        for e in 21..=30 {
            assert!((cfg.learning_rate(e) - 0.0001).abs() < 1e-15);
        }
    }
}

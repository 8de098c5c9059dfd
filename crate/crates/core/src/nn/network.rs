use rand::{Rng, RngCore};

use super::init::glorot_uniform_init;
use super::layers::{
    conv3x3_backward_unrolled, conv3x3_unrolled, dropout_mask, fc_backward, fc_forward, maxpool2x2_indexed,
    scatter_max_grad, spp_indexed, SPP_CELLS,
};
use super::loss::{cross_entropy_paired, paired_softmax};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    MaxPool2x2,
    /// Fixed 4×4, 2×2, 1×1 pyramid.
    Spp,
    FullyConnected { in_units: usize, out_units: usize },
    Dropout { rate: f64 },
    PairedSoftmax,
}

impl LayerSpec {
    /// Weight and bias shapes of parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv3x3 { in_channels, out_channels } => {
                Some((vec![out_channels, in_channels, 3, 3], vec![out_channels]))
            }
            LayerSpec::FullyConnected { in_units, out_units } => {
                Some((vec![out_units, in_units], vec![out_units]))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            weights: Tensor::zeros(self.weights.shape()),
            biases: Tensor::zeros(self.biases.shape()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.biases.is_finite()
    }
}

/// Trainable parameters in layer order, with Nesterov velocity buffers of
/// identical shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    pub layers: Vec<LayerParams<T>>,
    pub velocities: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(layers: Vec<LayerParams<T>>) -> Self {
        let velocities = layers.iter().map(LayerParams::zeros_like).collect();
        ParameterSet { layers, velocities }
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|p| p.weights.len() + p.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().chain(&self.velocities).all(LayerParams::is_finite)
    }
}

/// Gradients laid out like [`ParameterSet::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_for(params: &ParameterSet<T>) -> Self {
        Gradients {
            layers: params.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    fn accumulate(&mut self, layer: usize, gw: &Tensor<T>, gb: &Tensor<T>, scale: T) {
        let dst = &mut self.layers[layer];
        for (d, &g) in dst.weights.data_mut().iter_mut().zip(gw.data()) {
            *d += scale * g;
        }
        for (d, &g) in dst.biases.data_mut().iter_mut().zip(gb.data()) {
            *d += scale * g;
        }
    }
}

/// Forward-pass mode. Dropout is active only in training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

enum Record<T> {
    Conv { col: Vec<T>, in_shape: [usize; 3] },
    Relu(Tensor<T>),
    Pool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Spp { in_shape: Vec<usize>, argmax: Vec<usize> },
    Fc(Tensor<T>),
    Dropout(Vec<f64>),
    Softmax,
}

/// Activations cached by a forward pass for the following backward pass.
pub struct Tape<T> {
    records: Vec<Record<T>>,
    probs: Option<Tensor<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            records: Vec::new(),
            probs: None,
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> Option<&Tensor<T>> {
        self.probs.as_ref()
    }
}

/// A sequential network: layer specs plus their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerSpec>,
    params: ParameterSet<T>,
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights and zero biases.
    pub fn initialize<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut params = Vec::new();
        for spec in &layers {
            if let Some((ws, bs)) = spec.param_shapes() {
                params.push(LayerParams {
                    weights: glorot_uniform_init(&ws, rng)?,
                    biases: Tensor::zeros(&bs),
                });
            }
        }
        Self::with_params(layers, ParameterSet::new(params))
    }

    pub fn with_params(layers: Vec<LayerSpec>, params: ParameterSet<T>) -> Result<Self> {
        let shapes: Vec<_> = layers.iter().filter_map(LayerSpec::param_shapes).collect();
        if shapes.len() != params.layers.len() || params.velocities.len() != params.layers.len() {
            return Err(Error::invalid(format!(
                "{} parameterized layers but {} parameter entries",
                shapes.len(),
                params.layers.len()
            )));
        }
        for (i, ((ws, bs), (p, v))) in shapes
            .iter()
            .zip(params.layers.iter().zip(&params.velocities))
            .enumerate()
        {
            if p.weights.shape() != ws.as_slice()
                || p.biases.shape() != bs.as_slice()
                || v.weights.shape() != ws.as_slice()
                || v.biases.shape() != bs.as_slice()
            {
                return Err(Error::invalid(format!(
                    "parameter layer {i}: expected {ws:?}/{bs:?}, got {:?}/{:?}",
                    p.weights.shape(),
                    p.biases.shape()
                )));
            }
        }
        Ok(Network { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    /// Runs the network on one sample. When a tape is supplied, activations
    /// needed by [`Network::backward`] are recorded in it.
    pub fn forward(&self, input: &Tensor<T>, mut mode: Mode<'_>, mut tape: Option<&mut Tape<T>>) -> Result<Tensor<T>> {
        if let Some(t) = tape.as_deref_mut() {
            t.records.clear();
            t.probs = None;
        }
        let mut x = input.clone();
        let mut p = 0;
        for spec in &self.layers {
            let (next, rec) = match spec {
                LayerSpec::Conv3x3 { .. } => {
                    let lp = &self.params.layers[p];
                    p += 1;
                    let in_shape = [x.shape()[0], x.shape()[1], x.shape()[2]];
                    let (y, col) = conv3x3_unrolled(&x, &lp.weights, &lp.biases)?;
                    (y, Record::Conv { col, in_shape })
                }
                LayerSpec::FullyConnected { .. } => {
                    let lp = &self.params.layers[p];
                    p += 1;
                    let y = fc_forward(&x, &lp.weights, &lp.biases)?;
                    (y, Record::Fc(x))
                }
                LayerSpec::Relu => {
                    let mut y = x;
                    for v in y.data_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    let rec = match tape {
                        Some(_) => Record::Relu(y.clone()),
                        None => Record::Relu(Tensor::zeros(&[1])),
                    };
                    (y, rec)
                }
                LayerSpec::MaxPool2x2 => {
                    let in_shape = x.shape().to_vec();
                    let (y, argmax) = maxpool2x2_indexed(&x)?;
                    (y, Record::Pool { in_shape, argmax })
                }
                LayerSpec::Spp => {
                    let in_shape = x.shape().to_vec();
                    let (y, argmax) = spp_indexed(&x)?;
                    debug_assert_eq!(y.len(), in_shape[0] * SPP_CELLS);
                    (y, Record::Spp { in_shape, argmax })
                }
                LayerSpec::Dropout { rate } => match &mut mode {
                    Mode::Train(rng) if *rate > 0.0 => {
                        let mask = dropout_mask(x.len(), *rate, &mut **rng);
                        let mut y = x;
                        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
                            *v *= T::of(m);
                        }
                        (y, Record::Dropout(mask))
                    }
                    _ => {
                        let n = x.len();
                        (x, Record::Dropout(vec![1.0; n]))
                    }
                },
                LayerSpec::PairedSoftmax => (paired_softmax(&x)?, Record::Softmax),
            };
            if let Some(t) = tape.as_deref_mut() {
                t.records.push(rec);
            }
            x = next;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        if let Some(t) = tape {
            t.probs = Some(x.clone());
        }
        Ok(x)
    }

    /// Accumulates `scale · ∂CE/∂θ` for the sample recorded on `tape` into
    /// `grads`. The last layer must be a paired softmax.
    pub fn backward(&self, tape: &Tape<T>, labels: &[bool], scale: T, grads: &mut Gradients<T>) -> Result<()> {
        let probs = tape
            .probs
            .as_ref()
            .ok_or_else(|| Error::InvalidState("backward called before forward".into()))?;
        if self.layers.last() != Some(&LayerSpec::PairedSoftmax) {
            return Err(Error::InvalidState("network does not end in a paired softmax".into()));
        }
        if probs.len() != 2 * labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} outputs",
                labels.len(),
                probs.len()
            )));
        }
        // Softmax + cross-entropy: ∂L/∂z = p - y within each pair.
        let mut g = Tensor::from_fn(probs.shape(), |i| {
            let present = labels[i / 2];
            let target = if (i % 2 == 0) == present { T::one() } else { T::zero() };
            probs.data()[i] - target
        });
        let mut p = self.params.layers.len();
        for (spec, rec) in self.layers.iter().zip(&tape.records).rev() {
            g = match (spec, rec) {
                (LayerSpec::PairedSoftmax, _) => g,
                (LayerSpec::FullyConnected { .. }, Record::Fc(input)) => {
                    p -= 1;
                    let (gx, gw, gb) = fc_backward(input, &self.params.layers[p].weights, &g);
                    grads.accumulate(p, &gw, &gb, scale);
                    gx
                }
                (LayerSpec::Conv3x3 { .. }, Record::Conv { col, in_shape }) => {
                    p -= 1;
                    let (gx, gw, gb) = conv3x3_backward_unrolled(col, *in_shape, &self.params.layers[p].weights, &g)?;
                    grads.accumulate(p, &gw, &gb, scale);
                    gx
                }
                (LayerSpec::Relu, Record::Relu(out)) => {
                    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
                        if o <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    g
                }
                (LayerSpec::MaxPool2x2, Record::Pool { in_shape, argmax })
                | (LayerSpec::Spp, Record::Spp { in_shape, argmax }) => scatter_max_grad(in_shape, argmax, &g),
                (LayerSpec::Dropout { .. }, Record::Dropout(mask)) => {
                    for (gv, &m) in g.data_mut().iter_mut().zip(mask) {
                        *gv *= T::of(m);
                    }
                    g
                }
                _ => return Err(Error::InvalidState("tape does not match network layers".into())),
            };
        }
        Ok(())
    }

    /// Mean cross-entropy over a `[B, C, H, W]` batch plus `l2 · Σ w²` over
    /// weights (biases are not penalized), together with its gradient.
    pub fn batch_gradients(
        &self,
        batch: &Tensor<T>,
        labels: &[Vec<bool>],
        l2_weight: f64,
        mut mode: Mode<'_>,
    ) -> Result<(f64, Gradients<T>)> {
        let (b, sample_shape) = match batch.shape() {
            [b, rest @ ..] if !rest.is_empty() => (*b, rest.to_vec()),
            s => return Err(Error::invalid(format!("batch tensor of shape {s:?}"))),
        };
        if labels.len() != b {
            return Err(Error::invalid(format!("{} labels for batch of {b}", labels.len())));
        }
        let per = batch.len() / b;
        let scale = T::of(1.0 / b as f64);
        let mut grads = Gradients::zeros_for(&self.params);
        let mut tape = Tape::new();
        let mut loss = 0.0;
        for (i, lab) in labels.iter().enumerate() {
            let x = Tensor::new(sample_shape.clone(), batch.data()[i * per..(i + 1) * per].to_vec())?;
            let m = match &mut mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(rng) => Mode::Train(&mut **rng),
            };
            let probs = self.forward(&x, m, Some(&mut tape))?;
            loss += cross_entropy_paired(&probs, lab)?;
            self.backward(&tape, lab, scale, &mut grads)?;
        }
        loss /= b as f64;
        if l2_weight > 0.0 {
            let two_l2 = T::of(2.0 * l2_weight);
            for (g, p) in grads.layers.iter_mut().zip(&self.params.layers) {
                loss += l2_weight * p.weights.sum_squares();
                for (gv, &w) in g.weights.data_mut().iter_mut().zip(p.weights.data()) {
                    *gv += two_l2 * w;
                }
            }
        }
        Ok((loss, grads))
    }

    /// Loss of [`Network::batch_gradients`] without computing gradients.
    pub fn batch_loss(&self, batch: &Tensor<T>, labels: &[Vec<bool>], l2_weight: f64) -> Result<f64> {
        let b = batch.shape()[0];
        let per = batch.len() / b;
        let sample_shape = batch.shape()[1..].to_vec();
        let mut loss = 0.0;
        for (i, lab) in labels.iter().enumerate() {
            let x = Tensor::new(sample_shape.clone(), batch.data()[i * per..(i + 1) * per].to_vec())?;
            loss += cross_entropy_paired(&self.forward(&x, Mode::Eval, None)?, lab)?;
        }
        loss /= b as f64;
        for p in &self.params.layers {
            loss += l2_weight * p.weights.sum_squares();
        }
        Ok(loss)
    }
}

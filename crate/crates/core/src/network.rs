//! The eye-closedness network and its batched training passes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, Conv2d, Dense, Layer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Input extents of the full-size model: 100x100 grayscale.
pub const INPUT_SHAPE: [usize; 3] = [100, 100, 1];

/// One gradient per parameter tensor, in [`Network::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

/// One row of the architecture summary (activations are folded away).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub layer: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Validates that shapes propagate to a single output unit.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.len() != 3 || input_shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "input must be [H, W, C] with positive extents, got {input_shape:?}"
            )));
        }
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        if shape != [1] {
            return Err(Error::Shape(format!(
                "network must end in a single unit, got {shape:?}"
            )));
        }
        Ok(Network {
            input_shape,
            layers,
        })
    }

    /// conv(3x3) -> relu -> pool, twice, then three dense layers ending in a
    /// sigmoid unit. `conv` holds the two filter counts and `hidden` the two
    /// hidden widths.
    pub fn lenet(
        rng: &mut Rng,
        input: [usize; 3],
        conv: [usize; 2],
        hidden: [usize; 2],
    ) -> Result<Self> {
        let mut shape = input.to_vec();
        let mut layers = Vec::new();
        let mut push = |layer: Layer, shape: &mut Vec<usize>| -> Result<()> {
            *shape = layer.output_shape(shape)?;
            layers.push(layer);
            Ok(())
        };
        let mut c_in = input[2];
        for &c_out in &conv {
            push(Layer::Conv2d(Conv2d::init(rng, c_in, c_out)?), &mut shape)?;
            push(Layer::activation(ActivationKind::Relu), &mut shape)?;
            push(Layer::avg_pool(), &mut shape)?;
            c_in = c_out;
        }
        push(Layer::flatten(), &mut shape)?;
        let mut n_in = shape[0];
        for &n_out in &hidden {
            push(Layer::Dense(Dense::init(rng, n_in, n_out)?), &mut shape)?;
            push(Layer::activation(ActivationKind::Relu), &mut shape)?;
            n_in = n_out;
        }
        push(Layer::Dense(Dense::init(rng, n_in, 1)?), &mut shape)?;
        push(Layer::activation(ActivationKind::Sigmoid), &mut shape)?;
        Network::new(input.to_vec(), layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Output extents after every layer, activations included.
    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                // Shapes were validated at construction.
                shape = l.output_shape(&shape).expect("validated network");
                shape.clone()
            })
            .collect()
    }

    /// Per-layer rows without the activation stages.
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.layers
            .iter()
            .zip(self.output_shapes())
            .filter(|(l, _)| !matches!(l, Layer::Activation { .. }))
            .map(|(l, output_shape)| SummaryRow {
                layer: l.name(),
                output_shape,
                params: l.param_count(),
            })
            .collect()
    }

    fn check_sample(&self, sample: &Tensor) -> Result<()> {
        if sample.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network expects {:?} input, got {:?}",
                self.input_shape,
                sample.shape()
            )));
        }
        Ok(())
    }

    /// Training forward over `[B, H, W, C]`; returns `[B]` probabilities and
    /// keeps per-layer caches for [`Network::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let samples = batch.unstack()?;
        let probs = self.forward_samples(samples)?;
        Tensor::new(vec![probs.len()], probs)
    }

    pub fn forward_samples(&mut self, samples: Vec<Tensor>) -> Result<Vec<f32>> {
        if samples.is_empty() {
            return Err(Error::InvalidShape("empty batch".into()));
        }
        for s in &samples {
            self.check_sample(s)?;
        }
        let mut acts = samples;
        for layer in &mut self.layers {
            acts = layer.forward_batch(acts)?;
        }
        let probs: Vec<f32> = acts.iter().map(|t| t.data()[0]).collect();
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(probs)
    }

    /// Gradients of the loss for every parameter given `dL/dp` per sample.
    /// The caller folds any batch-mean scaling into `loss_grad`.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Grads> {
        if loss_grad.rank() != 1 {
            return Err(Error::Shape(format!(
                "loss gradient must be [B], got {:?}",
                loss_grad.shape()
            )));
        }
        let mut upstream = loss_grad
            .data()
            .iter()
            .map(|&g| Tensor::new(vec![1], vec![g]))
            .collect::<Result<Vec<_>>>()?;
        let mut grads: Vec<Tensor> = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let (dx, mut pg) = layer.backward_batch(&upstream, i > 0)?;
            pg.reverse();
            grads.extend(pg);
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        grads.reverse();
        Ok(Grads(grads))
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Cache-free single-sample probability.
    pub fn infer(&self, sample: &Tensor) -> Result<f32> {
        self.check_sample(sample)?;
        let mut x = self.layers[0].infer(sample)?;
        for layer in &self.layers[1..] {
            x = layer.infer(&x)?;
        }
        Ok(x.data()[0])
    }

    pub fn infer_many(&self, samples: &[Tensor]) -> Result<Vec<f32>> {
        samples.par_iter().map(|s| self.infer(s)).collect()
    }
}

/// The full-size model: 100x100x1 input, 6 and 16 filters, 120 and 84 hidden units.
pub fn build_fatigue_net(rng: &mut Rng) -> Network {
    Network::lenet(rng, INPUT_SHAPE, [6, 16], [120, 84]).expect("fixed architecture is valid")
}

//! Layer kernels for single samples plus the cached, batched [`Layer`] wrapper.
//!
//! Image tensors are `[H, W, C]` row-major. Convolution kernels are
//! `[kh, kw, C_in, C_out]`, dense weights are `[n_out, n_in]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform draw on `[-sqrt(6/(fan_in+fan_out)), +sqrt(..)]`.
pub fn glorot_uniform(
    rng: &mut Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidShape(format!(
            "fan_in and fan_out must be positive, got {fan_in} and {fan_out}"
        )));
    }
    let mut t = Tensor::zeros(shape)?;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    for v in t.data_mut() {
        *v = rng.uniform(-bound, bound);
    }
    Ok(t)
}

// Eight independent partial sums let the compiler vectorize while keeping
// the summation order fixed.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}

#[inline]
fn axpy(y: &mut [f32], alpha: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Shape(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Output extents of a valid (unpadded, stride 1) convolution.
pub fn conv2d_output_shape(input: &[usize], kernel: &[usize]) -> Result<Vec<usize>> {
    let [h, w, c] = *input else {
        return Err(Error::Shape(format!(
            "conv input must be [H, W, C], got {input:?}"
        )));
    };
    let [kh, kw, kc, f] = *kernel else {
        return Err(Error::Shape(format!(
            "conv kernels must be [kh, kw, C, F], got {kernel:?}"
        )));
    };
    if kc != c {
        return Err(Error::Shape(format!(
            "conv expects {kc} input channels, got {c}"
        )));
    }
    if h < kh || w < kw {
        return Err(Error::Shape(format!(
            "conv input {h}x{w} smaller than kernel {kh}x{kw}"
        )));
    }
    Ok(vec![h - kh + 1, w - kw + 1, f])
}

pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let out_shape = conv2d_output_shape(input.shape(), kernels.shape())?;
    let (w, c) = (input.shape()[1], input.shape()[2]);
    let (kh, kw, f) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[3]);
    if bias.shape() != [f] {
        return Err(Error::Shape(format!(
            "conv bias must be [{f}], got {:?}",
            bias.shape()
        )));
    }
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; oh * ow * f];
    for i in 0..oh {
        for j in 0..ow {
            let o = &mut out[(i * ow + j) * f..][..f];
            o.copy_from_slice(bias.data());
            for u in 0..kh {
                for v in 0..kw {
                    let xrow = &x[((i + u) * w + j + v) * c..][..c];
                    let krow = &k[(u * kw + v) * c * f..][..c * f];
                    for (ch, &xv) in xrow.iter().enumerate() {
                        axpy(o, xv, &krow[ch * f..][..f]);
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Exact gradients of [`conv2d_forward`] given the forward input.
/// The input gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    upstream: &Tensor,
    input: &Tensor,
    kernels: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let out_shape = conv2d_output_shape(input.shape(), kernels.shape())?;
    if upstream.shape() != out_shape.as_slice() {
        return Err(Error::Shape(format!(
            "conv upstream must be {out_shape:?}, got {:?}",
            upstream.shape()
        )));
    }
    let (w, c) = (input.shape()[1], input.shape()[2]);
    let (kh, kw, f) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[3]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let x = input.data();
    let k = kernels.data();
    let up = upstream.data();

    let mut dk = kernels.zeros_like();
    let mut db = vec![0.0f32; f];
    let mut dx = need_input.then(|| input.zeros_like());
    {
        let dkd = dk.data_mut();
        for i in 0..oh {
            for j in 0..ow {
                let g = &up[(i * ow + j) * f..][..f];
                for (b, gv) in db.iter_mut().zip(g) {
                    *b += gv;
                }
                for u in 0..kh {
                    for v in 0..kw {
                        let base = ((i + u) * w + j + v) * c;
                        let kbase = (u * kw + v) * c * f;
                        for ch in 0..c {
                            let xv = x[base + ch];
                            axpy(&mut dkd[kbase + ch * f..][..f], xv, g);
                            if let Some(dx) = dx.as_mut() {
                                dx.data_mut()[base + ch] += dot(&k[kbase + ch * f..][..f], g);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernels: dk,
        bias: Tensor::new(vec![f], db)?,
    })
}

/// 2x2 mean pooling, stride 2; an odd trailing row/column is dropped.
pub fn avgpool_output_shape(input: &[usize]) -> Result<Vec<usize>> {
    let [h, w, c] = *input else {
        return Err(Error::Shape(format!(
            "pool input must be [H, W, C], got {input:?}"
        )));
    };
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("pool input {h}x{w} smaller than 2x2")));
    }
    Ok(vec![h / 2, w / 2, c])
}

pub fn avgpool_forward(input: &Tensor) -> Result<Tensor> {
    let out_shape = avgpool_output_shape(input.shape())?;
    let (w, c) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let x = input.data();
    let mut out = vec![0.0f32; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let r0 = ((2 * i) * w + 2 * j) * c;
            let r1 = ((2 * i + 1) * w + 2 * j) * c;
            for ch in 0..c {
                let s = (x[r0 + ch] + x[r0 + c + ch]) + (x[r1 + ch] + x[r1 + c + ch]);
                out[(i * ow + j) * c + ch] = s * 0.25;
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn avgpool_backward(upstream: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let out_shape = avgpool_output_shape(input_shape)?;
    if upstream.shape() != out_shape.as_slice() {
        return Err(Error::Shape(format!(
            "pool upstream must be {out_shape:?}, got {:?}",
            upstream.shape()
        )));
    }
    let (w, c) = (input_shape[1], input_shape[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let up = upstream.data();
    let mut dx = Tensor::zeros(input_shape)?;
    let d = dx.data_mut();
    for i in 0..oh {
        for j in 0..ow {
            let r0 = ((2 * i) * w + 2 * j) * c;
            let r1 = ((2 * i + 1) * w + 2 * j) * c;
            for ch in 0..c {
                let g = up[(i * ow + j) * c + ch] * 0.25;
                d[r0 + ch] = g;
                d[r0 + c + ch] = g;
                d[r1 + ch] = g;
                d[r1 + c + ch] = g;
            }
        }
    }
    Ok(dx)
}

fn dense_check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    expect_rank(weights, 2, "dense weights")?;
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n_in || input.rank() != 1 {
        return Err(Error::Shape(format!(
            "dense expects [{n_in}] input, got {:?}",
            input.shape()
        )));
    }
    if bias.shape() != [n_out] {
        return Err(Error::Shape(format!(
            "dense bias must be [{n_out}], got {:?}",
            bias.shape()
        )));
    }
    Ok((n_out, n_in))
}

pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = dense_check(input, weights, bias)?;
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, b)| b + dot(row, x))
        .collect::<Vec<_>>();
    Tensor::new(vec![n_out], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(upstream: &Tensor, input: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
    expect_rank(weights, 2, "dense weights")?;
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if upstream.shape() != [n_out] || input.shape() != [n_in] {
        return Err(Error::Shape(format!(
            "dense backward expects upstream [{n_out}] and input [{n_in}], got {:?} and {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let up = upstream.data();
    let mut dx = vec![0.0f32; n_in];
    let mut dw = weights.zeros_like();
    for ((row, drow), &g) in weights
        .data()
        .chunks_exact(n_in)
        .zip(dw.data_mut().chunks_exact_mut(n_in))
        .zip(up)
    {
        axpy(&mut dx, g, row);
        axpy(drow, g, input.data());
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![n_in], dx)?,
        weights: dw,
        bias: upstream.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_forward(input: &Tensor, kind: ActivationKind) -> Tensor {
    let mut out = input.clone();
    match kind {
        ActivationKind::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        ActivationKind::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
    }
    out
}

/// `input` is the pre-activation value seen by the forward pass.
pub fn activation_backward(
    upstream: &Tensor,
    input: &Tensor,
    kind: ActivationKind,
) -> Result<Tensor> {
    if upstream.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "activation upstream {:?} does not match input {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        *g *= match kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    cache: Option<Vec<Tensor>>,
}

impl Conv2d {
    pub fn new(kernels: Tensor, bias: Tensor) -> Result<Self> {
        expect_rank(&kernels, 4, "conv kernels")?;
        if bias.shape() != [kernels.shape()[3]] {
            return Err(Error::Shape(format!(
                "conv bias {:?} does not match kernels {:?}",
                bias.shape(),
                kernels.shape()
            )));
        }
        Ok(Conv2d {
            kernels,
            bias,
            cache: None,
        })
    }

    /// 3x3 kernels with Glorot-uniform weights and zero bias.
    pub fn init(rng: &mut Rng, c_in: usize, c_out: usize) -> Result<Self> {
        let kernels = glorot_uniform(rng, &[3, 3, c_in, c_out], 9 * c_in, 9 * c_out)?;
        Conv2d::new(kernels, Tensor::zeros(&[c_out])?)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
    cache: Option<Vec<Tensor>>,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        expect_rank(&weights, 2, "dense weights")?;
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::Shape(format!(
                "dense bias {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(Dense {
            weights,
            bias,
            cache: None,
        })
    }

    pub fn init(rng: &mut Rng, n_in: usize, n_out: usize) -> Result<Self> {
        let weights = glorot_uniform(rng, &[n_out, n_in], n_in, n_out)?;
        Dense::new(weights, Tensor::zeros(&[n_out])?)
    }
}

/// A network stage. Parametric layers keep the last batch's inputs for backward.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    AvgPool2d {
        cache: Option<Vec<usize>>,
    },
    Flatten {
        cache: Option<Vec<usize>>,
    },
    Dense(Dense),
    Activation {
        kind: ActivationKind,
        cache: Option<Vec<Tensor>>,
    },
}

impl Layer {
    pub fn avg_pool() -> Self {
        Layer::AvgPool2d { cache: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { cache: None }
    }

    pub fn activation(kind: ActivationKind) -> Self {
        Layer::Activation { kind, cache: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "Conv2D",
            Layer::AvgPool2d { .. } => "AveragePooling2D",
            Layer::Flatten { .. } => "Flatten",
            Layer::Dense(_) => "Dense",
            Layer::Activation { kind, .. } => kind.name(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => conv2d_output_shape(input, c.kernels.shape()),
            Layer::AvgPool2d { .. } => avgpool_output_shape(input),
            Layer::Flatten { .. } => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                let n_in = d.weights.shape()[1];
                if input != [n_in] {
                    return Err(Error::Shape(format!(
                        "dense expects [{n_in}] input, got {input:?}"
                    )));
                }
                Ok(vec![d.weights.shape()[0]])
            }
            Layer::Activation { .. } => Ok(input.to_vec()),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.kernels, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.kernels, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Single-sample forward without touching the cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => conv2d_forward(input, &c.kernels, &c.bias),
            Layer::AvgPool2d { .. } => avgpool_forward(input),
            Layer::Flatten { .. } => {
                let n = input.len();
                input.clone().reshape(vec![n])
            }
            Layer::Dense(d) => dense_forward(input, &d.weights, &d.bias),
            Layer::Activation { kind, .. } => Ok(activation_forward(input, *kind)),
        }
    }

    /// Forward over a batch of samples, caching what backward needs.
    pub fn forward_batch(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>> {
        let outputs = inputs
            .par_iter()
            .map(|x| self.infer(x))
            .collect::<Result<Vec<_>>>()?;
        match self {
            Layer::Conv2d(Conv2d { cache, .. })
            | Layer::Dense(Dense { cache, .. })
            | Layer::Activation { cache, .. } => *cache = Some(inputs),
            Layer::AvgPool2d { cache } | Layer::Flatten { cache } => {
                *cache = Some(inputs[0].shape().to_vec())
            }
        }
        Ok(outputs)
    }

    /// Consumes the forward cache. Returns per-sample input gradients (when
    /// requested) and the batch-summed parameter gradients in `params()` order.
    pub fn backward_batch(
        &mut self,
        upstream: &[Tensor],
        need_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, Vec<Tensor>)> {
        let name = self.name();
        let missing = || Error::State(format!("{name} backward called without forward"));
        match self {
            Layer::Conv2d(conv) => {
                let inputs = conv.cache.take().ok_or_else(missing)?;
                check_batch(upstream, &inputs)?;
                let per_sample = inputs
                    .par_iter()
                    .zip(upstream.par_iter())
                    .map(|(x, g)| conv2d_backward(g, x, &conv.kernels, need_input))
                    .collect::<Result<Vec<_>>>()?;
                let mut dk = conv.kernels.zeros_like();
                let mut db = conv.bias.zeros_like();
                let mut dx = Vec::with_capacity(if need_input { per_sample.len() } else { 0 });
                // Fixed sample order keeps the reduction independent of threading.
                for g in per_sample {
                    dk.add_assign(&g.kernels)?;
                    db.add_assign(&g.bias)?;
                    if let Some(x) = g.input {
                        dx.push(x);
                    }
                }
                Ok((need_input.then_some(dx), vec![dk, db]))
            }
            Layer::Dense(dense) => {
                let inputs = dense.cache.take().ok_or_else(missing)?;
                check_batch(upstream, &inputs)?;
                let dx = if need_input {
                    Some(
                        inputs
                            .par_iter()
                            .zip(upstream.par_iter())
                            .map(|(x, g)| dense_backward(g, x, &dense.weights).map(|d| d.input))
                            .collect::<Result<Vec<_>>>()?,
                    )
                } else {
                    None
                };
                let (n_out, n_in) = (dense.weights.shape()[0], dense.weights.shape()[1]);
                for (x, g) in inputs.iter().zip(upstream) {
                    if x.shape() != [n_in] || g.shape() != [n_out] {
                        return Err(Error::Shape(format!(
                            "dense backward expects upstream [{n_out}] and input [{n_in}]"
                        )));
                    }
                }
                let mut dw = dense.weights.zeros_like();
                dw.data_mut()
                    .par_chunks_mut(n_in)
                    .enumerate()
                    .for_each(|(o, row)| {
                        for (x, g) in inputs.iter().zip(upstream) {
                            axpy(row, g.data()[o], x.data());
                        }
                    });
                let mut db = dense.bias.zeros_like();
                for g in upstream {
                    db.add_assign(g)?;
                }
                Ok((dx, vec![dw, db]))
            }
            Layer::AvgPool2d { cache } => {
                let shape = cache.take().ok_or_else(missing)?;
                let dx = upstream
                    .par_iter()
                    .map(|g| avgpool_backward(g, &shape))
                    .collect::<Result<Vec<_>>>()?;
                Ok((Some(dx), Vec::new()))
            }
            Layer::Flatten { cache } => {
                let shape = cache.take().ok_or_else(missing)?;
                let dx = upstream
                    .iter()
                    .map(|g| g.clone().reshape(shape.clone()))
                    .collect::<Result<Vec<_>>>()?;
                Ok((Some(dx), Vec::new()))
            }
            Layer::Activation { kind, cache } => {
                let kind = *kind;
                let inputs = cache.take().ok_or_else(missing)?;
                check_batch(upstream, &inputs)?;
                let dx = inputs
                    .par_iter()
                    .zip(upstream.par_iter())
                    .map(|(x, g)| activation_backward(g, x, kind))
                    .collect::<Result<Vec<_>>>()?;
                Ok((Some(dx), Vec::new()))
            }
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(Conv2d { cache, .. })
            | Layer::Dense(Dense { cache, .. })
            | Layer::Activation { cache, .. } => *cache = None,
            Layer::AvgPool2d { cache } | Layer::Flatten { cache } => *cache = None,
        }
    }
}

fn check_batch(upstream: &[Tensor], inputs: &[Tensor]) -> Result<()> {
    if upstream.len() != inputs.len() {
        return Err(Error::Shape(format!(
            "backward got {} upstream gradients for a batch of {}",
            upstream.len(),
            inputs.len()
        )));
    }
    Ok(())
}

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use fatigue_core::data::{write_pgm, Label};
use fatigue_core::layers::{
    activation_backward, activation_forward, avgpool_backward, avgpool_forward, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, ActivationKind, Conv2d, Dense, Layer,
};
use fatigue_core::loss::bce_loss;
use fatigue_core::{GrayImage, Network, Rng, Tensor};

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

/// `|a - n| / (|a| + |n|)` over a whole tensor; 0 when both vanish.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let (mut diff, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        diff += (a - n) * (a - n);
        a2 += a * a;
        n2 += n * n;
    }
    let den = a2.sqrt() + n2.sqrt();
    if den == 0.0 {
        0.0
    } else {
        diff.sqrt() / den
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_diff(x: &mut [f32], mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(x);
            x[i] = orig - STEP;
            let down = f(x);
            x[i] = orig;
            let h = (orig + STEP) as f64 - (orig - STEP) as f64;
            (up - down) / h
        })
        .collect()
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], low: f32, high: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(low, high)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the step.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.bernoulli(0.5) {
            *v = -*v;
        }
    }
    t
}

fn project(u: &Tensor, y: &Tensor) -> f64 {
    u.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

fn with(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Per-layer checks of the scalar `sum(u * layer(x))` for a random `u`.
/// Returns `(name, relative error)` pairs.
pub fn layer_checks(seed: u64) -> Vec<(String, f64)> {
    let mut rng = Rng::new(seed, 77);
    let mut out = Vec::new();

    let x = random_tensor(&mut rng, &[6, 7, 2], -1.0, 1.0);
    let k = random_tensor(&mut rng, &[3, 3, 2, 3], -0.5, 0.5);
    let b = random_tensor(&mut rng, &[3], -0.1, 0.1);
    let u = random_tensor(&mut rng, &[4, 5, 3], -1.0, 1.0);
    let g = conv2d_backward(&u, &x, &k, true).unwrap();
    let mut xv = x.data().to_vec();
    let n = central_diff(&mut xv, |d| {
        project(&u, &conv2d_forward(&with(x.shape(), d), &k, &b).unwrap())
    });
    out.push((
        "conv input".to_string(),
        rel_err(g.input.unwrap().data(), &n),
    ));
    let mut kv = k.data().to_vec();
    let n = central_diff(&mut kv, |d| {
        project(&u, &conv2d_forward(&x, &with(k.shape(), d), &b).unwrap())
    });
    out.push(("conv kernels".to_string(), rel_err(g.kernels.data(), &n)));
    let mut bv = b.data().to_vec();
    let n = central_diff(&mut bv, |d| {
        project(&u, &conv2d_forward(&x, &k, &with(&[3], d)).unwrap())
    });
    out.push(("conv bias".to_string(), rel_err(g.bias.data(), &n)));

    let x = random_tensor(&mut rng, &[5, 6, 2], -1.0, 1.0);
    let u = random_tensor(&mut rng, &[2, 3, 2], -1.0, 1.0);
    let dx = avgpool_backward(&u, x.shape()).unwrap();
    let mut xv = x.data().to_vec();
    let n = central_diff(&mut xv, |d| {
        project(&u, &avgpool_forward(&with(x.shape(), d)).unwrap())
    });
    out.push(("pool input".to_string(), rel_err(dx.data(), &n)));

    let x = random_tensor(&mut rng, &[7], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4, 7], -0.5, 0.5);
    let b = random_tensor(&mut rng, &[4], -0.1, 0.1);
    let u = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let g = dense_backward(&u, &x, &w).unwrap();
    let mut xv = x.data().to_vec();
    let n = central_diff(&mut xv, |d| {
        project(&u, &dense_forward(&with(&[7], d), &w, &b).unwrap())
    });
    out.push(("dense input".to_string(), rel_err(g.input.data(), &n)));
    let mut wv = w.data().to_vec();
    let n = central_diff(&mut wv, |d| {
        project(&u, &dense_forward(&x, &with(&[4, 7], d), &b).unwrap())
    });
    out.push(("dense weights".to_string(), rel_err(g.weights.data(), &n)));
    let mut bv = b.data().to_vec();
    let n = central_diff(&mut bv, |d| {
        project(&u, &dense_forward(&x, &w, &with(&[4], d)).unwrap())
    });
    out.push(("dense bias".to_string(), rel_err(g.bias.data(), &n)));

    for kind in [ActivationKind::Relu, ActivationKind::Sigmoid] {
        let x = away_from_zero(&mut rng, &[9]);
        let u = random_tensor(&mut rng, &[9], -1.0, 1.0);
        let dx = activation_backward(&u, &x, kind).unwrap();
        let mut xv = x.data().to_vec();
        let n = central_diff(&mut xv, |d| {
            project(&u, &activation_forward(&with(&[9], d), kind))
        });
        out.push((format!("{} input", kind.name()), rel_err(dx.data(), &n)));
    }
    out
}

/// 8x8 clone with every layer type. A second pooling stage would leave a
/// 1x1 map unpoolable, so the clone has one.
pub fn clone_8x8(rng: &mut Rng) -> Network {
    let layers = vec![
        Layer::Conv2d(Conv2d::init(rng, 1, 3).unwrap()),
        Layer::activation(ActivationKind::Relu),
        Layer::avg_pool(),
        Layer::Conv2d(Conv2d::init(rng, 3, 4).unwrap()),
        Layer::activation(ActivationKind::Relu),
        Layer::flatten(),
        Layer::Dense(Dense::init(rng, 4, 6).unwrap()),
        Layer::activation(ActivationKind::Relu),
        Layer::Dense(Dense::init(rng, 6, 5).unwrap()),
        Layer::activation(ActivationKind::Relu),
        Layer::Dense(Dense::init(rng, 5, 1).unwrap()),
        Layer::activation(ActivationKind::Sigmoid),
    ];
    Network::new(vec![8, 8, 1], layers).unwrap()
}

/// Full-topology clone on the smallest input both pooling stages accept.
pub fn clone_10x10(rng: &mut Rng) -> Network {
    Network::lenet(rng, [10, 10, 1], [2, 3], [5, 4]).unwrap()
}

/// Straightforward f64 forward pass used as the finite-difference oracle.
/// Parameters are the flat tensors in `Network::parameters` order.
/// Also appends the sign of every ReLU input to `signs`.
fn reference_forward(
    net: &Network,
    params: &[Vec<f64>],
    sample: &Tensor,
    signs: &mut Vec<bool>,
) -> f64 {
    let mut shape = sample.shape().to_vec();
    let mut x: Vec<f64> = sample.data().iter().map(|&v| v as f64).collect();
    let mut p = 0;
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                let ks = c.kernels.shape();
                let (kh, kw, ci, f) = (ks[0], ks[1], ks[2], ks[3]);
                let (k, b) = (&params[p], &params[p + 1]);
                p += 2;
                let (h, w) = (shape[0], shape[1]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let mut y = vec![0.0; oh * ow * f];
                for i in 0..oh {
                    for j in 0..ow {
                        for o in 0..f {
                            let mut acc = b[o];
                            for u in 0..kh {
                                for v in 0..kw {
                                    for ch in 0..ci {
                                        acc += x[((i + u) * w + j + v) * ci + ch]
                                            * k[((u * kw + v) * ci + ch) * f + o];
                                    }
                                }
                            }
                            y[(i * ow + j) * f + o] = acc;
                        }
                    }
                }
                x = y;
                shape = vec![oh, ow, f];
            }
            Layer::AvgPool2d { .. } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut y = vec![0.0; oh * ow * c];
                for i in 0..oh {
                    for j in 0..ow {
                        for ch in 0..c {
                            let at = |r: usize, q: usize| x[(r * w + q) * c + ch];
                            y[(i * ow + j) * c + ch] = (at(2 * i, 2 * j)
                                + at(2 * i, 2 * j + 1)
                                + at(2 * i + 1, 2 * j)
                                + at(2 * i + 1, 2 * j + 1))
                                / 4.0;
                        }
                    }
                }
                x = y;
                shape = vec![oh, ow, c];
            }
            Layer::Flatten { .. } => shape = vec![x.len()],
            Layer::Dense(d) => {
                let n_in = d.weights.shape()[1];
                let (wt, b) = (&params[p], &params[p + 1]);
                p += 2;
                x = b
                    .iter()
                    .enumerate()
                    .map(|(o, bo)| bo + (0..n_in).map(|i| wt[o * n_in + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![x.len()];
            }
            Layer::Activation {
                kind: ActivationKind::Relu,
                ..
            } => {
                signs.extend(x.iter().map(|&v| v > 0.0));
                x.iter_mut().for_each(|v| *v = v.max(0.0))
            }
            Layer::Activation {
                kind: ActivationKind::Sigmoid,
                ..
            } => x.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        }
    }
    x[0]
}

/// Batch-mean BCE plus the ReLU sign pattern it was computed under.
fn reference_loss(
    net: &Network,
    params: &[Vec<f64>],
    samples: &[Tensor],
    labels: &[f32],
) -> (f64, Vec<bool>) {
    let eps = fatigue_core::loss::EPSILON;
    let mut signs = Vec::new();
    let total: f64 = samples
        .iter()
        .zip(labels)
        .map(|(s, &y)| {
            let p = reference_forward(net, params, s, &mut signs).clamp(eps, 1.0 - eps);
            let y = y as f64;
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    (total / samples.len() as f64, signs)
}

/// Per-tensor result of [`network_check`].
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub rel_err: f64,
    pub checked: usize,
    pub analytic_norm: f64,
    /// Entries whose perturbation moved some ReLU input across zero; central
    /// differences are meaningless there, so they are left out.
    pub kinked: usize,
}

/// End-to-end check of batch-mean BCE against every parameter tensor.
/// Biases are first set to small positive random values so units are live
/// and none sits exactly on a ReLU kink, as zero biases over a dead layer do.
pub fn network_check(mut net: Network, seed: u64, batch: usize) -> Vec<TensorCheck> {
    let mut rng = Rng::new(seed, 99);
    let n_params = net.parameters().len();
    for p in (1..n_params).step_by(2) {
        for v in net.parameters_mut()[p].data_mut() {
            *v = rng.uniform(0.02, 0.2);
        }
    }
    let shape = net.input_shape().to_vec();
    let samples: Vec<Tensor> = (0..batch)
        .map(|_| random_tensor(&mut rng, &shape, 0.0, 1.0))
        .collect();
    let labels: Vec<f32> = (0..batch).map(|i| (i % 2) as f32).collect();

    let probs = net.forward(&Tensor::stack(&samples).unwrap()).unwrap();
    let loss = bce_loss(probs.data(), &labels).unwrap();
    let grads = net
        .backward(&Tensor::new(vec![batch], loss.grad).unwrap())
        .unwrap();
    net.clear_cache();

    let names: Vec<String> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| match l {
            Layer::Conv2d(_) => vec![format!("{i}:conv kernels"), format!("{i}:conv bias")],
            Layer::Dense(_) => vec![format!("{i}:dense weights"), format!("{i}:dense bias")],
            _ => vec![],
        })
        .collect();

    let mut params: Vec<Vec<f64>> = net
        .parameters()
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let step = STEP as f64;
    let mut out = Vec::new();
    for (p, name) in names.into_iter().enumerate() {
        let analytic = grads.tensors()[p].data();
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for i in 0..params[p].len() {
            let orig = params[p][i];
            params[p][i] = orig + step;
            let (up, up_signs) = reference_loss(&net, &params, &samples, &labels);
            params[p][i] = orig - step;
            let (down, down_signs) = reference_loss(&net, &params, &samples, &labels);
            params[p][i] = orig;
            if up_signs == down_signs {
                a.push(analytic[i]);
                n.push((up - down) / (2.0 * step));
            }
        }
        out.push(TensorCheck {
            name,
            rel_err: rel_err(&a, &n),
            checked: a.len(),
            analytic_norm: analytic
                .iter()
                .map(|&v| v as f64 * v as f64)
                .sum::<f64>()
                .sqrt(),
            kinked: analytic.len() - a.len(),
        });
    }
    out
}

/// Dark noisy frame; open eyes get a bright disc somewhere near the centre.
pub fn blob_image(rng: &mut Rng, label: Label, size: usize) -> GrayImage {
    let mut img = GrayImage::new(
        size,
        size,
        (0..size * size)
            .map(|_| rng.uniform(0u8, 60) as f32)
            .collect(),
    )
    .unwrap();
    if label == Label::Open {
        let s = size as f64;
        let cx = rng.uniform(0.3 * s, 0.7 * s);
        let cy = rng.uniform(0.3 * s, 0.7 * s);
        let r = rng.uniform(0.08 * s, 0.16 * s);
        for row in 0..size {
            for col in 0..size {
                let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    img.set(row, col, rng.uniform(180u8, 255) as f32);
                }
            }
        }
    }
    img
}

/// Writes `per_class` PGM images into `root/closed` and `root/open`.
pub fn write_blob_corpus(root: &Path, per_class: usize, size: usize, seed: u64) {
    let mut rng = Rng::new(seed, 1234);
    for label in Label::ALL {
        let dir = root.join(label.name());
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let img = blob_image(&mut rng, label, size);
            write_pgm(&img, &dir.join(format!("{i:04}.pgm"))).unwrap();
        }
    }
}

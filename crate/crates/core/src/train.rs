//! Mini-batch training with binary cross-entropy and Adam, plus evaluation.

use rayon::prelude::*;

use crate::augment::{augment_sample, AugmentParams};
use crate::data::{batches, Dataset, Label};
use crate::error::{Error, Result};
use crate::image::rescale;
use crate::loss::bce_loss;
use crate::metrics::{
    confusion, macro_metrics, per_class_metrics, ClassMetrics, ConfusionMatrix2, EpochRecord,
};
use crate::network::{build_fatigue_net, Network};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{purpose, Rng};
use crate::tensor::Tensor;

/// Intensity scale applied to every image before it reaches the network.
pub const PIXEL_SCALE: f32 = 1.0 / 255.0;

/// Decision threshold; a probability exactly at the threshold predicts open.
pub const THRESHOLD: f32 = 0.5;

pub fn predict_label(probability: f32) -> Label {
    if probability >= THRESHOLD {
        Label::Open
    } else {
        Label::Closed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub augment_params: AugmentParams,
    pub learning_rate: f32,
    pub split_fraction: f64,
    /// Worker threads; 0 uses the global pool. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            seed: 42,
            augment: false,
            augment_params: AugmentParams::noisified(),
            learning_rate: 1e-3,
            split_fraction: 0.8,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split fraction must be in (0, 1], got {}",
                self.split_fraction
            )));
        }
        self.augment_params.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix2,
    pub per_class: [ClassMetrics; 2],
    pub macro_avg: ClassMetrics,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool for 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn network_input(image: &crate::image::GrayImage) -> Result<Tensor> {
    Ok(rescale(image, PIXEL_SCALE)?.to_tensor())
}

fn check_sets(net: &Network, sets: [&Dataset; 2]) -> Result<()> {
    for set in sets {
        if set.is_empty() {
            return Err(Error::DegenerateData(
                "training and test sets must be non-empty".into(),
            ));
        }
        let want = net.input_shape();
        if let Some(bad) = set
            .items()
            .iter()
            .find(|i| [i.image.height(), i.image.width(), 1] != want)
        {
            return Err(Error::Shape(format!(
                "{} is {}x{}, network expects {}x{}",
                bad.source.display(),
                bad.image.width(),
                bad.image.height(),
                want[1],
                want[0]
            )));
        }
    }
    Ok(())
}

/// Builds the full-size network from the config seed and trains it.
pub fn train(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let net = build_fatigue_net(&mut Rng::derive(config.seed, purpose::INIT, 0));
    train_network(net, train_set, test_set, config, |_| {})
}

/// Trains `net` for `config.epochs` epochs, calling `on_epoch` after each.
pub fn train_network(
    mut net: Network,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) + Send,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_sets(&net, [train_set, test_set])?;
    let counts = train_set.counts();
    if counts.contains(&0) {
        return Err(Error::DegenerateData(format!(
            "training set needs both classes, got {} closed and {} open",
            counts[0], counts[1]
        )));
    }
    with_threads(config.threads, move || {
        let n = train_set.len();
        let plain: Vec<Tensor> = if config.augment {
            Vec::new()
        } else {
            train_set
                .items()
                .par_iter()
                .map(|i| network_input(&i.image))
                .collect::<Result<_>>()?
        };
        let adam_config = AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(adam_config, net.parameters());
        let mut records = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            let mut shuffle = Rng::derive(config.seed, purpose::SHUFFLE, epoch as u64);
            let mut loss_sum = 0.0f64;
            let mut correct = 0usize;
            let batch_list = batches(train_set, config.batch_size, &mut shuffle)?;
            for batch in &batch_list {
                let inputs = batch
                    .par_iter()
                    .map(|&i| {
                        if config.augment {
                            let stream = (epoch * n + i) as u64;
                            let mut rng = Rng::derive(config.seed, purpose::AUGMENT, stream);
                            augment_sample(
                                &train_set.items()[i].image,
                                &config.augment_params,
                                &mut rng,
                            )
                        } else {
                            Ok(plain[i].clone())
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<f32> = batch
                    .iter()
                    .map(|&i| train_set.items()[i].label.as_f32())
                    .collect();
                let probs = net.forward_samples(inputs)?;
                let bce = bce_loss(&probs, &labels)?;
                if !bce.loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in epoch {}",
                        epoch + 1
                    )));
                }
                loss_sum += bce.loss;
                correct += probs
                    .iter()
                    .zip(batch)
                    .filter(|(&p, &i)| predict_label(p) == train_set.items()[i].label)
                    .count();
                let grad = Tensor::new(vec![bce.grad.len()], bce.grad)?;
                let grads = net.backward(&grad)?;
                adam.step(net.parameters_mut(), &grads)?;
            }
            let test = evaluate(&net, test_set)?;
            let record = EpochRecord {
                epoch: epoch + 1,
                train_loss: loss_sum / batch_list.len() as f64,
                train_accuracy: correct as f64 / n as f64,
                test_loss: test.loss,
                test_accuracy: test.accuracy(),
            };
            on_epoch(&record);
            records.push(record);
        }
        net.clear_cache();
        Ok(TrainOutcome {
            network: net,
            records,
        })
    })?
}

/// Thresholded predictions over `dataset` with loss, confusion matrix and metrics.
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::DegenerateData(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let probs = dataset
        .items()
        .par_iter()
        .map(|item| net.infer(&network_input(&item.image)?))
        .collect::<Result<Vec<f32>>>()?;
    let labels = dataset.labels();
    let targets: Vec<f32> = labels.iter().map(|l| l.as_f32()).collect();
    let loss = bce_loss(&probs, &targets)?.loss;
    let predictions: Vec<Label> = probs.iter().map(|&p| predict_label(p)).collect();
    let cm = confusion(&labels, &predictions)?;
    Ok(Evaluation {
        loss,
        confusion: cm,
        per_class: per_class_metrics(&cm),
        macro_avg: macro_metrics(&cm),
    })
}

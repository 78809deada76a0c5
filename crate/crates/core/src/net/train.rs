use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Arch, NetParams};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng;

/// Minibatch SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Batch gradients with a larger global l2 norm are rescaled to this
    /// norm. Zero disables clipping.
    pub max_grad_norm: f64,
    /// Decay the learning rate per epoch along a half cosine; constant when
    /// off.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            epochs: 15,
            max_grad_norm: 5.0,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return Err(Error::invalid("max_grad_norm must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Training accuracy per epoch, measured on the fly.
    pub epoch_accuracy: Vec<f64>,
    /// Accuracy of the final parameters on the validation samples, if any.
    pub validation_accuracy: Option<f64>,
}

/// Fraction of samples the classifier labels correctly.
pub fn accuracy(params: &NetParams, samples: &[(&GrayImage, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample set"));
    }
    let hits = samples
        .par_iter()
        .map(|(x, y)| params.predict(x).map(|p| (p == *y) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
}

/// Trains a classifier with momentum SGD on cross-entropy, with global
/// gradient-norm clipping and a cosine learning-rate decay over epochs.
///
/// Initialization and shuffling draw from separate streams derived from
/// `seed`. Per-sample gradients are summed in batch order, so the result does
/// not depend on the number of worker threads.
pub fn train(
    samples: &[(&GrayImage, usize)],
    validation: &[(&GrayImage, usize)],
    arch: Arch,
    config: &TrainConfig,
    seed: u64,
) -> Result<(NetParams, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    config.validate()?;
    if let Some((_, y)) = samples
        .iter()
        .chain(validation)
        .find(|(_, y)| *y >= arch.num_classes)
    {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            arch.num_classes
        )));
    }

    let mut init_rng = rng::stream(seed, 0);
    let mut shuffle_rng = rng::stream(seed, 1);
    let mut params = NetParams::init(arch, &mut init_rng);
    let mut velocity: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
        validation_accuracy: None,
    };

    for epoch in 0..config.epochs {
        let lr = if config.cosine_decay {
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / config.epochs as f64).cos())
        } else {
            config.learning_rate
        };
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let (x, y) = samples[i];
                    params
                        .loss_and_grads(x, y)
                        .map(|(loss, logits, _, g)| (loss, logits.argmax() == y, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut scale = 1.0 / batch.len() as f64;
            let mut total: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            for (loss, hit, g) in &per_sample {
                loss_sum += loss;
                correct += *hit as usize;
                for (acc, gi) in total.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b;
                    }
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::Numerical {
                    iteration: report.epoch_loss.len(),
                    message: "training loss diverged".into(),
                });
            }
            let norm = scale * total.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
                scale *= config.max_grad_norm / norm;
            }
            for ((p, v), g) in params.tensors_mut().iter_mut().zip(&mut velocity).zip(&total) {
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = config.momentum * *vi + gi * scale;
                    *pi -= lr * *vi;
                }
            }
        }
        report.epoch_loss.push(loss_sum / samples.len() as f64);
        report.epoch_accuracy.push(correct as f64 / samples.len() as f64);
    }
    if !validation.is_empty() {
        report.validation_accuracy = Some(accuracy(&params, validation)?);
    }
    Ok((params, report))
}

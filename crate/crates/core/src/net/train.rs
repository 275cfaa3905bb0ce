use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{loss, loss_and_gradients, ForwardMode, Sample};
use super::optim::RAdam;
use super::params::{init_params, ArchSpec, NetworkParameters};
use crate::error::{PixcueError, Result};
use crate::forward_model::{acquire, undersample, MaskSpec, RealImage, SamplingMask};
use crate::quantizer::quantize;
use crate::rng::{derive_seed, stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Radam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub epochs: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Dropout fraction used by dropout-mode forward passes.
    #[serde(default)]
    pub dropout_fraction: f64,
    /// Apply dropout while training (otherwise only at MC inference).
    #[serde(default)]
    pub train_with_dropout: bool,
    #[serde(default = "default_val")]
    pub validation_fraction: f64,
}

fn default_lr() -> f64 {
    1e-4
}

fn one() -> usize {
    1
}

fn default_val() -> f64 {
    0.2
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::default(),
            learning_rate: default_lr(),
            optimizer: Optimizer::Radam,
            epochs: 1,
            batch_size: 1,
            seed: 0,
            dropout_fraction: 0.0,
            train_with_dropout: false,
            validation_fraction: default_val(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(PixcueError::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(PixcueError::Config(format!(
                "dropout fraction {} outside [0, 1)",
                self.dropout_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(PixcueError::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(PixcueError::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    fn train_mode(&self, step: u64) -> ForwardMode {
        if self.train_with_dropout && self.dropout_fraction > 0.0 {
            ForwardMode::Dropout {
                fraction: self.dropout_fraction,
                seed: derive_seed(derive_seed(self.seed, stream::DROPOUT), step),
            }
        } else {
            ForwardMode::Deterministic
        }
    }
}

/// Fully sampled reference image and the mask used to undersample it.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub image: RealImage,
    pub mask: SamplingMask,
}

impl TrainingExample {
    pub fn to_sample(&self, n_bits: u32) -> Result<Sample> {
        let y = acquire(&self.image)?;
        Ok(Sample {
            y_u: undersample(&y, &self.mask)?,
            mask: self.mask.clone(),
            target: quantize(&self.image, n_bits)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParameters,
    pub config: TrainingConfig,
    pub best_validation_loss: f64,
    pub history: Vec<EpochLoss>,
    pub mask_spec: Option<MaskSpec>,
}

impl Checkpoint {
    /// Wraps parameters that were never trained (empty history).
    pub fn untrained(params: NetworkParameters, config: TrainingConfig) -> Self {
        Self {
            params,
            config,
            best_validation_loss: f64::INFINITY,
            history: Vec::new(),
            mask_spec: None,
        }
    }
}

/// Seeded split into (train, validation) index lists.
pub fn split_indices(len: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream_rng(seed, stream::SHUFFLE));
    let n_val = ((len as f64 * validation_fraction).round() as usize).min(len.saturating_sub(1));
    let val = idx.split_off(len - n_val);
    (idx, val)
}

/// Trains from a seeded initialization, keeping the parameters with the best
/// validation loss. With no validation split the training set stands in.
pub fn train(dataset: &[TrainingExample], config: &TrainingConfig) -> Result<Checkpoint> {
    let params = init_params(&config.arch, config.seed)?;
    train_from(params, dataset, config)
}

pub fn train_from(
    params: NetworkParameters,
    dataset: &[TrainingExample],
    config: &TrainingConfig,
) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PixcueError::InvalidArgument("empty training dataset".into()));
    }
    if params.arch != config.arch {
        return Err(PixcueError::Config("parameters do not match the configured architecture".into()));
    }
    let samples = to_samples(dataset, config.arch.n_bits)?;
    let (train_idx, val_idx) = split_indices(samples.len(), config.validation_fraction, config.seed);
    let val_set: Vec<Sample> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| samples[i].clone()).collect()
    } else {
        val_idx.iter().map(|&i| samples[i].clone()).collect()
    };
    fit(params, &samples, train_idx, &val_set, config)
}

/// Trains on `training` and selects parameters on the given `validation` set;
/// `validation_fraction` is ignored.
pub fn train_with_validation(
    params: NetworkParameters,
    training: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainingConfig,
) -> Result<Checkpoint> {
    config.validate()?;
    if training.is_empty() || validation.is_empty() {
        return Err(PixcueError::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if params.arch != config.arch {
        return Err(PixcueError::Config("parameters do not match the configured architecture".into()));
    }
    let samples = to_samples(training, config.arch.n_bits)?;
    let val_set = to_samples(validation, config.arch.n_bits)?;
    let idx = (0..samples.len()).collect();
    fit(params, &samples, idx, &val_set, config)
}

fn to_samples(examples: &[TrainingExample], n_bits: u32) -> Result<Vec<Sample>> {
    examples.iter().map(|e| e.to_sample(n_bits)).collect()
}

fn fit(
    mut params: NetworkParameters,
    samples: &[Sample],
    train_idx: Vec<usize>,
    val_set: &[Sample],
    config: &TrainingConfig,
) -> Result<Checkpoint> {
    let mut opt = RAdam::new(&params, config.learning_rate);
    let mut order = train_idx;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(derive_seed(config.seed, epoch as u64), stream::SHUFFLE));
        let mut running = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let mode = config.train_mode(opt.steps_taken());
            let (l, grads) = loss_and_gradients(&params, &batch, mode).map_err(|e| PixcueError::Diverged {
                epoch,
                reason: e.to_string(),
                history: history.clone(),
            })?;
            running += l * chunk.len() as f64;
            opt.step(&mut params, &grads);
        }
        let train_loss = running / order.len() as f64;
        let val_loss = loss(&params, val_set, ForwardMode::Deterministic).unwrap_or(f64::NAN);
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: val_loss,
        });
        if !train_loss.is_finite() || !val_loss.is_finite() || !params.is_finite() {
            return Err(PixcueError::Diverged {
                epoch,
                reason: "non-finite loss".into(),
                history,
            });
        }
        if val_loss < best.0 {
            best = (val_loss, params.clone());
        }
    }
    Ok(Checkpoint {
        params: best.1,
        config: config.clone(),
        best_validation_loss: best.0,
        history,
        mask_spec: None,
    })
}

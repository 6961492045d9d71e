//! Training loop: Adam over L1 loss on normalized targets, epoch shuffling,
//! plateau-scheduled learning rate, best-on-validation checkpoint selection.

pub mod ablation;
pub mod adam;
pub mod csv;
pub mod eval;
pub mod loader;
pub mod plateau;
pub mod stats;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Manifest};
use crate::heatmap::HeatmapError;
use crate::net::checkpoint::{Checkpoint, TrainMeta};
use crate::net::{ModelError, SampleInput, SimbaModel};
use adam::Adam;
use eval::evaluate;
use loader::LoadedDataset;
use plateau::PlateauScheduler;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient at epoch {epoch}, step {step}")]
    NonFiniteGradient { epoch: usize, step: usize },
    #[error("record {id} lacks ground-truth bone age")]
    MissingGroundTruth { id: String },
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("ablation run (gender={gender}, chrono={chrono}, relative={relative}, seed={seed}) failed: {source}")]
    AblationRun {
        gender: bool,
        chrono: bool,
        relative: bool,
        seed: u64,
        source: Box<TrainError>,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed report {path}: {detail}")]
    MalformedReport { path: PathBuf, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Optimization recipe. Defaults: 150 epochs, 17 images per batch, Adam at
/// 1e-3 with standard moments, plateau schedule (patience 2, factor 0.8,
/// cooldown 5) on validation MAD, L1 loss on normalized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_cooldown: usize,
    /// Absolute val-MAD improvement (months) that counts as progress.
    pub plateau_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 17,
            initial_lr: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            plateau_patience: 2,
            plateau_factor: 0.8,
            plateau_cooldown: 5,
            plateau_threshold: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.batch_size >= 1
            && self.initial_lr > 0.0
            && self.adam_beta1 > 0.0
            && self.adam_beta1 < 1.0
            && self.adam_beta2 > 0.0
            && self.adam_beta2 < 1.0
            && self.adam_epsilon > 0.0
            && self.plateau_patience >= 1
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.plateau_threshold >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Model(ModelError::BadConfig(
                "train hyperparameters must be positive (factor in (0,1))".into(),
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample L1 loss in normalized units.
    pub train_loss: f64,
    /// Validation MAD in months.
    pub val_mad: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters of the epoch with the best validation MAD (initialization
    /// when `epochs` is 0).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub(crate) fn epoch_seed(base: u64, epoch: usize) -> u64 {
    crate::dataset::mix64(base).wrapping_add(crate::dataset::mix64(epoch as u64))
}

/// Runs the full loop. The model is trained in place; the returned checkpoint
/// holds the best-on-validation parameter snapshot.
pub fn train(
    model: &mut SimbaModel<f32>,
    train_data: &LoadedDataset,
    val_data: &LoadedDataset,
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    if val_data.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    train_data.require_ground_truth()?;
    val_data.require_ground_truth()?;

    let age_norm = model.config.age_norm_months;
    let relative = model.config.flags.use_relative;
    // Normalized targets, fixed for the whole run.
    let targets: Vec<f32> = train_data
        .samples
        .iter()
        .map(|s| {
            let b = s.bone_age_months.expect("ground truth checked above");
            let target = if relative { s.chronological_months - b } else { b };
            (target / age_norm) as f32
        })
        .collect();

    let mut adam = Adam::new(
        model.params.param_count(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let mut scheduler = PlateauScheduler::new(
        config.initial_lr,
        config.plateau_factor,
        config.plateau_patience,
        config.plateau_cooldown,
        config.plateau_threshold,
    );
    let mut lr = config.initial_lr;
    let mut best: Option<(crate::net::SimbaParams<f32>, TrainMeta)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch));
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (step, batch) in indices.chunks(config.batch_size).enumerate() {
            let samples: Vec<SampleInput<'_, f32>> = batch
                .iter()
                .map(|&i| {
                    let s = &train_data.samples[i];
                    SampleInput {
                        stack: &s.input,
                        gender: f32::from(s.gender),
                        chrono_norm: (s.chronological_months / age_norm) as f32,
                    }
                })
                .collect();
            let batch_targets: Vec<f32> = batch.iter().map(|&i| targets[i]).collect();
            let (loss, grads) =
                model
                    .loss_and_gradients(&samples, &batch_targets)
                    .map_err(|e| match e {
                        ModelError::NonFiniteGradient => {
                            TrainError::NonFiniteGradient { epoch, step }
                        }
                        other => TrainError::Model(other),
                    })?;
            adam.step(&mut model.params, &grads, lr);
            loss_sum += f64::from(loss) * batch.len() as f64;
        }
        let train_loss = loss_sum / train_data.len() as f64;

        let val_mad = evaluate(model, val_data)?.mad;
        let improved = best
            .as_ref()
            .is_none_or(|(_, meta)| val_mad < meta.best_val_mad.unwrap_or(f64::INFINITY));
        if improved {
            best = Some((
                model.params.clone(),
                TrainMeta {
                    epoch,
                    best_val_mad: Some(val_mad),
                    seed: config.seed,
                },
            ));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mad,
            lr,
        });
        (lr, _) = scheduler.step(val_mad);
    }

    let (params, meta) = best.unwrap_or_else(|| {
        (
            model.params.clone(),
            TrainMeta {
                epoch: 0,
                best_val_mad: None,
                seed: config.seed,
            },
        )
    });
    Ok(TrainResult {
        checkpoint: Checkpoint {
            config: model.config.clone(),
            meta,
            params,
        },
        history,
    })
}

/// Manifest-level entry point: materializes both manifests with the model's
/// heatmap sigma, then runs [`train`].
pub fn train_manifests(
    model: &mut SimbaModel<f32>,
    train_manifest: &Manifest,
    val_manifest: &Manifest,
    config: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    let sigma = model.config.heatmap_sigma;
    let train_data = LoadedDataset::from_manifest(train_manifest, sigma)?;
    let val_data = LoadedDataset::from_manifest(val_manifest, sigma)?;
    train(model, &train_data, &val_data, config)
}

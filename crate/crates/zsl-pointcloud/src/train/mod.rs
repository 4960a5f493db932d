//! Seen-class training: shuffled mini-batches, Adam updates, per-epoch loss
//! series and checkpoints.
//!
//! Batch gradients are computed per sample (samples never couple through
//! batch-norm statistics) and reduced in index order, so a run is a pure
//! function of (data, config, seed): identical runs produce bitwise
//! identical parameter trajectories.

mod adam;
mod checkpoint;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta};

use crate::dataset::cache::CachedDataset;
use crate::dataset::split::{Role, SplitManifest};
use crate::dataset::{collect_role, IngestError, RoleSet};
use crate::derive_seed;
use crate::encoder::{
    forward_inference, init_parameters, parameter_gradients, BnStatUpdate, EncoderConfig,
    EncoderError, HeadSpec, ParameterSet,
};
use crate::semantic::{SemanticEmbeddingTable, SemanticSpace};

/// Which supervision signal the output head trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemanticMode {
    #[serde(rename = "basic")]
    Basic,
    #[serde(rename = "w2v")]
    W2v,
    #[serde(rename = "glove")]
    Glove,
    #[serde(rename = "conc")]
    Conc,
}

impl SemanticMode {
    pub fn parse(name: &str) -> Option<SemanticMode> {
        match name {
            "basic" => Some(SemanticMode::Basic),
            "w2v" => Some(SemanticMode::W2v),
            "glove" => Some(SemanticMode::Glove),
            "conc" => Some(SemanticMode::Conc),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            SemanticMode::Basic => "basic",
            SemanticMode::W2v => "w2v",
            SemanticMode::Glove => "glove",
            SemanticMode::Conc => "conc",
        }
    }

    /// Semantic space the mode's table must come from; `None` for basic.
    pub fn table_space(&self) -> Option<SemanticSpace> {
        match self {
            SemanticMode::Basic => None,
            SemanticMode::W2v => Some(SemanticSpace::W2v),
            SemanticMode::Glove => Some(SemanticSpace::Glove),
            SemanticMode::Conc => Some(SemanticSpace::Conc),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub semantic_mode: SemanticMode,
    /// Random rotation about the gravity axis per training sample.
    pub augment_rotation: bool,
}

impl TrainConfig {
    pub fn new(semantic_mode: SemanticMode, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.7,
            lr_decay_every: 20,
            batch_size: 16,
            epochs: 200,
            seed,
            semantic_mode,
            augment_rotation: false,
        }
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every.max(1)) as i32;
        self.learning_rate * self.lr_decay.powi(steps)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("semantic mode {mode} requires a matching embedding table")]
    MissingTable { mode: &'static str },
    #[error("embedding table does not match the manifest: {reason}")]
    TableMismatch { reason: String },
    #[error("training split is empty")]
    EmptySplit,
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("non-finite parameter update in {name}")]
    NonFiniteUpdate { name: String },
    #[error("checkpoint io error on {path:?}: {source}")]
    CheckpointIo { path: String, source: std::io::Error },
    #[error("invalid checkpoint: {reason}")]
    CheckpointFormat { reason: String },
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,train_accuracy";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.4}", self.epoch, self.mean_loss, self.train_accuracy)
    }
}

/// Rotates a cloud about the z axis; used by the optional augmentation.
fn rotate_about_z(points: &Array2<f32>, angle: f32) -> Array2<f32> {
    let (sin, cos) = angle.sin_cos();
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let (x, y) = (row[0], row[1]);
        row[0] = cos * x - sin * y;
        row[1] = sin * x + cos * y;
    }
    out
}

fn validate_table(
    manifest: &SplitManifest,
    mode: SemanticMode,
    table: Option<&SemanticEmbeddingTable>,
) -> Result<Option<u64>, TrainError> {
    match mode.table_space() {
        None => Ok(None),
        Some(space) => {
            let table = table.ok_or(TrainError::MissingTable { mode: mode.id() })?;
            if table.space() != space {
                return Err(TrainError::TableMismatch {
                    reason: format!("table space {} but mode {}", table.space().id(), mode.id()),
                });
            }
            if table.classes() != manifest.seen_classes.as_slice() {
                return Err(TrainError::TableMismatch {
                    reason: "table rows are not the manifest's seen classes".into(),
                });
            }
            Ok(Some(table.checksum()))
        }
    }
}

/// Trains on the manifest's train-seen split and returns the checkpoint plus
/// the per-epoch loss series.
pub fn train_model(
    cache: &CachedDataset,
    manifest: &SplitManifest,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    table: Option<&SemanticEmbeddingTable>,
) -> Result<(Checkpoint, Vec<EpochStats>), TrainError> {
    let checksum = validate_table(manifest, config.semantic_mode, table)?;
    let head = match config.semantic_mode {
        SemanticMode::Basic => HeadSpec::Basic { classes: manifest.seen_classes.len() },
        _ => HeadSpec::Semantic { dim: table.unwrap().dim() },
    };
    let train_set = match collect_role(cache, manifest, Role::TrainSeen) {
        Err(IngestError::MissingRole { .. }) => return Err(TrainError::EmptySplit),
        other => other?,
    };
    let table_f32: Option<Array2<f32>> = table.map(|t| t.matrix_as());

    let mut params = init_parameters::<f32>(encoder, &head, config.seed);
    let mut adam = AdamState::new(&params);
    let mut stats = Vec::with_capacity(config.epochs);

    let sample_count = train_set.cache_indices.len();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..sample_count).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            type SampleOut<T> = (f64, bool, ParameterSet<T>, Vec<BnStatUpdate<T>>);
            let results: Vec<Result<SampleOut<f32>, EncoderError>> = batch
                .par_iter()
                .map(|&pos| {
                    let cache_idx = train_set.cache_indices[pos];
                    let label = train_set.labels[pos];
                    let cloud = &cache.samples[cache_idx].cloud;
                    let points = if config.augment_rotation {
                        let angle_seed =
                            derive_seed(config.seed, &format!("rot/{epoch}/{cache_idx}"));
                        let mut rot_rng = ChaCha8Rng::seed_from_u64(angle_seed);
                        use rand::RngExt;
                        let angle = rot_rng.random_range(0.0f32..(2.0 * std::f32::consts::PI));
                        rotate_about_z(cloud.points(), angle)
                    } else {
                        cloud.points().clone()
                    };
                    let grads = parameter_gradients(
                        &points,
                        label,
                        encoder,
                        &head,
                        &params,
                        table_f32.as_ref(),
                    )?;
                    let predicted = argmax_f32(&grads.probs);
                    Ok((f64::from(grads.loss), predicted == label, grads.tensors, grads.bn_updates))
                })
                .collect();

            // Reduce in index order for determinism.
            let mut batch_loss = 0.0f64;
            let mut summed: Option<ParameterSet<f32>> = None;
            let mut bn_sums: Option<Vec<BnStatUpdate<f32>>> = None;
            let actual = batch.len();
            for result in results {
                let (loss, hit, grads, bn) = result?;
                batch_loss += loss;
                correct += usize::from(hit);
                match &mut summed {
                    None => summed = Some(grads),
                    Some(acc) => {
                        for (name, tensor) in grads.learnable() {
                            acc.accumulate(name, tensor);
                        }
                    }
                }
                match &mut bn_sums {
                    None => bn_sums = Some(bn),
                    Some(acc) => {
                        for (slot, update) in bn.into_iter().enumerate() {
                            acc[slot].mean += &update.mean;
                            acc[slot].var += &update.var;
                        }
                    }
                }
            }
            let mut grads = summed.expect("nonempty batch");
            let scale = 1.0 / actual as f32;
            for (_, tensor) in grads.learnable_mut() {
                tensor.mapv_inplace(|v| v * scale);
            }
            batch_loss /= actual as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss * actual as f64;

            // Fold averaged batch statistics into the running estimates with
            // momentum 0.9.
            if let Some(bn) = bn_sums {
                for update in bn {
                    let prefix = update.name_prefix;
                    let momentum = 0.9f32;
                    {
                        let mut rmean = params.get1_mut(&format!("{prefix}.bn.rmean"));
                        for (r, &m) in rmean.iter_mut().zip(update.mean.iter()) {
                            *r = momentum * *r + (1.0 - momentum) * (m * scale);
                        }
                    }
                    let mut rvar = params.get1_mut(&format!("{prefix}.bn.rvar"));
                    for (r, &v) in rvar.iter_mut().zip(update.var.iter()) {
                        *r = momentum * *r + (1.0 - momentum) * (v * scale);
                    }
                }
            }

            adam_step(&mut params, &grads, &mut adam, lr)?;
        }

        let mean_loss = epoch_loss / sample_count as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: 0 });
        }
        stats.push(EpochStats {
            epoch,
            mean_loss,
            train_accuracy: 100.0 * correct as f64 / sample_count as f64,
        });
    }

    let final_loss = stats.last().map(|s| s.mean_loss).unwrap_or(f64::NAN);
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            encoder: encoder.clone(),
            head,
            train: config.clone(),
            classes: manifest.seen_classes.clone(),
            semantic_checksum: checksum,
            epoch: config.epochs,
            final_loss,
            config_echo: None,
        },
        params,
    };
    Ok((checkpoint, stats))
}

fn argmax_f32(probs: &ndarray::Array1<f32>) -> usize {
    let mut best = 0usize;
    for (i, &v) in probs.iter().enumerate() {
        if v > probs[best] {
            best = i;
        }
    }
    best
}

/// Checkpoint-table pairing check used by every inference entry point.
pub fn validate_checkpoint_table(
    checkpoint: &Checkpoint,
    table: Option<&SemanticEmbeddingTable>,
) -> Result<(), TrainError> {
    match (checkpoint.meta.semantic_checksum, table) {
        (None, _) => Ok(()),
        (Some(expected), Some(table)) => {
            let found = table.checksum();
            if expected != found {
                Err(TrainError::Encoder(EncoderError::ChecksumMismatch { expected, found }))
            } else {
                Ok(())
            }
        }
        (Some(_), None) => {
            Err(TrainError::MissingTable { mode: checkpoint.meta.train.semantic_mode.id() })
        }
    }
}

/// Top-1 accuracy (percent) of a checkpoint on one manifest role.
pub fn seen_top1(
    checkpoint: &Checkpoint,
    cache: &CachedDataset,
    manifest: &SplitManifest,
    role: Role,
    table: Option<&SemanticEmbeddingTable>,
) -> Result<f64, TrainError> {
    if checkpoint.meta.classes != manifest.seen_classes {
        return Err(TrainError::TableMismatch {
            reason: "checkpoint classes differ from manifest seen classes".into(),
        });
    }
    validate_checkpoint_table(checkpoint, table)?;
    let set = collect_role(cache, manifest, role)?;
    let table_f32: Option<Array2<f32>> = table.map(|t| t.matrix_as());
    let hits: Result<Vec<bool>, EncoderError> = set
        .cache_indices
        .par_iter()
        .zip(&set.labels)
        .map(|(&cache_idx, &label)| {
            let pass = forward_inference(
                cache.samples[cache_idx].cloud.points(),
                &checkpoint.meta.encoder,
                &checkpoint.meta.head,
                &checkpoint.params,
                table_f32.as_ref(),
            )?;
            Ok(argmax_f32(&pass.probs) == label)
        })
        .collect();
    let hits = hits?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Probability rows (one per sample) of a role set under a checkpoint; the
/// zero-shot pipeline and the sweep share this.
pub fn probabilities_for_role(
    checkpoint: &Checkpoint,
    cache: &CachedDataset,
    set: &RoleSet,
    table: Option<&SemanticEmbeddingTable>,
) -> Result<Vec<Vec<f64>>, TrainError> {
    validate_checkpoint_table(checkpoint, table)?;
    let table_f32: Option<Array2<f32>> = table.map(|t| t.matrix_as());
    let rows: Result<Vec<Vec<f64>>, EncoderError> = set
        .cache_indices
        .par_iter()
        .map(|&cache_idx| {
            let pass = forward_inference(
                cache.samples[cache_idx].cloud.points(),
                &checkpoint.meta.encoder,
                &checkpoint.meta.head,
                &checkpoint.params,
                table_f32.as_ref(),
            )?;
            Ok(pass.probs.iter().map(|&p| f64::from(p)).collect())
        })
        .collect();
    Ok(rows?)
}

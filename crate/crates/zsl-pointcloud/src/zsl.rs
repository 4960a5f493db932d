//! Zero-shot inference over unseen classes.
//!
//! Given a trained seen-class classifier, an unseen object is classified in
//! three steps: rank the seen classes by predicted probability, combine the
//! embeddings of the top `T` seen classes into one semantic vector
//! `z = (1/K) * sum_t p_t * e_t` with `K = sqrt(sum_t p_t^2)`, then pick the
//! unseen class whose embedding has the highest cosine similarity to `z`.
//! The probabilities can come from the semantic head or from a plain
//! classifier (the basic route); the combination step is identical.

use ndarray::Array1;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::cache::CachedDataset;
use crate::dataset::split::{Role, SplitManifest};
use crate::dataset::{collect_role, IngestError};
use crate::encoder::HeadSpec;
use crate::semantic::SemanticEmbeddingTable;
use crate::train::{probabilities_for_role, Checkpoint, TrainError};

#[derive(Debug, Error)]
pub enum ZslError {
    #[error("T = {t} out of range; expected 1..={s}")]
    TOutOfRange { t: usize, s: usize },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("all top-T probabilities are zero; normalizer K vanishes")]
    ZeroNormalizer,
    #[error("semantic embedding is zero; cosine ranking undefined")]
    ZeroEmbedding,
    #[error("seen table has {seen} dimensions, unseen table {unseen}")]
    DimMismatch { seen: usize, unseen: usize },
    #[error("checkpoint head is {checkpoint}, requested {requested}")]
    HeadMismatch { checkpoint: &'static str, requested: &'static str },
    #[error("unseen table classes do not match the manifest unseen list")]
    UnseenClassMismatch,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Which classifier supplies the seen probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceHead {
    Semantic,
    Basic,
}

impl InferenceHead {
    fn id(&self) -> &'static str {
        match self {
            InferenceHead::Semantic => "semantic",
            InferenceHead::Basic => "basic",
        }
    }
}

/// Full record of one zero-shot prediction.
#[derive(Debug, Clone)]
pub struct ZslPrediction {
    /// Source path of the sample.
    pub sample: String,
    /// Index into the manifest's unseen class list.
    pub true_class: usize,
    /// Seen-class probabilities.
    pub probs: Vec<f64>,
    /// Top-T seen class indices, most probable first.
    pub ranked_seen: Vec<usize>,
    /// Combined semantic embedding z.
    pub embedding: Vec<f64>,
    /// Normalizer K.
    pub normalizer: f64,
    /// Unseen classes ranked by cosine similarity, best first.
    pub ranked_unseen: Vec<(usize, f64)>,
    pub t: usize,
}

impl ZslPrediction {
    /// Top unseen prediction.
    pub fn predicted(&self) -> usize {
        self.ranked_unseen[0].0
    }

    pub fn top_cosine(&self) -> f64 {
        self.ranked_unseen[0].1
    }
}

fn check_probs(probs: &[f64]) -> Result<(), ZslError> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ZslError::NotNormalized { sum });
    }
    Ok(())
}

/// Seen labels sorted by descending probability, truncated to `t` entries.
/// Probability ties break toward the lower class index.
pub fn top_t_labels(probs: &[f64], t: usize) -> Result<Vec<usize>, ZslError> {
    if t == 0 || t > probs.len() {
        return Err(ZslError::TOutOfRange { t, s: probs.len() });
    }
    check_probs(probs)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b].partial_cmp(&probs[a]).expect("finite probabilities").then(a.cmp(&b))
    });
    order.truncate(t);
    Ok(order)
}

/// Convex combination of the top-T seen embeddings:
/// `z = (1/K) * sum_t p_t * e_t`, `K = sqrt(sum_t p_t^2)`.
pub fn conse_embedding(
    probs: &[f64],
    seen_table: &SemanticEmbeddingTable,
    t: usize,
) -> Result<(Array1<f64>, f64, Vec<usize>), ZslError> {
    let ranked = top_t_labels(probs, t)?;
    let k2: f64 = ranked.iter().map(|&s| probs[s] * probs[s]).sum();
    if k2 <= 0.0 {
        return Err(ZslError::ZeroNormalizer);
    }
    let k = k2.sqrt();
    let mut z = Array1::<f64>::zeros(seen_table.dim());
    for &s in &ranked {
        let weight = probs[s] / k;
        z.scaled_add(weight, &seen_table.row(s));
    }
    Ok((z, k, ranked))
}

/// Unseen classes ranked by cosine similarity to `z`, best first. Ties break
/// toward the lower class index.
pub fn nearest_unseen(
    z: &Array1<f64>,
    unseen_table: &SemanticEmbeddingTable,
) -> Result<Vec<(usize, f64)>, ZslError> {
    let z_norm = z.dot(z).sqrt();
    if z_norm <= 0.0 {
        return Err(ZslError::ZeroEmbedding);
    }
    if unseen_table.dim() != z.len() {
        return Err(ZslError::DimMismatch { seen: z.len(), unseen: unseen_table.dim() });
    }
    let mut ranked: Vec<(usize, f64)> = (0..unseen_table.classes().len())
        .map(|u| {
            let row = unseen_table.row(u);
            let norm = row.dot(&row).sqrt();
            (u, row.dot(z) / (z_norm * norm))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite cosine").then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// One prediction from a probability row.
pub fn predict_from_probs(
    sample: String,
    true_class: usize,
    probs: Vec<f64>,
    seen_table: &SemanticEmbeddingTable,
    unseen_table: &SemanticEmbeddingTable,
    t: usize,
) -> Result<ZslPrediction, ZslError> {
    let (z, k, ranked_seen) = conse_embedding(&probs, seen_table, t)?;
    let ranked_unseen = nearest_unseen(&z, unseen_table)?;
    Ok(ZslPrediction {
        sample,
        true_class,
        probs,
        ranked_seen,
        embedding: z.to_vec(),
        normalizer: k,
        ranked_unseen,
        t,
    })
}

/// Classifies every test-unseen sample of a manifest.
pub fn classify_unseen_batch(
    cache: &CachedDataset,
    manifest: &SplitManifest,
    checkpoint: &Checkpoint,
    seen_table: &SemanticEmbeddingTable,
    unseen_table: &SemanticEmbeddingTable,
    t: usize,
    head: InferenceHead,
) -> Result<Vec<ZslPrediction>, ZslError> {
    let checkpoint_head = match checkpoint.meta.head {
        HeadSpec::Semantic { .. } => InferenceHead::Semantic,
        HeadSpec::Basic { .. } => InferenceHead::Basic,
    };
    if checkpoint_head != head {
        return Err(ZslError::HeadMismatch {
            checkpoint: checkpoint_head.id(),
            requested: head.id(),
        });
    }
    if seen_table.dim() != unseen_table.dim() {
        return Err(ZslError::DimMismatch { seen: seen_table.dim(), unseen: unseen_table.dim() });
    }
    if unseen_table.classes() != manifest.unseen_classes.as_slice() {
        return Err(ZslError::UnseenClassMismatch);
    }
    let set = collect_role(cache, manifest, Role::TestUnseen)?;
    // The basic head never validates a checksum (it trained without a
    // table); the semantic head must match the table it trained against.
    let table_for_forward = match head {
        InferenceHead::Semantic => Some(seen_table),
        InferenceHead::Basic => None,
    };
    let prob_rows = probabilities_for_role(checkpoint, cache, &set, table_for_forward)?;
    prob_rows
        .into_par_iter()
        .zip(set.paths.par_iter().zip(set.labels.par_iter()))
        .map(|(probs, (path, &label))| {
            predict_from_probs(path.clone(), label, probs, seen_table, unseen_table, t)
        })
        .collect()
}

/// Prediction export: one row per sample with the identifying columns of the
/// run. `config_echo`, when present, is prepended as a `#` comment.
pub fn predictions_csv(
    predictions: &[ZslPrediction],
    unseen_classes: &[String],
    config_echo: Option<&str>,
) -> String {
    let mut out = String::new();
    if let Some(echo) = config_echo {
        out.push_str("# config: ");
        out.push_str(echo);
        out.push('\n');
    }
    out.push_str("sample,true_class,predicted_class,top_cosine,K,T\n");
    for p in predictions {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            p.sample,
            unseen_classes[p.true_class],
            unseen_classes[p.predicted()],
            p.top_cosine(),
            p.normalizer,
            p.t
        ));
    }
    out
}

//! Differentiable point-set encoder: per-point features, permutation-free
//! pooling, semantic projection or plain classifier head, loss and exact
//! parameter gradients.
//!
//! Two trunks are available. The per-point shared-MLP trunk passes every
//! point independently through widths (64, 64, 64, 128, 1024). The
//! edge-convolution trunk computes features over k-nearest-neighbor edge
//! inputs `[p_i, p_j - p_i]` in two blocks (widths (64, 64, 64), then (128)
//! on a graph rebuilt in feature space), concatenates both blocks' per-point
//! maxima and lifts the result through a shared width-1024 layer.
//!
//! Pooling is either a channel-wise max (1024-long vector) or a learnable
//! VLAD layer: descriptors from a shared width-128 pre-pool layer are
//! soft-assigned over 128 learnable centers, residuals accumulated,
//! per-center normalized, flattened (128 x 128) and globally normalized.
//!
//! The semantic head projects the pooled vector through three fully
//! connected layers (relu on the first two; the last stays linear by default
//! because word vectors carry negative coordinates, switchable via
//! [`EncoderConfig::relu_final_projection`]) and scores seen classes by
//! multiplying with the fixed class-embedding matrix. The basic head is an
//! ordinary fully connected classifier over the pooled vector.

mod forward;
mod knn;
mod layers;
mod params;

use ndarray::{Array1, Array2, NdFloat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::sample::PointCloud;
use crate::semantic::SemanticEmbeddingTable;

pub use forward::{ForwardPass, Gradients};
pub use knn::knn_indices;
pub use layers::{BnMode, BnStatUpdate};
pub use params::{init_parameters, learnable_parameter_formula, ParameterSet};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderVariant {
    #[serde(rename = "pointnet")]
    PointNet,
    #[serde(rename = "edgeconv")]
    EdgeConv,
}

impl EncoderVariant {
    pub fn id(&self) -> &'static str {
        match self {
            EncoderVariant::PointNet => "pointnet",
            EncoderVariant::EdgeConv => "edgeconv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    #[serde(rename = "max")]
    Max,
    #[serde(rename = "netvlad")]
    NetVlad,
}

impl Pooling {
    pub fn id(&self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::NetVlad => "netvlad",
        }
    }
}

/// Output head: semantic projection into a d-dimensional embedding space, or
/// a plain classifier over a fixed class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadSpec {
    #[serde(rename = "semantic")]
    Semantic { dim: usize },
    #[serde(rename = "basic")]
    Basic { classes: usize },
}

/// Architecture hyperparameters. Constructors cover the four standard
/// trunk/pooling combinations; fields stay public so tests and experiments
/// can shrink the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub pooling: Pooling,
    pub pointnet_widths: Vec<usize>,
    pub edgeconv_block1: Vec<usize>,
    pub edgeconv_block2: usize,
    pub edgeconv_concat: usize,
    pub k_neighbors: usize,
    pub netvlad_centers: usize,
    pub netvlad_prepool: usize,
    pub projection_hidden: (usize, usize),
    pub basic_hidden: (usize, usize),
    pub relu_final_projection: bool,
}

impl EncoderConfig {
    fn base(variant: EncoderVariant, pooling: Pooling) -> Self {
        EncoderConfig {
            variant,
            pooling,
            pointnet_widths: vec![64, 64, 64, 128, 1024],
            edgeconv_block1: vec![64, 64, 64],
            edgeconv_block2: 128,
            edgeconv_concat: 1024,
            k_neighbors: 20,
            netvlad_centers: 128,
            netvlad_prepool: 128,
            projection_hidden: (512, 400),
            basic_hidden: (512, 256),
            relu_final_projection: false,
        }
    }

    pub fn pointnet_max() -> Self {
        Self::base(EncoderVariant::PointNet, Pooling::Max)
    }

    pub fn pointnet_netvlad() -> Self {
        Self::base(EncoderVariant::PointNet, Pooling::NetVlad)
    }

    pub fn edgeconv_max() -> Self {
        Self::base(EncoderVariant::EdgeConv, Pooling::Max)
    }

    pub fn edgeconv_netvlad() -> Self {
        Self::base(EncoderVariant::EdgeConv, Pooling::NetVlad)
    }

    pub fn with_variant(variant: EncoderVariant, pooling: Pooling) -> Self {
        Self::base(variant, pooling)
    }

    /// Width of the trunk's per-point output.
    pub fn trunk_output(&self) -> usize {
        match self.variant {
            EncoderVariant::PointNet => *self.pointnet_widths.last().expect("widths"),
            EncoderVariant::EdgeConv => self.edgeconv_concat,
        }
    }

    /// Length of the pooled feature vector.
    pub fn pooled_len(&self) -> usize {
        match self.pooling {
            Pooling::Max => self.trunk_output(),
            Pooling::NetVlad => self.netvlad_centers * self.netvlad_prepool,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let widths_ok = match self.variant {
            EncoderVariant::PointNet => {
                !self.pointnet_widths.is_empty() && self.pointnet_widths.iter().all(|&w| w > 0)
            }
            EncoderVariant::EdgeConv => {
                !self.edgeconv_block1.is_empty()
                    && self.edgeconv_block1.iter().all(|&w| w > 0)
                    && self.edgeconv_block2 > 0
                    && self.edgeconv_concat > 0
                    && self.k_neighbors > 0
            }
        };
        let pool_ok = match self.pooling {
            Pooling::Max => true,
            Pooling::NetVlad => self.netvlad_centers > 0 && self.netvlad_prepool > 0,
        };
        if !widths_ok || !pool_ok {
            return Err(EncoderError::ShapeMismatch { what: "config has a zero width".into() });
        }
        Ok(())
    }

    /// Method descriptor used in reports and artifact file names.
    pub fn method_id(&self) -> String {
        format!("{}+{}", self.variant.id(), self.pooling.id())
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("k = {k} neighbors requires more than k points, got n = {n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("shape mismatch: {what}")]
    ShapeMismatch { what: String },
    #[error("semantic head requires an embedding table")]
    MissingTable,
    #[error("embedding table has dimension {found}, head expects {expected}")]
    TableDim { expected: usize, found: usize },
    #[error("embedding table checksum {found:#018x} does not match checkpoint {expected:#018x}")]
    ChecksumMismatch { expected: u64, found: u64 },
    #[error("non-finite gradient in parameter {name}")]
    NonFinite { name: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("point cloud must be unit-sphere normalized before encoding")]
    NotNormalized,
}

/// Per-point feature matrix, one row per input point (input order).
pub struct PerPointFeatures<F>(pub Array2<F>);

/// Pooled, permutation-free feature vector.
pub struct PooledFeature<F> {
    pub vector: Array1<F>,
    pub pooling: Pooling,
}

/// Projection of a pooled feature into the semantic embedding space.
pub struct ProjectedEmbedding<F>(pub Array1<F>);

/// Seen-class logits with their softmax probabilities.
pub struct SeenScores<F> {
    pub logits: Array1<F>,
    pub probs: Array1<F>,
}

/// k-nearest-neighbor table of a cloud (single precision entry point).
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<Array2<usize>, EncoderError> {
    knn_indices(&cloud.points_as::<f32>(), k)
}

/// Trunk features for one cloud in inference mode (frozen statistics).
pub fn per_point_features<F: NdFloat>(
    points: &Array2<F>,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<PerPointFeatures<F>, EncoderError> {
    let (pass, _, _) = forward::run_forward(points, config, head, params, table, BnMode::Eval, false)?;
    Ok(PerPointFeatures(pass.per_point))
}

/// Pools per-point features into one permutation-free vector (inference
/// statistics). Row order does not affect max pooling at all; the VLAD
/// accumulation sums in the given row order.
pub fn pool<F: NdFloat>(
    features: &PerPointFeatures<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Result<PooledFeature<F>, EncoderError> {
    if features.0.nrows() == 0 {
        return Err(EncoderError::ShapeMismatch { what: "no per-point features to pool".into() });
    }
    if features.0.ncols() != config.trunk_output() {
        return Err(EncoderError::ShapeMismatch {
            what: format!(
                "features have width {}, trunk emits {}",
                features.0.ncols(),
                config.trunk_output()
            ),
        });
    }
    let vector = forward::pool_standalone(features.0.clone(), config, params);
    Ok(PooledFeature { vector, pooling: config.pooling })
}

/// Projects a pooled feature into the semantic embedding space through the
/// three fully connected layers.
pub fn project_to_semantic<F: NdFloat>(
    pooled: &PooledFeature<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Result<ProjectedEmbedding<F>, EncoderError> {
    if !params.contains("proj.0.w") {
        return Err(EncoderError::ShapeMismatch {
            what: "parameter set has no semantic projection head".into(),
        });
    }
    if pooled.vector.len() != config.pooled_len() {
        return Err(EncoderError::ShapeMismatch {
            what: format!(
                "pooled feature has length {}, config expects {}",
                pooled.vector.len(),
                config.pooled_len()
            ),
        });
    }
    Ok(ProjectedEmbedding(forward::project_standalone(&pooled.vector, config, params)))
}

/// Plain classifier head over a pooled feature: fully connected layers
/// ending in seen-class logits, softmax probabilities.
pub fn basic_scores<F: NdFloat>(
    pooled: &PooledFeature<F>,
    config: &EncoderConfig,
    params: &ParameterSet<F>,
) -> Result<SeenScores<F>, EncoderError> {
    if !params.contains("basic.0.w") {
        return Err(EncoderError::ShapeMismatch {
            what: "parameter set has no basic head".into(),
        });
    }
    if pooled.vector.len() != config.pooled_len() {
        return Err(EncoderError::ShapeMismatch {
            what: format!(
                "pooled feature has length {}, config expects {}",
                pooled.vector.len(),
                config.pooled_len()
            ),
        });
    }
    let logits = forward::basic_logits_standalone(&pooled.vector, params);
    let (probs, _) = layers::softmax(&logits);
    Ok(SeenScores { logits, probs })
}

/// Full inference pass for one cloud (frozen statistics).
pub fn forward_inference<F: NdFloat>(
    points: &Array2<F>,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<ForwardPass<F>, EncoderError> {
    let (pass, _, _) = forward::run_forward(points, config, head, params, table, BnMode::Eval, false)?;
    Ok(pass)
}

/// Training-mode forward (per-sample statistics); reports the statistics it
/// observed so a trainer can fold them into the running averages.
pub fn forward_training<F: NdFloat>(
    points: &Array2<F>,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<(ForwardPass<F>, Vec<BnStatUpdate<F>>), EncoderError> {
    let (pass, _, updates) =
        forward::run_forward(points, config, head, params, table, BnMode::Train, false)?;
    Ok((pass, updates))
}

/// Scores a projected embedding against a seen-class table: logits are the
/// table-vector products, probabilities their softmax.
pub fn seen_scores<F: NdFloat>(
    projected: &ProjectedEmbedding<F>,
    table: &SemanticEmbeddingTable,
) -> Result<SeenScores<F>, EncoderError> {
    let matrix: Array2<F> = table.matrix_as();
    if matrix.ncols() != projected.0.len() {
        return Err(EncoderError::TableDim { expected: projected.0.len(), found: matrix.ncols() });
    }
    let logits = matrix.dot(&projected.0);
    let (probs, _) = layers::softmax(&logits);
    Ok(SeenScores { logits, probs })
}

/// Cross-entropy of a one-hot target against the scores, via log-sum-exp.
pub fn cross_entropy_loss<F: NdFloat>(scores: &SeenScores<F>, label: usize) -> Result<F, EncoderError> {
    if label >= scores.logits.len() {
        return Err(EncoderError::LabelOutOfRange { label, classes: scores.logits.len() });
    }
    let (_, lse) = layers::softmax(&scores.logits);
    Ok(lse - scores.logits[label])
}

/// Exact loss gradient for every learnable parameter of one labeled sample,
/// under the training-mode forward.
pub fn parameter_gradients<F: NdFloat>(
    points: &Array2<F>,
    label: usize,
    config: &EncoderConfig,
    head: &HeadSpec,
    params: &ParameterSet<F>,
    table: Option<&Array2<F>>,
) -> Result<Gradients<F>, EncoderError> {
    forward::loss_and_gradients(points, label, config, head, params, table)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::{arr1, Array2};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_points<F: NdFloat>(n: usize, seed: u64) -> Array2<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 3), |_| F::from(rng.random_range(-0.8..0.8)).unwrap())
    }

    pub(crate) fn tiny_pointnet(pooling: Pooling) -> EncoderConfig {
        EncoderConfig {
            pointnet_widths: vec![4, 4],
            netvlad_centers: 4,
            netvlad_prepool: 4,
            projection_hidden: (6, 5),
            basic_hidden: (6, 5),
            ..EncoderConfig::with_variant(EncoderVariant::PointNet, pooling)
        }
    }

    pub(crate) fn tiny_edgeconv(pooling: Pooling) -> EncoderConfig {
        EncoderConfig {
            edgeconv_block1: vec![4, 4],
            edgeconv_block2: 4,
            edgeconv_concat: 8,
            k_neighbors: 3,
            netvlad_centers: 4,
            netvlad_prepool: 4,
            projection_hidden: (6, 5),
            basic_hidden: (6, 5),
            ..EncoderConfig::with_variant(EncoderVariant::EdgeConv, pooling)
        }
    }

    fn random_table<F: NdFloat>(classes: usize, dim: usize, seed: u64) -> Array2<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Array2::from_shape_fn((classes, dim), |_| {
            F::from(rng.random_range(-1.0..1.0)).unwrap()
        });
        for mut row in t.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        t
    }

    fn permuted<F: NdFloat>(points: &Array2<F>, seed: u64) -> Array2<F> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..points.nrows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        points.select(ndarray::Axis(0), &order)
    }

    #[test]
    fn pointnet_max_scores_bitwise_permutation_invariant() {
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 3);
        let points = random_points::<f32>(32, 5);
        let base = forward_inference(&points, &cfg, &head, &params, None).unwrap();
        for seed in 0..5 {
            let shuffled = permuted(&points, seed);
            let pass = forward_inference(&shuffled, &cfg, &head, &params, None).unwrap();
            for (a, b) in base.pooled.iter().zip(pass.pooled.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "pooled feature changed under permutation");
            }
            for (a, b) in base.probs.iter().zip(pass.probs.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn edgeconv_scores_permutation_invariant() {
        let cfg = tiny_edgeconv(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 4);
        let points = random_points::<f32>(24, 6);
        let base = forward_inference(&points, &cfg, &head, &params, None).unwrap();
        for seed in 0..5 {
            let shuffled = permuted(&points, seed);
            let pass = forward_inference(&shuffled, &cfg, &head, &params, None).unwrap();
            for (a, b) in base.probs.iter().zip(pass.probs.iter()) {
                assert!((a - b).abs() <= 1e-5, "probs differ: {a} vs {b}");
            }
        }
    }

    #[test]
    fn netvlad_pooled_length_and_permutation() {
        let cfg = tiny_pointnet(Pooling::NetVlad);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 8);
        let points = random_points::<f32>(16, 9);
        let base = forward_inference(&points, &cfg, &head, &params, None).unwrap();
        assert_eq!(base.pooled.len(), cfg.netvlad_centers * cfg.netvlad_prepool);
        let pass = forward_inference(&permuted(&points, 1), &cfg, &head, &params, None).unwrap();
        for (a, b) in base.probs.iter().zip(pass.probs.iter()) {
            assert!((a - b).abs() <= 1e-5);
        }
        // Global normalization puts the pooled vector on the unit sphere.
        let norm: f32 = base.pooled.dot(&base.pooled).sqrt();
        assert!((norm - 1.0).abs() < 1e-4);
    }

    #[test]
    fn per_point_rows_follow_input_order() {
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 3);
        let points = random_points::<f32>(16, 5);
        let base = per_point_features(&points, &cfg, &head, &params, None).unwrap();
        assert_eq!(base.0.nrows(), 16);
        assert_eq!(base.0.ncols(), 4);
        // Reversing the input rows must reverse the feature rows exactly.
        let rev_idx: Vec<usize> = (0..16).rev().collect();
        let reversed = points.select(ndarray::Axis(0), &rev_idx);
        let rev = per_point_features(&reversed, &cfg, &head, &params, None).unwrap();
        for i in 0..16 {
            for c in 0..4 {
                assert_eq!(base.0[[i, c]].to_bits(), rev.0[[15 - i, c]].to_bits());
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_features() {
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let mut params: ParameterSet<f32> = init_parameters(&cfg, &head, 3);
        // Zero every learnable weight; relu(0 * x + 0) stays zero even after
        // batch norm because beta is zero.
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            if name.ends_with(".w") || name.ends_with(".bn.gamma") {
                let zeroed = ndarray::ArrayD::zeros(params.get(&name).raw_dim());
                let delta = &zeroed - params.get(&name);
                params.accumulate(&name, &delta);
            }
        }
        let points = random_points::<f32>(8, 1);
        let feats = per_point_features(&points, &cfg, &head, &params, None).unwrap();
        assert!(feats.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_inputs_difference_half_ignores_translation() {
        let cfg = tiny_edgeconv(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f64> = init_parameters(&cfg, &head, 5);
        let points = random_points::<f64>(12, 2);
        let shifted = &points + 1.0;
        // Same graph, identical neighbor differences: per-point features of a
        // translated cloud differ only through the absolute-coordinate half
        // of the first block's edge inputs. Verify the graphs agree.
        let knn_a = knn_indices(&points, cfg.k_neighbors).unwrap();
        let knn_b = knn_indices(&shifted, cfg.k_neighbors).unwrap();
        assert_eq!(knn_a, knn_b);
        let _ = params;
    }

    #[test]
    fn seen_scores_match_hand_softmax() {
        let probs = {
            let logits = arr1(&[3.0f64.ln(), 0.0]);
            let scores = SeenScores { logits: logits.clone(), probs: layers::softmax(&logits).0 };
            scores.probs
        };
        assert!((probs[0] - 0.75).abs() < 1e-12);
        assert!((probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Semantic { dim: 7 };
        let params: ParameterSet<f64> = init_parameters(&cfg, &head, 2);
        let points = random_points::<f64>(8, 3);
        // A zero table forces all logits equal (zero), hence uniform probs.
        let table = Array2::<f64>::zeros((5, 7));
        let pass = forward_inference(&points, &cfg, &head, &params, Some(&table)).unwrap();
        for &p in pass.probs.iter() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let total: f64 = pass.probs.sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_analytic_values() {
        let uniform = arr1(&[1.0f64; 30]);
        let scores = SeenScores { probs: layers::softmax(&uniform).0, logits: uniform };
        let loss = cross_entropy_loss(&scores, 4).unwrap();
        assert!((loss - 30.0f64.ln()).abs() < 1e-6);
        assert!((loss - 3.4012).abs() < 1e-4);

        // Probability one on the true class: zero loss.
        let logits = arr1(&[100.0f64, 0.0, 0.0]);
        let scores = SeenScores { probs: layers::softmax(&logits).0, logits };
        let loss = cross_entropy_loss(&scores, 0).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn argmax_invariant_to_logit_shift() {
        let logits = arr1(&[0.3f64, 1.7, -0.4, 1.1]);
        let (probs_a, _) = layers::softmax(&logits);
        let (probs_b, _) = layers::softmax(&logits.mapv(|v| v + 123.5));
        let argmax = |p: &Array1<f64>| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&probs_a), argmax(&probs_b));
        for (a, b) in probs_a.iter().zip(probs_b.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic_gradients_match_finite_differences_quick() {
        // Quick smoke version of the full gradient-check suite (which lives
        // in the integration tests): one seed, pointnet + max, both heads.
        let table = random_table::<f64>(3, 7, 11);
        for head in [HeadSpec::Semantic { dim: 7 }, HeadSpec::Basic { classes: 3 }] {
            let cfg = tiny_pointnet(Pooling::Max);
            let params: ParameterSet<f64> = init_parameters(&cfg, &head, 21);
            let points = random_points::<f64>(8, 22);
            let table_arg = matches!(head, HeadSpec::Semantic { .. }).then_some(&table);
            let max_rel = max_finite_difference_error(&points, 1, &cfg, &head, &params, table_arg);
            assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
        }
    }

    /// Central finite differences over every learnable scalar.
    pub(crate) fn max_finite_difference_error(
        points: &Array2<f64>,
        label: usize,
        cfg: &EncoderConfig,
        head: &HeadSpec,
        params: &ParameterSet<f64>,
        table: Option<&Array2<f64>>,
    ) -> f64 {
        let grads = parameter_gradients(points, label, cfg, head, params, table).unwrap();
        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        let names: Vec<String> = grads.tensors.names().map(str::to_string).collect();
        for name in &names {
            let len = params.get(name).len();
            for idx in 0..len {
                let mut plus = params.clone();
                let mut minus = params.clone();
                bump(&mut plus, name, idx, eps);
                bump(&mut minus, name, idx, -eps);
                let lp = loss_of(points, label, cfg, head, &plus, table);
                let lm = loss_of(points, label, cfg, head, &minus, table);
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grads.tensors.get(name).as_slice().unwrap()[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
        max_rel
    }

    fn bump(params: &mut ParameterSet<f64>, name: &str, idx: usize, delta: f64) {
        let mut bumped = ndarray::ArrayD::zeros(params.get(name).raw_dim());
        bumped.as_slice_mut().unwrap()[idx] = delta;
        params.accumulate(name, &bumped);
    }

    fn loss_of(
        points: &Array2<f64>,
        label: usize,
        cfg: &EncoderConfig,
        head: &HeadSpec,
        params: &ParameterSet<f64>,
        table: Option<&Array2<f64>>,
    ) -> f64 {
        parameter_gradients(points, label, cfg, head, params, table).unwrap().loss
    }

    #[test]
    fn gradients_vanish_at_certain_prediction() {
        // Force probability ~1 on the true class by inflating one table row;
        // gradients of the loss must vanish.
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Semantic { dim: 7 };
        let params: ParameterSet<f64> = init_parameters(&cfg, &head, 31);
        let points = random_points::<f64>(8, 32);
        // Gradients run under the training-mode forward, so the table must be
        // aligned with the training-mode projection.
        let (base, _) =
            forward_training(&points, &cfg, &head, &params, Some(&random_table(3, 7, 1))).unwrap();
        let projected = base.projected.unwrap();
        let norm = projected.dot(&projected).sqrt();
        let mut table = Array2::<f64>::zeros((3, 7));
        // Row 0 aligned with the projection and hugely scaled; others oppose.
        for (c, v) in projected.iter().enumerate() {
            table[[0, c]] = v * 1e4 / norm.max(1e-12);
            table[[1, c]] = -v / norm.max(1e-12);
            table[[2, c]] = -v / norm.max(1e-12);
        }
        let grads = parameter_gradients(&points, 0, &cfg, &head, &params, Some(&table)).unwrap();
        assert!((grads.probs[0] - 1.0).abs() < 1e-8);
        for (name, tensor) in grads.tensors.learnable() {
            for &g in tensor.iter() {
                assert!(g.abs() < 1e-8, "gradient of {name} is {g}");
            }
        }
    }

    #[test]
    fn standalone_pool_lengths_and_permutation() {
        let head = HeadSpec::Basic { classes: 3 };
        let cfg_max = tiny_pointnet(Pooling::Max);
        let params_max: ParameterSet<f32> = init_parameters(&cfg_max, &head, 6);
        let feats = PerPointFeatures(random_points::<f32>(12, 7).dot(&Array2::from_shape_fn(
            (3, 4),
            |(i, j)| (i + j) as f32 * 0.1,
        )));
        let pooled = pool(&feats, &cfg_max, &params_max).unwrap();
        assert_eq!(pooled.vector.len(), 4);
        // Permuting feature rows leaves the max pool bitwise identical.
        let rev: Vec<usize> = (0..12).rev().collect();
        let reversed = PerPointFeatures(feats.0.select(ndarray::Axis(0), &rev));
        let pooled_rev = pool(&reversed, &cfg_max, &params_max).unwrap();
        for (a, b) in pooled.vector.iter().zip(pooled_rev.vector.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let cfg_vlad = tiny_pointnet(Pooling::NetVlad);
        let params_vlad: ParameterSet<f32> = init_parameters(&cfg_vlad, &head, 6);
        let pooled_vlad = pool(&feats, &cfg_vlad, &params_vlad).unwrap();
        assert_eq!(pooled_vlad.vector.len(), 4 * 4);
        assert_eq!(pooled_vlad.pooling, Pooling::NetVlad);
    }

    #[test]
    fn standalone_projection_and_basic_head() {
        let cfg = tiny_pointnet(Pooling::Max);
        let sem_params: ParameterSet<f64> =
            init_parameters(&cfg, &HeadSpec::Semantic { dim: 7 }, 2);
        // Zero input with zero biases projects to zero.
        let zero = PooledFeature { vector: Array1::zeros(4), pooling: Pooling::Max };
        let projected = project_to_semantic(&zero, &cfg, &sem_params).unwrap();
        assert_eq!(projected.0.len(), 7);
        assert!(projected.0.iter().all(|&v| v == 0.0));

        let basic_params: ParameterSet<f64> =
            init_parameters(&cfg, &HeadSpec::Basic { classes: 30 }, 2);
        let scores = basic_scores(&zero, &cfg, &basic_params).unwrap();
        assert_eq!(scores.logits.len(), 30);
        for &p in scores.probs.iter() {
            assert!((p - 1.0 / 30.0).abs() < 1e-12);
        }
        let total: f64 = scores.probs.sum();
        assert!((total - 1.0).abs() < 1e-6);

        // Wrong head kind is a shape error.
        assert!(project_to_semantic(&zero, &cfg, &basic_params).is_err());
        assert!(basic_scores(&zero, &cfg, &sem_params).is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let cfg = tiny_pointnet(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 3);
        let points = random_points::<f32>(8, 3);
        assert!(matches!(
            parameter_gradients(&points, 3, &cfg, &head, &params, None),
            Err(EncoderError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn k_out_of_range_propagates() {
        let cfg = tiny_edgeconv(Pooling::Max);
        let head = HeadSpec::Basic { classes: 3 };
        let params: ParameterSet<f32> = init_parameters(&cfg, &head, 3);
        let points = random_points::<f32>(3, 3);
        assert!(matches!(
            forward_inference(&points, &cfg, &head, &params, None),
            Err(EncoderError::KOutOfRange { .. })
        ));
    }
}

//! Zero-shot classification of 3D point cloud objects.
//!
//! The library trains permutation-invariant point-set encoders (a per-point
//! shared-MLP trunk or an edge-convolution trunk, pooled by max or by a
//! learnable VLAD layer) against the word vectors of the training classes,
//! then classifies objects from classes never seen in training by forming a
//! convex combination of seen-class embeddings weighted by the classifier's
//! probabilities and ranking unseen-class embeddings by cosine similarity.
//!
//! The pipeline runs in four stages, each usable on its own:
//!
//! 1. [`dataset`] — parse OFF/PLY triangle meshes, sample them to fixed-size
//!    unit-sphere point clouds, build seen/unseen split manifests and a
//!    binary point-cloud cache.
//! 2. [`semantic`] — load word-vector text files and build per-class
//!    embedding tables (single space or concatenated).
//! 3. [`encoder`] / [`train`] — forward pipeline with exact hand-derived
//!    gradients, Adam training over the seen split, checkpoints.
//! 4. [`zsl`] / [`eval`] — convex-combination inference over unseen-class
//!    embeddings, accuracy reports and sweeps.
//!
//! Each major capability has a runnable program under `examples/`; the
//! `zslpc` binary wires the same functions into an `ingest` / `train` /
//! `eval-seen` / `eval-zsl` / `sweep-t` / `report` command line.
//! [`synth`] generates small procedural datasets and word-vector files so
//! every example and test runs without downloading anything.

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod semantic;
pub mod synth;
pub mod train;
pub mod zsl;

pub use dataset::cache::CachedDataset;
pub use dataset::layout::DatasetLayout;
pub use dataset::mesh::TriangleMesh;
pub use dataset::sample::PointCloud;
pub use dataset::split::{Protocol, Role, SplitManifest};
pub use encoder::{EncoderConfig, EncoderVariant, HeadSpec, ParameterSet, Pooling};
pub use eval::EvaluationReport;
pub use semantic::{SemanticEmbeddingTable, SemanticSpace, WordVectorStore};
pub use train::{Checkpoint, SemanticMode, TrainConfig};
pub use zsl::ZslPrediction;

/// Stable 64-bit FNV-1a hash, used wherever a deterministic, platform
/// independent digest is needed (per-sample RNG seeds, table checksums).
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent stream seed from a base seed and a label.
pub(crate) fn derive_seed(base: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&base.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    fnv1a64(&bytes)
}

//! Dataset ingestion: mesh parsing, surface sampling, split manifests and
//! the binary point-cloud cache.

pub mod cache;
pub mod layout;
pub mod mesh;
pub mod sample;
pub mod split;

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use cache::{CacheError, CachedDataset, CachedSample};
use layout::DatasetLayout;
use mesh::{parse_mesh, MeshError, MeshFormat};
use sample::{normalize_unit_sphere, sample_points, SampleError};
use split::{build_split_manifest, Protocol, Role, SplitError, SplitManifest};

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{path}: {source}")]
    Mesh { path: String, source: MeshError },
    #[error("{path}: {source}")]
    Sample { path: String, source: SampleError },
    #[error("{path}: unsupported file extension")]
    UnknownFormat { path: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("cache/manifest mismatch: {reason}")]
    Mismatch { reason: String },
    #[error("manifest has no {role} records")]
    MissingRole { role: Role },
}

/// Scans a dataset root, applies the split protocol, samples every manifest
/// record to `n_points` normalized points and returns the manifest plus the
/// in-memory cache. Sampling is per-file deterministic: each file's RNG seed
/// is derived from the global seed and the file's relative path.
pub fn ingest(
    root: &Path,
    protocol: Protocol,
    n_points: usize,
    seed: u64,
) -> Result<(SplitManifest, CachedDataset), IngestError> {
    let layout = DatasetLayout::scan(root)?;
    let manifest = build_split_manifest(&layout, protocol, seed)?;
    let cache = sample_manifest(root, &manifest, n_points, seed)?;
    Ok((manifest, cache))
}

/// Samples all records of an existing manifest into a cache.
pub fn sample_manifest(
    root: &Path,
    manifest: &SplitManifest,
    n_points: usize,
    seed: u64,
) -> Result<CachedDataset, IngestError> {
    let classes = manifest.class_table();
    let samples: Result<Vec<CachedSample>, IngestError> = manifest
        .records
        .par_iter()
        .map(|record| {
            let class_index = classes
                .iter()
                .position(|c| c == &record.class)
                .ok_or_else(|| IngestError::Mismatch {
                    reason: format!("record class {:?} missing from class table", record.class),
                })? as u32;
            let path = root.join(&record.path);
            let format = MeshFormat::from_extension(&record.path)
                .ok_or_else(|| IngestError::UnknownFormat { path: record.path.clone() })?;
            let bytes = std::fs::read(&path).map_err(|e| IngestError::Io {
                path: record.path.clone(),
                source: e,
            })?;
            let mesh = parse_mesh(&bytes, format).map_err(|e| IngestError::Mesh {
                path: record.path.clone(),
                source: e,
            })?;
            let cloud = sample_points(&mesh, n_points, derive_seed(seed, &record.path))
                .and_then(|c| normalize_unit_sphere(&c))
                .map_err(|e| IngestError::Sample { path: record.path.clone(), source: e })?;
            Ok(CachedSample { class_index, cloud })
        })
        .collect();
    Ok(CachedDataset::new(n_points as u32, classes, samples?))
}

/// One role's worth of samples, with labels indexed into that role's class
/// list (seen classes for train/test-seen, unseen classes for test-unseen).
#[derive(Debug, Clone)]
pub struct RoleSet {
    pub role: Role,
    /// Indices into the cache's sample vector.
    pub cache_indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub paths: Vec<String>,
}

/// Selects the cache samples carrying `role` in the manifest. The cache must
/// have been written from the same manifest (records align by position).
pub fn collect_role(
    cache: &CachedDataset,
    manifest: &SplitManifest,
    role: Role,
) -> Result<RoleSet, IngestError> {
    if cache.len() != manifest.records.len() {
        return Err(IngestError::Mismatch {
            reason: format!(
                "cache has {} samples, manifest has {} records",
                cache.len(),
                manifest.records.len()
            ),
        });
    }
    let class_list: &[String] = match role {
        Role::TrainSeen | Role::TestSeen => &manifest.seen_classes,
        Role::TestUnseen => &manifest.unseen_classes,
    };
    let mut set = RoleSet { role, cache_indices: Vec::new(), labels: Vec::new(), paths: Vec::new() };
    for (i, record) in manifest.records.iter().enumerate() {
        if record.role != role {
            continue;
        }
        let cached_class = cache.class_name(i);
        if cached_class != record.class {
            return Err(IngestError::Mismatch {
                reason: format!(
                    "record {i}: manifest class {:?} but cache class {:?}",
                    record.class, cached_class
                ),
            });
        }
        let label = class_list
            .iter()
            .position(|c| c == &record.class)
            .ok_or_else(|| IngestError::Mismatch {
                reason: format!("class {:?} missing from role class list", record.class),
            })?;
        set.cache_indices.push(i);
        set.labels.push(label);
        set.paths.push(record.path.clone());
    }
    if set.cache_indices.is_empty() {
        return Err(IngestError::MissingRole { role });
    }
    Ok(set)
}

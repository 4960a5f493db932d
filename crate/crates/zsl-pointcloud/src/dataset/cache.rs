//! Binary point-cloud cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "PCZ1"
//! version  u32      1
//! n        u32      points per sample
//! dim      u32      coordinates per point (3)
//! samples  u64      record count
//! classes  u32      class-table length, then per class: u16 len + utf-8 name
//! records  per sample: u32 class index, then n*dim f32 coordinates
//! ```
//!
//! Round-trips are bit-exact on the coordinate data.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::sample::PointCloud;

const MAGIC: [u8; 4] = *b"PCZ1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CachedSample {
    pub class_index: u32,
    pub cloud: PointCloud,
}

/// In-memory form of the cache file: fixed-size clouds plus a class table.
#[derive(Debug, Clone)]
pub struct CachedDataset {
    pub n_points: u32,
    pub classes: Vec<String>,
    pub samples: Vec<CachedSample>,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("io error on {path:?}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic bytes {found:?} (expected \"PCZ1\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported cache version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated cache file while reading record {record}")]
    Truncated { record: usize },
    #[error("class index {index} out of range for table of {classes} classes in record {record}")]
    BadClassIndex { index: u32, classes: usize, record: usize },
    #[error("sample {record} has {found} points, cache declares {expected}")]
    PointCountMismatch { record: usize, found: usize, expected: usize },
    #[error("invalid point data in record {record}")]
    BadPoints { record: usize },
    #[error("{clouds} clouds cannot align with {records} manifest records")]
    ManifestMismatch { clouds: usize, records: usize },
}

impl CachedDataset {
    pub fn new(n_points: u32, classes: Vec<String>, samples: Vec<CachedSample>) -> Self {
        CachedDataset { n_points, classes, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_name(&self, sample: usize) -> &str {
        &self.classes[self.samples[sample].class_index as usize]
    }

    fn encode(&self) -> Vec<u8> {
        let n = self.n_points as usize;
        let mut out = Vec::with_capacity(32 + self.samples.len() * (4 + n * 12));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.n_points.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for class in &self.classes {
            let bytes = class.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        for sample in &self.samples {
            out.extend_from_slice(&sample.class_index.to_le_bytes());
            for v in sample.cloud.points().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes the cache; the write is atomic via a sibling temp file.
    pub fn write(&self, path: &Path) -> Result<(), CacheError> {
        let io_err = |source| CacheError::Io { path: path.display().to_string(), source };
        let tmp = path.with_extension("tmp");
        {
            let mut file = std::fs::File::create(&tmp).map_err(io_err)?;
            file.write_all(&self.encode()).map_err(io_err)?;
        }
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CacheError> {
        let io_err = |source| CacheError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        Self::decode(&bytes)
    }

    fn decode(bytes: &[u8]) -> Result<Self, CacheError> {
        let mut cursor = Cursor { bytes, pos: 0, record: usize::MAX };
        let magic = cursor.take::<4>()?;
        if magic != MAGIC {
            return Err(CacheError::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(cursor.take::<4>()?);
        if version != VERSION {
            return Err(CacheError::Version { found: version });
        }
        let n_points = u32::from_le_bytes(cursor.take::<4>()?);
        let dim = u32::from_le_bytes(cursor.take::<4>()?);
        if dim != 3 {
            return Err(CacheError::BadPoints { record: 0 });
        }
        let sample_count = u64::from_le_bytes(cursor.take::<8>()?) as usize;
        let class_count = u32::from_le_bytes(cursor.take::<4>()?) as usize;
        let mut classes = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            let len = u16::from_le_bytes(cursor.take::<2>()?) as usize;
            let raw = cursor.take_slice(len)?;
            classes.push(String::from_utf8_lossy(raw).into_owned());
        }

        let n = n_points as usize;
        let mut samples = Vec::with_capacity(sample_count);
        for record in 0..sample_count {
            cursor.record = record;
            let class_index = u32::from_le_bytes(cursor.take::<4>()?);
            if class_index as usize >= classes.len() {
                return Err(CacheError::BadClassIndex { index: class_index, classes: classes.len(), record });
            }
            let mut data = Vec::with_capacity(n * 3);
            for _ in 0..n * 3 {
                data.push(f32::from_le_bytes(cursor.take::<4>()?));
            }
            let points = Array2::from_shape_vec((n, 3), data)
                .map_err(|_| CacheError::BadPoints { record })?;
            let cloud = PointCloud::new(points, true).map_err(|_| CacheError::BadPoints { record })?;
            samples.push(CachedSample { class_index, cloud });
        }
        Ok(CachedDataset { n_points, classes, samples })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CacheError> {
        let slice = self.take_slice(N)?;
        let mut out = [0u8; N];
        out.copy_from_slice(slice);
        Ok(out)
    }

    fn take_slice(&mut self, len: usize) -> Result<&[u8], CacheError> {
        if self.pos + len > self.bytes.len() {
            return Err(CacheError::Truncated {
                record: if self.record == usize::MAX { 0 } else { self.record },
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

/// Builds and writes a cache aligned with a manifest in one step: sample `i`
/// must be the cloud of manifest record `i`, and class indices refer to the
/// manifest's combined class table.
pub fn write_cache(
    clouds: Vec<(PointCloud, u32)>,
    manifest: &super::split::SplitManifest,
    path: &Path,
) -> Result<CachedDataset, CacheError> {
    if clouds.len() != manifest.records.len() {
        return Err(CacheError::ManifestMismatch {
            clouds: clouds.len(),
            records: manifest.records.len(),
        });
    }
    let n_points = clouds.first().map(|(c, _)| c.n() as u32).unwrap_or(0);
    let classes = manifest.class_table();
    let samples = clouds
        .into_iter()
        .map(|(cloud, class_index)| CachedSample { class_index, cloud })
        .collect();
    let cache = CachedDataset::new(n_points, classes, samples);
    cache.write(path)?;
    Ok(cache)
}

/// Reads a cache back from disk.
pub fn read_cache(path: &Path) -> Result<CachedDataset, CacheError> {
    CachedDataset::read(path)
}

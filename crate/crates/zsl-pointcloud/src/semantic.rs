//! Word-vector loading and per-class semantic embedding tables.
//!
//! Vector files are plain text: one record per line, a token followed by 300
//! decimal floats, whitespace separated. Every stored vector is re-normalized
//! to unit length on load. Class names map to embeddings by lowercasing,
//! splitting on `_`/spaces, averaging the constituent token vectors and
//! normalizing the average.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::fnv1a64;

/// Expected dimensionality of every word vector.
pub const WORD_VECTOR_DIM: usize = 300;

/// Which unsupervised corpus a vector store came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SemanticSpace {
    #[serde(rename = "w2v")]
    W2v,
    #[serde(rename = "glove")]
    Glove,
    /// Concatenation of a w2v table and a glove table.
    #[serde(rename = "conc")]
    Conc,
}

impl SemanticSpace {
    pub fn id(&self) -> &'static str {
        match self {
            SemanticSpace::W2v => "w2v",
            SemanticSpace::Glove => "glove",
            SemanticSpace::Conc => "conc",
        }
    }
}

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("io error on {path:?}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected {expected} vector components, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad float {token:?}")]
    BadFloat { line: usize, token: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: token {token:?} has a zero vector")]
    ZeroVector { line: usize, token: String },
    #[error("token {token:?} (from class {class:?}) is not in the vector store")]
    OutOfVocabulary { token: String, class: String },
    #[error("class name is empty")]
    EmptyClassName,
    #[error("class list is empty")]
    EmptyClassList,
    #[error("cannot fuse tables: {reason}")]
    FuseMismatch { reason: String },
    #[error("concatenation requires a w2v table then a glove table")]
    FuseOrder,
}

/// Token to unit-vector map from one corpus.
#[derive(Debug, Clone)]
pub struct WordVectorStore {
    space: SemanticSpace,
    vectors: HashMap<String, Array1<f64>>,
}

impl WordVectorStore {
    /// Parses the whitespace text format from any reader.
    pub fn from_reader<R: Read>(reader: R, space: SemanticSpace) -> Result<Self, VectorError> {
        let mut vectors = HashMap::new();
        let reader = BufReader::new(reader);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| VectorError::Io { path: "<reader>".into(), source: e })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_string();
            let mut values = Vec::with_capacity(WORD_VECTOR_DIM);
            for tok in parts {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| VectorError::BadFloat { line: line_no, token: tok.to_string() })?;
                values.push(v);
            }
            if values.len() != WORD_VECTOR_DIM {
                return Err(VectorError::Dimension {
                    line: line_no,
                    expected: WORD_VECTOR_DIM,
                    found: values.len(),
                });
            }
            let mut vec = Array1::from_vec(values);
            let norm = vec.dot(&vec).sqrt();
            if norm < 1e-12 {
                return Err(VectorError::ZeroVector { line: line_no, token });
            }
            vec.mapv_inplace(|v| v / norm);
            if vectors.contains_key(&token) {
                return Err(VectorError::DuplicateToken { line: line_no, token });
            }
            vectors.insert(token, vec);
        }
        Ok(WordVectorStore { space, vectors })
    }

    pub fn load(path: &Path, space: SemanticSpace) -> Result<Self, VectorError> {
        let file = std::fs::File::open(path).map_err(|e| VectorError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_reader(file, space)
    }

    pub fn space(&self) -> SemanticSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&Array1<f64>> {
        self.vectors.get(token)
    }

    /// Embedding for a class name: tokens are averaged then re-normalized.
    /// Single-token names pass the stored vector through unchanged.
    pub fn class_embedding(&self, class_name: &str) -> Result<Array1<f64>, VectorError> {
        let tokens = class_tokens(class_name);
        if tokens.is_empty() {
            return Err(VectorError::EmptyClassName);
        }
        let mut sum = Array1::<f64>::zeros(WORD_VECTOR_DIM);
        for token in &tokens {
            let vec = self.vectors.get(token).ok_or_else(|| VectorError::OutOfVocabulary {
                token: token.clone(),
                class: class_name.to_string(),
            })?;
            sum += vec;
        }
        sum.mapv_inplace(|v| v / tokens.len() as f64);
        let norm = sum.dot(&sum).sqrt();
        if norm < 1e-12 {
            return Err(VectorError::ZeroVector { line: 0, token: class_name.to_string() });
        }
        sum.mapv_inplace(|v| v / norm);
        Ok(sum)
    }
}

/// Lowercased constituent tokens of a class name (`_` and spaces split).
pub fn class_tokens(class_name: &str) -> Vec<String> {
    class_name
        .to_lowercase()
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Ordered class names with one embedding row per class.
///
/// Rows from a single store are unit norm; concatenated (`conc`) rows have
/// norm sqrt(2) and are deliberately not re-normalized, so each source space
/// contributes equally to dot products.
#[derive(Debug, Clone)]
pub struct SemanticEmbeddingTable {
    classes: Vec<String>,
    matrix: Array2<f64>,
    space: SemanticSpace,
}

impl SemanticEmbeddingTable {
    /// Builds a table for `classes` (row order preserved) from one store.
    pub fn build(store: &WordVectorStore, classes: &[String]) -> Result<Self, VectorError> {
        if classes.is_empty() {
            return Err(VectorError::EmptyClassList);
        }
        let mut matrix = Array2::<f64>::zeros((classes.len(), WORD_VECTOR_DIM));
        for (i, class) in classes.iter().enumerate() {
            let emb = store.class_embedding(class)?;
            matrix.row_mut(i).assign(&emb);
        }
        Ok(SemanticEmbeddingTable { classes: classes.to_vec(), matrix, space: store.space() })
    }

    /// Concatenates a w2v table with a glove table over identical class lists.
    pub fn fuse(w2v: &SemanticEmbeddingTable, glove: &SemanticEmbeddingTable) -> Result<Self, VectorError> {
        if w2v.space != SemanticSpace::W2v || glove.space != SemanticSpace::Glove {
            return Err(VectorError::FuseOrder);
        }
        if w2v.classes != glove.classes {
            let reason = w2v
                .classes
                .iter()
                .zip(&glove.classes)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("class lists differ: {a:?} vs {b:?}"))
                .unwrap_or_else(|| {
                    format!("class counts differ: {} vs {}", w2v.classes.len(), glove.classes.len())
                });
            return Err(VectorError::FuseMismatch { reason });
        }
        let (rows, d) = (w2v.matrix.nrows(), w2v.matrix.ncols());
        let mut matrix = Array2::<f64>::zeros((rows, 2 * d));
        for i in 0..rows {
            for j in 0..d {
                matrix[[i, j]] = w2v.matrix[[i, j]];
                matrix[[i, d + j]] = glove.matrix[[i, j]];
            }
        }
        Ok(SemanticEmbeddingTable { classes: w2v.classes.clone(), matrix, space: SemanticSpace::Conc })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn space(&self) -> SemanticSpace {
        self.space
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.matrix.row(i)
    }

    /// Matrix cast to the requested precision (single precision for the
    /// training path).
    pub fn matrix_as<F: num_traits::Float>(&self) -> Array2<F> {
        self.matrix.mapv(|v| F::from(v).unwrap())
    }

    /// Digest over (space, dimension, class list); embedded in checkpoints
    /// and validated before inference so a checkpoint is never paired with a
    /// table it was not trained against.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(self.space.id().as_bytes());
        bytes.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for class in &self.classes {
            bytes.extend_from_slice(class.as_bytes());
            bytes.push(0);
        }
        fnv1a64(&bytes)
    }
}

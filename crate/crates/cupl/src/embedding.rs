//! Text/image embedding vectors, backends, and on-disk stores.
//!
//! Everything downstream (prototypes, classification) works on unit-norm
//! vectors, so this module owns the numeric conventions: components are
//! stored as `f32`, but norms, dot products, and means accumulate in `f64`
//! before rounding back to `f32`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Norms below this threshold are treated as zero (not normalizable).
pub const ZERO_NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector (norm {norm:e} < {ZERO_NORM_EPSILON:e})")]
    ZeroVector { norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(.context))]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },
    #[error("no embedding found for key {key:?}")]
    MissingKey { key: String },
    #[error("malformed embedding record at {path}:{line}: {detail}")]
    ParseError {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("embedding backend request failed: {0}")]
    Transport(String),
    #[error("embedding backend returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

/// A dense embedding with finite `f32` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps raw components, rejecting NaN or infinite entries.
    pub fn new(components: Vec<f32>) -> Result<Self, EmbeddingError> {
        if let Some(index) = components.iter().position(|c| !c.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f32] {
        &self.0
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    }

    /// Returns the unit-norm copy of this vector.
    ///
    /// Division happens in `f64` and the result is rounded back to `f32`,
    /// so normalizing an already-normalized vector is a bit-exact no-op up
    /// to that rounding.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let norm = self.norm();
        if norm < ZERO_NORM_EPSILON {
            return Err(EmbeddingError::ZeroVector { norm });
        }
        Ok(Self(self.0.iter().map(|&c| ((c as f64) / norm) as f32).collect()))
    }

    /// Dot product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64, EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
                context: "dot product".into(),
            });
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as f64) * (b as f64))
            .sum())
    }
}

impl fmt::Display for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} dims]", self.dim())
    }
}

/// Something that can turn a batch of texts into embedding vectors.
///
/// Implementations must be order-equivariant: the i-th output embeds the
/// i-th input, and permuting inputs permutes outputs identically.
pub trait TextEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// Deterministic embedding backend: each text maps to a unit vector derived
/// from a seeded SHA-256 expansion of the text bytes.
///
/// No model weights are involved; two processes with the same seed and dim
/// produce bit-identical vectors for the same text, which makes end-to-end
/// runs reproducible in tests and demos.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Expands `text` into `dim` pseudo-random components in [-1, 1) and
    /// normalizes the result.
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut components = Vec::with_capacity(self.dim);
        let mut block: u64 = 0;
        while components.len() < self.dim {
            let mut hasher = Sha256::new();
            hasher.update(self.seed.to_le_bytes());
            hasher.update(text.as_bytes());
            hasher.update(block.to_le_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if components.len() == self.dim {
                    break;
                }
                let word = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                let unit = (word as f64) / (u32::MAX as f64 + 1.0); // [0, 1)
                components.push((unit * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        EmbeddingVector::new(components)
            .expect("hash expansion yields finite components")
            .normalized()
            .expect("hash expansion is never the zero vector")
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

/// HTTP embedding backend speaking the `POST <base_url>/embed_text` protocol:
/// request `{"texts": [...]}`, response `{"dim": n, "vectors": [[...], ...]}`.
pub struct HttpEmbedder {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embed_text", self.base_url);
        let response = self
            .client
            .post(&url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbeddingError::Transport(format!(
                "{url} returned HTTP {status}"
            )));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::MalformedResponse(format!(
                "requested {} embeddings, server returned {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != body.dim {
                    return Err(EmbeddingError::DimMismatch {
                        expected: body.dim,
                        got: v.len(),
                        context: "embed_text response vector".into(),
                    });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

/// A keyed set of same-dimension embeddings (text keys or image keys).
///
/// The dimension is undefined until the first insert; after that, every
/// insert must match it.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    entries: IndexMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(EmbeddingVector::dim)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: String, vector: EmbeddingVector) -> Result<(), EmbeddingError> {
        if let Some(dim) = self.dim() {
            if vector.dim() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    got: vector.dim(),
                    context: format!("store insert for key {key:?}"),
                });
            }
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    /// Bit-exact lookup: returns the stored vector for `key`.
    pub fn lookup(&self, key: &str) -> Result<&EmbeddingVector, EmbeddingError> {
        self.entries.get(key).ok_or_else(|| EmbeddingError::MissingKey {
            key: key.to_string(),
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EmbeddingVector)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }
}

/// An embedding store backed by a pre-computed file (e.g. image embeddings).
pub struct FileEmbedder {
    store: EmbeddingStore,
}

impl FileEmbedder {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl TextEmbedder for FileEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|t| self.store.lookup(t).cloned())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    key: String,
    vec: Vec<f32>,
}

/// Loads a JSONL embedding file: one `{"key": ..., "vec": [...]}` object per
/// line. All records must share one dimension; the first record fixes it.
pub fn load_embedding_file(path: &Path) -> Result<EmbeddingStore, EmbeddingError> {
    let file = fs::File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut store = EmbeddingStore::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| EmbeddingError::ParseError {
                path: path.display().to_string(),
                line: line_no,
                detail: e.to_string(),
            })?;
        let vector = EmbeddingVector::new(record.vec).map_err(|e| EmbeddingError::ParseError {
            path: path.display().to_string(),
            line: line_no,
            detail: e.to_string(),
        })?;
        store
            .insert(record.key, vector)
            .map_err(|e| match e {
                EmbeddingError::DimMismatch { expected, got, .. } => EmbeddingError::ParseError {
                    path: path.display().to_string(),
                    line: line_no,
                    detail: format!("expected dim {expected}, got {got}"),
                },
                other => other,
            })?;
    }
    Ok(store)
}

/// Writes a store to JSONL, one record per line, in store order.
pub fn save_embedding_file(store: &EmbeddingStore, path: &Path) -> Result<(), EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for (key, vector) in store.iter() {
        let record = JsonlRecord {
            key: key.clone(),
            vec: vector.components().to_vec(),
        };
        serde_json::to_writer(&mut out, &record).expect("jsonl record serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec32(components: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(components.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_is_point_six_point_eight() {
        let v = vec32(&[3.0, 4.0]).normalized().unwrap();
        assert_eq!(v.components(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_unit_vector_is_identity() {
        let v = vec32(&[1.0, 0.0, 0.0]);
        assert_eq!(v.normalized().unwrap(), v);
    }

    #[test]
    fn normalize_zero_vector_fails() {
        let err = vec32(&[0.0, 0.0]).normalized().unwrap_err();
        assert!(matches!(err, EmbeddingError::ZeroVector { .. }), "{err}");
    }

    #[test]
    fn non_finite_components_are_rejected() {
        let err = EmbeddingVector::new(vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFinite { index: 1 }), "{err}");
    }

    #[test]
    fn dot_requires_matching_dims() {
        let a = vec32(&[1.0, 0.0]);
        let b = vec32(&[1.0, 0.0, 0.0]);
        let err = a.dot(&b).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::DimMismatch { expected: 2, got: 3, .. }
        ));
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let embedder = HashEmbedder::new(64, 7);
        let a = embedder.embed_one("a photo of a tench.");
        let b = embedder.embed_one("a photo of a tench.");
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let c = embedder.embed_one("a photo of a goldfish.");
        assert_ne!(a, c);
        // Different seeds give different vectors for the same text.
        let d = HashEmbedder::new(64, 8).embed_one("a photo of a tench.");
        assert_ne!(a, d);
    }

    #[test]
    fn store_rejects_mixed_dims_and_reports_missing_keys() {
        let mut store = EmbeddingStore::new();
        assert_eq!(store.dim(), None);
        store.insert("a".into(), vec32(&[1.0, 0.0])).unwrap();
        let err = store.insert("b".into(), vec32(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, EmbeddingError::DimMismatch { .. }));
        let err = store.lookup("a very distinctive key").unwrap_err();
        assert!(err.to_string().contains("a very distinctive key"));
    }

    #[test]
    fn jsonl_round_trip_preserves_bits_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");
        let mut store = EmbeddingStore::new();
        store.insert("img_1".into(), vec32(&[0.25, -0.5, 0.125, 1.0])).unwrap();
        store.insert("img_0".into(), vec32(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        save_embedding_file(&store, &path).unwrap();
        let loaded = load_embedding_file(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.dim(), Some(4));
        assert_eq!(
            loaded.keys().collect::<Vec<_>>(),
            vec!["img_1", "img_0"],
            "file order preserved"
        );
        assert_eq!(loaded.lookup("img_1").unwrap(), store.lookup("img_1").unwrap());
    }

    #[test]
    fn jsonl_rejects_inconsistent_dims_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"key\":\"a\",\"vec\":[1.0,2.0]}\n{\"key\":\"b\",\"vec\":[1.0]}\n",
        )
        .unwrap();
        let err = load_embedding_file(&path).unwrap_err();
        match err {
            EmbeddingError::ParseError { line, .. } => assert_eq!(line, 2),
            other => panic!("expected ParseError, got {other}"),
        }
    }

    #[test]
    fn jsonl_empty_file_loads_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let store = load_embedding_file(&path).unwrap();
        assert!(store.is_empty());
        assert_eq!(store.dim(), None);
    }
}

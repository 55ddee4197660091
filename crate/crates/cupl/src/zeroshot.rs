//! Class prototypes and cosine-similarity classification.
//!
//! A class prototype is the renormalized mean of its image-prompt
//! embeddings. By default each sentence embedding is normalized before the
//! mean is taken ("prenormalize"), which weights every sentence equally
//! regardless of its raw norm; the alternative (mean first, normalize once)
//! is kept behind an option for comparison runs. Classification scores an
//! image embedding against every prototype by cosine similarity and picks
//! the argmax, breaking exact ties toward the lowest class index.
//!
//! All reductions accumulate in `f64`; prototypes and scores are rounded to
//! `f32` only at the edges.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    load_embedding_file, save_embedding_file, EmbeddingError, EmbeddingStore, EmbeddingVector,
    TextEmbedder, ZERO_NORM_EPSILON,
};
use crate::factory::ImagePromptSet;

#[derive(Debug, thiserror::Error)]
pub enum ZeroshotError {
    #[error("cannot build a prototype from an empty vector list")]
    EmptyInput,
    #[error("class {class_label:?} has no image-prompts")]
    EmptyClass { class_label: String },
    #[error("prototype set is empty")]
    NoClasses,
    #[error("class labels differ between prompt sets: {detail}")]
    ClassMismatch { detail: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("prototype set at {path} is malformed: {detail}")]
    MalformedPrototypes { path: String, detail: String },
}

/// Options for prototype construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrototypeOptions {
    /// Normalize each sentence embedding before averaging (the default).
    /// When false, raw embeddings are averaged and only the mean is
    /// normalized, so longer vectors pull the prototype toward themselves.
    pub prenormalize: bool,
}

impl Default for PrototypeOptions {
    fn default() -> Self {
        Self { prenormalize: true }
    }
}

/// Unit-norm class prototypes in class order, plus bookkeeping for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub dataset_id: String,
    /// Human-readable origin, e.g. "full", "standard", or "ensemble".
    pub mode: String,
    prototypes: IndexMap<String, EmbeddingVector>,
    source_counts: IndexMap<String, usize>,
}

impl PrototypeSet {
    pub fn class_labels(&self) -> impl Iterator<Item = &String> {
        self.prototypes.keys()
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.prototypes.values().next().map(EmbeddingVector::dim)
    }

    pub fn prototype(&self, class_label: &str) -> Option<&EmbeddingVector> {
        self.prototypes.get(class_label)
    }

    pub fn prototype_at(&self, class_index: usize) -> Option<(&String, &EmbeddingVector)> {
        self.prototypes.get_index(class_index)
    }

    /// How many image-prompts contributed to each class's prototype.
    pub fn source_count(&self, class_label: &str) -> Option<usize> {
        self.source_counts.get(class_label).copied()
    }
}

/// Renormalized mean of a non-empty list of embeddings.
///
/// With `prenormalize`, every vector is unit-normalized first; the mean is
/// accumulated per-dimension in `f64`, renormalized, and rounded to `f32`.
/// Fails when inputs are empty, dimensions disagree, any vector is zero
/// (prenormalize only), or the mean itself cancels to zero.
pub fn build_prototype(
    vectors: &[EmbeddingVector],
    options: &PrototypeOptions,
) -> Result<EmbeddingVector, ZeroshotError> {
    if vectors.is_empty() {
        return Err(ZeroshotError::EmptyInput);
    }
    let dim = vectors[0].dim();
    let mut sum = vec![0f64; dim];
    for vector in vectors {
        if vector.dim() != dim {
            return Err(EmbeddingError::DimMismatch {
                expected: dim,
                got: vector.dim(),
                context: "prototype input".into(),
            }
            .into());
        }
        if options.prenormalize {
            let norm = vector.norm();
            if norm < ZERO_NORM_EPSILON {
                return Err(EmbeddingError::ZeroVector { norm }.into());
            }
            for (slot, &c) in sum.iter_mut().zip(vector.components()) {
                *slot += (c as f64) / norm;
            }
        } else {
            for (slot, &c) in sum.iter_mut().zip(vector.components()) {
                *slot += c as f64;
            }
        }
    }
    let count = vectors.len() as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / count).collect();
    let mean_norm = mean.iter().map(|c| c * c).sum::<f64>().sqrt();
    if mean_norm < ZERO_NORM_EPSILON {
        return Err(EmbeddingError::ZeroVector { norm: mean_norm }.into());
    }
    let components: Vec<f32> = mean.into_iter().map(|c| (c / mean_norm) as f32).collect();
    Ok(EmbeddingVector::new(components).expect("prototype components are finite"))
}

/// Embeds every class's image-prompts and builds one prototype per class,
/// in the prompt set's class order.
pub fn build_prototype_set(
    prompts: &ImagePromptSet,
    backend: &dyn TextEmbedder,
    options: &PrototypeOptions,
) -> Result<PrototypeSet, ZeroshotError> {
    let mut prototypes = IndexMap::new();
    let mut source_counts = IndexMap::new();
    for label in prompts.class_labels() {
        let sentences = prompts.prompts_for(label).expect("label comes from the set");
        if sentences.is_empty() {
            return Err(ZeroshotError::EmptyClass { class_label: label.clone() });
        }
        let embedded = backend.embed_texts(sentences)?;
        let prototype = build_prototype(&embedded, options)?;
        prototypes.insert(label.clone(), prototype);
        source_counts.insert(label.clone(), sentences.len());
    }
    Ok(PrototypeSet {
        dataset_id: prompts.dataset_id.clone(),
        mode: prompts.mode.as_str().to_string(),
        prototypes,
        source_counts,
    })
}

/// Builds prototypes from the union of two prompt sets over the same
/// classes: each class's prototype is the renormalized mean over *all*
/// sentences from both sets pooled together — not the mean of the two
/// per-set prototypes, which would weight the smaller set's sentences more
/// heavily.
pub fn ensemble_prototype_sets(
    set_a: &ImagePromptSet,
    set_b: &ImagePromptSet,
    backend: &dyn TextEmbedder,
    options: &PrototypeOptions,
) -> Result<PrototypeSet, ZeroshotError> {
    let merged = set_a.concat(set_b).map_err(|e| ZeroshotError::ClassMismatch {
        detail: e.to_string(),
    })?;
    let mut prototype_set = build_prototype_set(&merged, backend, options)?;
    prototype_set.mode = format!("ensemble({}+{})", set_a.mode.as_str(), set_b.mode.as_str());
    Ok(prototype_set)
}

/// One classification decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_key: String,
    pub predicted_index: usize,
    pub predicted_label: String,
    /// Cosine similarity of the winning class.
    pub top_score: f32,
    /// Cosine similarity against every class prototype, in class order.
    /// May be empty when a prediction is reloaded from a persisted run.
    pub scores: Vec<f32>,
}

/// Classifies one image embedding: cosine similarity against every
/// prototype (computed in `f64`), argmax with ties broken toward the lowest
/// class index.
pub fn classify(
    image_key: &str,
    image: &EmbeddingVector,
    prototypes: &PrototypeSet,
) -> Result<Prediction, ZeroshotError> {
    if prototypes.num_classes() == 0 {
        return Err(ZeroshotError::NoClasses);
    }
    let unit = image.normalized()?;
    let mut scores64 = Vec::with_capacity(prototypes.num_classes());
    for (_, prototype) in prototypes.prototypes.iter() {
        // Prototypes are unit-norm by construction, so the dot product is
        // the cosine similarity.
        scores64.push(unit.dot(prototype)?);
    }
    let mut best = 0usize;
    for (i, &score) in scores64.iter().enumerate() {
        if score > scores64[best] {
            best = i;
        }
    }
    let (label, _) = prototypes.prototypes.get_index(best).expect("argmax index in range");
    Ok(Prediction {
        image_key: image_key.to_string(),
        predicted_index: best,
        predicted_label: label.clone(),
        top_score: scores64[best] as f32,
        scores: scores64.into_iter().map(|s| s as f32).collect(),
    })
}

/// Classifies a batch of keyed image embeddings in input order.
pub fn classify_all(
    images: &[(String, EmbeddingVector)],
    prototypes: &PrototypeSet,
) -> Result<Vec<Prediction>, ZeroshotError> {
    images
        .iter()
        .map(|(key, vector)| classify(key, vector, prototypes))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PrototypeMeta {
    dataset_id: String,
    mode: String,
    dim: usize,
    source_counts: IndexMap<String, usize>,
}

/// Persists prototypes as a JSONL embedding file keyed by class label, with
/// a `<stem>.meta.json` sidecar.
pub fn save_prototypes(set: &PrototypeSet, path: &Path) -> Result<(), ZeroshotError> {
    let mut store = EmbeddingStore::new();
    for (label, prototype) in &set.prototypes {
        store.insert(label.clone(), prototype.clone())?;
    }
    save_embedding_file(&store, path)?;
    let meta = PrototypeMeta {
        dataset_id: set.dataset_id.clone(),
        mode: set.mode.clone(),
        dim: set.dim().unwrap_or(0),
        source_counts: set.source_counts.clone(),
    };
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let meta_file = path.with_file_name(format!("{stem}.meta.json"));
    let mut json = serde_json::to_string_pretty(&meta).expect("prototype meta serializes");
    json.push('\n');
    std::fs::write(&meta_file, json).map_err(|source| ZeroshotError::Embedding(
        EmbeddingError::Io { path: meta_file.display().to_string(), source },
    ))?;
    Ok(())
}

/// Loads prototypes saved by [`save_prototypes`].
pub fn load_prototypes(path: &Path) -> Result<PrototypeSet, ZeroshotError> {
    let store = load_embedding_file(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let meta_file = path.with_file_name(format!("{stem}.meta.json"));
    let meta_raw = std::fs::read_to_string(&meta_file).map_err(|e| {
        ZeroshotError::MalformedPrototypes {
            path: path.display().to_string(),
            detail: format!("missing sidecar {}: {e}", meta_file.display()),
        }
    })?;
    let meta: PrototypeMeta =
        serde_json::from_str(&meta_raw).map_err(|e| ZeroshotError::MalformedPrototypes {
            path: meta_file.display().to_string(),
            detail: e.to_string(),
        })?;
    let mut prototypes = IndexMap::new();
    for (label, vector) in store.iter() {
        prototypes.insert(label.clone(), vector.clone());
    }
    Ok(PrototypeSet {
        dataset_id: meta.dataset_id,
        mode: meta.mode,
        prototypes,
        source_counts: meta.source_counts,
    })
}

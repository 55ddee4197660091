//! Zero-shot image classification with LLM-generated class descriptions.
//!
//! The pipeline: a template catalog renders LLM-prompts for every class
//! ([`catalog`]), a completion client expands them into cleaned natural-
//! language image-prompts ([`llm`], [`factory`]), a text-embedding backend
//! turns each class's prompts into a unit-norm prototype ([`embedding`],
//! [`zeroshot`]), and images are classified by cosine similarity against
//! those prototypes. [`eval`] scores prediction runs with per-dataset
//! metrics and [`ablation`] sweeps prompt budgets and sampling temperature.
//!
//! The [`cli`] module exposes the same pipeline as the `cupl` binary.

pub mod ablation;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod eval;
pub mod factory;
pub mod llm;
pub mod zeroshot;

pub use catalog::{DatasetSpec, Metric, PromptMode, TemplateCatalog};
pub use embedding::{EmbeddingVector, TextEmbedder, ZERO_NORM_EPSILON};
pub use factory::ImagePromptSet;
pub use llm::GenerationConfig;
pub use zeroshot::{Prediction, PrototypeSet};

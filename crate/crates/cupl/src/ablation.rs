//! Prompt-budget and temperature sweeps, plus baseline comparisons.
//!
//! Subset sweeps answer "how many prompts do I actually need?": they filter
//! an existing prompt store down by provenance (first k templates, or first
//! m completions per template), rebuild prototypes, and re-score — no new
//! generation. The temperature sweep is the opposite: it regenerates
//! descriptions at each temperature (cache keys include temperature, so
//! each point caches independently) and scores the result.

use std::path::Path;

use crate::catalog::{DatasetSpec, LlmPromptTemplate};
use crate::embedding::{EmbeddingStore, TextEmbedder};
use crate::eval::{evaluate, BaselineComparison, DatasetManifest, EvalError};
use crate::factory::{
    generate_prompt_set, FactoryError, GenerateOptions, ImagePromptSet,
};
use crate::llm::{GenerationConfig, LlmClient, LlmError};
use crate::zeroshot::{build_prototype_set, classify, PrototypeOptions, ZeroshotError};

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("sweep values must be non-empty")]
    EmptyValues,
    #[error("sweep values must be strictly increasing: {detail}")]
    ValuesNotIncreasing { detail: String },
    #[error("sweep value {value} exceeds available {axis} ({available})")]
    ValueExceedsAvailable {
        value: usize,
        available: usize,
        axis: &'static str,
    },
    #[error(transparent)]
    Factory(#[from] FactoryError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Zeroshot(#[from] ZeroshotError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The axis a sweep walks along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Number of templates kept (first k in catalog order).
    LlmPromptCount,
    /// Completions kept per template (first m in sampling order).
    ImagePromptsPerTemplate,
    /// Sampling temperature (regenerates at each value).
    Temperature,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::LlmPromptCount => "llm_prompt_count",
            SweepAxis::ImagePromptsPerTemplate => "image_prompts_per_template",
            SweepAxis::Temperature => "temperature",
        }
    }
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub metric_value: f64,
    /// Nominal image-prompts per class at this point (templates kept x
    /// completions per template).
    pub total_image_prompts: usize,
}

/// An ordered series of sweep measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub dataset_id: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// CSV with header `axis_value,metric,total_image_prompts`, one row per
    /// point in sweep order.
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("axis_value,metric,total_image_prompts\n");
        for point in &self.points {
            csv.push_str(&format!(
                "{},{},{}\n",
                point.axis_value, point.metric_value, point.total_image_prompts
            ));
        }
        csv
    }
}

/// Everything a subset sweep needs to re-score a filtered store.
pub struct SweepContext<'a> {
    pub dataset: &'a DatasetSpec,
    pub store: &'a ImagePromptSet,
    pub backend: &'a dyn TextEmbedder,
    pub images: &'a EmbeddingStore,
    pub manifest: &'a DatasetManifest,
    pub options: PrototypeOptions,
}

fn check_increasing_usize(values: &[usize]) -> Result<(), AblationError> {
    if values.is_empty() {
        return Err(AblationError::EmptyValues);
    }
    for window in values.windows(2) {
        if window[0] >= window[1] {
            return Err(AblationError::ValuesNotIncreasing {
                detail: format!("{} then {}", window[0], window[1]),
            });
        }
    }
    Ok(())
}

/// Number of templates represented in a store's provenance.
pub fn available_templates(store: &ImagePromptSet) -> usize {
    store
        .class_labels()
        .filter_map(|label| store.provenance_for(label))
        .flatten()
        .map(|p| p.template_index + 1)
        .max()
        .unwrap_or(0)
}

/// Nominal completions requested per template: the recorded sampling config
/// when present, otherwise inferred from provenance.
pub fn available_completions_per_template(store: &ImagePromptSet) -> usize {
    if let Some(config) = &store.generation_config {
        return config.completions_per_prompt as usize;
    }
    store
        .class_labels()
        .filter_map(|label| store.provenance_for(label))
        .flatten()
        .map(|p| p.completion_index + 1)
        .max()
        .unwrap_or(0)
}

/// Keeps only prompts whose provenance satisfies `keep`, preserving order.
fn filter_store(
    store: &ImagePromptSet,
    keep: impl Fn(&crate::factory::Provenance) -> bool,
) -> ImagePromptSet {
    let mut filtered = ImagePromptSet::new(store.dataset_id.clone(), store.mode);
    filtered.generation_config = store.generation_config.clone();
    for label in store.class_labels() {
        let prompts = store.prompts_for(label).expect("label from the set");
        let provenance = store.provenance_for(label).expect("label from the set");
        let mut kept_prompts = Vec::new();
        let mut kept_provenance = Vec::new();
        for (prompt, prov) in prompts.iter().zip(provenance) {
            if keep(prov) {
                kept_prompts.push(prompt.clone());
                kept_provenance.push(*prov);
            }
        }
        filtered.insert_class(label.clone(), kept_prompts, kept_provenance);
    }
    filtered
}

/// Restricts a store to its first `k` templates (catalog order).
pub fn filter_by_template_count(store: &ImagePromptSet, k: usize) -> ImagePromptSet {
    filter_store(store, |p| p.template_index < k)
}

/// Restricts a store to the first `m` completions of every template.
pub fn filter_by_completion_count(store: &ImagePromptSet, m: usize) -> ImagePromptSet {
    filter_store(store, |p| p.completion_index < m)
}

fn score_store(ctx: &SweepContext, store: &ImagePromptSet) -> Result<f64, AblationError> {
    let prototypes = build_prototype_set(store, ctx.backend, &ctx.options)?;
    let mut predictions = Vec::with_capacity(ctx.manifest.len());
    for (key, _) in ctx.manifest.items() {
        let image = ctx.images.lookup(key).map_err(ZeroshotError::from)?;
        predictions.push(classify(key, image, &prototypes)?);
    }
    let report = evaluate(&predictions, ctx.manifest, ctx.dataset, store.mode.as_str(), None)?;
    Ok(report.metric_value)
}

/// Sweeps over the number of LLM-prompt templates kept (first k in catalog
/// order), re-scoring the classifier at each k.
pub fn sweep_llm_prompt_count(
    ctx: &SweepContext,
    values: &[usize],
) -> Result<SweepResult, AblationError> {
    check_increasing_usize(values)?;
    let available = available_templates(ctx.store);
    let completions = available_completions_per_template(ctx.store);
    if let Some(&max) = values.iter().max() {
        if max > available {
            return Err(AblationError::ValueExceedsAvailable {
                value: max,
                available,
                axis: "templates",
            });
        }
    }
    let mut points = Vec::with_capacity(values.len());
    for &k in values {
        let filtered = filter_by_template_count(ctx.store, k);
        let metric_value = score_store(ctx, &filtered)?;
        points.push(SweepPoint {
            axis_value: k as f64,
            metric_value,
            total_image_prompts: k * completions,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::LlmPromptCount,
        dataset_id: ctx.dataset.dataset_id.clone(),
        points,
    })
}

/// Sweeps over completions kept per template (first m in sampling order),
/// re-scoring the classifier at each m.
pub fn sweep_image_prompt_count(
    ctx: &SweepContext,
    values: &[usize],
) -> Result<SweepResult, AblationError> {
    check_increasing_usize(values)?;
    let available = available_completions_per_template(ctx.store);
    let templates = available_templates(ctx.store);
    if let Some(&max) = values.iter().max() {
        if max > available {
            return Err(AblationError::ValueExceedsAvailable {
                value: max,
                available,
                axis: "completions per template",
            });
        }
    }
    let mut points = Vec::with_capacity(values.len());
    for &m in values {
        let filtered = filter_by_completion_count(ctx.store, m);
        let metric_value = score_store(ctx, &filtered)?;
        points.push(SweepPoint {
            axis_value: m as f64,
            metric_value,
            total_image_prompts: m * templates,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::ImagePromptsPerTemplate,
        dataset_id: ctx.dataset.dataset_id.clone(),
        points,
    })
}

/// Regenerates descriptions at each temperature and scores them. Every
/// temperature gets its own cache entries, so repeated sweeps are free.
#[allow(clippy::too_many_arguments)]
pub fn sweep_temperature(
    ctx: &SweepContext,
    templates: &[LlmPromptTemplate],
    base_config: &GenerationConfig,
    gateway: &LlmClient,
    cache_dir: &Path,
    generate_options: &GenerateOptions,
    temperatures: &[f64],
) -> Result<SweepResult, AblationError> {
    if temperatures.is_empty() {
        return Err(AblationError::EmptyValues);
    }
    for window in temperatures.windows(2) {
        if window[0] >= window[1] {
            return Err(AblationError::ValuesNotIncreasing {
                detail: format!("{} then {}", window[0], window[1]),
            });
        }
    }
    let mut points = Vec::with_capacity(temperatures.len());
    for &temperature in temperatures {
        let config = GenerationConfig { temperature, ..base_config.clone() };
        config.validate()?;
        let store = generate_prompt_set(
            ctx.dataset,
            templates,
            &config,
            gateway,
            cache_dir,
            generate_options,
        )?;
        let metric_value = score_store(ctx, &store)?;
        points.push(SweepPoint {
            axis_value: temperature,
            metric_value,
            total_image_prompts: templates.len() * config.completions_per_prompt as usize,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::Temperature,
        dataset_id: ctx.dataset.dataset_id.clone(),
        points,
    })
}

/// Scores the hand-written, generated, and dictionary-definition prompt
/// families side by side on one dataset.
pub fn compare_baselines(
    ctx: &SweepContext,
    standard_store: &ImagePromptSet,
    cupl_store: &ImagePromptSet,
    wordnet_store: &ImagePromptSet,
) -> Result<BaselineComparison, AblationError> {
    let mut reports = Vec::with_capacity(3);
    for store in [standard_store, cupl_store, wordnet_store] {
        let prototypes = build_prototype_set(store, ctx.backend, &ctx.options)?;
        let mut predictions = Vec::with_capacity(ctx.manifest.len());
        for (key, _) in ctx.manifest.items() {
            let image = ctx.images.lookup(key).map_err(ZeroshotError::from)?;
            predictions.push(classify(key, image, &prototypes)?);
        }
        reports.push(evaluate(
            &predictions,
            ctx.manifest,
            ctx.dataset,
            store.mode.as_str(),
            None,
        )?);
    }
    let wordnet = reports.pop().expect("three reports");
    let cupl = reports.pop().expect("three reports");
    let standard = reports.pop().expect("three reports");
    Ok(BaselineComparison { standard, cupl, wordnet })
}

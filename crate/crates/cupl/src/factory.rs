//! Turns templates plus completions into per-class image-prompt sets.
//!
//! Terminology: an *LLM-prompt* is a rendered template sent to the
//! completion endpoint ("Describe what a tench looks like"); an
//! *image-prompt* is one cleaned completion — a natural-language class
//! description that later gets embedded ("A tench is a fat, freshwater
//! fish..."). The hand-written "standard" and dictionary-definition
//! "wordnet" modes skip the LLM and render image-prompts directly.

use std::path::Path;
use std::sync::mpsc;
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    ArticleOverrides, CatalogError, DatasetSpec, LlmPromptTemplate, PromptMode, SlotPolicy,
};
use crate::llm::{GenerationConfig, LlmClient, LlmError};

#[derive(Debug, thiserror::Error)]
pub enum FactoryError {
    #[error("no templates supplied for {dataset_id}")]
    EmptyTemplates { dataset_id: String },
    #[error("template rendering failed: {0}")]
    Catalog(#[from] CatalogError),
    #[error("generation failed for class {class_label:?}: {source}")]
    Generation {
        class_label: String,
        #[source]
        source: LlmError,
    },
    #[error("no definition provided for class {class_label:?}")]
    MissingDefinition { class_label: String },
    #[error("definition for class {class_label:?} is empty")]
    EmptyDefinition { class_label: String },
    #[error("prompt store at {path} is malformed: {detail}")]
    MalformedStore { path: String, detail: String },
    #[error("prompt store at {path} has no sidecar metadata ({detail})")]
    MissingMeta { path: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where one image-prompt came from: which template and which completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_index: usize,
    pub completion_index: usize,
}

/// A per-class list of image-prompts with provenance, ready for embedding.
///
/// Class order follows the dataset's label order; prompt order per class is
/// template order, then completion order within a template.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePromptSet {
    pub dataset_id: String,
    pub mode: PromptMode,
    /// The sampling config that produced this set (LLM modes only).
    pub generation_config: Option<GenerationConfig>,
    prompts: IndexMap<String, Vec<String>>,
    provenance: IndexMap<String, Vec<Provenance>>,
}

impl ImagePromptSet {
    pub fn new(dataset_id: impl Into<String>, mode: PromptMode) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            mode,
            generation_config: None,
            prompts: IndexMap::new(),
            provenance: IndexMap::new(),
        }
    }

    pub fn insert_class(
        &mut self,
        class_label: impl Into<String>,
        prompts: Vec<String>,
        provenance: Vec<Provenance>,
    ) {
        assert_eq!(prompts.len(), provenance.len(), "provenance must align with prompts");
        let label = class_label.into();
        self.prompts.insert(label.clone(), prompts);
        self.provenance.insert(label, provenance);
    }

    pub fn class_labels(&self) -> impl Iterator<Item = &String> {
        self.prompts.keys()
    }

    pub fn num_classes(&self) -> usize {
        self.prompts.len()
    }

    pub fn prompts_for(&self, class_label: &str) -> Option<&[String]> {
        self.prompts.get(class_label).map(Vec::as_slice)
    }

    pub fn provenance_for(&self, class_label: &str) -> Option<&[Provenance]> {
        self.provenance.get(class_label).map(Vec::as_slice)
    }

    pub fn total_prompts(&self) -> usize {
        self.prompts.values().map(Vec::len).sum()
    }

    /// Concatenates two sets over the same classes (the union used for
    /// prompt-family ensembling). Class order follows `self`; within each
    /// class, `self`'s prompts come first. Provenance template indices from
    /// `other` are shifted past `self`'s highest so they stay distinct.
    pub fn concat(&self, other: &ImagePromptSet) -> Result<ImagePromptSet, FactoryError> {
        let mine: Vec<&String> = self.prompts.keys().collect();
        let theirs: Vec<&String> = other.prompts.keys().collect();
        if mine != theirs {
            return Err(FactoryError::MalformedStore {
                path: "<concat>".into(),
                detail: format!(
                    "class labels differ: {} vs {} classes",
                    mine.len(),
                    theirs.len()
                ),
            });
        }
        let offset = self
            .provenance
            .values()
            .flatten()
            .map(|p| p.template_index + 1)
            .max()
            .unwrap_or(0);
        let mut merged = ImagePromptSet::new(self.dataset_id.clone(), self.mode);
        merged.generation_config = self.generation_config.clone();
        for label in self.prompts.keys() {
            let mut prompts = self.prompts[label].clone();
            prompts.extend(other.prompts[label].iter().cloned());
            let mut provenance = self.provenance[label].clone();
            provenance.extend(other.provenance[label].iter().map(|p| Provenance {
                template_index: p.template_index + offset,
                completion_index: p.completion_index,
            }));
            merged.insert_class(label.clone(), prompts, provenance);
        }
        Ok(merged)
    }
}

/// Cleans one raw completion into an image-prompt.
///
/// Steps: drop blank lines (bare `\r` counts as a line break too), join
/// the remaining lines with single spaces, trim, and append a terminal `.`
/// when the text does not already end with one (the API's stop sequence
/// swallows it). Returns `None` when nothing survives — callers drop such
/// completions rather than storing empties.
pub fn clean_completion(raw: &str) -> Option<String> {
    let joined: Vec<&str> = raw
        .split(['\n', '\r'])
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .collect();
    if joined.is_empty() {
        return None;
    }
    let mut text = joined.join(" ");
    if !text.ends_with('.') {
        text.push('.');
    }
    Some(text)
}

/// A dictionary definition for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordNetDefinition {
    pub class_label: String,
    pub definition_text: String,
}

/// Builds the definition sentence "A(n) <label> is <definition>." with
/// exactly one terminal period.
pub fn wordnet_prompt(def: &WordNetDefinition) -> Result<String, FactoryError> {
    let definition = def.definition_text.trim();
    if definition.is_empty() {
        return Err(FactoryError::EmptyDefinition {
            class_label: def.class_label.clone(),
        });
    }
    let article = match def.class_label.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "An",
        _ => "A",
    };
    let definition = definition.strip_suffix('.').unwrap_or(definition);
    Ok(format!("{article} {} is {definition}.", def.class_label))
}

/// Options controlling [`generate_prompt_set`].
pub struct GenerateOptions<'a> {
    /// Maximum classes generated concurrently (each class issues its
    /// template requests sequentially). Must be >= 1.
    pub parallelism: usize,
    /// When set, the partial store is persisted here after classes finish,
    /// so a failed run leaves completed classes on disk.
    pub checkpoint_path: Option<&'a Path>,
    pub article_overrides: &'a ArticleOverrides,
}

impl Default for GenerateOptions<'_> {
    fn default() -> Self {
        static EMPTY: ArticleOverrides = ArticleOverrides::new();
        Self {
            parallelism: 1,
            checkpoint_path: None,
            article_overrides: &EMPTY,
        }
    }
}

/// Generates image-prompts for every class: renders each template, requests
/// `completions_per_prompt` samples through the cache, cleans them, and
/// records provenance. Classes run concurrently up to
/// `options.parallelism`; on failure the error for the first failing class
/// (in label order) is returned after completed classes are checkpointed.
pub fn generate_prompt_set(
    dataset: &DatasetSpec,
    templates: &[LlmPromptTemplate],
    config: &GenerationConfig,
    gateway: &LlmClient,
    cache_dir: &Path,
    options: &GenerateOptions,
) -> Result<ImagePromptSet, FactoryError> {
    if templates.is_empty() {
        return Err(FactoryError::EmptyTemplates {
            dataset_id: dataset.dataset_id.clone(),
        });
    }
    assert!(options.parallelism >= 1, "parallelism must be >= 1");

    let mode = templates[0].source();
    // Render all LLM-prompts up front so template errors surface before any
    // network traffic.
    let mut rendered: Vec<Vec<String>> = Vec::with_capacity(dataset.class_labels.len());
    for label in &dataset.class_labels {
        let mut per_label = Vec::with_capacity(templates.len());
        for template in templates {
            per_label.push(template.render(
                label,
                dataset.type_hint.as_deref(),
                SlotPolicy::RemoveWhenMissing,
                options.article_overrides,
            )?);
        }
        rendered.push(per_label);
    }

    type ClassResult = Result<(Vec<String>, Vec<Provenance>), LlmError>;
    let results: Vec<ClassResult> = parallel_map_indexed(
        dataset.class_labels.len(),
        options.parallelism,
        |class_index| {
            let mut prompts = Vec::new();
            let mut provenance = Vec::new();
            for (template_index, llm_prompt) in rendered[class_index].iter().enumerate() {
                let batch = gateway.cached_complete(llm_prompt, config, cache_dir)?;
                for (completion_index, raw) in batch.raw_texts.iter().enumerate() {
                    if let Some(cleaned) = clean_completion(raw) {
                        prompts.push(cleaned);
                        provenance.push(Provenance { template_index, completion_index });
                    }
                }
            }
            Ok((prompts, provenance))
        },
    );

    // Keep every class that completed (label order, possibly with gaps) so
    // the checkpoint salvages as much finished work as possible; report the
    // first failure in label order.
    let mut set = ImagePromptSet::new(dataset.dataset_id.clone(), mode);
    set.generation_config = Some(config.clone());
    let mut first_failure: Option<FactoryError> = None;
    for (label, result) in dataset.class_labels.iter().zip(results) {
        match result {
            Ok((prompts, provenance)) => set.insert_class(label.clone(), prompts, provenance),
            Err(source) => {
                if first_failure.is_none() {
                    first_failure = Some(FactoryError::Generation {
                        class_label: label.clone(),
                        source,
                    });
                }
            }
        }
    }

    if let Some(path) = options.checkpoint_path {
        save_store(&set, path)?;
    }
    match first_failure {
        Some(err) => Err(err),
        None => Ok(set),
    }
}

/// Runs `f(0..count)` on up to `workers` threads, returning results in
/// index order. The bound also caps concurrent completion requests, since
/// each class runs its calls sequentially on its worker.
fn parallel_map_indexed<R, F>(count: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    if count == 0 {
        return Vec::new();
    }
    let workers = workers.min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }

    let queue = Mutex::new(0..count);
    let (sender, receiver) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let sender = sender.clone();
            let queue = &queue;
            let f = &f;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").next();
                match next {
                    Some(index) => {
                        let result = f(index);
                        if sender.send((index, result)).is_err() {
                            return;
                        }
                    }
                    None => return,
                }
            });
        }
    });
    drop(sender);

    let mut slots: Vec<Option<R>> = (0..count).map(|_| None).collect();
    for (index, result) in receiver {
        slots[index] = Some(result);
    }
    slots.into_iter().map(|slot| slot.expect("worker filled every slot")).collect()
}

/// Renders the hand-written templates directly into image-prompts: one per
/// (class, template), no LLM involved.
pub fn standard_prompt_set(
    dataset: &DatasetSpec,
    templates: &[LlmPromptTemplate],
) -> Result<ImagePromptSet, FactoryError> {
    if templates.is_empty() {
        return Err(FactoryError::EmptyTemplates {
            dataset_id: dataset.dataset_id.clone(),
        });
    }
    let mode = templates[0].source();
    let overrides = ArticleOverrides::new();
    let mut set = ImagePromptSet::new(dataset.dataset_id.clone(), mode);
    for label in &dataset.class_labels {
        let mut prompts = Vec::with_capacity(templates.len());
        let mut provenance = Vec::with_capacity(templates.len());
        for (template_index, template) in templates.iter().enumerate() {
            prompts.push(template.render(
                label,
                dataset.type_hint.as_deref(),
                SlotPolicy::RemoveWhenMissing,
                &overrides,
            )?);
            provenance.push(Provenance { template_index, completion_index: 0 });
        }
        set.insert_class(label.clone(), prompts, provenance);
    }
    Ok(set)
}

/// Builds one definition sentence per class. Every class label must have a
/// definition.
pub fn wordnet_prompt_set(
    dataset: &DatasetSpec,
    definitions: &[WordNetDefinition],
) -> Result<ImagePromptSet, FactoryError> {
    let by_label: IndexMap<&str, &WordNetDefinition> = definitions
        .iter()
        .map(|d| (d.class_label.as_str(), d))
        .collect();
    let mut set = ImagePromptSet::new(dataset.dataset_id.clone(), PromptMode::WordNet);
    for label in &dataset.class_labels {
        let def = by_label
            .get(label.as_str())
            .ok_or_else(|| FactoryError::MissingDefinition { class_label: label.clone() })?;
        set.insert_class(
            label.clone(),
            vec![wordnet_prompt(def)?],
            vec![Provenance { template_index: 0, completion_index: 0 }],
        );
    }
    Ok(set)
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    dataset_id: String,
    mode: PromptMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    generation_config: Option<GenerationConfig>,
    provenance: IndexMap<String, Vec<Provenance>>,
}

pub fn meta_path(store_path: &Path) -> std::path::PathBuf {
    let stem = store_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    store_path.with_file_name(format!("{stem}.meta.json"))
}

/// Persists a prompt store: `<path>` holds the class-to-prompts map (keys
/// in class order) and `<stem>.meta.json` holds mode, generation config,
/// and provenance. Output is pretty-printed JSON and byte-deterministic.
pub fn save_store(set: &ImagePromptSet, path: &Path) -> Result<(), FactoryError> {
    let io_err = |p: &Path| {
        let display = p.display().to_string();
        move |source| FactoryError::Io { path: display.clone(), source }
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut store_json = serde_json::to_string_pretty(&set.prompts).expect("store serializes");
    store_json.push('\n');
    std::fs::write(path, store_json).map_err(io_err(path))?;

    let meta = StoreMeta {
        dataset_id: set.dataset_id.clone(),
        mode: set.mode,
        generation_config: set.generation_config.clone(),
        provenance: set.provenance.clone(),
    };
    let meta_file = meta_path(path);
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    std::fs::write(&meta_file, meta_json).map_err(io_err(&meta_file))?;
    Ok(())
}

/// Loads a prompt store saved by [`save_store`]. The sidecar is required:
/// without provenance, subset ablations would silently lose meaning.
pub fn load_store(path: &Path) -> Result<ImagePromptSet, FactoryError> {
    let raw = std::fs::read_to_string(path).map_err(|source| FactoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let prompts: IndexMap<String, Vec<String>> =
        serde_json::from_str(&raw).map_err(|e| FactoryError::MalformedStore {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;

    let meta_file = meta_path(path);
    let meta_raw = std::fs::read_to_string(&meta_file).map_err(|e| FactoryError::MissingMeta {
        path: path.display().to_string(),
        detail: format!("{}: {e}", meta_file.display()),
    })?;
    let meta: StoreMeta = serde_json::from_str(&meta_raw).map_err(|e| FactoryError::MalformedStore {
        path: meta_file.display().to_string(),
        detail: e.to_string(),
    })?;

    let mut set = ImagePromptSet::new(meta.dataset_id, meta.mode);
    set.generation_config = meta.generation_config;
    for (label, class_prompts) in prompts {
        let provenance = meta.provenance.get(&label).cloned().ok_or_else(|| {
            FactoryError::MalformedStore {
                path: meta_file.display().to_string(),
                detail: format!("no provenance for class {label:?}"),
            }
        })?;
        if provenance.len() != class_prompts.len() {
            return Err(FactoryError::MalformedStore {
                path: meta_file.display().to_string(),
                detail: format!(
                    "class {label:?}: {} prompts but {} provenance entries",
                    class_prompts.len(),
                    provenance.len()
                ),
            });
        }
        set.insert_class(label, class_prompts, provenance);
    }
    Ok(set)
}

/// Loads WordNet-style definitions from JSONL: one
/// `{"label": ..., "definition": ...}` object per line.
pub fn load_definitions(path: &Path) -> Result<Vec<WordNetDefinition>, FactoryError> {
    #[derive(Deserialize)]
    struct Record {
        label: String,
        definition: String,
    }
    let raw = std::fs::read_to_string(path).map_err(|source| FactoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut definitions = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| FactoryError::MalformedStore {
            path: format!("{}:{}", path.display(), i + 1),
            detail: e.to_string(),
        })?;
        definitions.push(WordNetDefinition {
            class_label: record.label,
            definition_text: record.definition,
        });
    }
    Ok(definitions)
}

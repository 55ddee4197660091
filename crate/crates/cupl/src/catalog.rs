//! Prompt-template catalog: dataset registry, template files, and rendering.
//!
//! A catalog directory looks like:
//!
//! ```text
//! catalog/
//!   datasets.json              # registry: id, display name, type hint, metric, labels file
//!   article_overrides.txt      # optional: per-label article fixups ("an heir")
//!   imagenet/
//!     single.txt               # one generic description template
//!     full.txt                 # the hand-tuned description templates
//!     standard.txt             # the hand-written "a photo of ..." templates
//!     labels.txt               # one class label per line
//!   ...
//! ```
//!
//! Template files hold one template per line; `#` starts a comment and blank
//! lines are ignored. Every template contains exactly one `{}` placeholder.
//! Two further markers are resolved at render time:
//!
//! * `a(n)` — expanded to `a`/`an` against the class label's first letter
//!   (vowel letters aeiou, case-insensitive), unless the template is kept
//!   verbatim (the hand-written templates use a literal `a`).
//! * `a type of _` — the type-hint slot. Datasets with a registered type
//!   hint fill it (`a type of pet`); general-purpose datasets drop the
//!   clause together with its commas.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

/// Placeholder for the class label inside a template.
pub const PLACEHOLDER: &str = "{}";
/// Marker expanded to "a"/"an" against the class label.
pub const ARTICLE_MARKER: &str = "a(n)";
/// Type-hint slot filled from the dataset registry.
pub const TYPE_HINT_SLOT: &str = "a type of _";

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("malformed template {template:?}: expected exactly one {PLACEHOLDER} placeholder, found {count}")]
    MalformedTemplate { template: String, count: usize },
    #[error("template {template:?} contains a type-hint slot but no type hint was provided")]
    MissingTypeHint { template: String },
    #[error("catalog parse error at {file}:{line}: {detail}")]
    ParseError {
        file: String,
        line: usize,
        detail: String,
    },
    #[error("unknown dataset {dataset_id:?} (known: {known:?})")]
    UnknownDataset { dataset_id: String, known: Vec<String> },
    #[error("mode {mode} has no catalog template file")]
    UnknownMode { mode: PromptMode },
    #[error("dataset {dataset_id:?}: {detail}")]
    InvalidDataset { dataset_id: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which prompt family a template (or a generated prompt set) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// One generic LLM-prompt shared across datasets.
    CuplSingle,
    /// The dataset's hand-tuned set of LLM-prompts.
    CuplFull,
    /// Hand-written fill-in templates used directly (no LLM involved).
    Standard,
    /// Dictionary-definition sentences ("A tench is ...").
    WordNet,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::CuplSingle => "single",
            PromptMode::CuplFull => "full",
            PromptMode::Standard => "standard",
            PromptMode::WordNet => "wordnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(PromptMode::CuplSingle),
            "full" => Some(PromptMode::CuplFull),
            "standard" => Some(PromptMode::Standard),
            "wordnet" => Some(PromptMode::WordNet),
            _ => None,
        }
    }

    /// Modes that have a template file in the catalog (WordNet does not;
    /// its sentences come from definition files).
    pub const CATALOG_MODES: [PromptMode; 3] = [
        PromptMode::CuplSingle,
        PromptMode::CuplFull,
        PromptMode::Standard,
    ];

    /// Catalog file carrying this mode's templates, when one exists.
    pub fn file_name(self) -> Option<&'static str> {
        match self {
            PromptMode::CuplSingle => Some("single.txt"),
            PromptMode::CuplFull => Some("full.txt"),
            PromptMode::Standard => Some("standard.txt"),
            PromptMode::WordNet => None,
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether `a(n)` markers are expanded at render time or kept literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleMode {
    /// Expand `a(n)` to `a`/`an` by the vowel-letter heuristic.
    ExpandAn,
    /// Leave `a(n)` exactly as written.
    Verbatim,
}

/// What to do when a template has a type-hint slot but the dataset has no
/// registered type hint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPolicy {
    /// Drop the `, a type of _,` clause, commas included. This is what
    /// general-purpose datasets use.
    RemoveWhenMissing,
    /// Fail with [`CatalogError::MissingTypeHint`].
    RequireHint,
}

/// Explicit article override for labels the vowel heuristic gets wrong
/// (e.g. "an heir", "a unicorn").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Article {
    A,
    An,
}

/// Map from class label to forced article, case-sensitive on the label.
pub type ArticleOverrides = BTreeMap<String, Article>;

/// One prompt template with its render policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmPromptTemplate {
    text: String,
    article_mode: ArticleMode,
    source: PromptMode,
}

impl LlmPromptTemplate {
    /// Validates the placeholder count and wraps the template text.
    pub fn new(
        text: impl Into<String>,
        article_mode: ArticleMode,
        source: PromptMode,
    ) -> Result<Self, CatalogError> {
        let text = text.into();
        let count = text.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(CatalogError::MalformedTemplate { template: text, count });
        }
        Ok(Self { text, article_mode, source })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn article_mode(&self) -> ArticleMode {
        self.article_mode
    }

    pub fn with_article_mode(mut self, mode: ArticleMode) -> Self {
        self.article_mode = mode;
        self
    }

    pub fn source(&self) -> PromptMode {
        self.source
    }

    /// Renders the template against a class label.
    ///
    /// Resolution order: type-hint slot, then `{}` substitution, then
    /// `a(n)` expansion (when the template's article mode asks for it),
    /// then whitespace cleanup. The output contains no unresolved markers.
    pub fn render(
        &self,
        class_label: &str,
        type_hint: Option<&str>,
        policy: SlotPolicy,
        overrides: &ArticleOverrides,
    ) -> Result<String, CatalogError> {
        let mut text = self.text.clone();

        if text.contains(TYPE_HINT_SLOT) {
            match (type_hint, policy) {
                (Some(hint), _) => {
                    text = text.replace(TYPE_HINT_SLOT, &format!("a type of {hint}"));
                }
                (None, SlotPolicy::RemoveWhenMissing) => {
                    // Drop the clause with its commas; fall back to the bare
                    // slot for templates written without them.
                    let with_commas = format!(", {TYPE_HINT_SLOT},");
                    if text.contains(&with_commas) {
                        text = text.replace(&with_commas, "");
                    } else {
                        text = text.replace(TYPE_HINT_SLOT, "");
                    }
                }
                (None, SlotPolicy::RequireHint) => {
                    return Err(CatalogError::MissingTypeHint {
                        template: self.text.clone(),
                    });
                }
            }
        }

        text = text.replace(PLACEHOLDER, class_label);

        if self.article_mode == ArticleMode::ExpandAn {
            let article = article_for(class_label, overrides);
            text = text.replace(ARTICLE_MARKER, article.0);
            text = text.replace("A(n)", article.1);
        }

        while text.contains("  ") {
            text = text.replace("  ", " ");
        }
        Ok(text.trim().to_string())
    }
}

/// Picks ("a"/"an", "A"/"An") for a label: override first, else the
/// vowel-letter heuristic on the first character.
fn article_for(class_label: &str, overrides: &ArticleOverrides) -> (&'static str, &'static str) {
    let article = overrides
        .get(class_label)
        .copied()
        .unwrap_or_else(|| match class_label.chars().next() {
            Some(c) if "aeiouAEIOU".contains(c) => Article::An,
            _ => Article::A,
        });
    match article {
        Article::A => ("a", "A"),
        Article::An => ("an", "An"),
    }
}

/// Which accuracy flavor a dataset is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Top1Accuracy,
    MeanPerClass,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Top1Accuracy => f.write_str("top1_accuracy"),
            Metric::MeanPerClass => f.write_str("mean_per_class"),
        }
    }
}

/// A benchmark dataset: identity, label set, scoring metric, and the type
/// hint used by the generic single template (absent for general-purpose
/// datasets).
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub dataset_id: String,
    pub display_name: String,
    pub type_hint: Option<String>,
    pub metric: Metric,
    pub class_labels: Vec<String>,
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    fn validate(&self) -> Result<(), CatalogError> {
        if self.class_labels.is_empty() {
            return Err(CatalogError::InvalidDataset {
                dataset_id: self.dataset_id.clone(),
                detail: "class label list is empty".into(),
            });
        }
        let mut seen = IndexSet::new();
        for label in &self.class_labels {
            if label.trim().is_empty() {
                return Err(CatalogError::InvalidDataset {
                    dataset_id: self.dataset_id.clone(),
                    detail: "blank class label".into(),
                });
            }
            if !seen.insert(label.as_str()) {
                return Err(CatalogError::InvalidDataset {
                    dataset_id: self.dataset_id.clone(),
                    detail: format!("duplicate class label {label:?}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RegistryEntry {
    dataset_id: String,
    display_name: String,
    #[serde(default)]
    type_hint: Option<String>,
    metric: Metric,
    labels_file: String,
}

/// Per-dataset template lists, one per catalog mode.
#[derive(Debug, Clone)]
pub struct DatasetTemplates {
    pub single: Vec<LlmPromptTemplate>,
    pub full: Vec<LlmPromptTemplate>,
    pub standard: Vec<LlmPromptTemplate>,
}

impl DatasetTemplates {
    pub fn for_mode(&self, mode: PromptMode) -> Result<&[LlmPromptTemplate], CatalogError> {
        match mode {
            PromptMode::CuplSingle => Ok(&self.single),
            PromptMode::CuplFull => Ok(&self.full),
            PromptMode::Standard => Ok(&self.standard),
            PromptMode::WordNet => Err(CatalogError::UnknownMode { mode }),
        }
    }
}

/// The loaded catalog: dataset specs plus their template lists, in registry
/// order.
#[derive(Debug, Clone)]
pub struct TemplateCatalog {
    datasets: IndexMap<String, (DatasetSpec, DatasetTemplates)>,
    article_overrides: ArticleOverrides,
}

impl TemplateCatalog {
    pub fn dataset_ids(&self) -> impl Iterator<Item = &String> {
        self.datasets.keys()
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn dataset(&self, dataset_id: &str) -> Result<&DatasetSpec, CatalogError> {
        self.datasets
            .get(dataset_id)
            .map(|(spec, _)| spec)
            .ok_or_else(|| CatalogError::UnknownDataset {
                dataset_id: dataset_id.to_string(),
                known: self.datasets.keys().cloned().collect(),
            })
    }

    pub fn templates(
        &self,
        dataset_id: &str,
        mode: PromptMode,
    ) -> Result<&[LlmPromptTemplate], CatalogError> {
        let (_, templates) = self
            .datasets
            .get(dataset_id)
            .ok_or_else(|| CatalogError::UnknownDataset {
                dataset_id: dataset_id.to_string(),
                known: self.datasets.keys().cloned().collect(),
            })?;
        templates.for_mode(mode)
    }

    pub fn article_overrides(&self) -> &ArticleOverrides {
        &self.article_overrides
    }

    /// Counts templates for a mode across all datasets.
    ///
    /// Returns `(total, unique)` where `total` sums per-dataset template
    /// counts and `unique` counts distinct template strings across datasets.
    pub fn count_templates(&self, mode: PromptMode) -> Result<TemplateCounts, CatalogError> {
        let mut per_dataset = IndexMap::new();
        let mut distinct: IndexSet<&str> = IndexSet::new();
        let mut total = 0;
        for (id, (_, templates)) in &self.datasets {
            let list = templates.for_mode(mode)?;
            total += list.len();
            per_dataset.insert(id.clone(), list.len());
            for template in list {
                distinct.insert(template.text());
            }
        }
        Ok(TemplateCounts {
            total,
            unique: distinct.len(),
            per_dataset,
        })
    }
}

/// Result of [`TemplateCatalog::count_templates`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateCounts {
    pub total: usize,
    pub unique: usize,
    pub per_dataset: IndexMap<String, usize>,
}

/// Parses a one-template-per-line file. `#` lines are comments; blank lines
/// are skipped. Returns templates in file order (the order defines each
/// template's index for provenance and subset sweeps).
fn load_template_file(
    path: &Path,
    article_mode: ArticleMode,
    source: PromptMode,
) -> Result<Vec<LlmPromptTemplate>, CatalogError> {
    let content = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut templates = Vec::new();
    for (i, raw_line) in content.lines().enumerate() {
        let line = raw_line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let template = LlmPromptTemplate::new(line, article_mode, source).map_err(|e| {
            CatalogError::ParseError {
                file: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            }
        })?;
        templates.push(template);
    }
    Ok(templates)
}

fn load_labels_file(path: &Path) -> Result<Vec<String>, CatalogError> {
    let content = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn load_article_overrides(path: &Path) -> Result<ArticleOverrides, CatalogError> {
    let mut overrides = ArticleOverrides::new();
    if !path.exists() {
        return Ok(overrides);
    }
    let content = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for (i, raw_line) in content.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |detail: String| CatalogError::ParseError {
            file: path.display().to_string(),
            line: i + 1,
            detail,
        };
        let (article, label) = line
            .split_once(' ')
            .ok_or_else(|| parse_err("expected \"<a|an> <label>\"".into()))?;
        let article = match article {
            "a" => Article::A,
            "an" => Article::An,
            other => return Err(parse_err(format!("unknown article {other:?}"))),
        };
        overrides.insert(label.trim().to_string(), article);
    }
    Ok(overrides)
}

/// Loads the full catalog from a directory (see module docs for the layout).
///
/// Every dataset in `datasets.json` must provide all three template files
/// and a labels file. Single-template files must hold exactly one template.
pub fn load_catalog(dir: &Path) -> Result<TemplateCatalog, CatalogError> {
    let registry_path = dir.join("datasets.json");
    let registry_raw = fs::read_to_string(&registry_path).map_err(|source| CatalogError::Io {
        path: registry_path.display().to_string(),
        source,
    })?;
    let entries: Vec<RegistryEntry> =
        serde_json::from_str(&registry_raw).map_err(|e| CatalogError::ParseError {
            file: registry_path.display().to_string(),
            line: e.line(),
            detail: e.to_string(),
        })?;

    let mut datasets = IndexMap::new();
    for entry in entries {
        let dataset_dir = dir.join(&entry.dataset_id);
        let labels_path = resolve_relative(dir, &dataset_dir, &entry.labels_file);
        let spec = DatasetSpec {
            dataset_id: entry.dataset_id.clone(),
            display_name: entry.display_name,
            type_hint: entry.type_hint,
            metric: entry.metric,
            class_labels: load_labels_file(&labels_path)?,
        };
        spec.validate()?;

        // LLM-facing templates expand a(n); the hand-written "standard"
        // templates are used verbatim.
        let single = load_template_file(
            &dataset_dir.join(PromptMode::CuplSingle.file_name().unwrap()),
            ArticleMode::ExpandAn,
            PromptMode::CuplSingle,
        )?;
        let full = load_template_file(
            &dataset_dir.join(PromptMode::CuplFull.file_name().unwrap()),
            ArticleMode::ExpandAn,
            PromptMode::CuplFull,
        )?;
        let standard = load_template_file(
            &dataset_dir.join(PromptMode::Standard.file_name().unwrap()),
            ArticleMode::Verbatim,
            PromptMode::Standard,
        )?;
        if single.len() != 1 {
            return Err(CatalogError::InvalidDataset {
                dataset_id: entry.dataset_id.clone(),
                detail: format!("single.txt must hold exactly 1 template, found {}", single.len()),
            });
        }
        datasets.insert(entry.dataset_id, (spec, DatasetTemplates { single, full, standard }));
    }

    let article_overrides = load_article_overrides(&dir.join("article_overrides.txt"))?;
    Ok(TemplateCatalog { datasets, article_overrides })
}

/// Labels files are referenced relative to the dataset's directory, with a
/// catalog-root fallback for shared files.
fn resolve_relative(catalog_dir: &Path, dataset_dir: &Path, file: &str) -> PathBuf {
    let in_dataset = dataset_dir.join(file);
    if in_dataset.exists() {
        in_dataset
    } else {
        catalog_dir.join(file)
    }
}

//! Command-line interface.
//!
//! Subcommands cover the full pipeline: `generate` produces image-prompt
//! stores, `classify` scores images against class prototypes, `eval`
//! computes dataset metrics, `ensemble` fuses two prompt stores into one
//! prototype set, `ablate` runs budget/temperature sweeps, and
//! `catalog stats` reports template accounting.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 upstream service
//! failure (LLM or embedding backend, including inconsistent model
//! artifacts), 4 filesystem error.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{
    self, AblationError, SweepAxis, SweepContext, SweepResult,
};
use crate::catalog::{
    CatalogError, Metric, PromptMode, TemplateCatalog, load_catalog,
};
use crate::config::{
    self, ConfigError, ConfigOverlay, EmbeddingBackendConfig, RunConfig,
};
use crate::embedding::{
    EmbeddingError, FileEmbedder, HashEmbedder, HttpEmbedder,
    TextEmbedder, load_embedding_file,
};
use crate::eval::{
    self, EvalError, EvalReport, render_report_table,
};
use crate::factory::{
    FactoryError, ImagePromptSet, generate_prompt_set, load_definitions,
    load_store, save_store, standard_prompt_set, wordnet_prompt_set,
    GenerateOptions,
};
use crate::llm::{LlmClient, LlmError};
use crate::zeroshot::{
    Prediction, PrototypeOptions, PrototypeSet, ZeroshotError,
    build_prototype_set, classify, ensemble_prototype_sets, load_prototypes,
    save_prototypes,
};

/// Classifies failures by which exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config files, bad catalog data, missing credentials.
    #[error("{0}")]
    Config(String),
    /// The LLM or embedding backend failed, or model artifacts disagree.
    #[error("{0}")]
    Upstream(String),
    /// A file could not be read or written.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Upstream(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Unreadable { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::InvalidConfig(_) => CliError::Config(e.to_string()),
            LlmError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io { .. } => CliError::Io(e.to_string()),
            EmbeddingError::ParseError { .. } => CliError::Io(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        }
    }
}

impl From<FactoryError> for CliError {
    fn from(e: FactoryError) -> Self {
        match e {
            FactoryError::Io { .. } => CliError::Io(e.to_string()),
            FactoryError::MalformedStore { .. } | FactoryError::MissingMeta { .. } => {
                CliError::Io(e.to_string())
            }
            FactoryError::Generation { ref source, .. } => match source {
                LlmError::InvalidConfig(_) => CliError::Config(e.to_string()),
                LlmError::Io { .. } => CliError::Io(e.to_string()),
                _ => CliError::Upstream(e.to_string()),
            },
            FactoryError::Catalog(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ZeroshotError> for CliError {
    fn from(e: ZeroshotError) -> Self {
        match e {
            ZeroshotError::Embedding(inner) => inner.into(),
            ZeroshotError::MalformedPrototypes { .. } => CliError::Io(e.to_string()),
            _ => CliError::Upstream(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } | EvalError::ParseError { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        match e {
            AblationError::Factory(inner) => inner.into(),
            AblationError::Llm(inner) => inner.into(),
            AblationError::Zeroshot(inner) => inner.into(),
            AblationError::Eval(inner) => inner.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(
    name = "cupl",
    version,
    about = "Zero-shot image classification from LLM-generated class descriptions"
)]
struct Cli {
    /// Path to a TOML config file (lowest-precedence settings layer).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter (e.g. info, debug, cupl=trace). Falls back to RUST_LOG.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that resolves a run configuration.
#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// Completion endpoint base URL.
    #[arg(long)]
    llm_url: Option<String>,
    /// Completion model name.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature for completions.
    #[arg(long)]
    temperature: Option<f64>,
    /// Maximum tokens per completion.
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Completions requested per LLM-prompt.
    #[arg(long)]
    completions: Option<u32>,
    /// Stop sequence for completions.
    #[arg(long)]
    stop: Option<String>,
    /// Retry budget for rate-limited requests.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Base delay in milliseconds for retry backoff.
    #[arg(long)]
    retry_base_ms: Option<u64>,
    /// Concurrent classes during generation.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory holding the template catalog.
    #[arg(long)]
    catalog_dir: Option<PathBuf>,
    /// Directory for the completion cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Average raw prompt embeddings instead of normalizing each first.
    #[arg(long)]
    no_prenormalize: bool,
    /// Embedding backend kind: hash, http, or file.
    #[arg(long)]
    embed_backend: Option<String>,
    /// Vector width for the hash backend.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Seed for the hash backend.
    #[arg(long)]
    embed_seed: Option<u64>,
    /// Base URL for the http embedding backend.
    #[arg(long)]
    embed_url: Option<String>,
    /// JSONL file for the file embedding backend.
    #[arg(long)]
    embed_file: Option<PathBuf>,
}

impl CommonFlags {
    fn overlay(&self) -> ConfigOverlay {
        ConfigOverlay {
            llm_url: self.llm_url.clone(),
            api_key: None,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            completions_per_prompt: self.completions,
            stop_sequence: self.stop.clone(),
            max_retries: self.max_retries,
            request_timeout_secs: self.timeout_secs,
            retry_base_delay_ms: self.retry_base_ms,
            parallelism: self.parallelism,
            catalog_dir: self.catalog_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            prenormalize: if self.no_prenormalize { Some(false) } else { None },
            embed_backend: self.embed_backend.clone(),
            embed_dim: self.embed_dim,
            embed_seed: self.embed_seed,
            embed_url: self.embed_url.clone(),
            embed_file: self.embed_file.clone(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an image-prompt store for one dataset and prompt mode.
    Generate {
        /// Dataset identifier from the catalog registry.
        #[arg(long)]
        dataset: String,
        /// Prompt mode: single, full, standard, or wordnet.
        #[arg(long)]
        mode: String,
        /// Output path for the prompt store JSON.
        #[arg(long)]
        out: PathBuf,
        /// JSONL file of {"label", "definition"} rows (wordnet mode only).
        #[arg(long)]
        definitions: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Score image embeddings against class prototypes.
    Classify {
        #[arg(long)]
        dataset: String,
        /// Prompt store to embed into prototypes (mutually exclusive with --prototypes).
        #[arg(long, conflicts_with = "prototypes")]
        prompts: Option<PathBuf>,
        /// Pre-built prototype file.
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// JSONL file of image embeddings keyed by image id.
        #[arg(long)]
        images: PathBuf,
        /// CSV manifest of image_key,true_index rows to classify.
        #[arg(long)]
        manifest: PathBuf,
        /// Output CSV of predictions.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Compute the dataset metric over a prediction CSV.
    Eval {
        #[arg(long)]
        dataset: String,
        /// Prediction CSV produced by `classify`.
        #[arg(long)]
        predictions: PathBuf,
        /// CSV manifest of image_key,true_index rows.
        #[arg(long)]
        manifest: PathBuf,
        /// Label for the prompt mode being evaluated (shown in reports).
        #[arg(long, default_value = "full")]
        mode: String,
        /// Baseline report JSON to diff against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Where to write the report JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Where to write the report as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Fuse two prompt stores into one prototype set.
    Ensemble {
        #[arg(long)]
        dataset: String,
        /// First prompt store.
        #[arg(long)]
        store_a: PathBuf,
        /// Second prompt store.
        #[arg(long)]
        store_b: PathBuf,
        /// Output path for the fused prototype file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Sweep prompt budgets or sampling temperature and score each point.
    Ablate {
        #[arg(long)]
        dataset: String,
        /// Sweep axis: llm-prompts, image-prompts, or temperature.
        #[arg(long)]
        axis: String,
        /// Comma-separated increasing axis values.
        #[arg(long)]
        values: String,
        /// Prompt store to subset (llm-prompts / image-prompts axes).
        #[arg(long)]
        store: Option<PathBuf>,
        /// JSONL file of image embeddings.
        #[arg(long)]
        images: PathBuf,
        /// CSV manifest to score against.
        #[arg(long)]
        manifest: PathBuf,
        /// Output CSV of sweep points.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Inspect the template catalog.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand, Debug)]
enum CatalogAction {
    /// Print per-dataset and aggregate template counts for every mode.
    Stats {
        #[command(flatten)]
        common: CommonFlags,
    },
}

/// Parses arguments and dispatches. Returns the process exit code.
pub fn main_entry() -> u8 {
    let cli = Cli::parse();
    let filter = cli
        .log_level
        .clone()
        .or_else(|| std::env::var("RUST_LOG").ok())
        .unwrap_or_else(|| "warn".into());
    let _ = env_logger::Builder::new().parse_filters(&filter).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(config_path: Option<&Path>, common: &CommonFlags) -> Result<RunConfig, CliError> {
    let file = match config_path {
        Some(path) => Some(config::load_config_file(path)?),
        None => None,
    };
    Ok(config::resolve(file, &common.overlay())?)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { dataset, mode, out, definitions, common } => {
            let config = resolve_config(cli.config.as_deref(), &common)?;
            cmd_generate(&config, &dataset, &mode, &out, definitions.as_deref())
        }
        Command::Classify { dataset, prompts, prototypes, images, manifest, out, common } => {
            let config = resolve_config(cli.config.as_deref(), &common)?;
            cmd_classify(
                &config,
                &dataset,
                prompts.as_deref(),
                prototypes.as_deref(),
                &images,
                &manifest,
                &out,
            )
        }
        Command::Eval {
            dataset,
            predictions,
            manifest,
            mode,
            baseline,
            report_out,
            csv_out,
            common,
        } => {
            let config = resolve_config(cli.config.as_deref(), &common)?;
            cmd_eval(
                &config,
                &dataset,
                &predictions,
                &manifest,
                &mode,
                baseline.as_deref(),
                report_out.as_deref(),
                csv_out.as_deref(),
            )
        }
        Command::Ensemble { dataset, store_a, store_b, out, common } => {
            let config = resolve_config(cli.config.as_deref(), &common)?;
            cmd_ensemble(&config, &dataset, &store_a, &store_b, &out)
        }
        Command::Ablate { dataset, axis, values, store, images, manifest, out, common } => {
            let config = resolve_config(cli.config.as_deref(), &common)?;
            cmd_ablate(
                &config,
                &dataset,
                &axis,
                &values,
                store.as_deref(),
                &images,
                &manifest,
                &out,
            )
        }
        Command::Catalog { action } => match action {
            CatalogAction::Stats { common } => {
                let config = resolve_config(cli.config.as_deref(), &common)?;
                cmd_catalog_stats(&config)
            }
        },
    }
}

/// Instantiates the configured embedding backend.
fn make_embedder(config: &RunConfig) -> Result<Box<dyn TextEmbedder>, CliError> {
    Ok(match &config.embedding {
        EmbeddingBackendConfig::Hash { dim, seed } => {
            Box::new(HashEmbedder::new(*dim, *seed))
        }
        EmbeddingBackendConfig::Http { url } => {
            Box::new(HttpEmbedder::new(url.clone())?)
        }
        EmbeddingBackendConfig::File { path } => {
            let store = load_embedding_file(path)?;
            Box::new(FileEmbedder::new(store))
        }
    })
}

fn load_catalog_dir(config: &RunConfig) -> Result<TemplateCatalog, CliError> {
    Ok(load_catalog(&config.catalog_dir)?)
}

fn cmd_generate(
    config: &RunConfig,
    dataset_id: &str,
    mode_name: &str,
    out: &Path,
    definitions: Option<&Path>,
) -> Result<(), CliError> {
    let mode = PromptMode::parse(mode_name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown prompt mode {mode_name:?} (expected single, full, standard, or wordnet)"
        ))
    })?;
    let catalog = load_catalog_dir(config)?;
    let dataset = catalog.dataset(dataset_id)?;
    let store = match mode {
        PromptMode::Standard => {
            let templates = catalog.templates(dataset_id, mode)?;
            standard_prompt_set(dataset, templates)?
        }
        PromptMode::WordNet => {
            let path = definitions.ok_or_else(|| {
                CliError::Config("wordnet mode needs --definitions <jsonl>".into())
            })?;
            let defs = load_definitions(path)?;
            wordnet_prompt_set(dataset, &defs)?
        }
        PromptMode::CuplSingle | PromptMode::CuplFull => {
            let api_key = config.api_key.clone().ok_or_else(|| {
                CliError::Config(format!(
                    "mode {mode_name:?} calls the completion endpoint; set {}",
                    config::API_KEY_ENV
                ))
            })?;
            let templates = catalog.templates(dataset_id, mode)?;
            let generation = config.generation_config();
            generation.validate()?;
            let client = LlmClient::new(config.llm_url.clone(), Some(api_key))?;
            let checkpoint = checkpoint_path(out);
            let options = GenerateOptions {
                parallelism: config.parallelism,
                checkpoint_path: Some(&checkpoint),
                article_overrides: catalog.article_overrides(),
            };
            let store = generate_prompt_set(
                dataset,
                templates,
                &generation,
                &client,
                &config.cache_dir,
                &options,
            )?;
            // A finished run supersedes its checkpoint.
            remove_checkpoint(&checkpoint);
            store
        }
    };
    save_store(&store, out)?;
    println!(
        "wrote {} image-prompts for {} classes ({} mode) to {}",
        store.total_prompts(),
        store.num_classes(),
        store.mode.as_str(),
        out.display()
    );
    Ok(())
}

fn checkpoint_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

fn remove_checkpoint(path: &Path) {
    for candidate in [path.to_path_buf(), crate::factory::meta_path(path)] {
        if candidate.exists() {
            let _ = std::fs::remove_file(candidate);
        }
    }
}

/// Loads prototypes either from a prompt store (embedding it now) or from a
/// prototype file written earlier.
fn load_or_build_prototypes(
    config: &RunConfig,
    prompts: Option<&Path>,
    prototypes: Option<&Path>,
) -> Result<PrototypeSet, CliError> {
    match (prompts, prototypes) {
        (Some(store_path), None) => {
            let store = load_store(store_path)?;
            let backend = make_embedder(config)?;
            let options = PrototypeOptions { prenormalize: config.prenormalize };
            Ok(build_prototype_set(&store, backend.as_ref(), &options)?)
        }
        (None, Some(proto_path)) => Ok(load_prototypes(proto_path)?),
        (None, None) => Err(CliError::Config(
            "provide --prompts <store> or --prototypes <file>".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    }
}

fn cmd_classify(
    config: &RunConfig,
    dataset_id: &str,
    prompts: Option<&Path>,
    prototypes: Option<&Path>,
    images: &Path,
    manifest: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let protos = load_or_build_prototypes(config, prompts, prototypes)?;
    if protos.dataset_id != dataset_id {
        return Err(CliError::Config(format!(
            "prototypes belong to dataset {:?}, not {dataset_id:?}",
            protos.dataset_id
        )));
    }
    let image_store = load_embedding_file(images)?;
    let manifest = eval::load_manifest(manifest)?;

    let mut rows = Vec::with_capacity(manifest.items().len());
    for (image_key, _) in manifest.items() {
        let image = image_store.lookup(image_key)?;
        let prediction = classify(image_key, image, &protos)?;
        rows.push(prediction);
    }
    write_predictions_csv(out, &rows)?;
    println!("classified {} images into {}", rows.len(), out.display());
    Ok(())
}

/// Writes predictions as `image_key,predicted_index,top_score` CSV.
pub fn write_predictions_csv(path: &Path, rows: &[Prediction]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| io_err(&format!("cannot create {}", parent.display()), e))?;
        }
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["image_key", "predicted_index", "top_score"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        writer
            .write_record([
                row.image_key.as_str(),
                &row.predicted_index.to_string(),
                &format!("{:.6}", row.top_score),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// Reads a prediction CSV back into key/index pairs.
pub fn load_predictions_csv(path: &Path) -> Result<Vec<(String, usize)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "image_key" || &headers[1] != "predicted_index" {
        return Err(CliError::Config(format!(
            "{}: expected header image_key,predicted_index[,top_score]",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        let line = i + 2;
        let key = record
            .get(0)
            .ok_or_else(|| {
                CliError::Config(format!("{}:{line}: missing image_key", path.display()))
            })?
            .to_string();
        let index: usize = record
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{line}: predicted_index is not a non-negative integer",
                    path.display()
                ))
            })?;
        rows.push((key, index));
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config: &RunConfig,
    dataset_id: &str,
    predictions_path: &Path,
    manifest_path: &Path,
    mode: &str,
    baseline: Option<&Path>,
    report_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<(), CliError> {
    let catalog = load_catalog_dir(config)?;
    let dataset = catalog.dataset(dataset_id)?;
    let manifest = eval::load_manifest(manifest_path)?;
    let rows = load_predictions_csv(predictions_path)?;
    let predictions: Vec<Prediction> = rows
        .into_iter()
        .map(|(image_key, predicted_index)| Prediction {
            image_key,
            predicted_index,
            predicted_label: String::new(),
            top_score: f32::NAN,
            scores: Vec::new(),
        })
        .collect();

    let baseline_report = match baseline {
        Some(path) => Some(read_report_json(path)?),
        None => None,
    };
    let report = eval::evaluate(&predictions, &manifest, dataset, mode, baseline_report.as_ref())?;

    let mut reports = Vec::new();
    if let Some(b) = baseline_report {
        reports.push(b);
    }
    reports.push(report.clone());
    let table = render_report_table(&reports);
    print!("{}", table.text);

    if let Some(path) = report_out {
        write_report_json(path, &report)?;
    }
    if let Some(path) = csv_out {
        std::fs::write(path, table.csv.as_bytes())
            .map_err(|e| io_err(&format!("cannot write {}", path.display()), e))?;
    }
    Ok(())
}

fn read_report_json(path: &Path) -> Result<EvalReport, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| io_err(&format!("cannot read {}", path.display()), e))?;
    serde_json::from_str(&raw).map_err(|e| {
        CliError::Config(format!("{} is not a report JSON: {e}", path.display()))
    })
}

fn write_report_json(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| io_err(&format!("cannot create {}", parent.display()), e))?;
        }
    }
    let mut body = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Io(e.to_string()))?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| io_err(&format!("cannot write {}", path.display()), e))
}

fn cmd_ensemble(
    config: &RunConfig,
    dataset_id: &str,
    store_a: &Path,
    store_b: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let a = load_store(store_a)?;
    let b = load_store(store_b)?;
    for (name, store) in [("--store-a", &a), ("--store-b", &b)] {
        if store.dataset_id != dataset_id {
            return Err(CliError::Config(format!(
                "{name} belongs to dataset {:?}, not {dataset_id:?}",
                store.dataset_id
            )));
        }
    }
    let backend = make_embedder(config)?;
    let options = PrototypeOptions { prenormalize: config.prenormalize };
    let fused = ensemble_prototype_sets(&a, &b, backend.as_ref(), &options)?;
    save_prototypes(&fused, out)?;
    println!(
        "wrote ensemble prototypes for {} classes to {}",
        fused.num_classes(),
        out.display()
    );
    Ok(())
}

fn parse_axis(axis: &str) -> Result<SweepAxis, CliError> {
    match axis {
        "llm-prompts" => Ok(SweepAxis::LlmPromptCount),
        "image-prompts" => Ok(SweepAxis::ImagePromptsPerTemplate),
        "temperature" => Ok(SweepAxis::Temperature),
        other => Err(CliError::Config(format!(
            "unknown sweep axis {other:?} (expected llm-prompts, image-prompts, or temperature)"
        ))),
    }
}

fn parse_usize_values(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|v| {
            v.trim().parse::<usize>().map_err(|_| {
                CliError::Config(format!("sweep value {v:?} is not a non-negative integer"))
            })
        })
        .collect()
}

fn parse_f64_values(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("sweep value {v:?} is not a number")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    config: &RunConfig,
    dataset_id: &str,
    axis_name: &str,
    values: &str,
    store_path: Option<&Path>,
    images: &Path,
    manifest_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let axis = parse_axis(axis_name)?;
    let catalog = load_catalog_dir(config)?;
    let dataset = catalog.dataset(dataset_id)?;
    let images = load_embedding_file(images)?;
    let manifest = eval::load_manifest(manifest_path)?;
    let backend = make_embedder(config)?;
    let options = PrototypeOptions { prenormalize: config.prenormalize };

    let result: SweepResult = match axis {
        SweepAxis::Temperature => {
            let api_key = config.api_key.clone().ok_or_else(|| {
                CliError::Config(format!(
                    "temperature sweeps call the completion endpoint; set {}",
                    config::API_KEY_ENV
                ))
            })?;
            let temperatures = parse_f64_values(values)?;
            let templates = catalog.templates(dataset_id, PromptMode::CuplSingle)?;
            let client = LlmClient::new(config.llm_url.clone(), Some(api_key))?;
            let generate_options = GenerateOptions {
                parallelism: config.parallelism,
                checkpoint_path: None,
                article_overrides: catalog.article_overrides(),
            };
            // The context store is unused on this axis; points regenerate
            // their own stores at each temperature.
            let placeholder = ImagePromptSet::new(dataset_id, PromptMode::CuplSingle);
            let ctx = SweepContext {
                dataset,
                store: &placeholder,
                backend: backend.as_ref(),
                images: &images,
                manifest: &manifest,
                options,
            };
            ablation::sweep_temperature(
                &ctx,
                templates,
                &config.generation_config(),
                &client,
                &config.cache_dir,
                &generate_options,
                &temperatures,
            )?
        }
        SweepAxis::LlmPromptCount | SweepAxis::ImagePromptsPerTemplate => {
            let store_path = store_path.ok_or_else(|| {
                CliError::Config("this sweep axis needs --store <prompt store>".into())
            })?;
            let store = load_store(store_path)?;
            if store.dataset_id != dataset_id {
                return Err(CliError::Config(format!(
                    "--store belongs to dataset {:?}, not {dataset_id:?}",
                    store.dataset_id
                )));
            }
            let counts = parse_usize_values(values)?;
            let ctx = SweepContext {
                dataset,
                store: &store,
                backend: backend.as_ref(),
                images: &images,
                manifest: &manifest,
                options,
            };
            match axis {
                SweepAxis::LlmPromptCount => ablation::sweep_llm_prompt_count(&ctx, &counts)?,
                _ => ablation::sweep_image_prompt_count(&ctx, &counts)?,
            }
        }
    };

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| io_err(&format!("cannot create {}", parent.display()), e))?;
        }
    }
    std::fs::write(out, result.to_csv())
        .map_err(|e| io_err(&format!("cannot write {}", out.display()), e))?;

    println!("sweep over {} ({} points):", result.axis.as_str(), result.points.len());
    for point in &result.points {
        println!(
            "  {} = {:>8}  metric = {:.2}  image-prompts = {}",
            result.axis.as_str(),
            point.axis_value,
            point.metric_value,
            point.total_image_prompts
        );
    }
    Ok(())
}

fn cmd_catalog_stats(config: &RunConfig) -> Result<(), CliError> {
    let catalog = load_catalog_dir(config)?;
    let single = catalog.count_templates(PromptMode::CuplSingle)?;
    let full = catalog.count_templates(PromptMode::CuplFull)?;
    let standard = catalog.count_templates(PromptMode::Standard)?;

    let mut out = String::new();
    let width = catalog
        .dataset_ids()
        .map(|id| id.len())
        .chain(["dataset".len(), "unique".len()])
        .max()
        .unwrap_or(8);
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>6}  {:>8}\n",
        "dataset", "single", "full", "standard"
    ));
    for id in catalog.dataset_ids() {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>8}\n",
            id,
            single.per_dataset.get(id).copied().unwrap_or(0),
            full.per_dataset.get(id).copied().unwrap_or(0),
            standard.per_dataset.get(id).copied().unwrap_or(0),
        ));
    }
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>6}  {:>8}\n",
        "total", single.total, full.total, standard.total
    ));
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>6}  {:>8}\n",
        "unique", single.unique, full.unique, standard.unique
    ));
    print!("{out}");
    std::io::stdout().flush().ok();
    Ok(())
}

/// Human-readable metric name for a dataset, used in summaries.
pub fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Top1Accuracy => "top-1 accuracy",
        Metric::MeanPerClass => "mean per-class accuracy",
    }
}

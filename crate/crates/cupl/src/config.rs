//! Run configuration with layered precedence.
//!
//! Values are resolved as: CLI flags > environment > TOML config file >
//! built-in defaults. The only environment-sourced value is the API
//! credential (`CUPL_API_KEY`); everything else comes from flags or the
//! file.

use std::path::PathBuf;
use std::time::Duration;

use serde::Deserialize;

use crate::llm::GenerationConfig;

/// Environment variable holding the completion-endpoint credential.
pub const API_KEY_ENV: &str = "CUPL_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {detail}")]
    Unreadable { path: String, detail: String },
    #[error("malformed config file {path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which embedding backend a run uses. Exactly one kind is selected.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingBackendConfig {
    /// Deterministic seeded-hash vectors (no model, fully offline).
    Hash { dim: usize, seed: u64 },
    /// An embedding service speaking `POST <url>/embed_text`.
    Http { url: String },
    /// Pre-computed text embeddings loaded from a JSONL file.
    File { path: PathBuf },
}

/// Fully-resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub llm_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub completions_per_prompt: u32,
    pub stop_sequence: String,
    pub max_retries: u32,
    pub request_timeout: Duration,
    pub retry_base_delay: Duration,
    pub parallelism: usize,
    pub catalog_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub prenormalize: bool,
    pub embedding: EmbeddingBackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generation = GenerationConfig::default();
        Self {
            llm_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: generation.model,
            temperature: generation.temperature,
            max_tokens: generation.max_tokens,
            completions_per_prompt: generation.completions_per_prompt,
            stop_sequence: generation.stop_sequence,
            max_retries: generation.max_retries,
            request_timeout: generation.request_timeout,
            retry_base_delay: generation.retry_base_delay,
            parallelism: 4,
            catalog_dir: PathBuf::from("catalog"),
            cache_dir: PathBuf::from(".cupl_cache"),
            prenormalize: true,
            embedding: EmbeddingBackendConfig::Hash { dim: 64, seed: 0 },
        }
    }
}

impl RunConfig {
    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            completions_per_prompt: self.completions_per_prompt,
            stop_sequence: self.stop_sequence.clone(),
            request_timeout: self.request_timeout,
            max_retries: self.max_retries,
            retry_base_delay: self.retry_base_delay,
        }
    }
}

/// A partial configuration: unset fields defer to the next layer down.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverlay {
    pub llm_url: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub completions_per_prompt: Option<u32>,
    pub stop_sequence: Option<String>,
    pub max_retries: Option<u32>,
    pub request_timeout_secs: Option<f64>,
    pub retry_base_delay_ms: Option<u64>,
    pub parallelism: Option<usize>,
    pub catalog_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub prenormalize: Option<bool>,
    pub embed_backend: Option<String>,
    pub embed_dim: Option<usize>,
    pub embed_seed: Option<u64>,
    pub embed_url: Option<String>,
    pub embed_file: Option<PathBuf>,
}

impl ConfigOverlay {
    fn apply(&self, config: &mut RunConfig) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(value) = &self.$field {
                    config.$field = value.clone();
                }
            };
        }
        take!(llm_url);
        take!(model);
        take!(temperature);
        take!(max_tokens);
        take!(completions_per_prompt);
        take!(stop_sequence);
        take!(max_retries);
        take!(parallelism);
        take!(catalog_dir);
        take!(cache_dir);
        take!(prenormalize);
        if let Some(key) = &self.api_key {
            config.api_key = Some(key.clone());
        }
        if let Some(secs) = self.request_timeout_secs {
            config.request_timeout = Duration::from_secs_f64(secs);
        }
        if let Some(ms) = self.retry_base_delay_ms {
            config.retry_base_delay = Duration::from_millis(ms);
        }
    }

    fn embedding_touched(&self) -> bool {
        self.embed_backend.is_some()
            || self.embed_dim.is_some()
            || self.embed_seed.is_some()
            || self.embed_url.is_some()
            || self.embed_file.is_some()
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileEmbeddingSection {
    backend: Option<String>,
    dim: Option<usize>,
    seed: Option<u64>,
    url: Option<String>,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    llm_url: Option<String>,
    api_key: Option<String>,
    model: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    completions_per_prompt: Option<u32>,
    stop_sequence: Option<String>,
    max_retries: Option<u32>,
    request_timeout_secs: Option<f64>,
    retry_base_delay_ms: Option<u64>,
    parallelism: Option<usize>,
    catalog_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    prenormalize: Option<bool>,
    embedding: Option<FileEmbeddingSection>,
}

/// Parses a TOML config file into an overlay.
pub fn load_config_file(path: &std::path::Path) -> Result<ConfigOverlay, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let file: FileConfig = toml::from_str(&raw).map_err(|e| ConfigError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let embedding = file.embedding.unwrap_or_default();
    Ok(ConfigOverlay {
        llm_url: file.llm_url,
        api_key: file.api_key,
        model: file.model,
        temperature: file.temperature,
        max_tokens: file.max_tokens,
        completions_per_prompt: file.completions_per_prompt,
        stop_sequence: file.stop_sequence,
        max_retries: file.max_retries,
        request_timeout_secs: file.request_timeout_secs,
        retry_base_delay_ms: file.retry_base_delay_ms,
        parallelism: file.parallelism,
        catalog_dir: file.catalog_dir,
        cache_dir: file.cache_dir,
        prenormalize: file.prenormalize,
        embed_backend: embedding.backend,
        embed_dim: embedding.dim,
        embed_seed: embedding.seed,
        embed_url: embedding.url,
        embed_file: embedding.path,
    })
}

/// Builds the final configuration from the three layers.
///
/// `file` is the lowest-precedence overlay (from `--config`), then the
/// `CUPL_API_KEY` environment variable, then `flags`. The embedding backend
/// is re-derived from whichever layer touched embedding fields last.
pub fn resolve(
    file: Option<ConfigOverlay>,
    flags: &ConfigOverlay,
) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    let mut embed_backend: Option<String> = None;
    let mut embed_dim: Option<usize> = None;
    let mut embed_seed: Option<u64> = None;
    let mut embed_url: Option<String> = None;
    let mut embed_file: Option<PathBuf> = None;

    let mut absorb_embedding = |overlay: &ConfigOverlay| {
        if overlay.embed_backend.is_some() {
            embed_backend = overlay.embed_backend.clone();
        }
        if overlay.embed_dim.is_some() {
            embed_dim = overlay.embed_dim;
        }
        if overlay.embed_seed.is_some() {
            embed_seed = overlay.embed_seed;
        }
        if overlay.embed_url.is_some() {
            embed_url = overlay.embed_url.clone();
        }
        if overlay.embed_file.is_some() {
            embed_file = overlay.embed_file.clone();
        }
    };

    if let Some(file) = &file {
        file.apply(&mut config);
        absorb_embedding(file);
    }
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        if !key.is_empty() {
            config.api_key = Some(key);
        }
    }
    flags.apply(&mut config);
    absorb_embedding(flags);

    let any_embedding_field = file.as_ref().map(|f| f.embedding_touched()).unwrap_or(false)
        || flags.embedding_touched();
    if any_embedding_field {
        let kind = embed_backend.as_deref().unwrap_or("hash");
        config.embedding = match kind {
            "hash" => EmbeddingBackendConfig::Hash {
                dim: embed_dim.unwrap_or(64),
                seed: embed_seed.unwrap_or(0),
            },
            "http" => EmbeddingBackendConfig::Http {
                url: embed_url.ok_or_else(|| {
                    ConfigError::Invalid("embedding backend \"http\" needs a url".into())
                })?,
            },
            "file" => EmbeddingBackendConfig::File {
                path: embed_file.ok_or_else(|| {
                    ConfigError::Invalid("embedding backend \"file\" needs a path".into())
                })?,
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown embedding backend {other:?} (expected hash, http, or file)"
                )))
            }
        };
    }

    if config.parallelism == 0 {
        return Err(ConfigError::Invalid("parallelism must be >= 1".into()));
    }
    if let EmbeddingBackendConfig::Hash { dim, .. } = config.embedding {
        if dim == 0 {
            return Err(ConfigError::Invalid("embedding dim must be >= 1".into()));
        }
    }
    Ok(config)
}

//! Completions-API client with retry and an on-disk response cache.
//!
//! The client speaks the classic completions protocol: `POST
//! <base_url>/completions` with `{"model", "prompt", "max_tokens",
//! "temperature", "n", "stop"}`, answered by `{"choices": [{"text": ...},
//! ...]}`. Stopping at `"."` means completions come back without their
//! terminal period; the cleaning step downstream restores it.
//!
//! Responses are cached one file per (prompt, sampling-config) key so that
//! re-runs and ablations never re-bill the API. Cache writes go through a
//! temp file and an atomic rename; corrupt entries are ignored, logged, and
//! refetched.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("authentication rejected by completion endpoint (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited by completion endpoint after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("transport failure talking to completion endpoint: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sampling parameters for description generation.
///
/// The defaults are the high-diversity settings used for generating class
/// descriptions: temperature 0.99, 50-token completions stopped at the
/// first period, 10 completions per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub completions_per_prompt: u32,
    pub stop_sequence: String,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    /// Base delay for exponential backoff on HTTP 429.
    #[serde(with = "duration_millis", default = "default_retry_base")]
    pub retry_base_delay: Duration,
}

fn default_retry_base() -> Duration {
    Duration::from_millis(500)
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            model: "text-davinci-002".into(),
            temperature: 0.99,
            max_tokens: 50,
            completions_per_prompt: 10,
            stop_sequence: ".".into(),
            request_timeout: Duration::from_secs(30),
            max_retries: 3,
            retry_base_delay: default_retry_base(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.completions_per_prompt == 0 {
            return Err(LlmError::InvalidConfig("completions_per_prompt must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(LlmError::InvalidConfig("model must be non-empty".into()));
        }
        Ok(())
    }
}

mod duration_secs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs))
    }
}

mod duration_millis {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let millis = u64::deserialize(d)?;
        Ok(Duration::from_millis(millis))
    }
}

/// The raw result of one completion call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionBatch {
    pub prompt: String,
    /// One raw completion per requested sample, in server order. Exactly
    /// `completions_per_prompt` entries; a short server response is an error,
    /// never padded.
    pub raw_texts: Vec<String>,
    pub model: String,
    /// Whether this batch was served from the on-disk cache.
    pub cached: bool,
}

/// Exponential backoff schedule: `base * 2^attempt` for each retry.
/// Non-decreasing by construction.
pub fn backoff_delays(max_retries: u32, base: Duration) -> Vec<Duration> {
    (0..max_retries).map(|attempt| base * 2u32.saturating_pow(attempt)).collect()
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    n: u32,
    stop: &'a str,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

/// Fields that determine a cache key. Everything that changes the server's
/// answer must appear here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheKeyConfig {
    model: String,
    temperature: f64,
    max_tokens: u32,
    completions_per_prompt: u32,
    stop_sequence: String,
}

impl CacheKeyConfig {
    fn from_config(config: &GenerationConfig) -> Self {
        Self {
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            completions_per_prompt: config.completions_per_prompt,
            stop_sequence: config.stop_sequence.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    prompt: String,
    config: CacheKeyConfig,
    texts: Vec<String>,
}

/// Content hash of (prompt, sampling config); names the cache file.
pub fn cache_key(prompt: &str, config: &GenerationConfig) -> String {
    let key_config = CacheKeyConfig::from_config(config);
    let material = serde_json::json!({ "prompt": prompt, "config": key_config });
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(&material).expect("key material serializes"));
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("{key}.json"))
}

/// Blocking completions client.
pub struct LlmClient {
    base_url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl LlmClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// One completions call: returns exactly `completions_per_prompt` raw
    /// texts or an error. HTTP 429 is retried with exponential backoff up to
    /// `max_retries` times; auth and transport failures surface immediately.
    pub fn complete(
        &self,
        prompt: &str,
        config: &GenerationConfig,
    ) -> Result<CompletionBatch, LlmError> {
        config.validate()?;
        let url = format!("{}/completions", self.base_url);
        let request = CompletionRequest {
            model: &config.model,
            prompt,
            max_tokens: config.max_tokens,
            temperature: config.temperature,
            n: config.completions_per_prompt,
            stop: &config.stop_sequence,
        };

        let delays = backoff_delays(config.max_retries, config.retry_base_delay);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut builder = self
                .http
                .post(&url)
                .timeout(config.request_timeout)
                .json(&request);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let response = builder.send().map_err(|e| LlmError::Transport(e.to_string()))?;
            let status = response.status();

            if status.as_u16() == 429 {
                // Retry budget: one initial attempt plus max_retries retries.
                if let Some(delay) = delays.get(attempts as usize - 1) {
                    log::warn!("completion endpoint rate limited; retrying in {delay:?}");
                    std::thread::sleep(*delay);
                    continue;
                }
                return Err(LlmError::RateLimited { attempts });
            }
            if status.as_u16() == 401 || status.as_u16() == 403 {
                return Err(LlmError::Auth { status: status.as_u16() });
            }
            if !status.is_success() {
                return Err(LlmError::Transport(format!("{url} returned HTTP {status}")));
            }

            let body: CompletionResponse = response
                .json()
                .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
            let texts: Vec<String> = body.choices.into_iter().map(|c| c.text).collect();
            if texts.len() != config.completions_per_prompt as usize {
                return Err(LlmError::MalformedResponse(format!(
                    "requested {} completions, server returned {}",
                    config.completions_per_prompt,
                    texts.len()
                )));
            }
            return Ok(CompletionBatch {
                prompt: prompt.to_string(),
                raw_texts: texts,
                model: config.model.clone(),
                cached: false,
            });
        }
    }

    /// Cache-through wrapper around [`LlmClient::complete`].
    ///
    /// A valid cache entry is returned without any network traffic; a
    /// corrupt entry (unparsable, or hash/prompt disagreement) is logged at
    /// warn level and refetched. Fresh responses are written via temp file +
    /// rename so concurrent writers never expose partial entries.
    pub fn cached_complete(
        &self,
        prompt: &str,
        config: &GenerationConfig,
        cache_dir: &Path,
    ) -> Result<CompletionBatch, LlmError> {
        config.validate()?;
        let key = cache_key(prompt, config);
        let path = cache_path(cache_dir, &key);

        if path.exists() {
            match read_cache_entry(&path, &key, prompt, config) {
                Ok(texts) => {
                    return Ok(CompletionBatch {
                        prompt: prompt.to_string(),
                        raw_texts: texts,
                        model: config.model.clone(),
                        cached: true,
                    });
                }
                Err(detail) => {
                    log::warn!(
                        "ignoring corrupt cache entry {}: {detail}; refetching",
                        path.display()
                    );
                }
            }
        }

        let batch = self.complete(prompt, config)?;
        write_cache_entry(cache_dir, &path, &key, prompt, config, &batch.raw_texts)?;
        Ok(batch)
    }
}

fn read_cache_entry(
    path: &Path,
    expected_key: &str,
    prompt: &str,
    config: &GenerationConfig,
) -> Result<Vec<String>, String> {
    let raw = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let entry: CacheEntry = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    if entry.key != expected_key {
        return Err(format!("key mismatch: entry {} vs expected {expected_key}", entry.key));
    }
    if entry.prompt != prompt {
        return Err("prompt mismatch".into());
    }
    if entry.config != CacheKeyConfig::from_config(config) {
        return Err("config mismatch".into());
    }
    if entry.texts.len() != config.completions_per_prompt as usize {
        return Err(format!(
            "entry holds {} texts, config wants {}",
            entry.texts.len(),
            config.completions_per_prompt
        ));
    }
    Ok(entry.texts)
}

fn write_cache_entry(
    cache_dir: &Path,
    path: &Path,
    key: &str,
    prompt: &str,
    config: &GenerationConfig,
    texts: &[String],
) -> Result<(), LlmError> {
    fs::create_dir_all(cache_dir).map_err(|source| LlmError::Io {
        path: cache_dir.display().to_string(),
        source,
    })?;
    let entry = CacheEntry {
        key: key.to_string(),
        prompt: prompt.to_string(),
        config: CacheKeyConfig::from_config(config),
        texts: texts.to_vec(),
    };
    let json = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
    let mut tmp = tempfile::NamedTempFile::new_in(cache_dir).map_err(|source| LlmError::Io {
        path: cache_dir.display().to_string(),
        source,
    })?;
    use std::io::Write;
    tmp.write_all(json.as_bytes()).map_err(|source| LlmError::Io {
        path: tmp.path().display().to_string(),
        source,
    })?;
    tmp.persist(path).map_err(|e| LlmError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

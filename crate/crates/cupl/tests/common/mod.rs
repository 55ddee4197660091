//! In-process HTTP fixture server for the completion and embedding
//! endpoints, plus shared helpers for building fixture catalogs.
//!
//! The server speaks just enough HTTP/1.1 for a blocking JSON client:
//! one request per connection, `Content-Length` bodies, no keep-alive.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// Behavior knobs for one [`FixtureServer`] instance.
#[derive(Clone)]
pub struct ServerOptions {
    /// Exact completions served per prompt. A corpus hit returns the first
    /// `n` texts (the corpus entry must hold at least `n`).
    pub corpus: HashMap<String, Vec<String>>,
    /// When true, prompts missing from the corpus get deterministic
    /// synthesized completions instead of an error.
    pub synth: bool,
    /// Include the request temperature in synthesized text, so runs at
    /// different temperatures produce different completions.
    pub synth_temperature_salt: bool,
    /// When set, completion requests must carry `Authorization: Bearer <v>`.
    pub require_auth: Option<String>,
    /// The first N completion requests are answered with HTTP 429.
    pub rate_limit_first: usize,
    /// Artificial delay before answering a completion request.
    pub delay: Duration,
    /// Vector width reported by the embedding endpoint.
    pub embed_dim: usize,
    /// Respond with one fewer choice than requested (malformed).
    pub short_choices: bool,
    /// Declare `dim` but return vectors of a different length (malformed).
    pub lie_about_dim: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            corpus: HashMap::new(),
            synth: true,
            synth_temperature_salt: false,
            require_auth: None,
            rate_limit_first: 0,
            delay: Duration::ZERO,
            embed_dim: 16,
            short_choices: false,
            lie_about_dim: false,
        }
    }
}

pub struct FixtureServer {
    addr: String,
    completion_hits: Arc<AtomicUsize>,
    embed_hits: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start(options: ServerOptions) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        listener.set_nonblocking(true).expect("nonblocking listener");
        let addr = format!("http://{}", listener.local_addr().unwrap());

        let completion_hits = Arc::new(AtomicUsize::new(0));
        let embed_hits = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));

        let state = ServerState {
            options,
            completion_hits: completion_hits.clone(),
            embed_hits: embed_hits.clone(),
            in_flight: in_flight.clone(),
            max_in_flight: max_in_flight.clone(),
        };
        let stop = shutdown.clone();
        let handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = state.clone();
                        workers.push(std::thread::spawn(move || handle_connection(stream, &state)));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
            for worker in workers {
                let _ = worker.join();
            }
        });

        Self {
            addr,
            completion_hits,
            embed_hits,
            in_flight,
            max_in_flight,
            shutdown,
            handle: Some(handle),
        }
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.addr
    }

    /// Number of completion requests that reached the handler (including
    /// rate-limited and auth-rejected ones).
    pub fn completion_hits(&self) -> usize {
        self.completion_hits.load(Ordering::SeqCst)
    }

    pub fn embed_hits(&self) -> usize {
        self.embed_hits.load(Ordering::SeqCst)
    }

    /// High-water mark of concurrently served completion requests.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[derive(Clone)]
struct ServerState {
    options: ServerOptions,
    completion_hits: Arc<AtomicUsize>,
    embed_hits: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
}

struct Request {
    method: String,
    path: String,
    bearer: Option<String>,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .ok()?;
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();

    let mut content_length = 0usize;
    let mut bearer = None;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        let (name, value) = header.split_once(':')?;
        let value = value.trim();
        if name.eq_ignore_ascii_case("content-length") {
            content_length = value.parse().ok()?;
        } else if name.eq_ignore_ascii_case("authorization") {
            bearer = value.strip_prefix("Bearer ").map(str::to_string);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(Request { method, path, bearer, body })
}

fn respond(stream: &mut TcpStream, status: u16, reason: &str, body: &str) {
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Short stable fingerprint of a string (FNV-1a), used to synthesize
/// prompt-specific completions.
fn fingerprint(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn handle_connection(mut stream: TcpStream, state: &ServerState) {
    let Some(request) = read_request(&mut stream) else {
        return;
    };
    match (request.method.as_str(), request.path.as_str()) {
        ("POST", "/completions") => handle_completions(&mut stream, state, &request),
        ("POST", "/embed_text") => handle_embed(&mut stream, state, &request),
        _ => respond(&mut stream, 404, "Not Found", "{\"error\":\"no such route\"}"),
    }
}

fn handle_completions(stream: &mut TcpStream, state: &ServerState, request: &Request) {
    let options = &state.options;
    let hit = state.completion_hits.fetch_add(1, Ordering::SeqCst) + 1;
    let current = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(current, Ordering::SeqCst);

    if !options.delay.is_zero() {
        std::thread::sleep(options.delay);
    }

    let result = (|| {
        if let Some(expected) = &options.require_auth {
            if request.bearer.as_deref() != Some(expected.as_str()) {
                return (401, "Unauthorized", "{\"error\":\"bad token\"}".to_string());
            }
        }
        if hit <= options.rate_limit_first {
            return (429, "Too Many Requests", "{\"error\":\"slow down\"}".to_string());
        }

        let body: serde_json::Value = match serde_json::from_slice(&request.body) {
            Ok(v) => v,
            Err(_) => return (400, "Bad Request", "{\"error\":\"bad json\"}".to_string()),
        };
        let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
        let n = body["n"].as_u64().unwrap_or(1) as usize;
        let temperature = body["temperature"].as_f64().unwrap_or(0.0);

        let mut texts: Vec<String> = if let Some(entry) = options.corpus.get(&prompt) {
            assert!(
                entry.len() >= n,
                "corpus entry for {prompt:?} holds {} texts, request wants {n}",
                entry.len()
            );
            entry[..n].to_vec()
        } else if options.synth {
            let salt = if options.synth_temperature_salt {
                format!("-t{temperature}")
            } else {
                String::new()
            };
            let tag = fingerprint(&format!("{prompt}{salt}"));
            (0..n)
                .map(|i| format!("A {prompt} subject, synthetic variant {i} of {tag:016x}"))
                .collect()
        } else {
            return (500, "Internal Server Error", "{\"error\":\"unknown prompt\"}".to_string());
        };
        if options.short_choices && !texts.is_empty() {
            texts.pop();
        }
        let choices: Vec<serde_json::Value> =
            texts.into_iter().map(|t| serde_json::json!({ "text": t })).collect();
        (200, "OK", serde_json::json!({ "choices": choices }).to_string())
    })();

    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    respond(stream, result.0, result.1, &result.2);
}

fn handle_embed(stream: &mut TcpStream, state: &ServerState, request: &Request) {
    let options = &state.options;
    state.embed_hits.fetch_add(1, Ordering::SeqCst);

    let body: serde_json::Value = match serde_json::from_slice(&request.body) {
        Ok(v) => v,
        Err(_) => return respond(stream, 400, "Bad Request", "{\"error\":\"bad json\"}"),
    };
    let texts: Vec<String> = body["texts"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str()).map(str::to_string).collect())
        .unwrap_or_default();

    let dim = options.embed_dim;
    let actual_dim = if options.lie_about_dim { dim + 1 } else { dim };
    let vectors: Vec<Vec<f32>> = texts
        .iter()
        .map(|text| {
            let tag = fingerprint(text);
            (0..actual_dim)
                .map(|j| {
                    let mixed = tag.wrapping_mul(j as u64 + 1).rotate_left((j % 61) as u32);
                    // Map to [-0.5, 0.5) with a DC offset so no vector is zero.
                    (mixed % 1000) as f32 / 1000.0 - 0.5 + 0.001
                })
                .collect()
        })
        .collect();
    let response = serde_json::json!({ "dim": dim, "vectors": vectors }).to_string();
    respond(stream, 200, "OK", &response);
}

/// Path to `tests/fixtures` in this crate.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Path to the repository's shipped template catalog.
pub fn shipped_catalog_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../catalog")
}

/// Loads the tench completion corpus: rendered prompt -> 10 raw texts.
pub fn tench_corpus() -> HashMap<String, Vec<String>> {
    let raw = std::fs::read_to_string(fixtures_dir().join("tench_corpus.json"))
        .expect("tench corpus fixture");
    serde_json::from_str(&raw).expect("tench corpus parses")
}

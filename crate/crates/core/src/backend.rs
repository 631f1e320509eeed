//! Uniform interface to text-generation services.
//!
//! Ships a deterministic mock backend for tests and offline runs, an HTTP
//! backend speaking a small JSON wire contract, an append-only response cache
//! keyed by request hash, and a runner with bounded parallelism.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{EXPLANATION_BLOCK_HEADER, EXPLANATION_MARKER, RATING_MARKER, REASON_MARKER};
use crate::util::{fnv1a64, splitmix64, unit_f64};

/// One generation request. `num_samples` asks the decoder for that many
/// sampled candidates; `seed` is honored by the mock backend only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub num_samples: usize,
    pub max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            num_samples: 1,
            max_tokens: 512,
            seed: None,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, num_samples: usize) -> Self {
        self.temperature = temperature;
        self.num_samples = num_samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.num_samples == 0 {
            return Err(BackendError::InvalidRequest("num_samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// One decoded candidate. `class_logits` holds the raw scores for the five
/// rating tokens when the backend exposes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationCandidate {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_logits: Option<[f64; 5]>,
}

/// Connection settings for a live backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout: Duration,
    pub max_retries: usize,
    pub parallelism: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: String::new(),
            auth_env: "RECSAVER_API_TOKEN".to_string(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: usize, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid logits: entries must be finite")]
    InvalidLogits,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache error: {0}")]
    Cache(String),
}

/// A text-generation service.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationCandidate>, BackendError>;
}

/// Softmax over the five rating-class logits.
pub fn normalize_class_scores(logits: &[f64; 5]) -> Result<[f64; 5], BackendError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(BackendError::InvalidLogits);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exp = [0.0; 5];
    let mut sum = 0.0;
    for (e, &x) in exp.iter_mut().zip(logits.iter()) {
        *e = (x - max).exp();
        sum += *e;
    }
    let mut out = [0.0; 5];
    for (o, e) in out.iter_mut().zip(exp.iter()) {
        *o = e / sum;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

const REASON_SENTENCES: [&str; 8] = [
    "The user's history shows a consistent preference for this brand.",
    "Several past purchases fall in the same category as the new item.",
    "The reviews mention quality and durability as recurring themes.",
    "The price of the new item is close to what the user usually pays.",
    "Past ratings suggest the user is selective but generally satisfied.",
    "The item description overlaps with interests stated in earlier reviews.",
    "There is little in the history that connects to this kind of item.",
    "The user seems to value practicality over novelty.",
];

const EXPLANATION_SENTENCES: [&str; 8] = [
    "The item matches the style of products the user bought before.",
    "Earlier reviews praise similar ingredients and materials.",
    "The user repeatedly returns to this brand when available.",
    "The category is one the user engages with often.",
    "The description highlights features the user has valued in the past.",
    "The price point sits within the user's demonstrated comfort range.",
    "The user's history suggests high expectations for this category.",
    "Nothing in the history contradicts an interest in this item.",
];

const LEAKY_SENTENCES: [&str; 3] = [
    "The user gave it a rating of {r} for exactly these reasons.",
    "In short, this one deserves {r} stars.",
    "It scores {r} with this user.",
];

/// A deterministic offline backend.
///
/// Responses can be scripted per prompt; anything unscripted falls back to a
/// synthesizer that emits well-formed output whose content is a pure function
/// of (prompt, temperature, num_samples, seed). At temperature 0 all samples
/// collapse to a single prompt-determined candidate.
#[derive(Debug, Default, Clone)]
pub struct MockBackend {
    scripted: BTreeMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Script fixed responses for a prompt; sample `i` receives entry `i % len`.
    pub fn script(&mut self, prompt: impl Into<String>, responses: Vec<String>) {
        self.scripted.insert(prompt.into(), responses);
    }

    pub fn with_responses(scripted: BTreeMap<String, Vec<String>>) -> Self {
        MockBackend { scripted }
    }

    fn synthesize(&self, request: &GenerationRequest, index: usize) -> GenerationCandidate {
        let mut h = fnv1a64(request.prompt.as_bytes());
        if request.temperature > 0.0 {
            let mut mix = request.seed.unwrap_or(0)
                ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15)
                ^ request.temperature.to_bits();
            h ^= splitmix64(&mut mix);
        }
        let mut state = h;
        let rating = 1 + (splitmix64(&mut state) % 5) as u8;
        let pick = |state: &mut u64, bank: &[&str]| bank[(splitmix64(state) % bank.len() as u64) as usize].to_string();
        let malformed = splitmix64(&mut state) % 19 == 0;

        let text = if request.prompt.contains(EXPLANATION_BLOCK_HEADER) {
            // Verification call: respond with a bare rating.
            if malformed {
                "I cannot settle on a number here.".to_string()
            } else {
                format!("{RATING_MARKER}\n{rating}")
            }
        } else if request.prompt.contains(EXPLANATION_MARKER) {
            // Post hoc explanation call.
            let mut sentences = vec![pick(&mut state, &EXPLANATION_SENTENCES)];
            if splitmix64(&mut state) % 4 == 0 {
                let leaky = pick(&mut state, &LEAKY_SENTENCES).replace("{r}", &rating.to_string());
                sentences.push(leaky);
            }
            sentences.push(pick(&mut state, &EXPLANATION_SENTENCES));
            format!("{EXPLANATION_MARKER}\n{}", sentences.join(" "))
        } else if request.prompt.contains(REASON_MARKER) {
            let reasoning = format!(
                "{} {}",
                pick(&mut state, &REASON_SENTENCES),
                pick(&mut state, &REASON_SENTENCES)
            );
            if malformed {
                format!("{REASON_MARKER}\n{reasoning}")
            } else {
                format!("{REASON_MARKER}\n{reasoning}\n{RATING_MARKER}\n{rating}")
            }
        } else if malformed {
            "no numeric answer".to_string()
        } else {
            format!("{RATING_MARKER}\n{rating}")
        };

        let mut logits = [0.0; 5];
        for (k, logit) in logits.iter_mut().enumerate() {
            let jitter = unit_f64(splitmix64(&mut state)) * 2.0 - 1.0;
            *logit = if k + 1 == rating as usize { 2.0 + jitter * 0.5 } else { jitter };
        }
        GenerationCandidate {
            text,
            class_logits: Some(logits),
        }
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationCandidate>, BackendError> {
        request.validate()?;
        let mut out = Vec::with_capacity(request.num_samples);
        for i in 0..request.num_samples {
            if let Some(list) = self.scripted.get(&request.prompt) {
                if !list.is_empty() {
                    out.push(GenerationCandidate {
                        text: list[i % list.len()].clone(),
                        class_logits: None,
                    });
                    continue;
                }
            }
            out.push(self.synthesize(request, i));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    num_samples: usize,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    text: String,
    #[serde(default)]
    class_logits: Option<Vec<f64>>,
}

/// Live backend speaking the JSON wire contract:
/// request `{prompt, temperature, num_samples, max_tokens}` against the
/// configured endpoint, bearer token read from the configured environment
/// variable, response `{candidates: [{text, class_logits?}]}`.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(format!("client init: {e}")))?;
        let token = std::env::var(&config.auth_env).ok();
        Ok(HttpBackend { config, client, token })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn attempt(&self, request: &GenerationRequest) -> Result<Vec<GenerationCandidate>, AttemptError> {
        let body = WireRequest {
            prompt: &request.prompt,
            temperature: request.temperature,
            num_samples: request.num_samples,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| AttemptError::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(AttemptError::Retry(format!("server status {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(format!("status {status}")));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| AttemptError::Fatal(format!("response schema: {e}")))?;
        if wire.candidates.len() != request.num_samples {
            return Err(AttemptError::Fatal(format!(
                "expected {} candidates, got {}",
                request.num_samples,
                wire.candidates.len()
            )));
        }
        let mut out = Vec::with_capacity(wire.candidates.len());
        for c in wire.candidates {
            let class_logits = match c.class_logits {
                None => None,
                Some(v) => Some(<[f64; 5]>::try_from(v).map_err(|v: Vec<f64>| {
                    AttemptError::Fatal(format!("class_logits must have 5 entries, got {}", v.len()))
                })?),
            };
            out.push(GenerationCandidate { text: c.text, class_logits });
        }
        Ok(out)
    }
}

enum AttemptError {
    Retry(String),
    Fatal(String),
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<GenerationCandidate>, BackendError> {
        request.validate()?;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(request) {
                Ok(candidates) => return Ok(candidates),
                Err(AttemptError::Fatal(msg)) => return Err(BackendError::Protocol(msg)),
                Err(AttemptError::Retry(msg)) => {
                    last = msg;
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(25 * (attempt as u64 + 1)));
                    }
                }
            }
        }
        Err(BackendError::Unavailable { attempts, message: last })
    }
}

// ---------------------------------------------------------------------------
// Cache and runner
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    hash: String,
    request: GenerationRequest,
    candidates: Vec<GenerationCandidate>,
}

/// Append-only response cache keyed by request hash. Doubles as the request
/// transcript: replaying a pipeline against a recorded cache reproduces it
/// without touching the backend.
pub struct GenerationCache {
    path: PathBuf,
    entries: HashMap<String, Vec<GenerationCandidate>>,
}

impl GenerationCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(&path).map_err(|e| BackendError::Cache(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| BackendError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| BackendError::Cache(e.to_string()))?;
                entries.insert(record.hash, record.candidates);
            }
        }
        Ok(GenerationCache { path, entries })
    }

    pub fn request_hash(request: &GenerationRequest) -> String {
        let canonical = serde_json::to_string(request).expect("request serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn get(&self, request: &GenerationRequest) -> Option<&Vec<GenerationCandidate>> {
        self.entries.get(&Self::request_hash(request))
    }

    pub fn put(
        &mut self,
        request: &GenerationRequest,
        candidates: &[GenerationCandidate],
    ) -> Result<(), BackendError> {
        let hash = Self::request_hash(request);
        if self.entries.contains_key(&hash) {
            return Ok(());
        }
        let record = CacheRecord {
            hash: hash.clone(),
            request: request.clone(),
            candidates: candidates.to_vec(),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        let line = serde_json::to_string(&record).map_err(|e| BackendError::Cache(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| BackendError::Cache(e.to_string()))?;
        self.entries.insert(hash, candidates.to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Executes request batches with bounded parallelism and an optional cache.
///
/// Results come back in input order. Cache hits skip the backend; misses are
/// appended to the cache in input order after the batch completes, so cache
/// files are deterministic for a deterministic backend.
pub struct BackendRunner<'a> {
    backend: &'a dyn Backend,
    cache: Option<GenerationCache>,
    parallelism: usize,
}

impl<'a> BackendRunner<'a> {
    pub fn new(backend: &'a dyn Backend, parallelism: usize) -> Self {
        BackendRunner {
            backend,
            cache: None,
            parallelism: parallelism.max(1),
        }
    }

    pub fn with_cache(mut self, cache: GenerationCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn cache(&self) -> Option<&GenerationCache> {
        self.cache.as_ref()
    }

    /// Run a batch. The outer error is infrastructure failure (cache IO);
    /// per-request outcomes are the inner results.
    pub fn run(
        &mut self,
        requests: &[GenerationRequest],
    ) -> Result<Vec<Result<Vec<GenerationCandidate>, BackendError>>, BackendError> {
        let mut results: Vec<Option<Result<Vec<GenerationCandidate>, BackendError>>> =
            (0..requests.len()).map(|_| None).collect();

        let mut misses = Vec::new();
        for (idx, request) in requests.iter().enumerate() {
            match self.cache.as_ref().and_then(|c| c.get(request)) {
                Some(hit) => results[idx] = Some(Ok(hit.clone())),
                None => misses.push(idx),
            }
        }

        if !misses.is_empty() {
            let next = AtomicUsize::new(0);
            let workers = self.parallelism.min(misses.len());
            let backend = self.backend;
            let miss_results: Vec<(usize, Result<Vec<GenerationCandidate>, BackendError>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..workers)
                        .map(|_| {
                            let next = &next;
                            let misses = &misses;
                            scope.spawn(move || {
                                let mut local = Vec::new();
                                loop {
                                    let k = next.fetch_add(1, Ordering::SeqCst);
                                    if k >= misses.len() {
                                        break;
                                    }
                                    let idx = misses[k];
                                    local.push((idx, backend.generate(&requests[idx])));
                                }
                                local
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .flat_map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
            for (idx, res) in miss_results {
                results[idx] = Some(res);
            }
            if let Some(cache) = self.cache.as_mut() {
                for &idx in &misses {
                    if let Some(Ok(candidates)) = &results[idx] {
                        cache.put(&requests[idx], candidates)?;
                    }
                }
            }
        }

        Ok(results.into_iter().map(|r| r.expect("all slots filled")).collect())
    }
}

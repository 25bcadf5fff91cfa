//! Review embeddings by mean pooling of per-token vectors.
//!
//! Token vectors come from an [`EmbeddingProvider`]: either the local
//! hashing provider (deterministic, dependency free) or a remote embedding
//! service speaking the `POST /embed` JSON protocol.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::thread;
use std::time::Duration;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textprep::TokenSequence;

pub const DEFAULT_WIDTH: usize = 768;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("empty token")]
    EmptyToken,
    #[error("embedding service {url} unreachable after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("embedding service protocol error: {0}")]
    Protocol(String),
    #[error("embedded {completed} of {total} reviews before failure: {source}")]
    Partial {
        completed: usize,
        total: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderMode {
    LocalDeterministic,
    RemoteService,
}

/// Identifies the provider a model was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderFingerprint {
    pub name: String,
    pub width: usize,
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn width(&self) -> usize;
    fn mode(&self) -> ProviderMode;

    /// One vector per input, in order. Inputs are tokens for the local
    /// provider; a remote service also accepts whole texts.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn max_batch(&self) -> usize {
        256
    }

    /// Number of batches [`embed_corpus`] may have in flight at once.
    fn parallelism(&self) -> usize {
        1
    }

    fn fingerprint(&self) -> ProviderFingerprint {
        ProviderFingerprint {
            name: self.name().to_owned(),
            width: self.width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub source_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn width(&self) -> usize {
        self.values.len()
    }
}

/// Hash-seeded unit vectors: each token seeds a ChaCha stream from
/// SHA-256(seed || token), draws `width` standard normals and normalizes.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    width: usize,
    seed: u64,
    name: String,
}

impl HashingProvider {
    pub fn new(width: usize, seed: u64) -> Self {
        assert!(width > 0, "embedding width must be positive");
        HashingProvider {
            width,
            seed,
            name: format!("hash-local-s{seed}"),
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut v: Vec<f64> = (0..self.width).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::new(DEFAULT_WIDTH, 0)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        "1"
    }

    fn width(&self) -> usize {
        self.width
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::LocalDeterministic
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    Err(EmbedError::EmptyToken)
                } else {
                    Ok(self.token_vector(t))
                }
            })
            .collect()
    }
}

/// Fixed token table; unknown tokens map to the zero vector.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    name: String,
    width: usize,
    table: HashMap<String, Vec<f64>>,
}

impl StaticProvider {
    pub fn new(name: impl Into<String>, width: usize, table: HashMap<String, Vec<f64>>) -> Self {
        assert!(table.values().all(|v| v.len() == width));
        StaticProvider {
            name: name.into(),
            width,
            table,
        }
    }
}

impl EmbeddingProvider for StaticProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        "static"
    }

    fn width(&self) -> usize {
        self.width
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::LocalDeterministic
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(EmbedError::EmptyToken);
                }
                Ok(self.table.get(t).cloned().unwrap_or_else(|| vec![0.0; self.width]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub width: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_batch() -> usize {
    64
}
fn default_retries() -> u32 {
    2
}
fn default_parallelism() -> usize {
    2
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, width: usize) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            width,
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            retries: default_retries(),
            parallelism: default_parallelism(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    width: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service: `POST {base_url}/embed` with
/// `{"texts": [...]}` answered by `{"width": D, "vectors": [[...], ...]}`.
pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    name: String,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbedError::Transport {
                url: config.base_url.clone(),
                attempts: 0,
                message: e.to_string(),
            })?;
        let name = format!("remote:{}", config.base_url.trim_end_matches('/'));
        Ok(RemoteProvider { config, client, name })
    }

    fn url(&self) -> String {
        format!("{}/embed", self.config.base_url.trim_end_matches('/'))
    }

    fn post_once(&self, texts: &[String]) -> Result<EmbedResponse, (bool, String)> {
        let resp = self
            .client
            .post(self.url())
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err((true, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err((false, format!("HTTP {status}")));
        }
        resp.json::<EmbedResponse>().map_err(|e| (false, format!("bad response body: {e}")))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn version(&self) -> &str {
        "remote"
    }

    fn width(&self) -> usize {
        self.config.width
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::RemoteService
    }

    fn max_batch(&self) -> usize {
        self.config.max_batch.max(1)
    }

    fn parallelism(&self) -> usize {
        self.config.parallelism.max(1)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.iter().any(String::is_empty) {
            return Err(EmbedError::EmptyToken);
        }
        let mut attempts = 0;
        let resp = loop {
            attempts += 1;
            match self.post_once(texts) {
                Ok(r) => break r,
                Err((retryable, message)) => {
                    if !retryable {
                        return Err(EmbedError::Protocol(message));
                    }
                    if attempts > self.config.retries {
                        return Err(EmbedError::Transport {
                            url: self.url(),
                            attempts,
                            message,
                        });
                    }
                    thread::sleep(Duration::from_millis(50 * u64::from(attempts)));
                }
            }
        };
        if resp.width != self.config.width {
            return Err(EmbedError::Protocol(format!(
                "service returned width {} but {} was expected",
                resp.width, self.config.width
            )));
        }
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "service returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != self.config.width) {
            return Err(EmbedError::Protocol(format!(
                "vector of width {} in a width-{} response",
                v.len(),
                self.config.width
            )));
        }
        if resp.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(EmbedError::Protocol("non-finite vector entry".into()));
        }
        Ok(resp.vectors)
    }
}

pub fn embed_token(provider: &dyn EmbeddingProvider, token: &str) -> Result<Vec<f64>, EmbedError> {
    if token.is_empty() {
        return Err(EmbedError::EmptyToken);
    }
    let mut out = provider.embed_batch(&[token.to_owned()])?;
    out.pop()
        .ok_or_else(|| EmbedError::Protocol("provider returned no vector".into()))
}

/// Arithmetic mean of `vectors`; the zero vector when there are none.
pub fn mean_pool<'a, I>(width: usize, vectors: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; width];
    let mut n = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    if n > 0 {
        let n = n as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    sum
}

pub fn embed_review(provider: &dyn EmbeddingProvider, tokens: &TokenSequence) -> Result<EmbeddingVector, EmbedError> {
    if tokens.is_empty() {
        warn!("review {} has no tokens; using the zero vector", tokens.source_id);
        return Ok(EmbeddingVector {
            source_id: tokens.source_id.clone(),
            values: vec![0.0; provider.width()],
        });
    }
    let vectors = provider.embed_batch(&tokens.tokens)?;
    Ok(EmbeddingVector {
        source_id: tokens.source_id.clone(),
        values: mean_pool(provider.width(), vectors.iter().map(Vec::as_slice)),
    })
}

/// Token vectors memoized for one provider version.
#[derive(Debug, Clone, Default)]
pub struct TokenCache {
    key: Option<(String, String, usize)>,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    provider: String,
    provider_version: String,
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    token: String,
    vector: Vec<f64>,
}

const CACHE_FORMAT: &str = "hvd-token-cache/1";

impl TokenCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Vec<f64>> {
        self.vectors.get(token)
    }

    /// Binds the cache to `provider`, clearing it if it held vectors from a
    /// different provider or version.
    fn bind(&mut self, provider: &dyn EmbeddingProvider) {
        let key = (
            provider.name().to_owned(),
            provider.version().to_owned(),
            provider.width(),
        );
        if self.key.as_ref() != Some(&key) {
            self.vectors.clear();
            self.key = Some(key);
        }
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), EmbedError> {
        let io_err = |e: io::Error| EmbedError::Cache(e.to_string());
        let (provider, version, width) = self
            .key
            .clone()
            .ok_or_else(|| EmbedError::Cache("cache is not bound to a provider".into()))?;
        let header = CacheHeader {
            format: CACHE_FORMAT.into(),
            provider,
            provider_version: version,
            width,
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| EmbedError::Cache(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err)?;
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for t in tokens {
            let entry = CacheEntry {
                token: t.clone(),
                vector: self.vectors[t].clone(),
            };
            serde_json::to_writer(&mut out, &entry).map_err(|e| EmbedError::Cache(e.to_string()))?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self, EmbedError> {
        let mut lines = source.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| EmbedError::Cache("missing header".into()))?
            .map_err(|e| EmbedError::Cache(e.to_string()))?;
        let header: CacheHeader =
            serde_json::from_str(&header_line).map_err(|e| EmbedError::Cache(format!("bad header: {e}")))?;
        if header.format != CACHE_FORMAT {
            return Err(EmbedError::Cache(format!("unsupported format {:?}", header.format)));
        }
        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| EmbedError::Cache(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line)
                .map_err(|e| EmbedError::Cache(format!("line {}: {e}", i + 2)))?;
            if entry.vector.len() != header.width {
                return Err(EmbedError::Cache(format!(
                    "line {}: width {} in a width-{} cache",
                    i + 2,
                    entry.vector.len(),
                    header.width
                )));
            }
            vectors.insert(entry.token, entry.vector);
        }
        Ok(TokenCache {
            key: Some((header.provider, header.provider_version, header.width)),
            vectors,
        })
    }
}

/// Embeds every sequence, order-aligned with the input.
///
/// Distinct tokens missing from `cache` are requested once, in batches of
/// the provider's `max_batch`, with up to `parallelism` batches in flight.
/// On failure the vectors fetched so far stay cached, so calling again with
/// the same cache resumes; the error reports how many leading reviews were
/// fully embeddable.
pub fn embed_corpus(
    provider: &dyn EmbeddingProvider,
    sequences: &[TokenSequence],
    cache: &mut TokenCache,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    cache.bind(provider);
    let mut seen = HashSet::new();
    let missing: Vec<String> = sequences
        .iter()
        .flat_map(|s| s.tokens.iter())
        .filter(|t| !cache.vectors.contains_key(*t) && seen.insert(t.as_str()))
        .cloned()
        .collect();

    let batches: Vec<&[String]> = missing.chunks(provider.max_batch().max(1)).collect();
    let mut failure = None;
    for group in batches.chunks(provider.parallelism().max(1)) {
        let results: Vec<Result<Vec<Vec<f64>>, EmbedError>> = if group.len() == 1 {
            vec![provider.embed_batch(group[0])]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|batch| s.spawn(move || provider.embed_batch(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            })
        };
        for (batch, result) in group.iter().zip(results) {
            match result {
                Ok(vectors) => {
                    if vectors.len() != batch.len() {
                        failure.get_or_insert(EmbedError::Protocol(format!(
                            "provider returned {} vectors for {} tokens",
                            vectors.len(),
                            batch.len()
                        )));
                        continue;
                    }
                    for (t, v) in batch.iter().zip(vectors) {
                        cache.vectors.insert(t.clone(), v);
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if failure.is_some() {
            break;
        }
    }

    if let Some(source) = failure {
        let completed = sequences
            .iter()
            .take_while(|s| s.tokens.iter().all(|t| cache.vectors.contains_key(t)))
            .count();
        return Err(EmbedError::Partial {
            completed,
            total: sequences.len(),
            source: Box::new(source),
        });
    }

    let width = provider.width();
    Ok(sequences
        .iter()
        .map(|s| {
            if s.is_empty() {
                warn!("review {} has no tokens; using the zero vector", s.source_id);
            }
            EmbeddingVector {
                source_id: s.source_id.clone(),
                values: mean_pool(width, s.tokens.iter().map(|t| cache.vectors[t].as_slice())),
            }
        })
        .collect())
}

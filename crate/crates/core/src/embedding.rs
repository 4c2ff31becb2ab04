//! Text embeddings behind a single provider interface.
//!
//! [`HashEmbedder`] is the deterministic offline embedder (signed feature
//! hashing over a bag of tokens). [`RemoteEmbedder`] bridges any external
//! sentence encoder speaking the `POST /embed` protocol.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::remote::{endpoint, post_with_retry, RetryPolicy, Transport, TransportError};
use crate::tokenize::tokenize;

pub const DEFAULT_DIMENSION: usize = 64;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

const BUCKET_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const SIGN_SEED: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("text has no tokens")]
    NoTokens,
    #[error("message {id}: text has no tokens")]
    EmptyText { id: String },
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("message {id}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("embedding service returned {actual} vectors for {expected} texts")]
    CountMismatch { expected: usize, actual: usize },
    #[error("embedding service returned a zero or non-finite vector")]
    DegenerateVector,
    #[error("malformed embedding response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm. Fails on zero or non-finite input.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Some(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Seeded FNV-1a with a splitmix64 finalizer; stable across platforms and releases.
fn seeded_hash(seed: u64, token: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Bucket index and sign for a token at dimension `d`.
pub fn token_bucket(token: &str, d: usize) -> (usize, f64) {
    let bucket = (seeded_hash(BUCKET_SEED, token) % d as u64) as usize;
    let sign = if seeded_hash(SIGN_SEED, token) & 1 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

pub fn hash_embed(text: &str, d: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if d < 2 {
        return Err(EmbeddingError::InvalidDimension(d));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(EmbeddingError::NoTokens);
    }
    let mut acc = vec![0.0; d];
    for tok in &tokens {
        let (bucket, sign) = token_bucket(tok, d);
        acc[bucket] += sign;
    }
    // Opposite-signed collisions can cancel every bucket.
    EmbeddingVector::normalized(acc).ok_or(EmbeddingError::DegenerateVector)
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    /// Texts per `embed_batch` call.
    fn batch_size(&self) -> usize {
        usize::MAX
    }

    /// Concurrent `embed_batch` calls allowed.
    fn max_in_flight(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        Ok(HashEmbedder { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: DEFAULT_DIMENSION,
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| hash_embed(t, self.dim)).collect()
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {base_url}/embed`.
pub struct RemoteEmbedder {
    base_url: String,
    dim: usize,
    transport: Arc<dyn Transport>,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize, transport: Arc<dyn Transport>) -> Self {
        RemoteEmbedder {
            base_url: base_url.into(),
            dim,
            transport,
            batch_size: DEFAULT_BATCH_SIZE,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        "remote"
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        self.batch_size.max(1)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight.max(1)
    }

    /// Returned vectors are normalized but not dimension-checked; [`embed_corpus`]
    /// checks dimensions so it can name the offending message.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = serde_json::json!({ "texts": texts });
        let url = endpoint(&self.base_url, "embed");
        let raw = post_with_retry(self.transport.as_ref(), &url, &body, self.timeout, self.retry)?;
        let parsed: EmbedResponse =
            serde_json::from_value(raw).map_err(|e| EmbeddingError::BadResponse(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                actual: parsed.vectors.len(),
            });
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| EmbeddingVector::normalized(v).ok_or(EmbeddingError::DegenerateVector))
            .collect()
    }
}

/// Embeds every message, keyed by id.
///
/// Messages are split into `provider.batch_size()` chunks and up to
/// `provider.max_in_flight()` chunks are embedded concurrently.
pub fn embed_corpus(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, EmbeddingVector>, EmbeddingError> {
    let messages = corpus.messages();
    for m in messages {
        if tokenize(&m.text).is_empty() {
            return Err(EmbeddingError::EmptyText { id: m.id.clone() });
        }
    }
    if messages.is_empty() {
        return Ok(BTreeMap::new());
    }
    let batch_size = provider.batch_size().max(1);
    let chunks: Vec<_> = messages.chunks(batch_size).collect();
    let workers = provider.max_in_flight().clamp(1, chunks.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<EmbeddingVector>, EmbeddingError>>>> =
        Mutex::new((0..chunks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= chunks.len() {
                    break;
                }
                let texts: Vec<&str> = chunks[i].iter().map(|m| m.text.as_str()).collect();
                let out = provider.embed_batch(&texts);
                let failed = out.is_err();
                results.lock().unwrap()[i] = Some(out);
                if failed {
                    // Stop handing out new chunks.
                    next.store(chunks.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let expected = provider.dimension();
    let mut out = BTreeMap::new();
    for (chunk, result) in chunks.iter().zip(results.into_inner().unwrap()) {
        let Some(result) = result else { continue };
        let vectors = result?;
        if vectors.len() != chunk.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: chunk.len(),
                actual: vectors.len(),
            });
        }
        for (m, v) in chunk.iter().zip(vectors) {
            if v.dim() != expected {
                return Err(EmbeddingError::DimensionMismatch {
                    id: m.id.clone(),
                    expected,
                    actual: v.dim(),
                });
            }
            out.insert(m.id.clone(), v);
        }
    }
    Ok(out)
}

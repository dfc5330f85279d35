//! Embedding providers and sentence-averaged text embeddings.

use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{self, HttpError, RetryPolicy, Semaphore};
use crate::textproc;

/// Dimension of the local fallback embedder.
pub const DEFAULT_LOCAL_DIM: usize = 256;

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ProviderUnavailable("empty embedding vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ProviderUnavailable(format!("non-finite component at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// Componentwise arithmetic mean.
    pub fn mean(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyText)?;
        if vectors.len() == 1 {
            return Ok(first.clone());
        }
        let dim = first.dim();
        let mut sum = vec![0.0; dim];
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::DimMismatch { left: dim, right: v.dim() });
            }
            for (s, x) in sum.iter_mut().zip(&v.0) {
                *s += x;
            }
        }
        let n = vectors.len() as f64;
        Ok(Self(sum.into_iter().map(|s| s / n).collect()))
    }
}

/// Text granularities a provider can embed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Text,
    Tokens,
}

/// Source of embedding vectors. Implementations must be deterministic for a
/// given input and safe to call from many threads.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Vector dimension, when known ahead of the first call.
    fn dim(&self) -> Option<usize>;

    fn supports(&self, granularity: Granularity) -> bool;

    /// One vector per input text, embedded as a whole.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// One vector per token, per input text.
    fn embed_token_batch(&self, texts: &[String]) -> Result<Vec<Vec<EmbeddingVector>>>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hashed bag of character trigrams, L2-normalized.
///
/// The input is lowercased and wrapped as `<text>`; each trigram's UTF-8
/// bytes are hashed with 64-bit FNV-1a into `hash % dim`. Input with no
/// trigram (only the empty string) maps to the zero vector.
pub fn local_fallback_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut padded = String::with_capacity(text.len() + 2);
    padded.push('<');
    padded.extend(text.chars().flat_map(char::to_lowercase));
    padded.push('>');
    let chars: Vec<char> = padded.chars().collect();
    let mut values = vec![0.0; dim];
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        values[(fnv1a(&buf[..len]) % dim as u64) as usize] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector(values)
}

/// Deterministic in-process provider backed by [`local_fallback_embed`].
#[derive(Debug, Clone)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_LOCAL_DIM)
    }
}

impl EmbeddingProvider for LocalEmbedder {
    fn name(&self) -> &str {
        "local"
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn supports(&self, _: Granularity) -> bool {
        true
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| local_fallback_embed(t, self.dim)).collect())
    }

    fn embed_token_batch(&self, texts: &[String]) -> Result<Vec<Vec<EmbeddingVector>>> {
        Ok(texts
            .iter()
            .map(|t| {
                textproc::tokenize(t)
                    .iter()
                    .map(|tok| local_fallback_embed(tok, self.dim))
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    granularity: Granularity,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    vectors_per_text: Option<Vec<Vec<Vec<f64>>>>,
}

/// Settings for [`HttpEmbedder`].
#[derive(Debug, Clone)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub supports_tokens: bool,
}

impl HttpEmbedderConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            batch_size: 64,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            supports_tokens: true,
        }
    }
}

/// Client for a remote embedding service speaking `POST /v1/embed`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    url: String,
    agent: ureq::Agent,
    gate: Semaphore,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        Self {
            url: http::endpoint(&config.base_url, "/v1/embed"),
            agent: http::agent(config.timeout),
            gate: Semaphore::new(config.max_in_flight),
            dim: OnceLock::new(),
            config,
        }
    }

    fn request(&self, texts: &[String], granularity: Granularity) -> Result<EmbedResponse> {
        let body = EmbedRequest { texts, granularity };
        let _permit = self.gate.acquire();
        self.config
            .retry
            .run(HttpError::is_retryable, |_| http::post_json(&self.agent, &self.url, &body))
            .map_err(|e| Error::ProviderUnavailable(format!("{}: {e}", self.url)))
    }

    fn check_dim(&self, reported: Option<usize>, vectors: impl IntoIterator<Item = Vec<f64>>) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::new();
        for v in vectors {
            let expected = *self.dim.get_or_init(|| reported.unwrap_or(v.len()));
            if v.len() != expected || reported.is_some_and(|d| d != expected) {
                return Err(Error::DimMismatch { left: expected, right: v.len() });
            }
            out.push(EmbeddingVector::new(v)?);
        }
        Ok(out)
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.config.base_url
    }

    fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn supports(&self, granularity: Granularity) -> bool {
        granularity == Granularity::Text || self.config.supports_tokens
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let resp = self.request(chunk, Granularity::Text)?;
            let vectors = resp
                .vectors
                .ok_or_else(|| Error::ProviderUnavailable("response lacks \"vectors\"".into()))?;
            if vectors.len() != chunk.len() {
                return Err(Error::ProviderUnavailable(format!(
                    "asked for {} vectors, got {}",
                    chunk.len(),
                    vectors.len()
                )));
            }
            out.extend(self.check_dim(resp.dim, vectors)?);
        }
        Ok(out)
    }

    fn embed_token_batch(&self, texts: &[String]) -> Result<Vec<Vec<EmbeddingVector>>> {
        if !self.supports(Granularity::Tokens) {
            return Err(Error::UnsupportedGranularity(self.name().to_string()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let resp = self.request(chunk, Granularity::Tokens)?;
            let per_text = resp
                .vectors_per_text
                .ok_or_else(|| Error::ProviderUnavailable("response lacks \"vectors_per_text\"".into()))?;
            if per_text.len() != chunk.len() {
                return Err(Error::ProviderUnavailable(format!(
                    "asked for {} token lists, got {}",
                    chunk.len(),
                    per_text.len()
                )));
            }
            for vectors in per_text {
                out.push(self.check_dim(resp.dim, vectors)?);
            }
        }
        Ok(out)
    }
}

/// Mean of the sentence embeddings of `text`.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    embed_texts(provider, std::slice::from_ref(&text.to_string())).map(|mut v| v.remove(0))
}

/// [`embed_text`] for many texts, sending all sentences in one batch.
pub fn embed_texts(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    let mut sentences = Vec::new();
    let mut spans = Vec::with_capacity(texts.len());
    for text in texts {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let start = sentences.len();
        sentences.extend(textproc::split_sentences(text));
        spans.push(start..sentences.len());
    }
    let vectors = provider.embed_batch(&sentences)?;
    spans
        .into_iter()
        .map(|span| EmbeddingVector::mean(&vectors[span]))
        .collect()
}

/// One vector per token of `text`, in order.
pub fn embed_tokens(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<EmbeddingVector>> {
    if !provider.supports(Granularity::Tokens) {
        return Err(Error::UnsupportedGranularity(provider.name().to_string()));
    }
    if textproc::tokenize(text).is_empty() {
        return Ok(Vec::new());
    }
    Ok(provider
        .embed_token_batch(std::slice::from_ref(&text.to_string()))?
        .remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
        dot / (a.norm() * b.norm())
    }

    #[test]
    fn fallback_basics() {
        assert!(local_fallback_embed("", 256).is_zero());
        assert_eq!(local_fallback_embed("gravity", 256), local_fallback_embed("gravity", 256));
        let abc = local_fallback_embed("abc", 256);
        let abd = local_fallback_embed("abd", 256);
        assert!(cos(&abc, &abd) < 1.0);
    }

    #[test]
    fn fallback_matches_independent_hashing() {
        // "<abc>" has trigrams "<ab", "abc", "bc>"; FNV-1a puts "<ab" and
        // "bc>" in bucket 36 and "abc" in bucket 75 of 256 (computed with a
        // separate script), so the normalized vector is (2, 1) / sqrt(5).
        let v = local_fallback_embed("abc", 256);
        let r5 = 5f64.sqrt();
        for (i, &x) in v.values().iter().enumerate() {
            let expected = match i {
                36 => 2.0 / r5,
                75 => 1.0 / r5,
                _ => 0.0,
            };
            assert!((x - expected).abs() < 1e-15, "component {i}: {x}");
        }
    }

    #[test]
    fn text_embedding_is_sentence_mean() {
        let p = LocalEmbedder::default();
        let single = embed_text(&p, "Tides rise.").unwrap();
        assert_eq!(single, local_fallback_embed("Tides rise.", 256));

        let two = embed_text(&p, "Tides rise. Moons pull.").unwrap();
        let v1 = local_fallback_embed("Tides rise.", 256);
        let v2 = local_fallback_embed("Moons pull.", 256);
        for i in 0..256 {
            assert_eq!(two.values()[i], (v1.values()[i] + v2.values()[i]) / 2.0);
        }
        assert!(matches!(embed_text(&p, "  "), Err(Error::EmptyText)));
    }

    #[test]
    fn three_sentence_transcript_mean() {
        // Frozen from an independent script hashing the three sentences
        // "The sun is hot.", "Ice melts fast!" and "Why?".
        let p = LocalEmbedder::default();
        let v = embed_text(&p, "The sun is hot. Ice melts fast! Why?").unwrap();
        let expected = include!("../tests/fixtures/three_sentence_mean.in");
        for (i, (&got, &want)) in v.values().iter().zip(expected.iter()).enumerate() {
            assert!((got - want).abs() < 1e-12, "component {i}: {got} vs {want}");
        }
    }

    #[test]
    fn token_embeddings() {
        let p = LocalEmbedder::default();
        assert_eq!(embed_tokens(&p, "a b").unwrap().len(), 2);
        assert!(embed_tokens(&p, "").unwrap().is_empty());
        let aa = embed_tokens(&p, "a a").unwrap();
        assert_eq!(aa[0], aa[1]);
    }

    proptest! {
        #[test]
        fn fallback_unit_or_zero(s in "\\PC{0,30}") {
            let v = local_fallback_embed(&s, 64);
            let n = v.norm();
            prop_assert!(v.is_zero() || (n - 1.0).abs() < 1e-12);
            prop_assert_eq!(v, local_fallback_embed(&s, 64));
        }

        #[test]
        fn mean_ignores_sentence_order(mut sentences in prop::collection::vec("[a-z]{1,8}[!?]", 1..6)) {
            let p = LocalEmbedder::new(32);
            let a = embed_text(&p, &sentences.join(" ")).unwrap();
            sentences.reverse();
            let b = embed_text(&p, &sentences.join(" ")).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

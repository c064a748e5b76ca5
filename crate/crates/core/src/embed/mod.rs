//! Text-embedding providers, vector math and the embedding cache.
//!
//! Every vector leaving [`Embedder::embed_texts`] is L2-normalized, so cosine similarity reduces
//! to a dot product downstream.

mod cache;
mod mock;
mod remote;
mod vector;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::http::{HttpError, RetryPolicy};

pub use cache::{cache_key, CacheKey, EmbeddingCache};
pub use mock::{mock_embed, MockEmbedder};
pub use remote::HttpEmbedder;
pub use vector::{cosine, dot, squared_distance, Embedding};

pub(crate) use vector::check_dims;

/// The crate's working embedding type.
pub type EmbeddingVector = Embedding<f64>;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero or non-finite vector cannot be normalized")]
    ZeroVector,
    #[error("no texts to embed")]
    EmptyInput,
    #[error("embedding provider request failed: {0}")]
    Http(#[from] HttpError),
    #[error("embedding provider returned a malformed response: {0}")]
    Protocol(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
}

/// Secret string that never appears in `Debug` output or serialized configs.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

fn default_batch_size() -> usize {
    32
}
fn default_max_input_chars() -> usize {
    8192
}
fn default_max_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_name: String,
    pub dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_input_chars")]
    pub max_input_chars: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(skip)]
    pub auth_token: Option<Secret>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn mock(dim: usize) -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            model_name: format!("mock-3gram-{dim}"),
            dim,
            batch_size: default_batch_size(),
            max_input_chars: default_max_input_chars(),
            max_in_flight: default_max_in_flight(),
            auth_token_env: None,
            auth_token: None,
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.max_input_chars == 0 {
            return bad("max_input_chars must be positive");
        }
        if self.kind == ProviderKind::Http && self.endpoint.is_none() {
            return bad("http provider requires an endpoint");
        }
        Ok(())
    }

    /// Explicit token if set, otherwise the value of `auth_token_env`.
    pub fn resolve_token(&self) -> Option<String> {
        self.auth_token
            .as_ref()
            .map(|s| s.expose().to_string())
            .or_else(|| self.auth_token_env.as_ref().and_then(|v| std::env::var(v).ok()))
    }
}

/// A backend that turns texts into raw (not necessarily normalized) vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn model_name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Truncates to at most `max_chars` characters, dropping the tail.
fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// Batching, truncating, normalizing and caching front end over an [`EmbeddingProvider`].
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Option<EmbeddingCache>,
    batch_size: usize,
    max_input_chars: usize,
    pool: rayon::ThreadPool,
}

impl fmt::Debug for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Embedder")
            .field("model_name", &self.provider.model_name())
            .field("dim", &self.provider.dim())
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl Embedder {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let provider: Arc<dyn EmbeddingProvider> = match cfg.kind {
            ProviderKind::Mock => Arc::new(MockEmbedder::new(cfg.model_name.clone(), cfg.dim)?),
            ProviderKind::Http => Arc::new(HttpEmbedder::new(
                cfg.endpoint.as_deref().expect("validated"),
                cfg.model_name.clone(),
                cfg.dim,
                cfg.resolve_token(),
                RetryPolicy::default(),
            )),
        };
        let cache = cfg
            .cache_dir
            .as_ref()
            .map(|dir| EmbeddingCache::open(dir, &cfg.model_name))
            .transpose()?;
        Self::with_provider(provider, cache, cfg.batch_size, cfg.max_input_chars, cfg.max_in_flight)
    }

    pub fn with_provider(
        provider: Arc<dyn EmbeddingProvider>,
        cache: Option<EmbeddingCache>,
        batch_size: usize,
        max_input_chars: usize,
        max_in_flight: usize,
    ) -> Result<Self, EmbedError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self {
            provider,
            cache,
            batch_size: batch_size.max(1),
            max_input_chars,
            pool,
        })
    }

    /// Shorthand for a mock-backed embedder without a cache.
    pub fn mock(dim: usize) -> Self {
        Self::from_config(&ProviderConfig::mock(dim)).expect("valid mock config")
    }

    pub fn dim(&self) -> usize {
        self.provider.dim()
    }

    pub fn model_name(&self) -> &str {
        self.provider.model_name()
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self
            .embed_texts(&[text])?
            .pop()
            .expect("one vector per input"))
    }

    /// One normalized vector per input, in input order.
    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let dim = self.dim();
        let model = self.model_name().to_string();
        let truncated: Vec<&str> = texts
            .iter()
            .map(|t| truncate_chars(t.as_ref(), self.max_input_chars))
            .collect();
        let keys: Vec<CacheKey> = truncated.iter().map(|t| cache_key(&model, t)).collect();

        let mut resolved: HashMap<CacheKey, EmbeddingVector> = HashMap::new();
        let mut misses: Vec<(CacheKey, String)> = Vec::new();
        for (key, text) in keys.iter().zip(&truncated) {
            if resolved.contains_key(key) || misses.iter().any(|(k, _)| k == key) {
                continue;
            }
            let cached = match &self.cache {
                Some(cache) => cache.get(key, dim)?,
                None => None,
            };
            match cached {
                Some(values) => {
                    resolved.insert(*key, Embedding::new(values));
                }
                None => misses.push((*key, text.to_string())),
            }
        }

        let batches: Vec<&[(CacheKey, String)]> = misses.chunks(self.batch_size).collect();
        let fetched: Vec<Vec<(CacheKey, EmbeddingVector)>> = self.pool.install(|| {
            batches
                .par_iter()
                .map(|batch| self.fetch_batch(batch))
                .collect::<Result<_, _>>()
        })?;
        for (key, vector) in fetched.into_iter().flatten() {
            if let Some(cache) = &self.cache {
                cache.put(&key, vector.values())?;
            }
            resolved.insert(key, vector);
        }
        Ok(keys.iter().map(|k| resolved[k].clone()).collect())
    }

    fn fetch_batch(
        &self,
        batch: &[(CacheKey, String)],
    ) -> Result<Vec<(CacheKey, EmbeddingVector)>, EmbedError> {
        let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
        let raw = self.provider.embed_batch(&texts)?;
        if raw.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                raw.len()
            )));
        }
        batch
            .iter()
            .zip(raw)
            .map(|((key, _), values)| {
                check_dims(self.dim(), values.len())?;
                Ok((*key, Embedding::normalized(values)?))
            })
            .collect()
    }
}

/// Builds an [`Embedder`] for `cfg` and embeds `texts` in one call.
pub fn embed_texts<S: AsRef<str>>(
    cfg: &ProviderConfig,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    Embedder::from_config(cfg)?.embed_texts(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: MockEmbedder,
        calls: AtomicUsize,
        texts: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn model_name(&self) -> &str {
            self.inner.model_name()
        }
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed_batch(texts)
        }
    }

    struct WrongDim;
    impl EmbeddingProvider for WrongDim {
        fn model_name(&self) -> &str {
            "wrong"
        }
        fn dim(&self) -> usize {
            4
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
            Ok(texts.iter().map(|_| vec![1.0; 5]).collect())
        }
    }

    #[test]
    fn duplicate_texts_get_identical_vectors() {
        let e = Embedder::mock(32);
        let out = e.embed_texts(&["a", "a"]).unwrap();
        assert_eq!(out[0], out[1]);
        for v in &out {
            assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn batch_invariance() {
        let texts: Vec<String> = (0..23).map(|i| format!("row {i} value {}", i * 7)).collect();
        let e = Embedder::with_provider(
            Arc::new(MockEmbedder::new("m", 64).unwrap()),
            None,
            5,
            8192,
            3,
        )
        .unwrap();
        let batched = e.embed_texts(&texts).unwrap();
        let single: Vec<_> = texts.iter().map(|t| e.embed_one(t).unwrap()).collect();
        assert_eq!(batched, single);
    }

    #[test]
    fn cache_serves_repeat_requests() {
        let dir = tempfile::tempdir().unwrap();
        let provider = Arc::new(Counting {
            inner: MockEmbedder::new("m", 16).unwrap(),
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        });
        let cache = EmbeddingCache::open(dir.path(), "m").unwrap();
        let e = Embedder::with_provider(provider.clone(), Some(cache), 8, 8192, 2).unwrap();
        let first = e.embed_texts(&["x", "y", "x"]).unwrap();
        assert_eq!(provider.texts.load(Ordering::SeqCst), 2);
        let second = e.embed_texts(&["y", "x"]).unwrap();
        assert_eq!(provider.texts.load(Ordering::SeqCst), 2);
        assert_eq!(second[0], first[1]);
        assert_eq!(second[1], first[0]);
    }

    #[test]
    fn truncation_applies_before_dispatch() {
        let e = Embedder::with_provider(
            Arc::new(MockEmbedder::new("m", 64).unwrap()),
            None,
            8,
            5,
            1,
        )
        .unwrap();
        let long = e.embed_one("abcdefghij").unwrap();
        assert_eq!(long, mock_embed("abcde", 64));
        assert_eq!(truncate_chars("héllo", 2), "hé");
    }

    #[test]
    fn rejects_wrong_dimension() {
        let e = Embedder::with_provider(Arc::new(WrongDim), None, 8, 100, 1).unwrap();
        assert!(matches!(
            e.embed_texts(&["a"]),
            Err(EmbedError::DimensionMismatch { expected: 4, actual: 5 })
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        let e = Embedder::mock(16);
        assert!(matches!(e.embed_texts::<&str>(&[]), Err(EmbedError::EmptyInput)));
    }

    #[test]
    fn secret_is_redacted() {
        let mut cfg = ProviderConfig::mock(16);
        cfg.auth_token = Some(Secret::new("hunter2"));
        assert!(!format!("{cfg:?}").contains("hunter2"));
        assert!(!toml::to_string(&cfg).unwrap().contains("hunter2"));
    }
}

//! Deterministic feature-hashing embedder used for tests and offline runs.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};

/// Hashes lower-cased character 3-grams into `dim` signed buckets and L2-normalizes.
///
/// Each gram's FNV-1a 64-bit hash picks bucket `h % dim` and sign `-1` when bit 63 is set. Texts
/// shorter than three characters count as a single gram. The empty text (or a text whose grams
/// cancel exactly) maps to the first basis vector.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 8, "mock embedding dimension must be at least 8");
    let lowered: Vec<char> = text.to_lowercase().chars().collect();
    let mut values = vec![0.0_f64; dim];
    let mut add = |gram: &[char]| {
        let bytes: String = gram.iter().collect();
        let mut h = FnvHasher::default();
        h.write(bytes.as_bytes());
        let h = h.finish();
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[(h % dim as u64) as usize] += sign;
    };
    if lowered.len() < 3 {
        if !lowered.is_empty() {
            add(&lowered);
        }
    } else {
        lowered.windows(3).for_each(&mut add);
    }
    EmbeddingVector::normalized(values).unwrap_or_else(|_| EmbeddingVector::basis(dim, 0))
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    model_name: String,
    dim: usize,
}

impl MockEmbedder {
    pub fn new(model_name: impl Into<String>, dim: usize) -> Result<Self, EmbedError> {
        if dim < 8 {
            return Err(EmbedError::Config(format!(
                "mock provider needs dim >= 8, got {dim}"
            )));
        }
        Ok(Self {
            model_name: model_name.into(),
            dim,
        })
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| mock_embed(t, self.dim).into_values())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine;

    #[test]
    fn deterministic_and_unit() {
        let a = mock_embed("Name: Alice", 64);
        let b = mock_embed("Name: Alice", 64);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn empty_text_is_first_basis_vector() {
        assert_eq!(mock_embed("", 16), EmbeddingVector::basis(16, 0));
    }

    #[test]
    fn shared_grams_are_closer() {
        let a = mock_embed("year 2020 sales", 64);
        let b = mock_embed("year 2021 sales", 64);
        let c = mock_embed("quantum chromodynamics", 64);
        assert!(cosine(&a, &b).unwrap() > cosine(&a, &c).unwrap());
    }

    #[test]
    fn short_texts_differ() {
        assert_ne!(mock_embed("a", 64), mock_embed("b", 64));
    }
}

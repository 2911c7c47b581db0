//! Text encoders mapping free text into fixed-width dense vectors.

use super::client::{post_json, HttpConfig, LlmError};
use serde::{Deserialize, Serialize};

/// Dense text embedding of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }
}

/// Cosine similarity; defined as 0 when either vector is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Embedding, LlmError>;
}

/// Term-frequency feature hashing followed by L2 normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    /// Unnormalized bucket counts.
    pub fn term_counts(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for tok in tokenize(text) {
            out[self.bucket(&tok)] += 1.0;
        }
        out
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut values = self.term_counts(text);
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding { values }
    }
}

impl TextEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Embedding, LlmError> {
        Ok(self.embed(text))
    }
}

/// Delegates to an embedding endpoint: `POST {model, input}` returning
/// `{embedding: [...]}` (or the `{data: [{embedding}]}` variant).
pub struct RemoteEncoder {
    http: HttpConfig,
    model: String,
    dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Option<Vec<f64>>,
    data: Option<Vec<EmbeddingDatum>>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEncoder {
    pub fn new(http: HttpConfig, model: impl Into<String>, dim: usize) -> Self {
        Self {
            http,
            model: model.into(),
            dim,
        }
    }

    /// Reads `L2IR_EMB_URL` and `L2IR_EMB_MODEL`; `L2IR_LLM_KEY`, when set,
    /// is sent as the bearer token.
    pub fn from_env(dim: usize) -> Result<Self, LlmError> {
        let url =
            std::env::var("L2IR_EMB_URL").map_err(|_| LlmError::Config("L2IR_EMB_URL".into()))?;
        let model = std::env::var("L2IR_EMB_MODEL")
            .map_err(|_| LlmError::Config("L2IR_EMB_MODEL".into()))?;
        let mut http = HttpConfig::new(url);
        http.api_key = std::env::var("L2IR_LLM_KEY").ok();
        Ok(Self::new(http, model, dim))
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Embedding, LlmError> {
        let body = serde_json::json!({ "model": self.model, "input": text });
        let raw = post_json(&self.http, &body)?;
        let resp: EmbeddingResponse = serde_json::from_value(raw)
            .map_err(|e| LlmError::Malformed(format!("embedding response: {e}")))?;
        let values = resp
            .embedding
            .or_else(|| {
                resp.data
                    .and_then(|d| d.into_iter().next())
                    .map(|d| d.embedding)
            })
            .ok_or_else(|| LlmError::Malformed("embedding response has no vector".into()))?;
        if values.len() != self.dim {
            return Err(LlmError::Malformed(format!(
                "embedding has dimension {}, expected {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(LlmError::Malformed("non-finite embedding value".into()));
        }
        Ok(Embedding { values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_zero() {
        let e = HashingEncoder::new(256).embed("");
        assert!(e.is_zero());
        assert_eq!(e.dim(), 256);
    }

    #[test]
    fn deterministic_and_normalized() {
        let enc = HashingEncoder::new(256);
        let a = enc.embed("Great product, would buy again!");
        assert_eq!(a, enc.embed("Great product, would buy again!"));
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        let toks: Vec<_> = tokenize("Hello,WORLD--it's 5-star!").collect();
        assert_eq!(toks, ["hello", "world", "it", "s", "5", "star"]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn cosine_with_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        // Appending tokens only touches the buckets of the appended tokens.
        #[test]
        fn appending_touches_only_own_buckets(
            base in proptest::collection::vec("[a-z]{1,6}", 0..20),
            extra in proptest::collection::vec("[a-z]{1,6}", 1..5),
        ) {
            let enc = HashingEncoder::new(64);
            let before = enc.term_counts(&base.join(" "));
            let after = enc.term_counts(&format!("{} {}", base.join(" "), extra.join(" ")));
            let touched: std::collections::BTreeSet<usize> =
                extra.iter().map(|t| enc.bucket(t)).collect();
            for b in 0..64 {
                if touched.contains(&b) {
                    let added = extra.iter().filter(|t| enc.bucket(t) == b).count() as f64;
                    prop_assert_eq!(after[b], before[b] + added);
                } else {
                    prop_assert_eq!(after[b], before[b]);
                }
            }
        }
    }
}

//! Embedding providers. The hashed embedder is a deterministic, dependency
//! free stand-in; the remote embedder talks to a JSON-over-HTTP embeddings
//! endpoint.

use std::sync::Mutex;
use std::time::Duration;

use crate::evaluation::EvalError;
use crate::http::{post_json_with_retry, HttpFailure};

/// Maps text to a fixed-dimension real vector. Providers are deterministic
/// per instance and identified by a fingerprint so metric reports can state
/// which embedding space they were computed in.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Vector dimension, once known.
    fn dimension(&self) -> Option<usize>;

    fn fingerprint(&self) -> String;
}

/// Signed feature hashing of character trigrams: the lowercased text is
/// wrapped in boundary markers, every trigram bumps one hashed coordinate by
/// +-1, and the result is L2-normalized. Empty text embeds as the zero
/// vector.
pub struct HashedEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashedEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EvalError> {
        if dimension < 16 {
            return Err(EvalError::Config(format!(
                "embedding dimension must be at least 16, got {dimension}"
            )));
        }
        Ok(HashedEmbedder { dimension, seed })
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl EmbeddingProvider for HashedEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        let mut vector = vec![0.0f64; self.dimension];
        let mut chars: Vec<char> = Vec::with_capacity(text.len() + 2);
        chars.push('\u{2}');
        chars.extend(text.to_lowercase().chars());
        chars.push('\u{3}');
        let mut buffer = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for &c in window {
                len += c.encode_utf8(&mut buffer[len..]).len();
            }
            let hash = fnv1a(self.seed, &buffer[..len]);
            let index = (hash % self.dimension as u64) as usize;
            let sign = if (hash >> 63) == 0 { 1.0 } else { -1.0 };
            vector[index] += sign;
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(vector)
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dimension)
    }

    fn fingerprint(&self) -> String {
        format!("hashed-trigram:d{}:s{}", self.dimension, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        RemoteEmbedderConfig {
            endpoint: String::new(),
            model: String::new(),
            auth_token: None,
            timeout: Duration::from_secs(30),
            retries: 3,
        }
    }
}

/// JSON-over-HTTP embeddings client. Requests are batched; the vector
/// dimension is learned from the first response and enforced on every later
/// one.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::blocking::Client,
    dimension: Mutex<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EvalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(RemoteEmbedder {
            config,
            client,
            dimension: Mutex::new(None),
        })
    }

    fn check_dimension(&self, got: usize) -> Result<(), EvalError> {
        let mut known = self.dimension.lock().expect("dimension lock poisoned");
        match *known {
            None => {
                *known = Some(got);
                Ok(())
            }
            Some(expected) if expected == got => Ok(()),
            Some(expected) => Err(EvalError::DimensionDrift { expected, got }),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        let mut vectors = self.embed_batch(std::slice::from_ref(&text.to_owned()))?;
        Ok(vectors.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::json!({
            "model": self.config.model,
            "input": texts,
        });
        let text = post_json_with_retry(
            &self.client,
            &self.config.endpoint,
            self.config.auth_token.as_deref(),
            &body,
            self.config.retries,
            |_, _| {},
        )
        .map_err(|failure| match failure {
            HttpFailure::Transport { attempts, message } => {
                EvalError::Transport { attempts, message }
            }
            HttpFailure::Status { status, body } => EvalError::Http { status, body },
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| EvalError::MalformedResponse(e.to_string()))?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| EvalError::MalformedResponse("response lacks a data array".into()))?;
        if data.len() != texts.len() {
            return Err(EvalError::BatchArity {
                expected: texts.len(),
                got: data.len(),
            });
        }
        let mut vectors = Vec::with_capacity(data.len());
        for entry in data {
            let embedding = entry["embedding"]
                .as_array()
                .ok_or_else(|| EvalError::MalformedResponse("entry lacks an embedding".into()))?;
            let vector: Option<Vec<f64>> = embedding.iter().map(|v| v.as_f64()).collect();
            let vector =
                vector.ok_or_else(|| EvalError::MalformedResponse("non-numeric embedding".into()))?;
            self.check_dimension(vector.len())?;
            vectors.push(vector);
        }
        Ok(vectors)
    }

    fn dimension(&self) -> Option<usize> {
        *self.dimension.lock().expect("dimension lock poisoned")
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}@{}", self.config.model, self.config.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_embed_is_deterministic() {
        let embedder = HashedEmbedder::new(64, 7).unwrap();
        assert_eq!(embedder.embed("abc").unwrap(), embedder.embed("abc").unwrap());
    }

    #[test]
    fn hashed_embed_is_unit_norm() {
        let embedder = HashedEmbedder::new(64, 7).unwrap();
        for text in ["abc", "142 min", "漢字", "x"] {
            let v = embedder.embed(text).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm} for {text}");
        }
    }

    #[test]
    fn hashed_embed_empty_text_is_zero() {
        let embedder = HashedEmbedder::new(32, 7).unwrap();
        let v = embedder.embed("").unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hashed_embed_rejects_tiny_dimension() {
        assert!(HashedEmbedder::new(8, 7).is_err());
    }

    #[test]
    fn hashed_embed_identical_text_max_cosine() {
        let embedder = HashedEmbedder::new(64, 7).unwrap();
        let a = embedder.embed("142 min").unwrap();
        let b = embedder.embed("142 min").unwrap();
        let cos = crate::evaluation::cosine_similarity(&a, &b);
        assert!((cos - 1.0).abs() < 1e-12);
    }
}

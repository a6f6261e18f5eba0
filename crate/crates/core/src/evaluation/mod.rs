//! Alignment metrics between real and generated error sets: embedding-space
//! pattern alignment over transformation vectors, per-column weighted
//! Jaccard, and Jensen-Shannon divergence over type distributions.

mod embed;

pub use embed::{EmbeddingProvider, HashedEmbedder, RemoteEmbedder, RemoteEmbedderConfig};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::annotation::{
    column_error_distribution, type_error_distribution, AnnotationCollection, ErrorAnnotation,
};
use crate::distribution::Distribution;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("annotation collection is empty")]
    EmptyAnnotations,
    #[error("pair set is empty")]
    EmptyPairSet,
    #[error("vector dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("k must be at least 1")]
    BadK,
    #[error("distribution labels differ: {a:?} vs {b:?}")]
    LabelMismatch { a: Vec<String>, b: Vec<String> },
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("embedding dimension drifted: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("embedding batch arity mismatch: sent {expected}, received {got}")]
    BatchArity { expected: usize, got: usize },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed embeddings response: {0}")]
    MalformedResponse(String),
}

/// An embedded (correct, erroneous) value pair. `delta` is the
/// transformation vector `correct_vec - error_vec`.
#[derive(Debug, Clone)]
pub struct EmbeddedPair {
    pub correct_vec: Vec<f64>,
    pub error_vec: Vec<f64>,
    pub delta: Vec<f64>,
    pub source: ErrorAnnotation,
}

impl EmbeddedPair {
    pub fn new(correct_vec: Vec<f64>, error_vec: Vec<f64>, source: ErrorAnnotation) -> Self {
        let delta = correct_vec
            .iter()
            .zip(&error_vec)
            .map(|(c, e)| c - e)
            .collect();
        EmbeddedPair {
            correct_vec,
            error_vec,
            delta,
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddedPairSet {
    pairs: Vec<EmbeddedPair>,
    dimension: usize,
}

impl EmbeddedPairSet {
    pub fn new(pairs: Vec<EmbeddedPair>) -> Result<Self, EvalError> {
        let dimension = pairs.first().map(|p| p.correct_vec.len()).unwrap_or(0);
        for pair in &pairs {
            for vec in [&pair.correct_vec, &pair.error_vec, &pair.delta] {
                if vec.len() != dimension {
                    return Err(EvalError::DimensionMismatch {
                        a: dimension,
                        b: vec.len(),
                    });
                }
            }
        }
        Ok(EmbeddedPairSet { pairs, dimension })
    }

    pub fn pairs(&self) -> &[EmbeddedPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Embeds every annotation's correct and erroneous values. One pair per
/// annotation, in collection order; texts go through the provider as one
/// batch.
pub fn build_pair_set(
    annotations: &AnnotationCollection,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddedPairSet, EvalError> {
    if annotations.is_empty() {
        return Err(EvalError::EmptyAnnotations);
    }
    let mut texts = Vec::with_capacity(annotations.len() * 2);
    for a in annotations.iter() {
        texts.push(a.correct_value.text().to_owned());
        texts.push(a.error_value.text().to_owned());
    }
    let vectors = provider.embed_batch(&texts)?;
    if vectors.len() != texts.len() {
        return Err(EvalError::BatchArity {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    let mut pairs = Vec::with_capacity(annotations.len());
    let mut iter = vectors.into_iter();
    for a in annotations.iter() {
        let correct_vec = iter.next().expect("arity checked");
        let error_vec = iter.next().expect("arity checked");
        pairs.push(EmbeddedPair::new(correct_vec, error_vec, a.clone()));
    }
    EmbeddedPairSet::new(pairs)
}

/// Cosine similarity; zero-magnitude vectors yield 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for i in 0..n {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    let magnitude = norm_a.sqrt() * norm_b.sqrt();
    if magnitude == 0.0 {
        0.0
    } else {
        dot / magnitude
    }
}

/// Exact brute-force k-nearest-neighbor search over the pair set's correct
/// vectors under cosine distance (1 - cos). Returns the indices of the
/// `min(k, n)` nearest entries; equidistant entries are ordered by ascending
/// index.
pub fn find_knn(query: &[f64], pairs: &EmbeddedPairSet, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = pairs
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| (1.0 - cosine_similarity(query, &p.correct_vec), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, i)| i).collect()
}

/// How the per-neighbor alignment term is computed. `MaxCosine` scores each
/// neighbor by the cosine of the two transformation vectors and is the
/// default; `OneMinusCosine` is the compatibility reading that scores
/// 1 - cosine instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SEpaMode {
    #[default]
    MaxCosine,
    OneMinusCosine,
}

fn epa_term(generated: &EmbeddedPair, real: &EmbeddedPairSet, k: usize, mode: SEpaMode) -> f64 {
    let neighbors = find_knn(&generated.correct_vec, real, k);
    neighbors
        .into_iter()
        .map(|i| {
            let cos = cosine_similarity(&real.pairs()[i].delta, &generated.delta);
            match mode {
                SEpaMode::MaxCosine => cos,
                SEpaMode::OneMinusCosine => 1.0 - cos,
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn validate_epa_inputs(
    generated: &EmbeddedPairSet,
    real: &EmbeddedPairSet,
    k: usize,
) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if generated.is_empty() || real.is_empty() {
        return Err(EvalError::EmptyPairSet);
    }
    if generated.dimension() != real.dimension() {
        return Err(EvalError::DimensionMismatch {
            a: generated.dimension(),
            b: real.dimension(),
        });
    }
    Ok(())
}

/// Sequential per-pair alignment scores; always available regardless of the
/// `parallel` feature (the benches compare the two paths).
pub fn s_epa_scores_seq(
    generated: &EmbeddedPairSet,
    real: &EmbeddedPairSet,
    k: usize,
    mode: SEpaMode,
) -> Result<Vec<f64>, EvalError> {
    validate_epa_inputs(generated, real, k)?;
    Ok(generated
        .pairs()
        .iter()
        .map(|g| epa_term(g, real, k, mode))
        .collect())
}

/// Per-pair alignment scores, data-parallel when the `parallel` feature is
/// enabled. Terms are collected in pair order and reduced sequentially, so
/// the result is bit-identical across thread counts.
#[cfg(feature = "parallel")]
pub fn s_epa_scores(
    generated: &EmbeddedPairSet,
    real: &EmbeddedPairSet,
    k: usize,
    mode: SEpaMode,
) -> Result<Vec<f64>, EvalError> {
    validate_epa_inputs(generated, real, k)?;
    Ok(generated
        .pairs()
        .par_iter()
        .map(|g| epa_term(g, real, k, mode))
        .collect())
}

#[cfg(not(feature = "parallel"))]
pub fn s_epa_scores(
    generated: &EmbeddedPairSet,
    real: &EmbeddedPairSet,
    k: usize,
    mode: SEpaMode,
) -> Result<Vec<f64>, EvalError> {
    s_epa_scores_seq(generated, real, k, mode)
}

/// Mean over generated pairs of the best alignment between the generated
/// transformation vector and the transformation vectors of the k nearest
/// real pairs (nearest by correct-value embedding). A generated pair that is
/// literally present in the real set aligns with itself, so a generated set
/// that is a subset of the real set scores 1.
pub fn s_epa(
    generated: &EmbeddedPairSet,
    real: &EmbeddedPairSet,
    k: usize,
    mode: SEpaMode,
) -> Result<f64, EvalError> {
    let scores = s_epa_scores(generated, real, k, mode)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn validate_labels(p: &Distribution, q: &Distribution) -> Result<(), EvalError> {
    if !p.same_labels(q) {
        return Err(EvalError::LabelMismatch {
            a: p.labels().to_vec(),
            b: q.labels().to_vec(),
        });
    }
    Ok(())
}

/// Per-label min/max ratio averaged over all labels:
/// `(1/|C|) * sum(min(p,q) / (max(p,q) + epsilon))`. Labels where both
/// masses are zero contribute 0.
pub fn weighted_jaccard(
    p: &Distribution,
    q: &Distribution,
    epsilon: f64,
) -> Result<f64, EvalError> {
    validate_labels(p, q)?;
    if epsilon <= 0.0 {
        return Err(EvalError::Config("epsilon must be positive".into()));
    }
    let n = p.labels().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&a, &b)| a.min(b) / (a.max(b) + epsilon))
        .sum();
    Ok(sum / n as f64)
}

/// Like [`weighted_jaccard`], but averaging only over labels with any mass
/// (`p + q > 0`).
pub fn weighted_jaccard_on_support(
    p: &Distribution,
    q: &Distribution,
    epsilon: f64,
) -> Result<f64, EvalError> {
    validate_labels(p, q)?;
    if epsilon <= 0.0 {
        return Err(EvalError::Config("epsilon must be positive".into()));
    }
    let supported: Vec<(f64, f64)> = p
        .mass()
        .iter()
        .zip(q.mass())
        .filter(|&(&a, &b)| a + b > 0.0)
        .map(|(&a, &b)| (a, b))
        .collect();
    if supported.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = supported
        .iter()
        .map(|&(a, b)| a.min(b) / (a.max(b) + epsilon))
        .sum();
    Ok(sum / supported.len() as f64)
}

fn kl_divergence_base2(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            total += a * (a / b).log2();
        }
    }
    total
}

/// Jensen-Shannon divergence with base-2 logarithms, so the result lies in
/// [0, 1]: the symmetric smoothed relative entropy against the midpoint
/// distribution. Reports scale it by 100.
pub fn js_divergence(x: &Distribution, y: &Distribution) -> Result<f64, EvalError> {
    validate_labels(x, y)?;
    if x.is_empty() || y.is_empty() {
        return Err(EvalError::EmptyDistribution);
    }
    let midpoint: Vec<f64> = x
        .mass()
        .iter()
        .zip(y.mass())
        .map(|(&a, &b)| (a + b) / 2.0)
        .collect();
    Ok(0.5 * kl_divergence_base2(x.mass(), &midpoint)
        + 0.5 * kl_divergence_base2(y.mass(), &midpoint))
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnShare {
    pub real: f64,
    pub generated: f64,
    pub jaccard_term: f64,
}

/// The metric report emitted by the evaluator.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub s_epa: BTreeMap<usize, f64>,
    pub jaccard: f64,
    pub js_divergence_percent: f64,
    pub per_column: BTreeMap<String, ColumnShare>,
    pub fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct MetricOptions {
    pub ks: Vec<usize>,
    pub epsilon: f64,
    pub mode: SEpaMode,
    /// Restrict the Jaccard average to columns that carry any error mass.
    pub restrict_support: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            ks: vec![1, 5, 10, 20],
            epsilon: 1e-10,
            mode: SEpaMode::default(),
            restrict_support: false,
        }
    }
}

/// Computes the full metric report between a real and a generated annotation
/// set over the same schema.
pub fn metric_report(
    real: &AnnotationCollection,
    generated: &AnnotationCollection,
    schema: &[String],
    provider: &dyn EmbeddingProvider,
    options: &MetricOptions,
) -> Result<MetricReport, EvalError> {
    let real_pairs = build_pair_set(real, provider)?;
    let generated_pairs = build_pair_set(generated, provider)?;

    let mut s_epa_by_k = BTreeMap::new();
    for &k in &options.ks {
        s_epa_by_k.insert(
            k,
            s_epa(&generated_pairs, &real_pairs, k, options.mode)?,
        );
    }

    let real_columns = column_error_distribution(real, schema);
    let generated_columns = column_error_distribution(generated, schema);
    let jaccard = if options.restrict_support {
        weighted_jaccard_on_support(&real_columns, &generated_columns, options.epsilon)?
    } else {
        weighted_jaccard(&real_columns, &generated_columns, options.epsilon)?
    };

    let js = js_divergence(
        &type_error_distribution(real),
        &type_error_distribution(generated),
    )?;

    let mut per_column = BTreeMap::new();
    for (i, label) in real_columns.labels().iter().enumerate() {
        let p = real_columns.mass()[i];
        let q = generated_columns.mass()[i];
        per_column.insert(
            label.clone(),
            ColumnShare {
                real: p,
                generated: q,
                jaccard_term: p.min(q) / (p.max(q) + options.epsilon),
            },
        );
    }

    let mut fingerprints = BTreeMap::new();
    fingerprints.insert("embedding_provider".to_owned(), provider.fingerprint());

    Ok(MetricReport {
        s_epa: s_epa_by_k,
        jaccard,
        js_divergence_percent: js * 100.0,
        per_column,
        fingerprints,
    })
}

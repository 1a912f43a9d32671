//! Text embedding interface and the default feature-hashing embedder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{fnv1a, normalize};

/// A finite, fixed-dimension dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite values"));
        }
        Ok(Self(values))
    }

    /// Builds a unit-norm embedding; fails on the zero vector.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        for v in &mut values {
            *v /= norm;
        }
        Self::new(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Anything that maps text to a dense vector of fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Raw (not necessarily normalized) vector for a non-empty text.
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>>;
}

/// Embeds `text` with `embedder`, checking it against the index dimension and
/// L2-normalizing the result.
pub fn embed(text: &str, embedder: &dyn Embedder, index_dim: usize) -> Result<Embedding> {
    if text.is_empty() {
        return Err(Error::Empty("text"));
    }
    if embedder.dim() != index_dim {
        return Err(Error::Config(format!(
            "embedder dimension {} does not match index dimension {index_dim}",
            embedder.dim()
        )));
    }
    let raw = embedder.embed_raw(text)?;
    if raw.len() != index_dim {
        return Err(Error::Config(format!(
            "embedder produced {} values, expected {index_dim}",
            raw.len()
        )));
    }
    Embedding::normalized(raw)
}

/// Signed feature hashing of character n-grams and whole words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    /// Weight of whole-word features relative to a single n-gram.
    pub word_weight: f32,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            min_n: 3,
            max_n: 5,
            word_weight: 2.0,
        }
    }

    fn add_feature(&self, out: &mut [f32], feature: &[u8], weight: f32) {
        let h = fnv1a(feature);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        out[bucket] += sign * weight;
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(768)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>> {
        if text.is_empty() {
            return Err(Error::Empty("text"));
        }
        if self.dim == 0 || self.min_n == 0 || self.min_n > self.max_n {
            return Err(Error::Config("invalid hashing embedder parameters".into()));
        }
        let mut norm = normalize(text);
        if norm.is_empty() {
            // punctuation-only input still gets a deterministic vector
            norm = text.to_lowercase();
        }
        let mut out = vec![0.0f32; self.dim];
        for word in norm.split_whitespace() {
            let mut key = Vec::with_capacity(word.len() + 2);
            key.push(b'#');
            key.extend_from_slice(word.as_bytes());
            self.add_feature(&mut out, &key, self.word_weight);

            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for n in self.min_n..=self.max_n {
                if padded.len() < n {
                    break;
                }
                for gram in padded.windows(n) {
                    let s: String = gram.iter().collect();
                    self.add_feature(&mut out, s.as_bytes(), 1.0);
                }
            }
        }
        if out.iter().all(|&v| v == 0.0) {
            // every feature cancelled out; fall back to the raw bytes
            self.add_feature(&mut out, norm.as_bytes(), 1.0);
        }
        Ok(out)
    }
}

pub fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for j in 0..8 {
            acc[j] += a[base + j] * b[base + j];
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for j in 0..8 {
            let d = a[base + j] - b[base + j];
            acc[j] += d * d;
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum
}

/// Cosine similarity; zero vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

//! Product quantization of residual vectors.

use serde::{Deserialize, Serialize};

use crate::embed::squared_distance;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};

/// Codewords per sub-quantizer; one byte per sub-block code.
pub const CODEWORDS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqCodebook {
    m: usize,
    sub_dim: usize,
    /// `m * CODEWORDS * sub_dim` values; block-major, then codeword-major.
    codewords: Vec<f32>,
    trained: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PqTrainParams {
    pub iterations: usize,
    pub seed: u64,
}

impl PqCodebook {
    /// An untrained codebook of the right shape.
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "dimension {dim} is not divisible by sub-quantizer count {m}"
            )));
        }
        let sub_dim = dim / m;
        Ok(Self {
            m,
            sub_dim,
            codewords: vec![0.0; m * CODEWORDS * sub_dim],
            trained: false,
        })
    }

    /// Wraps explicit codewords, e.g. from a file or a test fixture.
    pub fn from_codewords(dim: usize, m: usize, codewords: Vec<f32>) -> Result<Self> {
        let mut cb = Self::new(dim, m)?;
        if codewords.len() != cb.codewords.len() {
            return Err(Error::Format(format!(
                "expected {} codeword values, got {}",
                cb.codewords.len(),
                codewords.len()
            )));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite codeword".into()));
        }
        cb.codewords = codewords;
        cb.trained = true;
        Ok(cb)
    }

    /// Trains one 256-way k-means per sub-block on `residuals` (row-major).
    pub fn train(&mut self, residuals: &[f32], params: PqTrainParams) -> Result<()> {
        let dim = self.dim();
        if residuals.is_empty() || !residuals.len().is_multiple_of(dim) {
            return Err(Error::invalid("PQ training needs a non-empty residual matrix"));
        }
        let n = residuals.len() / dim;
        let mut block = vec![0.0f32; n * self.sub_dim];
        for b in 0..self.m {
            for i in 0..n {
                let src = &residuals[i * dim + b * self.sub_dim..i * dim + (b + 1) * self.sub_dim];
                block[i * self.sub_dim..(i + 1) * self.sub_dim].copy_from_slice(src);
            }
            let fit = kmeans(
                &block,
                self.sub_dim,
                &KMeansParams {
                    k: CODEWORDS,
                    max_iter: params.iterations,
                    tol: 1e-6,
                    seed: params.seed.wrapping_add(b as u64),
                },
            )?;
            let len = CODEWORDS * self.sub_dim;
            self.codewords[b * len..(b + 1) * len].copy_from_slice(&fit.centroids);
        }
        self.trained = true;
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn codewords(&self) -> &[f32] {
        &self.codewords
    }

    #[inline]
    pub fn codeword(&self, block: usize, code: u8) -> &[f32] {
        let start = (block * CODEWORDS + code as usize) * self.sub_dim;
        &self.codewords[start..start + self.sub_dim]
    }

    /// Nearest codeword per sub-block for a residual vector.
    pub fn encode_residual(&self, residual: &[f32]) -> Result<Vec<u8>> {
        let mut code = vec![0u8; self.m];
        self.encode_residual_into(residual, &mut code)?;
        Ok(code)
    }

    pub(crate) fn encode_residual_into(&self, residual: &[f32], code: &mut [u8]) -> Result<()> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if residual.len() != self.dim() {
            return Err(Error::invalid("residual dimension does not match codebook"));
        }
        for (b, slot) in code.iter_mut().enumerate() {
            let sub = &residual[b * self.sub_dim..(b + 1) * self.sub_dim];
            let mut best = 0usize;
            let mut best_d = f32::INFINITY;
            for c in 0..CODEWORDS {
                let d = squared_distance(sub, self.codeword(b, c as u8));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *slot = best as u8;
        }
        Ok(())
    }

    /// Encodes `vector - centroid`.
    pub fn encode(&self, vector: &[f32], centroid: &[f32]) -> Result<Vec<u8>> {
        if vector.len() != centroid.len() {
            return Err(Error::invalid("vector and centroid dimensions differ"));
        }
        let residual: Vec<f32> = vector.iter().zip(centroid).map(|(v, c)| v - c).collect();
        self.encode_residual(&residual)
    }

    /// Residual approximation for a code.
    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if code.len() != self.m {
            return Err(Error::invalid(format!(
                "code has {} bytes, codebook expects {}",
                code.len(),
                self.m
            )));
        }
        let mut out = Vec::with_capacity(self.dim());
        for (b, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.codeword(b, c));
        }
        Ok(out)
    }

    /// Inner products of each query sub-block with every codeword:
    /// `table[b * 256 + c] = <q_b, codeword(b, c)>`.
    pub fn inner_product_table(&self, query: &[f32]) -> Vec<f32> {
        let mut table = vec![0.0f32; self.m * CODEWORDS];
        for b in 0..self.m {
            let q = &query[b * self.sub_dim..(b + 1) * self.sub_dim];
            let cws = &self.codewords[b * CODEWORDS * self.sub_dim..(b + 1) * CODEWORDS * self.sub_dim];
            for (c, cw) in cws.chunks_exact(self.sub_dim).enumerate() {
                table[b * CODEWORDS + c] = q.iter().zip(cw).map(|(x, y)| x * y).sum();
            }
        }
        table
    }
}

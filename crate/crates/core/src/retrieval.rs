//! The two-stage query path: sample clusters, score their codes
//! approximately, rescore the best fraction (never fewer than k) exactly,
//! and keep the top k.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamic_sampler::{fallback_sample, sample_clusters, SamplerConfig, SamplerState};
use crate::error::{Error, Result};
use crate::vector_index::{ClusterIndex, ScoredDoc, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub sampler: SamplerConfig,
    pub top_k: usize,
    pub rerank_fraction: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            top_k: 10,
            rerank_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<ScoredDoc>,
    /// Probed clusters and their candidate budgets.
    pub probed: Vec<(usize, usize)>,
    /// Clusters owning at least one returned document.
    pub hit_clusters: Vec<usize>,
    /// Mean exact score per cluster over the rescored candidates.
    pub cluster_quality: Vec<(usize, f64)>,
    pub used_fallback: bool,
    pub tau: f64,
}

/// One query against a fixed sampler state; the state is not modified.
pub fn search(index: &ClusterIndex, query: &[f32], state: &SamplerState, top_k: usize, rerank_fraction: f64) -> Result<SearchOutcome> {
    let draw = sample_clusters(query, index, state)?;
    let mut used_fallback = draw.needs_fallback;
    let mut candidates = if used_fallback {
        Vec::new()
    } else {
        index.approx_hits(query, &draw.pairs())?
    };
    if candidates.is_empty() {
        used_fallback = true;
        let mut rng = ChaCha8Rng::seed_from_u64(state.draw_seed(query) ^ 0xfa11_bac4);
        let picked = fallback_sample(index, state.config.budget, &mut rng)?;
        candidates = index.approx_hits_for(query, &picked);
    }
    let exact = index.rerank_hits(query, &candidates, rerank_fraction, top_k)?;

    let mut quality: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(o, s) in &exact {
        let e = quality.entry(index.cluster_of_ordinal(o)).or_default();
        e.0 += f64::from(s);
        e.1 += 1;
    }
    let top = &exact[..top_k.min(exact.len())];
    let mut hit_clusters: Vec<usize> = top.iter().map(|&(o, _)| index.cluster_of_ordinal(o)).collect();
    hit_clusters.sort_unstable();
    hit_clusters.dedup();

    Ok(SearchOutcome {
        results: index.to_scored(top, Stage::Exact),
        probed: if draw.needs_fallback { Vec::new() } else { draw.pairs() },
        hit_clusters,
        cluster_quality: quality.into_iter().map(|(c, (sum, n))| (c, sum / n as f64)).collect(),
        used_fallback,
        tau: draw.tau,
    })
}

/// A sequence of queries sharing sampler state: each call advances the step
/// counter and feeds hits back into the relevance weights.
#[derive(Debug, Clone)]
pub struct SearchSession<'a> {
    index: &'a ClusterIndex,
    state: SamplerState,
    top_k: usize,
    rerank_fraction: f64,
}

impl<'a> SearchSession<'a> {
    pub fn new(index: &'a ClusterIndex, config: &SearchConfig) -> Result<Self> {
        Ok(Self {
            index,
            state: SamplerState::for_index(index, config.sampler.clone())?,
            top_k: config.top_k,
            rerank_fraction: config.rerank_fraction,
        })
    }

    /// Resumes from a saved state.
    pub fn resume(index: &'a ClusterIndex, state: SamplerState, top_k: usize, rerank_fraction: f64) -> Result<Self> {
        if state.n_clusters() != index.n_clusters() {
            return Err(Error::Config("sampler state does not match index".into()));
        }
        Ok(Self {
            index,
            state,
            top_k,
            rerank_fraction,
        })
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn index(&self) -> &'a ClusterIndex {
        self.index
    }

    pub fn search(&mut self, query: &[f32]) -> Result<SearchOutcome> {
        let outcome = search(self.index, query, &self.state, self.top_k, self.rerank_fraction)?;
        self.state.update_weights(&outcome.hit_clusters)?;
        self.state.update_quality(&outcome.cluster_quality)?;
        self.state.t += 1;
        Ok(outcome)
    }
}

/// Independent queries against one state snapshot, fanned out over threads.
/// Result `i` equals `search(index, queries[i], state, ..)`.
pub fn batch_search(index: &ClusterIndex, queries: &[Vec<f32>], state: &SamplerState, config: &SearchConfig) -> Result<Vec<Vec<ScoredDoc>>> {
    if let Some(q) = queries.iter().find(|q| q.len() != index.dim()) {
        return Err(Error::invalid(format!(
            "batch contains a query of dimension {} for a {}-dimensional index",
            q.len(),
            index.dim()
        )));
    }
    queries
        .par_iter()
        .map(|q| search(index, q, state, config.top_k, config.rerank_fraction).map(|o| o.results))
        .collect()
}

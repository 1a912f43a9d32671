//! Engine configuration file.
//!
//! A TOML document with one table per subsystem; every key is optional and
//! falls back to its default:
//!
//! ```toml
//! [index]            # dim, n_clusters, min_doc, m, kmeans_iterations, pq_iterations, pq_train_cap, seed
//! [embedder]         # dim, min_n, max_n, word_weight
//! [pipeline]         # top_k, max_rounds, routing_enabled, stie_enabled, rdra_enabled, answer_style, score_ema, seed
//! [pipeline.search]  # top_k, rerank_fraction
//! [pipeline.search.sampler]           # alpha, budget, floor_ratio, greedy_head, seed
//! [pipeline.search.sampler.schedule]  # tau0, tau_min, gamma, t_max
//! [pipeline.stie]    # thresholds, n_max
//! [pipeline.stie.termination]         # overlap_stop, conf_ceiling, min_new_info
//! [pipeline.rewards] # r_eff_local, r_info_web, outcome_novelty
//! [router]           # beta1, beta2, lr, seed
//! [router.bandit]    # updates, steps_per_episode
//! [curriculum]       # turning_epoch, noise_c, base_size
//! [rewards]          # short, long
//! [rewards.lengths]  # short, long
//! [corpus]           # n_docs, n_chains, min_hops, max_hops, vocab_size, noise_fraction, web_only_fraction, seed
//! [vectors]          # n_docs, dim, n_topics, doc_spread, query_noise, seed
//! [backends]         # local_latency_ms, web_latency_ms
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::RewardWeights;
use crate::embed::HashingEmbedder;
use crate::error::{Error, Result};
use crate::harness::{text_index_params, CorpusSpec, VectorCorpusSpec};
use crate::pipeline::PipelineConfig;
use crate::routing::{BanditConfig, RouterPolicy, FEATURES};
use crate::vector_index::IndexParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub seed: u64,
    pub bandit: BanditConfig,
}

impl Default for RouterConfig {
    fn default() -> Self {
        let p = RouterPolicy::default();
        Self {
            beta1: p.beta1,
            beta2: p.beta2,
            lr: p.lr,
            seed: p.seed,
            bandit: BanditConfig::default(),
        }
    }
}

impl RouterConfig {
    /// A fresh, untrained policy with these settings.
    pub fn policy(&self) -> RouterPolicy {
        RouterPolicy::new(FEATURES, self.beta1, self.beta2, self.lr, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub turning_epoch: usize,
    pub noise_c: f64,
    pub base_size: Option<usize>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            turning_epoch: 5,
            noise_c: 0.1,
            base_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Simulated per-call latency added to measured time.
    pub local_latency_ms: f64,
    pub web_latency_ms: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            local_latency_ms: 0.0,
            web_latency_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub index: IndexParams,
    pub embedder: HashingEmbedder,
    pub pipeline: PipelineConfig,
    pub router: RouterConfig,
    pub curriculum: CurriculumConfig,
    pub rewards: RewardWeights,
    pub corpus: CorpusSpec,
    pub vectors: VectorCorpusSpec,
    pub backends: BackendConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let index = text_index_params(42);
        Self {
            embedder: HashingEmbedder::new(index.dim),
            index,
            pipeline: PipelineConfig::default(),
            router: RouterConfig::default(),
            curriculum: CurriculumConfig::default(),
            rewards: RewardWeights::default(),
            corpus: CorpusSpec::default(),
            vectors: VectorCorpusSpec::default(),
            backends: BackendConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedder.dim != self.index.dim {
            return Err(Error::Config(format!(
                "embedder dimension {} differs from index dimension {}",
                self.embedder.dim, self.index.dim
            )));
        }
        if self.index.dim == 0 || self.index.m == 0 || !self.index.dim.is_multiple_of(self.index.m) {
            return Err(Error::Config("index dimension must be a positive multiple of m".into()));
        }
        self.pipeline.validate()?;
        self.router.policy().validate()?;
        self.rewards.validate()?;
        self.corpus.validate()?;
        if self.curriculum.turning_epoch == 0 || !(self.curriculum.noise_c > 0.0) {
            return Err(Error::Config("curriculum needs turning_epoch >= 1 and noise_c > 0".into()));
        }
        if self.backends.local_latency_ms < 0.0 || self.backends.web_latency_ms < 0.0 {
            return Err(Error::Config("injected latencies must be non-negative".into()));
        }
        Ok(())
    }

    /// Re-seeds every seeded component from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.index.seed = seed;
        self.pipeline.seed = seed;
        self.pipeline.search.sampler.seed = seed;
        self.router.seed = seed;
        self.corpus.seed = seed;
        self.vectors.seed = seed;
        self
    }
}

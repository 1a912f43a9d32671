//! Per-query cluster selection.
//!
//! Each cluster's selection probability is a tempered softmax of its centroid
//! similarity, scaled by an EMA relevance weight and lifted to a guaranteed
//! floor. Temperature anneals with the number of retrieval calls made in the
//! session. Clusters are drawn without replacement until their posting lists
//! cover the candidate budget, and the budget is then split among the drawn
//! clusters in proportion to `weight * quality`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{fnv1a, mix_seed};
use crate::vector_index::ClusterIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub tau0: f64,
    pub tau_min: f64,
    pub gamma: f64,
    pub t_max: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            tau0: 1.2,
            tau_min: 0.3,
            gamma: 1.0,
            t_max: 200,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > self.tau_min && self.tau_min > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must satisfy tau0 > tau_min > 0 (got {} and {})",
                self.tau0, self.tau_min
            )));
        }
        if !(self.gamma > 0.0) || self.t_max == 0 {
            return Err(Error::Config("gamma must be positive and t_max at least 1".into()));
        }
        Ok(())
    }
}

/// `max(tau_min, tau0 * (1 - min(t, t_max) / t_max)^gamma)`.
pub fn temperature(t: u64, schedule: &AnnealSchedule) -> f64 {
    let progress = t.min(schedule.t_max) as f64 / schedule.t_max as f64;
    (schedule.tau0 * (1.0 - progress).powf(schedule.gamma)).max(schedule.tau_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub schedule: AnnealSchedule,
    /// EMA smoothing for relevance weights and cluster quality.
    pub alpha: f64,
    /// Global candidate budget.
    pub budget: usize,
    /// Minimum per-draw selection probability of any cluster.
    pub floor_ratio: f64,
    /// Number of most-probable clusters always taken before random draws.
    pub greedy_head: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: AnnealSchedule::default(),
            alpha: 0.9,
            budget: 1000,
            floor_ratio: 1.0 / 2048.0,
            greedy_head: 2,
            seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        if self.budget == 0 {
            return Err(Error::Config("candidate budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.floor_ratio) {
            return Err(Error::Config(format!("floor ratio {} outside [0, 1)", self.floor_ratio)));
        }
        Ok(())
    }
}

/// Mutable per-session sampling state; serializable for session resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub config: SamplerConfig,
    /// Retrieval calls made so far in this session.
    pub t: u64,
    pub weights: Vec<f64>,
    /// EMA of the mean exact score a cluster contributed; starts at 1.
    pub quality: Vec<f64>,
}

impl SamplerState {
    pub fn new(n_clusters: usize, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            weights: vec![1.0; n_clusters],
            quality: vec![1.0; n_clusters],
        })
    }

    pub fn for_index(index: &ClusterIndex, config: SamplerConfig) -> Result<Self> {
        Self::new(index.n_clusters(), config)
    }

    pub fn n_clusters(&self) -> usize {
        self.weights.len()
    }

    pub fn temperature(&self) -> f64 {
        temperature(self.t, &self.config.schedule)
    }

    /// `w_i <- alpha * w_i + (1 - alpha) * [i in hits]`.
    pub fn update_weights(&mut self, hits: &[usize]) -> Result<()> {
        let mut hit = vec![false; self.weights.len()];
        for &c in hits {
            *hit.get_mut(c).ok_or(Error::UnknownCluster(c))? = true;
        }
        let a = self.config.alpha;
        for (w, h) in self.weights.iter_mut().zip(hit) {
            *w = (a * *w + (1.0 - a) * f64::from(u8::from(h))).clamp(0.0, 1.0);
        }
        Ok(())
    }

    /// Folds observed mean exact scores into the per-cluster quality EMA.
    pub fn update_quality(&mut self, observed: &[(usize, f64)]) -> Result<()> {
        let a = self.config.alpha;
        for &(c, score) in observed {
            let q = self.quality.get_mut(c).ok_or(Error::UnknownCluster(c))?;
            *q = a * *q + (1.0 - a) * score.clamp(0.0, 1.0);
        }
        Ok(())
    }

    /// Seed for one draw; depends on the session seed, the step and the
    /// query, never on earlier draws, so batched and single calls agree.
    pub fn draw_seed(&self, query: &[f32]) -> u64 {
        let bytes: Vec<u8> = query.iter().flat_map(|v| v.to_le_bytes()).collect();
        mix_seed(mix_seed(self.config.seed, self.t), fnv1a(&bytes))
    }
}

/// Integer budgets `floor(n * m_i / sum m)` with the remainder handed out by
/// largest fractional part (ties to the lower index). `None` when the total
/// mass is zero or not finite.
pub fn allocate_candidates(weights: &[f64], quality: &[f64], n: usize) -> Option<Vec<usize>> {
    if weights.len() != quality.len() || weights.is_empty() {
        return None;
    }
    let mass: Vec<f64> = weights.iter().zip(quality).map(|(w, q)| (w * q).max(0.0)).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let shares: Vec<f64> = mass.iter().map(|m| n as f64 * m / total).collect();
    let mut budgets: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = budgets.iter().sum();
    let mut remainder = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        budgets[i] += 1;
        remainder -= 1;
    }
    Some(budgets)
}

/// The floor actually enforced for `k` clusters: the requested ratio, or
/// `1 / (2k)` when `k * ratio` would claim more than half the mass.
pub fn effective_floor(k: usize, floor_ratio: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k as f64 * floor_ratio > 0.5 {
        0.5 / k as f64
    } else {
        floor_ratio
    }
}

/// Raises every entry to at least `floor`, rescaling the rest proportionally
/// so the vector still sums to one.
fn water_fill(p: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        return;
    }
    let mut fixed = vec![false; p.len()];
    loop {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_mass: f64 = p.iter().zip(&fixed).filter(|(_, &f)| !f).map(|(v, _)| v).sum();
        let target = 1.0 - n_fixed as f64 * floor;
        let scale = if free_mass > 0.0 { target / free_mass } else { 0.0 };
        let mut changed = false;
        for (v, f) in p.iter_mut().zip(fixed.iter_mut()) {
            if *f {
                *v = floor;
            } else if *v * scale < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (v, f) in p.iter_mut().zip(&fixed) {
                if !*f {
                    *v *= scale;
                }
            }
            return;
        }
    }
}

/// Per-draw selection probabilities:
/// `p_i ∝ exp(sim_i / tau) * w_i`, then floored.
pub fn selection_distribution(similarities: &[f32], weights: &[f64], tau: f64, floor_ratio: f64) -> Vec<f64> {
    let k = similarities.len();
    if k == 0 {
        return Vec::new();
    }
    let max = similarities.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut p: Vec<f64> = similarities
        .iter()
        .zip(weights)
        .map(|(&s, &w)| (f64::from(s - max) / tau).exp() * w.max(0.0))
        .collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        p.iter_mut().for_each(|v| *v = 1.0 / k as f64);
    }
    water_fill(&mut p, effective_floor(k, floor_ratio));
    p
}

/// Draws one cluster from a selection distribution.
pub fn draw_one(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    match WeightedIndex::new(probabilities) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.random_range(0..probabilities.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDraw {
    /// Drawn clusters in draw order.
    pub clusters: Vec<usize>,
    /// Candidate budget per drawn cluster (same order); empty on fallback.
    pub budgets: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub tau: f64,
    /// Drawn clusters are empty or carry no allocation mass.
    pub needs_fallback: bool,
}

impl ClusterDraw {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.clusters.iter().copied().zip(self.budgets.iter().copied()).collect()
    }
}

/// Selects clusters to probe for `query` under `state` (not modified).
pub fn sample_clusters(query: &[f32], index: &ClusterIndex, state: &SamplerState) -> Result<ClusterDraw> {
    if state.n_clusters() != index.n_clusters() {
        return Err(Error::Config(format!(
            "sampler tracks {} clusters, index has {}",
            state.n_clusters(),
            index.n_clusters()
        )));
    }
    if query.len() != index.dim() {
        return Err(Error::invalid(format!(
            "query dimension {} does not match index dimension {}",
            query.len(),
            index.dim()
        )));
    }
    let cfg = &state.config;
    let tau = state.temperature();
    let sims = index.centroid_similarities(query);
    let probabilities = selection_distribution(&sims, &state.weights, tau, cfg.floor_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(state.draw_seed(query));
    let sizes = index.posting_sizes();
    let clusters = draw_until_covered(&probabilities, &sizes, cfg.budget, cfg.greedy_head, &mut rng);

    let covered: usize = clusters.iter().map(|&c| sizes[c]).sum();
    let floor = effective_floor(state.n_clusters(), cfg.floor_ratio);
    let weights: Vec<f64> = clusters.iter().map(|&c| state.weights[c].max(floor)).collect();
    let quality: Vec<f64> = clusters.iter().map(|&c| state.quality[c]).collect();
    let budgets = if covered == 0 {
        None
    } else {
        allocate_candidates(&weights, &quality, cfg.budget)
    };
    Ok(ClusterDraw {
        needs_fallback: budgets.is_none(),
        budgets: budgets.unwrap_or_default(),
        clusters,
        probabilities,
        tau,
    })
}

/// Takes the `head` most probable clusters, then draws the rest without
/// replacement until the drawn postings hold at least `budget` documents.
pub fn draw_until_covered(
    probabilities: &[f64],
    sizes: &[usize],
    budget: usize,
    head: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let k = probabilities.len();
    let mut taken = vec![false; k];
    let mut out = Vec::new();
    let mut covered = 0usize;

    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    for &c in ranked.iter().take(head) {
        if covered >= budget {
            return out;
        }
        taken[c] = true;
        out.push(c);
        covered += sizes[c];
    }

    let mut remaining: f64 = (0..k).filter(|&c| !taken[c]).map(|c| probabilities[c]).sum();
    while covered < budget && out.len() < k {
        let c = if remaining > 0.0 {
            let mut x = rng.random::<f64>() * remaining;
            let mut pick = None;
            for c in (0..k).filter(|&c| !taken[c]) {
                pick = Some(c);
                x -= probabilities[c];
                if x < 0.0 {
                    break;
                }
            }
            pick.expect("an untaken cluster exists")
        } else {
            let free: Vec<usize> = (0..k).filter(|&c| !taken[c]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[c] = true;
        remaining = (remaining - probabilities[c]).max(0.0);
        out.push(c);
        covered += sizes[c];
    }
    out
}

/// Uniform sample of `min(n, corpus)` document ordinals.
pub fn fallback_sample(index: &ClusterIndex, n: usize, rng: &mut impl Rng) -> Result<Vec<u32>> {
    if index.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let take = n.clamp(1, index.len());
    let mut picked: Vec<u32> = sample(rng, index.len(), take).into_iter().map(|i| i as u32).collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_endpoints() {
        let s = AnnealSchedule::default();
        assert_eq!(temperature(0, &s), 1.2);
        assert_eq!(temperature(s.t_max, &s), 0.3);
        assert!((temperature(s.t_max / 2, &s) - 0.6).abs() < 1e-12);
        assert_eq!(temperature(10 * s.t_max, &s), 0.3);
    }

    #[test]
    fn schedule_validation() {
        let mut s = AnnealSchedule::default();
        s.tau_min = 2.0;
        assert!(s.validate().is_err());
        s = AnnealSchedule { t_max: 0, ..Default::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn ema_arithmetic() {
        let mut st = SamplerState::new(2, SamplerConfig::default()).unwrap();
        st.weights = vec![0.5, 0.5];
        st.update_weights(&[0]).unwrap();
        assert!((st.weights[0] - 0.55).abs() < 1e-12);
        assert!((st.weights[1] - 0.45).abs() < 1e-12);
        assert!(matches!(st.update_weights(&[5]), Err(Error::UnknownCluster(5))));
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_candidates(&[1.0; 4], &[1.0; 4], 1000).unwrap(), vec![250; 4]);
        assert_eq!(allocate_candidates(&[3.0, 1.0], &[1.0, 1.0], 1000).unwrap(), vec![750, 250]);
        assert_eq!(allocate_candidates(&[1.0; 3], &[1.0; 3], 10).unwrap(), vec![4, 3, 3]);
        assert!(allocate_candidates(&[0.0, 0.0], &[1.0, 1.0], 10).is_none());
    }

    #[test]
    fn water_fill_respects_floor_and_mass() {
        let mut p = vec![0.97, 0.01, 0.02, 0.0];
        water_fill(&mut p, 0.05);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.05 - 1e-15));
        assert!((p[1] - 0.05).abs() < 1e-15 && (p[3] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn draw_stops_once_covered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = vec![0.1, 0.6, 0.3];
        let drawn = draw_until_covered(&p, &[500, 500, 500], 1000, 1, &mut rng);
        assert_eq!(drawn.len(), 2);
        assert_eq!(drawn[0], 1);
        let all = draw_until_covered(&p, &[1, 1, 1], 1000, 0, &mut rng);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }
}

//! Local-versus-web retrieval routing.
//!
//! A linear softmax policy over five context features picks the backend for
//! each retrieval. Rewards trade efficiency (local is cheap) against
//! information gain (web sees more), and the policy is trained with
//! REINFORCE against a mean-reward baseline.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Question length, round progress, novelty, local score EMA, bias.
pub const FEATURES: usize = 5;

/// Question token count at which the length feature saturates.
pub const QUESTION_LEN_SCALE: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Local,
    Web,
}

impl Route {
    fn index(self) -> usize {
        match self {
            Route::Local => 0,
            Route::Web => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    pub features: Vec<f64>,
}

impl RoutingState {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("routing features must be finite"));
        }
        Ok(Self { features })
    }

    pub fn from_context(question_tokens: usize, round: usize, max_rounds: usize, novelty: f64, local_score_ema: f64) -> Self {
        Self {
            features: vec![
                (question_tokens as f64 / QUESTION_LEN_SCALE).min(1.0),
                round as f64 / max_rounds.max(1) as f64,
                novelty.clamp(0.0, 1.0),
                local_score_ema.clamp(-1.0, 1.0),
                1.0,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Efficiency reward for a local retrieval.
    pub r_eff_local: f64,
    /// Information reward for a web retrieval.
    pub r_info_web: f64,
    /// Replace the constant information reward with the measured novelty of
    /// the retrieved documents (extension; off by default).
    pub outcome_novelty: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_eff_local: 0.42,
            r_info_web: 0.35,
            outcome_novelty: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub action: Route,
    pub r_eff: f64,
    pub r_info: f64,
    pub total: f64,
}

/// Constant per-action rewards combined as `beta1 * r_eff + beta2 * r_info`.
pub fn reward(action: Route, beta1: f64, beta2: f64) -> ActionOutcome {
    reward_with(action, beta1, beta2, &RewardConfig::default(), None)
}

/// Reward under `config`; `novelty` is used only in outcome mode.
pub fn reward_with(action: Route, beta1: f64, beta2: f64, config: &RewardConfig, novelty: Option<f64>) -> ActionOutcome {
    let r_eff = match action {
        Route::Local => config.r_eff_local,
        Route::Web => 0.0,
    };
    let r_info = match (config.outcome_novelty, novelty) {
        (true, Some(n)) => n.clamp(0.0, 1.0),
        _ => match action {
            Route::Web => config.r_info_web,
            Route::Local => 0.0,
        },
    };
    ActionOutcome {
        action,
        r_eff,
        r_info,
        total: beta1 * r_eff + beta2 * r_info,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: RoutingState,
    pub action: Route,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    /// Mean reward of the episode being applied.
    EpisodeMean,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub baseline: f64,
    pub mean_reward: f64,
    pub grad_norm: f64,
}

/// Policy parameters; serializes as the checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterPolicy {
    /// `theta[f][a]`: weight of feature `f` in the logit of action `a`.
    pub theta: Vec<[f64; 2]>,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub seed: u64,
    pub step: u64,
}

impl Default for RouterPolicy {
    fn default() -> Self {
        Self::new(FEATURES, 0.5, 0.5, 0.05, 0)
    }
}

fn softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let s = e0 + e1;
    (e0 / s, e1 / s)
}

impl RouterPolicy {
    pub fn new(n_features: usize, beta1: f64, beta2: f64, lr: f64, seed: u64) -> Self {
        Self {
            theta: vec![[0.0; 2]; n_features],
            beta1,
            beta2,
            lr,
            seed,
            step: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::Config("reward coefficients must be non-negative".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn logits(&self, features: &[f64]) -> Result<(f64, f64)> {
        if features.len() != self.theta.len() {
            return Err(Error::invalid(format!(
                "{} routing features for a policy over {}",
                features.len(),
                self.theta.len()
            )));
        }
        Ok(features
            .iter()
            .zip(&self.theta)
            .fold((0.0, 0.0), |(a, b), (x, w)| (a + x * w[0], b + x * w[1])))
    }

    /// `(p_local, p_web)`.
    pub fn policy_probs(&self, state: &RoutingState) -> Result<(f64, f64)> {
        let (z0, z1) = self.logits(&state.features)?;
        Ok(softmax2(z0, z1))
    }

    pub fn route(&self, state: &RoutingState, rng: &mut impl Rng) -> Result<Route> {
        let (p_local, _) = self.policy_probs(state)?;
        Ok(if rng.random::<f64>() < p_local {
            Route::Local
        } else {
            Route::Web
        })
    }

    /// `sum_t (R_t - b) * d/dtheta log pi(a_t | s_t)`, same shape as theta.
    pub fn surrogate_gradient(&self, episode: &[Step], baseline: f64) -> Result<Vec<[f64; 2]>> {
        let mut grad = vec![[0.0; 2]; self.theta.len()];
        for step in episode {
            let probs = self.policy_probs(&step.state)?;
            let advantage = step.reward - baseline;
            let a = step.action.index();
            for (g, &x) in grad.iter_mut().zip(&step.state.features) {
                for (b, p) in [probs.0, probs.1].into_iter().enumerate() {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    g[b] += advantage * x * (indicator - p);
                }
            }
        }
        Ok(grad)
    }

    /// `sum_t (R_t - b) * log pi(a_t | s_t)` — the objective whose gradient
    /// the update ascends.
    pub fn surrogate(&self, episode: &[Step], baseline: f64) -> Result<f64> {
        episode.iter().try_fold(0.0, |acc, step| {
            let probs = self.policy_probs(&step.state)?;
            let p = match step.action {
                Route::Local => probs.0,
                Route::Web => probs.1,
            };
            Ok(acc + (step.reward - baseline) * p.ln())
        })
    }

    /// One gradient step on an episode.
    pub fn update(&mut self, episode: &[Step], baseline: Baseline) -> Result<UpdateStats> {
        if episode.is_empty() {
            return Err(Error::Empty("episode"));
        }
        if episode.iter().any(|s| !s.reward.is_finite()) {
            return Err(Error::invalid("non-finite reward"));
        }
        let mean_reward = episode.iter().map(|s| s.reward).sum::<f64>() / episode.len() as f64;
        let b = match baseline {
            Baseline::EpisodeMean => mean_reward,
            Baseline::Fixed(b) => b,
        };
        let grad = self.surrogate_gradient(episode, b)?;
        let grad_norm = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        for (w, g) in self.theta.iter_mut().zip(&grad) {
            w[0] += self.lr * g[0];
            w[1] += self.lr * g[1];
        }
        self.step += 1;
        Ok(UpdateStats {
            baseline: b,
            mean_reward,
            grad_norm,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub step: u64,
    pub p_local: f64,
    pub mean_reward: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub updates: usize,
    /// Routing decisions per episode (one per reasoning round).
    pub steps_per_episode: usize,
    pub rewards: RewardConfig,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            updates: 2000,
            steps_per_episode: 8,
            rewards: RewardConfig::default(),
        }
    }
}

/// The context used when the routing problem has no state: every feature
/// at a neutral constant with the bias at 1.
pub fn stateless_context() -> RoutingState {
    RoutingState::from_context(16, 4, 8, 0.5, 0.5)
}

/// Trains `policy` on the stateless routing bandit with constant rewards.
pub fn train_bandit(policy: &mut RouterPolicy, config: &BanditConfig) -> Result<Vec<TrainingRow>> {
    policy.validate()?;
    if config.steps_per_episode == 0 {
        return Err(Error::Config("episodes need at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let state = stateless_context();
    let mut log = Vec::with_capacity(config.updates);
    for _ in 0..config.updates {
        let episode = (0..config.steps_per_episode)
            .map(|_| {
                let action = policy.route(&state, &mut rng)?;
                let outcome = reward_with(action, policy.beta1, policy.beta2, &config.rewards, None);
                Ok(Step {
                    state: state.clone(),
                    action,
                    reward: outcome.total,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = policy.update(&episode, Baseline::EpisodeMean)?;
        log.push(TrainingRow {
            step: policy.step,
            p_local: policy.policy_probs(&state)?.0,
            mean_reward: stats.mean_reward,
            grad_norm: stats.grad_norm,
        });
    }
    Ok(log)
}

pub fn write_training_csv(rows: &[TrainingRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "step,p_local,mean_reward,grad_norm")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.step, r.p_local, r.mean_reward, r.grad_norm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_policy_is_uniform() {
        let p = RouterPolicy::default();
        assert_eq!(p.policy_probs(&stateless_context()).unwrap(), (0.5, 0.5));
        assert!(p.policy_probs(&RoutingState::new(vec![1.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn strong_local_logit() {
        let mut p = RouterPolicy::default();
        p.theta[4] = [10.0, 0.0];
        assert!(p.policy_probs(&stateless_context()).unwrap().0 > 0.9999);
    }

    #[test]
    fn constant_rewards() {
        assert!((reward(Route::Local, 0.5, 0.5).total - 0.21).abs() < 1e-12);
        assert!((reward(Route::Web, 0.5, 0.5).total - 0.175).abs() < 1e-12);
        assert_eq!(reward(Route::Local, 0.0, 1.0).total, 0.0);
        assert!((reward(Route::Web, 0.0, 1.0).total - 0.35).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_leaves_theta() {
        let mut p = RouterPolicy::default();
        p.theta[0] = [0.3, -0.2];
        let before = p.theta.clone();
        let ep = vec![Step {
            state: stateless_context(),
            action: Route::Web,
            reward: 0.7,
        }];
        p.update(&ep, Baseline::Fixed(0.7)).unwrap();
        assert_eq!(p.theta, before);
        assert!(p.update(&[], Baseline::EpisodeMean).is_err());
        let bad = vec![Step { reward: f64::NAN, ..ep[0].clone() }];
        assert!(p.update(&bad, Baseline::EpisodeMean).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = RouterPolicy::new(FEATURES, 0.4, 0.6, 0.01, 9);
        p.theta[2] = [0.25, -1.5];
        p.step = 17;
        assert_eq!(RouterPolicy::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}

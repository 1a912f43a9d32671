//! Redundancy control over multi-round candidate answers.
//!
//! Answers are compared lexically: the overlap of `y_t` with an earlier
//! answer is the share of `y_t`'s token bag that the earlier answer already
//! contains (asymmetric). A new answer is valid only if it differs enough
//! from each of the last three answers, with stricter thresholds further
//! back. Invalid answers may be swapped for a more confident alternative;
//! answers repeated `n_max` times are blocked for the rest of the session.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize, token_bag};

/// Lowercased, punctuation-free, deduplicated token set.
pub fn tokenize_bag(text: &str) -> BTreeSet<String> {
    token_bag(text)
}

/// Identity used for repetition counting and blocking.
pub fn answer_key(text: &str) -> String {
    normalize(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CandidateFields")]
pub struct AnswerCandidate {
    pub text: String,
    pub confidence: f64,
    pub round: usize,
    #[serde(skip)]
    bag: BTreeSet<String>,
}

#[derive(Deserialize)]
struct CandidateFields {
    text: String,
    confidence: f64,
    round: usize,
}

impl TryFrom<CandidateFields> for AnswerCandidate {
    type Error = Error;

    fn try_from(f: CandidateFields) -> Result<Self> {
        Self::new(f.text, f.confidence, f.round)
    }
}

impl AnswerCandidate {
    pub fn new(text: impl Into<String>, confidence: f64, round: usize) -> Result<Self> {
        let text = text.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        let bag = tokenize_bag(&text);
        Ok(Self {
            text,
            confidence,
            round,
            bag,
        })
    }

    pub fn token_bag(&self) -> &BTreeSet<String> {
        &self.bag
    }

    pub fn key(&self) -> String {
        answer_key(&self.text)
    }
}

/// `|T(current) ∩ T(earlier)| / |T(current)|`; an empty current bag counts
/// as fully redundant.
pub fn overlap_bags(current: &BTreeSet<String>, earlier: &BTreeSet<String>) -> f64 {
    if current.is_empty() {
        return 1.0;
    }
    current.intersection(earlier).count() as f64 / current.len() as f64
}

pub fn overlap(current: &AnswerCandidate, earlier: &AnswerCandidate) -> f64 {
    overlap_bags(&current.bag, &earlier.bag)
}

pub fn diff(current: &AnswerCandidate, earlier: &AnswerCandidate) -> f64 {
    1.0 - overlap(current, earlier)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    /// Stop when mean overlap with the recent window reaches `1 - overlap_stop`.
    pub overlap_stop: f64,
    pub conf_ceiling: f64,
    /// Stop when fewer than this many tokens are new relative to all history.
    pub min_new_info: usize,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            overlap_stop: 0.2,
            conf_ceiling: 0.95,
            min_new_info: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StieConfig {
    /// Minimum difference from the answer 1, 2 and 3 rounds back.
    pub thresholds: [f64; 3],
    pub n_max: usize,
    pub termination: TerminationConfig,
}

impl Default for StieConfig {
    fn default() -> Self {
        Self {
            thresholds: [0.25, 0.5, 0.75],
            n_max: 4,
            termination: TerminationConfig::default(),
        }
    }
}

impl StieConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::Config("difference thresholds must lie in [0, 1]".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        let t = &self.termination;
        if !(0.0..=1.0).contains(&t.overlap_stop) || !(0.0..=1.0).contains(&t.conf_ceiling) {
            return Err(Error::Config("termination thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Size of the look-back window.
pub const WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminateReason {
    OverlapSaturation,
    ConfidenceCeiling,
    InfoExhausted,
    None,
}

/// Lag `i` (0 = previous answer) must differ by at least `thresholds[i]`;
/// lags beyond the supplied history pass.
pub fn validate_diffs(diffs: &[f64], thresholds: &[f64; 3]) -> bool {
    diffs.iter().zip(thresholds).all(|(d, delta)| d >= delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    /// Differences to the answers 1, 2, 3 rounds back (only those present).
    pub diffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub chosen: AnswerCandidate,
    pub replaced: bool,
    pub validation: Validation,
    /// Keys of alternatives passed over because they were blocked.
    pub skipped_blocked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub key: String,
    pub count: usize,
    pub newly_blocked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub config: StieConfig,
    history: Vec<AnswerCandidate>,
    blocked: BTreeSet<String>,
    counts: BTreeMap<String, usize>,
}

impl MemoryState {
    pub fn new(config: StieConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            history: Vec::new(),
            blocked: BTreeSet::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn history(&self) -> &[AnswerCandidate] {
        &self.history
    }

    pub fn blocked(&self) -> &BTreeSet<String> {
        &self.blocked
    }

    pub fn count(&self, text: &str) -> usize {
        self.counts.get(&answer_key(text)).copied().unwrap_or(0)
    }

    pub fn is_blocked(&self, text: &str) -> bool {
        self.blocked.contains(&answer_key(text))
    }

    /// Most recent first, at most [`WINDOW`] entries.
    fn recent(&self) -> impl Iterator<Item = &AnswerCandidate> {
        self.history.iter().rev().take(WINDOW)
    }

    /// Per-lag differences against the recent window.
    pub fn lag_diffs(&self, current: &AnswerCandidate) -> Vec<f64> {
        self.recent().map(|earlier| diff(current, earlier)).collect()
    }

    /// Minimum difference over the window; 1 with no history.
    pub fn agg_diff(&self, current: &AnswerCandidate) -> f64 {
        self.lag_diffs(current).into_iter().fold(1.0, f64::min)
    }

    pub fn validate(&self, current: &AnswerCandidate) -> Validation {
        let diffs = self.lag_diffs(current);
        let valid = validate_diffs(&diffs, &self.config.thresholds);
        Validation { valid, diffs }
    }

    /// Swaps an invalid (or blocked) answer for the most confident unblocked
    /// alternative that beats it.
    pub fn maybe_replace(&self, current: &AnswerCandidate, alternatives: &[AnswerCandidate]) -> Replacement {
        let validation = self.validate(current);
        let mut ordered: Vec<&AnswerCandidate> = alternatives.iter().collect();
        ordered.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

        let mut skipped_blocked = Vec::new();
        let mut best_unblocked = None;
        for alt in ordered {
            if self.is_blocked(&alt.text) {
                skipped_blocked.push(alt.key());
            } else {
                best_unblocked = Some(alt);
                break;
            }
        }

        let current_blocked = self.is_blocked(&current.text);
        let swap = match best_unblocked {
            Some(alt) if current_blocked => Some(alt),
            Some(alt) if !validation.valid && current.confidence < alt.confidence => Some(alt),
            _ => None,
        };
        match swap {
            Some(alt) => Replacement {
                chosen: AnswerCandidate {
                    round: current.round,
                    ..alt.clone()
                },
                replaced: true,
                validation,
                skipped_blocked,
            },
            None => Replacement {
                chosen: current.clone(),
                replaced: false,
                validation,
                skipped_blocked,
            },
        }
    }

    /// Appends to history, bumps the repetition count, blocks at `n_max`.
    pub fn record(&mut self, answer: AnswerCandidate) -> RecordOutcome {
        let key = answer.key();
        let count = {
            let c = self.counts.entry(key.clone()).or_insert(0);
            *c += 1;
            *c
        };
        let newly_blocked = count >= self.config.n_max && self.blocked.insert(key.clone());
        self.history.push(answer);
        RecordOutcome {
            key,
            count,
            newly_blocked,
        }
    }

    /// Checks stopping criteria for `current` against the history recorded so
    /// far; reports the first satisfied one.
    pub fn should_terminate(&self, current: &AnswerCandidate) -> (bool, TerminateReason) {
        let cfg = &self.config.termination;
        let window: Vec<f64> = self.recent().map(|earlier| overlap(current, earlier)).collect();
        if !window.is_empty() {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if mean >= 1.0 - cfg.overlap_stop {
                return (true, TerminateReason::OverlapSaturation);
            }
        }
        if current.confidence >= cfg.conf_ceiling {
            return (true, TerminateReason::ConfidenceCeiling);
        }
        let seen: BTreeSet<&String> = self.history.iter().flat_map(|a| a.bag.iter()).collect();
        let novel = current.bag.iter().filter(|t| !seen.contains(t)).count();
        if novel < cfg.min_new_info {
            return (true, TerminateReason::InfoExhausted);
        }
        (false, TerminateReason::None)
    }

    fn mean_overlap_with_rest(&self, i: usize) -> f64 {
        if self.history.len() < 2 {
            return 0.0;
        }
        let total: f64 = (0..self.history.len())
            .filter(|&j| j != i)
            .map(|j| overlap(&self.history[i], &self.history[j]))
            .sum();
        total / (self.history.len() - 1) as f64
    }

    /// Highest confidence among unblocked answers; ties go to lower mean
    /// overlap with the rest of history, then to the earliest entry.
    pub fn select_final(&self) -> Result<&AnswerCandidate> {
        if self.history.is_empty() {
            return Err(Error::Empty("answer history"));
        }
        let unblocked: Vec<usize> = (0..self.history.len())
            .filter(|&i| !self.is_blocked(&self.history[i].text))
            .collect();
        let pool = if unblocked.is_empty() {
            (0..self.history.len()).collect()
        } else {
            unblocked
        };
        let best = pool
            .into_iter()
            .min_by(|&a, &b| {
                let (ha, hb) = (&self.history[a], &self.history[b]);
                hb.confidence
                    .total_cmp(&ha.confidence)
                    .then_with(|| self.mean_overlap_with_rest(a).total_cmp(&self.mean_overlap_with_rest(b)))
                    .then(a.cmp(&b))
            })
            .expect("non-empty pool");
        Ok(&self.history[best])
    }
}

/// One line of the per-round decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDecision {
    pub round: usize,
    pub answer: String,
    pub confidence: f64,
    pub diffs: Vec<f64>,
    pub valid: bool,
    pub replaced: bool,
    pub blocked_keys: Vec<String>,
    pub terminate_reason: TerminateReason,
}

//! Progressive gold/noise data mixing, transcript rewards and loss masks.
//!
//! Epoch 0 is a cold start that mixes gold and noise items 1:1. From epoch 1
//! the gold share of a fixed-size core grows linearly until the turning
//! epoch, and a logarithmically growing number of extra noise items is added
//! on top.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{exact_match, mix_seed, token_f1};
use crate::transcript::{extract_boxed, parse_transcript, ReasoningTranscript, Tag};

/// `min(1, e / turning)`.
pub fn gold_ratio(epoch: usize, turning: usize) -> Result<f64> {
    if epoch == 0 || turning == 0 {
        return Err(Error::invalid("epoch and turning epoch must be at least 1"));
    }
    Ok((epoch as f64 / turning as f64).min(1.0))
}

/// `c · ln(1 + e)`.
pub fn noise_scale(epoch: usize, c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("noise scale constant must be positive, got {c}")));
    }
    Ok(c * (epoch as f64).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub id: String,
    /// Rendered transcript.
    pub transcript: String,
    pub gold: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    /// Noise filling the non-gold share of the core.
    Noise,
    /// Noise added on top of the core, growing with the epoch.
    ScaledNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub gold: Vec<PoolItem>,
    pub noise: Vec<PoolItem>,
    /// 0 is the cold start.
    pub epoch: usize,
    pub turning_epoch: usize,
    pub noise_c: f64,
    /// Core size; defaults to the smaller pool.
    pub base_size: Option<usize>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(gold: Vec<PoolItem>, noise: Vec<PoolItem>, epoch: usize, seed: u64) -> Self {
        Self {
            gold,
            noise,
            epoch,
            turning_epoch: 5,
            noise_c: 0.1,
            base_size: None,
            seed,
        }
    }

    fn base(&self) -> usize {
        self.base_size.unwrap_or_else(|| self.gold.len().min(self.noise.len()))
    }

    fn validate(&self) -> Result<()> {
        if self.gold.is_empty() {
            return Err(Error::Empty("gold pool"));
        }
        if self.noise.is_empty() {
            return Err(Error::Empty("noise pool"));
        }
        let mut ids = BTreeSet::new();
        for item in self.gold.iter().chain(&self.noise) {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::invalid(format!("item id `{}` appears more than once across pools", item.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub epoch: usize,
    pub gold_ratio: f64,
    pub alpha_e: f64,
    pub items: Vec<ManifestEntry>,
}

impl EpochManifest {
    pub fn count(&self, provenance: Provenance) -> usize {
        self.items.iter().filter(|i| i.provenance == provenance).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn take(pool: &[PoolItem], n: usize, what: &str, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    if n > pool.len() {
        return Err(Error::invalid(format!("requested {n} {what} items but the pool holds {}", pool.len())));
    }
    Ok(pool.choose_multiple(rng, n).map(|i| i.id.clone()).collect())
}

/// Builds one epoch's item list. Sampling is without replacement and a pure
/// function of the spec.
pub fn mix_epoch(spec: &DatasetSpec) -> Result<EpochManifest> {
    spec.validate()?;
    let base = spec.base();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, spec.epoch as u64));
    let (ratio, alpha, n_gold, n_noise, n_scaled) = if spec.epoch == 0 {
        let n_gold = base / 2;
        (0.5, 0.0, n_gold, base - n_gold, 0)
    } else {
        let ratio = gold_ratio(spec.epoch, spec.turning_epoch)?;
        let alpha = noise_scale(spec.epoch, spec.noise_c)?;
        let n_gold = (ratio * base as f64).round() as usize;
        let n_scaled = (alpha * base as f64).round() as usize;
        (ratio, alpha, n_gold, base - n_gold, n_scaled)
    };

    let gold = take(&spec.gold, n_gold, "gold", &mut rng)?;
    let noise = take(&spec.noise, n_noise + n_scaled, "noise", &mut rng)?;
    let mut items: Vec<ManifestEntry> = gold
        .into_iter()
        .map(|id| ManifestEntry {
            id,
            provenance: Provenance::Gold,
        })
        .chain(noise.into_iter().enumerate().map(|(i, id)| ManifestEntry {
            id,
            provenance: if i < n_noise { Provenance::Noise } else { Provenance::ScaledNoise },
        }))
        .collect();
    items.shuffle(&mut rng);
    Ok(EpochManifest {
        epoch: spec.epoch,
        gold_ratio: ratio,
        alpha_e: alpha,
        items,
    })
}

/// Perturbs a transcript: every result segment has its document lines
/// shuffled and one distractor line inserted at a random position.
pub fn perturb_transcript(t: &ReasoningTranscript, distractors: &[String], rng: &mut ChaCha8Rng) -> Result<ReasoningTranscript> {
    if distractors.is_empty() {
        return Err(Error::Empty("distractor list"));
    }
    let mut out = ReasoningTranscript::new();
    for seg in t.segments() {
        if seg.tag == Tag::Result {
            let mut lines: Vec<String> = seg.text.lines().map(str::to_owned).collect();
            lines.shuffle(rng);
            let distractor = distractors.choose(rng).expect("non-empty").replace('<', "&lt;");
            let at = rand::Rng::random_range(rng, 0..=lines.len());
            lines.insert(at, distractor);
            out.push(Tag::Result, lines.join("\n"))?;
        } else if seg.tag.is_terminal() && t.is_wrapped() {
            out.push_wrapped_answer(seg.tag, seg.text.clone())?;
        } else {
            out.push(seg.tag, seg.text.clone())?;
        }
    }
    Ok(out)
}

/// Derives a noise pool from gold items; ids are prefixed with `noise-`.
pub fn build_noise_pool(gold: &[PoolItem], distractors: &[String], seed: u64) -> Result<Vec<PoolItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gold.iter()
        .map(|item| {
            let t = parse_transcript(&item.transcript)?;
            let noisy = perturb_transcript(&t, distractors, &mut rng)?;
            Ok(PoolItem {
                id: format!("noise-{}", item.id),
                transcript: noisy.render()?,
                gold: item.gold.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerTask {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LengthTargets {
    /// Short answers score 1 up to this many tokens.
    pub short: usize,
    /// Long answers peak at this many tokens.
    pub long: usize,
}

impl Default for LengthTargets {
    fn default() -> Self {
        Self { short: 16, long: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// format, length, accuracy
    pub short: [f64; 3],
    /// format, length, accuracy, structure
    pub long: [f64; 4],
    pub lengths: LengthTargets,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            short: [0.3, 0.2, 0.5],
            long: [0.25, 0.2, 0.4, 0.15],
            lengths: LengthTargets::default(),
        }
    }
}

fn check_simplex(w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Config(format!("reward weights must be nonnegative: {w:?}")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("reward weights must sum to 1, got {sum}")));
    }
    Ok(())
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.short)?;
        check_simplex(&self.long)?;
        if self.lengths.short == 0 || self.lengths.long == 0 {
            return Err(Error::Config("length targets must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted sum of components; weights must lie on the simplex.
pub fn combine(components: &[f64], weights: &[f64]) -> Result<f64> {
    if components.len() != weights.len() {
        return Err(Error::invalid("component and weight counts differ"));
    }
    check_simplex(weights)?;
    if components.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid(format!("reward components must lie in [0, 1]: {components:?}")));
    }
    let total: f64 = components.iter().zip(weights).map(|(c, w)| c * w).sum();
    Ok(total.clamp(0.0, 1.0))
}

/// 1 for a parseable transcript whose terminal holds a boxed answer, 0.5
/// without the box, 0 if it does not parse.
pub fn reward_format(text: &str) -> f64 {
    match parse_transcript(text) {
        Err(_) => 0.0,
        Ok(t) => match t.terminal().and_then(|s| extract_boxed(&s.text)) {
            Some(_) => 1.0,
            None => 0.5,
        },
    }
}

/// Length score for an answer of `n` tokens.
pub fn length_score(n: usize, task: AnswerTask, targets: &LengthTargets) -> f64 {
    let n = n as f64;
    match task {
        AnswerTask::Short => {
            let l = targets.short as f64;
            if n <= l {
                1.0
            } else {
                ((4.0 * l - n) / (3.0 * l)).max(0.0)
            }
        }
        AnswerTask::Long => {
            let l = targets.long as f64;
            if n <= l {
                n / l
            } else {
                ((4.0 * l - n) / (3.0 * l)).max(0.0)
            }
        }
    }
}

/// Whitespace tokens in the terminal answer's payload.
pub fn answer_token_count(t: &ReasoningTranscript) -> usize {
    t.terminal().map_or(0, |s| s.text.split_whitespace().count())
}

pub fn reward_length(t: &ReasoningTranscript, task: AnswerTask, targets: &LengthTargets) -> f64 {
    length_score(answer_token_count(t), task, targets)
}

/// 1 on normalized exact match, otherwise token F1.
pub fn reward_accuracy(answer: &str, gold: &str) -> Result<f64> {
    if gold.trim().is_empty() {
        return Err(Error::Empty("gold answer"));
    }
    Ok(if exact_match(answer, gold) { 1.0 } else { token_f1(answer, gold) })
}

fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut has_word = false;
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            has_word = true;
        }
        let boundary = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary && has_word {
            count += 1;
            has_word = false;
        }
    }
    count + usize::from(has_word)
}

fn contains_tag_text(text: &str) -> bool {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let mut j = i + off + 1;
        if bytes.get(j) == Some(&b'/') {
            j += 1;
        }
        let start = j;
        while j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
            j += 1;
        }
        if j > start && bytes.get(j) == Some(&b'>') {
            return true;
        }
        i = i + off + 1;
    }
    false
}

/// Structural checks on a long answer payload, each worth a third: at least
/// two sentences, a boxed final answer, no leftover tag text.
pub fn structure_score(payload: &str) -> f64 {
    if payload.trim().is_empty() {
        return 0.0;
    }
    let checks = [
        sentence_count(payload) >= 2,
        extract_boxed(payload).is_some(),
        !contains_tag_text(payload),
    ];
    checks.iter().filter(|&&c| c).count() as f64 / 3.0
}

pub fn reward_structure(t: &ReasoningTranscript) -> Result<f64> {
    let seg = t
        .segments()
        .iter()
        .find(|s| s.tag == Tag::LongAnswer)
        .ok_or(Error::Empty("long answer"))?;
    Ok(structure_score(&seg.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fmt: f64,
    pub len: f64,
    pub acc: f64,
    /// Only scored for long answers.
    pub structure: Option<f64>,
    pub total: f64,
}

/// The boxed answer if present, else the whole terminal payload.
fn predicted_answer(t: &ReasoningTranscript) -> String {
    t.terminal()
        .map(|s| extract_boxed(&s.text).unwrap_or_else(|| s.text.clone()))
        .unwrap_or_default()
}

fn components(text: &str, gold: &str, task: AnswerTask, weights: &RewardWeights) -> Result<(f64, f64, f64, Option<ReasoningTranscript>)> {
    let fmt = reward_format(text);
    match parse_transcript(text) {
        Ok(t) => {
            let len = reward_length(&t, task, &weights.lengths);
            let acc = reward_accuracy(&predicted_answer(&t), gold)?;
            Ok((fmt, len, acc, Some(t)))
        }
        Err(_) => {
            let acc = match extract_boxed(text) {
                Some(a) => reward_accuracy(&a, gold)?,
                None => {
                    reward_accuracy("", gold)?;
                    0.0
                }
            };
            Ok((fmt, 0.0, acc, None))
        }
    }
}

pub fn reward_short(text: &str, gold: &str, weights: &RewardWeights) -> Result<RewardBreakdown> {
    weights.validate()?;
    let (fmt, len, acc, _) = components(text, gold, AnswerTask::Short, weights)?;
    Ok(RewardBreakdown {
        fmt,
        len,
        acc,
        structure: None,
        total: combine(&[fmt, len, acc], &weights.short)?,
    })
}

/// Transcripts without a long answer score 0 on structure.
pub fn reward_long(text: &str, gold: &str, weights: &RewardWeights) -> Result<RewardBreakdown> {
    weights.validate()?;
    let (fmt, len, acc, t) = components(text, gold, AnswerTask::Long, weights)?;
    let structure = t.as_ref().and_then(|t| reward_structure(t).ok()).unwrap_or(0.0);
    Ok(RewardBreakdown {
        fmt,
        len,
        acc,
        structure: Some(structure),
        total: combine(&[fmt, len, acc, structure], &weights.long)?,
    })
}

/// Writes `id,fmt,len,acc,struct,total`; `struct` is empty for short answers.
pub fn write_reward_csv(rows: &[(String, RewardBreakdown)], mut out: impl Write) -> Result<()> {
    writeln!(out, "id,fmt,len,acc,struct,total")?;
    for (id, r) in rows {
        let s = r.structure.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", id.replace(',', ";"), r.fmt, r.len, r.acc, s, r.total)?;
    }
    Ok(())
}

/// Per-token loss weights aligned with [`ReasoningTranscript::tokens`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMask {
    pub values: Vec<u8>,
}

impl TokenMask {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }
}

/// Zeros over the content of every result segment (retrieved text), ones
/// everywhere else, tag tokens included.
pub fn build_mask(t: &ReasoningTranscript) -> Result<TokenMask> {
    let tokens = t.tokens();
    let spans = t.content_spans();
    let mut values = vec![1u8; tokens.len()];
    for (i, (seg, &(start, end))) in t.segments().iter().zip(&spans).enumerate() {
        if end > tokens.len() || tokens[start..end].iter().any(|tok| tok.segment != i || tok.is_tag) {
            return Err(Error::invalid(format!("token span {start}..{end} does not align with segment {i}")));
        }
        if seg.tag == Tag::Result {
            values[start..end].fill(0);
        }
    }
    Ok(TokenMask { values })
}

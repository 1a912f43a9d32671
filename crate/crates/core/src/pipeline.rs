//! The retrieve → think → retrieve → answer loop.
//!
//! An episode first retrieves on the raw question, then repeats rounds of
//! think → (route) → retrieve on the think-derived query → answer, passing
//! each candidate answer through the redundancy controller until it stops or
//! the round limit is reached. Everything the model "says" is recorded as a
//! tagged transcript.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::embed::{embed, Embedder};
use crate::error::{Error, Result};
use crate::retrieval::{SearchConfig, SearchSession};
use crate::routing::{reward_with, RewardConfig, Route, RouterPolicy, RoutingState, Step};
use crate::stie::{AnswerCandidate, MemoryState, RoundDecision, StieConfig, TerminateReason};
use crate::text::{fnv1a, mix_seed, tokens};
use crate::transcript::{boxed_answer, ReasoningTranscript, Tag};
use crate::vector_index::{ClusterIndex, DocumentRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub id: String,
    pub title: String,
    pub text: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub confidence: f64,
    /// Other answers the generator considered, with their confidences.
    #[serde(default)]
    pub alternatives: Vec<(String, f64)>,
}

/// The text-producing side of an episode.
pub trait Generator {
    /// Reasoning text for `round` (1-based) given the latest documents.
    fn think(&mut self, question: &str, context: &[RetrievedDoc], round: usize) -> Result<String>;
    /// Search string derived from the reasoning text.
    fn query(&mut self, think: &str, round: usize) -> Result<String>;
    fn answer(&mut self, question: &str, think: &str, docs: &[RetrievedDoc], round: usize) -> Result<GeneratedAnswer>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAlternative {
    pub answer: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRound {
    pub think: String,
    pub query: String,
    pub answer: String,
    pub confidence: f64,
    #[serde(default)]
    pub alternatives: Vec<ScriptedAlternative>,
}

/// Episode script: `{question, background?, gold, rounds: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScript {
    pub question: String,
    #[serde(default)]
    pub background: Option<String>,
    pub gold: String,
    pub rounds: Vec<ScriptedRound>,
}

impl EpisodeScript {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Replays a script verbatim, ignoring the documents it is shown.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    script: EpisodeScript,
}

impl ScriptedGenerator {
    pub fn new(script: EpisodeScript) -> Self {
        Self { script }
    }

    fn round(&self, round: usize) -> Result<&ScriptedRound> {
        round
            .checked_sub(1)
            .and_then(|i| self.script.rounds.get(i))
            .ok_or_else(|| Error::Generator(format!("script has no round {round}")))
    }
}

impl Generator for ScriptedGenerator {
    fn think(&mut self, _question: &str, _context: &[RetrievedDoc], round: usize) -> Result<String> {
        let r = self.round(round)?;
        if r.think.trim().is_empty() {
            return Err(Error::Generator(format!("round {round} has an empty think entry")));
        }
        Ok(r.think.clone())
    }

    fn query(&mut self, _think: &str, round: usize) -> Result<String> {
        Ok(self.round(round)?.query.clone())
    }

    fn answer(&mut self, _question: &str, _think: &str, _docs: &[RetrievedDoc], round: usize) -> Result<GeneratedAnswer> {
        let r = self.round(round)?;
        Ok(GeneratedAnswer {
            text: r.answer.clone(),
            confidence: r.confidence,
            alternatives: r.alternatives.iter().map(|a| (a.answer.clone(), a.confidence)).collect(),
        })
    }
}

/// A searchable corpus: index, document store, embedder and a simulated
/// per-call latency added to measured wall-clock time.
#[derive(Clone)]
pub struct Backend {
    pub name: String,
    pub index: Arc<ClusterIndex>,
    docs: Arc<HashMap<String, DocumentRecord>>,
    pub embedder: Arc<dyn Embedder>,
    pub injected_latency_ms: f64,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("name", &self.name)
            .field("docs", &self.docs.len())
            .field("injected_latency_ms", &self.injected_latency_ms)
            .finish()
    }
}

impl Backend {
    pub fn new(name: impl Into<String>, index: ClusterIndex, corpus: &[DocumentRecord], embedder: Arc<dyn Embedder>) -> Result<Self> {
        if embedder.dim() != index.dim() {
            return Err(Error::Config(format!(
                "embedder dimension {} does not match index dimension {}",
                embedder.dim(),
                index.dim()
            )));
        }
        let docs: HashMap<String, DocumentRecord> = corpus.iter().map(|d| (d.id.clone(), d.clone())).collect();
        if let Some(missing) = index.doc_ids().iter().find(|id| !docs.contains_key(*id)) {
            return Err(Error::UnknownDoc(missing.clone()));
        }
        Ok(Self {
            name: name.into(),
            index: Arc::new(index),
            docs: Arc::new(docs),
            embedder,
            injected_latency_ms: 0.0,
        })
    }

    pub fn with_latency(mut self, ms: f64) -> Self {
        self.injected_latency_ms = ms;
        self
    }

    pub fn document(&self, id: &str) -> Option<&DocumentRecord> {
        self.docs.get(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStyle {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub max_rounds: usize,
    pub routing_enabled: bool,
    pub stie_enabled: bool,
    /// Think-guided second-stage retrieval; off means a single retrieval on
    /// the raw question.
    pub rdra_enabled: bool,
    pub answer_style: AnswerStyle,
    pub search: SearchConfig,
    pub stie: StieConfig,
    pub rewards: RewardConfig,
    /// Smoothing of the local top-score feature.
    pub score_ema: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            max_rounds: 8,
            routing_enabled: true,
            stie_enabled: true,
            rdra_enabled: true,
            answer_style: AnswerStyle::Short,
            search: SearchConfig::default(),
            stie: StieConfig::default(),
            rewards: RewardConfig::default(),
            score_ema: 0.5,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    /// Retrieve once on the question and answer once.
    pub fn naive() -> Self {
        Self {
            max_rounds: 1,
            routing_enabled: false,
            stie_enabled: false,
            rdra_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        self.search.sampler.validate()?;
        self.stie.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub round: usize,
    pub p_local: f64,
    pub action: Route,
    pub r_eff: f64,
    pub r_info: f64,
    pub reward: f64,
    pub novelty: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub rounds: usize,
    pub searches: usize,
    pub response_tokens: usize,
    /// Per-call retrieval latency in milliseconds, keyed by backend name.
    pub latency_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutput {
    pub transcript: ReasoningTranscript,
    pub final_answer: AnswerCandidate,
    pub metrics: EpisodeMetrics,
    pub decisions: Vec<RoundDecision>,
    pub routes: Vec<RouteDecision>,
    pub terminate_reason: TerminateReason,
    /// Routing trajectory, usable as a policy-gradient episode.
    #[serde(skip)]
    pub routing_steps: Vec<Step>,
}

impl EpisodeOutput {
    /// One JSON object per round.
    pub fn decision_log(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.decisions {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn block_events(&self) -> usize {
        let mut seen = BTreeSet::new();
        self.decisions
            .iter()
            .flat_map(|d| d.blocked_keys.iter())
            .filter(|k| seen.insert(k.as_str()))
            .count()
    }
}

/// An aborted episode with everything recorded up to the failure.
#[derive(Debug, ThisError)]
#[error("episode aborted after {} segments: {source}", partial.segments().len())]
pub struct EpisodeFailure {
    pub partial: ReasoningTranscript,
    pub decisions: Vec<RoundDecision>,
    #[source]
    pub source: Error,
}

/// Backends available to an episode.
#[derive(Debug, Clone, Copy)]
pub struct Backends<'a> {
    pub local: &'a Backend,
    pub web: Option<&'a Backend>,
}

/// Renders documents for a result segment, one per line; angle brackets
/// are escaped so document text can never be mistaken for a tag.
pub fn render_docs(docs: &[RetrievedDoc]) -> String {
    docs.iter()
        .map(|d| format!("[{}] {}: {}", d.id, d.title, d.text).replace('<', "&lt;"))
        .collect::<Vec<_>>()
        .join("\n")
}

struct Retriever<'a> {
    backend: &'a Backend,
    session: SearchSession<'a>,
}

impl<'a> Retriever<'a> {
    fn new(backend: &'a Backend, config: &PipelineConfig, salt: u64) -> Result<Self> {
        let mut search = config.search.clone();
        search.top_k = config.top_k;
        search.sampler.seed = mix_seed(config.seed, salt);
        Ok(Self {
            backend,
            session: SearchSession::new(&backend.index, &search)?,
        })
    }

    fn retrieve(&mut self, text: &str, latencies: &mut Vec<(String, f64)>) -> Result<Vec<RetrievedDoc>> {
        let start = Instant::now();
        let q = embed(text, self.backend.embedder.as_ref(), self.backend.index.dim())?;
        let outcome = self.session.search(q.as_slice())?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        latencies.push((self.backend.name.clone(), elapsed + self.backend.injected_latency_ms));
        outcome
            .results
            .into_iter()
            .map(|hit| {
                let doc = self
                    .backend
                    .document(&hit.doc_id)
                    .ok_or_else(|| Error::UnknownDoc(hit.doc_id.clone()))?;
                Ok(RetrievedDoc {
                    id: doc.id.clone(),
                    title: doc.title.clone(),
                    text: doc.text.clone(),
                    score: hit.score,
                })
            })
            .collect()
    }
}

struct Episode<'a> {
    transcript: ReasoningTranscript,
    decisions: Vec<RoundDecision>,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl Episode<'_> {
    fn push(&mut self, tag: Tag, text: &str) -> Result<()> {
        self.transcript.push(tag, text).map_err(Error::from)
    }
}

fn retrieval_error(stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |source| Error::Retrieval {
        stage,
        source: Box::new(source),
    }
}

/// Runs one episode. `router` is consulted only when routing is enabled.
pub fn run_episode(
    question: &str,
    background: Option<&str>,
    config: &PipelineConfig,
    backends: Backends<'_>,
    generator: &mut dyn Generator,
    router: Option<&RouterPolicy>,
) -> std::result::Result<EpisodeOutput, EpisodeFailure> {
    let mut ep = Episode {
        transcript: ReasoningTranscript::new(),
        decisions: Vec::new(),
        _marker: std::marker::PhantomData,
    };
    match drive(question, background, config, backends, generator, router, &mut ep) {
        Ok(out) => Ok(out),
        Err(source) => Err(EpisodeFailure {
            partial: ep.transcript,
            decisions: ep.decisions,
            source,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn drive(
    question: &str,
    background: Option<&str>,
    config: &PipelineConfig,
    backends: Backends<'_>,
    generator: &mut dyn Generator,
    router: Option<&RouterPolicy>,
    ep: &mut Episode<'_>,
) -> Result<EpisodeOutput> {
    config.validate()?;
    if question.trim().is_empty() {
        return Err(Error::Empty("question"));
    }
    let router = if config.routing_enabled {
        if backends.web.is_none() {
            return Err(Error::Config("routing is enabled but no web backend is configured".into()));
        }
        Some(router.ok_or_else(|| Error::Config("routing is enabled but no policy was supplied".into()))?)
    } else {
        None
    };

    let question_salt = fnv1a(question.as_bytes());
    let mut local = Retriever::new(backends.local, config, mix_seed(question_salt, 1))?;
    let mut web = backends
        .web
        .map(|b| Retriever::new(b, config, mix_seed(question_salt, 2)))
        .transpose()?;
    let mut route_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, question_salt));
    let mut memory = MemoryState::new(config.stie.clone())?;
    let mut latencies = Vec::new();
    let mut routes = Vec::new();
    let mut routing_steps = Vec::new();
    let mut seen_docs: BTreeSet<String> = BTreeSet::new();
    let mut last_novelty = 1.0;
    let mut local_score_ema = 0.0;
    let question_tokens = tokens(question).len();

    if let Some(bg) = background {
        ep.push(Tag::Background, bg)?;
    }
    ep.push(Tag::Question, question)?;

    // stage one: retrieval keyed on the question itself
    let mut docs = local
        .retrieve(question, &mut latencies)
        .map_err(retrieval_error("background retrieval"))?;
    seen_docs.extend(docs.iter().map(|d| d.id.clone()));
    if let Some(top) = docs.first() {
        local_score_ema = f64::from(top.score);
    }
    ep.push(Tag::Search, question)?;
    ep.push(Tag::Result, &render_docs(&docs))?;

    let mut last_answer: Option<AnswerCandidate> = None;
    let mut terminate_reason = TerminateReason::None;
    let mut rounds = 0;

    for round in 1..=config.max_rounds {
        rounds = round;
        let think = if config.rdra_enabled {
            let think = generator.think(question, &docs, round)?;
            if think.trim().is_empty() {
                return Err(Error::Generator(format!("empty reasoning text in round {round}")));
            }
            ep.push(Tag::Think, &think)?;

            let query = generator.query(&think, round)?;
            if query.trim().is_empty() {
                return Err(Error::Generator(format!("empty search query in round {round}")));
            }
            let (action, p_local, state) = match router {
                Some(policy) => {
                    let state = RoutingState::from_context(question_tokens, round, config.max_rounds, last_novelty, local_score_ema);
                    let p_local = policy.policy_probs(&state)?.0;
                    (policy.route(&state, &mut route_rng)?, p_local, Some(state))
                }
                None => (Route::Local, 1.0, None),
            };
            let retriever = match (action, web.as_mut()) {
                (Route::Web, Some(w)) => w,
                _ => &mut local,
            };
            docs = retriever
                .retrieve(&query, &mut latencies)
                .map_err(retrieval_error("guided retrieval"))?;
            let fresh = docs.iter().filter(|d| !seen_docs.contains(&d.id)).count();
            last_novelty = if docs.is_empty() { 0.0 } else { fresh as f64 / docs.len() as f64 };
            seen_docs.extend(docs.iter().map(|d| d.id.clone()));
            if action == Route::Local {
                if let Some(top) = docs.first() {
                    local_score_ema = config.score_ema * local_score_ema + (1.0 - config.score_ema) * f64::from(top.score);
                }
            }
            ep.push(Tag::Search, &query)?;
            ep.push(Tag::Result, &render_docs(&docs))?;

            if let (Some(policy), Some(state)) = (router, state) {
                let outcome = reward_with(action, policy.beta1, policy.beta2, &config.rewards, Some(last_novelty));
                routes.push(RouteDecision {
                    round,
                    p_local,
                    action,
                    r_eff: outcome.r_eff,
                    r_info: outcome.r_info,
                    reward: outcome.total,
                    novelty: last_novelty,
                });
                routing_steps.push(Step {
                    state,
                    action,
                    reward: outcome.total,
                });
            }
            think
        } else {
            String::new()
        };

        let generated = generator.answer(question, &think, &docs, round)?;
        let candidate = AnswerCandidate::new(generated.text, generated.confidence, round)?;
        let alternatives = generated
            .alternatives
            .into_iter()
            .map(|(text, conf)| AnswerCandidate::new(text, conf, round))
            .collect::<Result<Vec<_>>>()?;

        if config.stie_enabled {
            let replacement = memory.maybe_replace(&candidate, &alternatives);
            let chosen = replacement.chosen;
            let validation = memory.validate(&chosen);
            let (stop, reason) = if validation.valid {
                memory.should_terminate(&chosen)
            } else {
                (false, TerminateReason::None)
            };
            memory.record(chosen.clone());
            ep.decisions.push(RoundDecision {
                round,
                answer: chosen.text.clone(),
                confidence: chosen.confidence,
                diffs: validation.diffs,
                valid: validation.valid,
                replaced: replacement.replaced,
                blocked_keys: memory.blocked().iter().cloned().collect(),
                terminate_reason: reason,
            });
            last_answer = Some(chosen);
            if stop {
                terminate_reason = reason;
                break;
            }
        } else {
            let validation = memory.validate(&candidate);
            memory.record(candidate.clone());
            ep.decisions.push(RoundDecision {
                round,
                answer: candidate.text.clone(),
                confidence: candidate.confidence,
                diffs: validation.diffs,
                valid: validation.valid,
                replaced: false,
                blocked_keys: Vec::new(),
                terminate_reason: TerminateReason::None,
            });
            last_answer = Some(candidate);
        }
    }

    let final_answer = if config.stie_enabled {
        memory.select_final()?.clone()
    } else {
        last_answer.expect("at least one round ran")
    };
    let terminal = match config.answer_style {
        AnswerStyle::Short => Tag::ShortAnswer,
        AnswerStyle::Long => Tag::LongAnswer,
    };
    ep.push(terminal, &boxed_answer(&final_answer.text))?;

    let transcript = std::mem::take(&mut ep.transcript);
    let metrics = EpisodeMetrics {
        rounds,
        searches: transcript.count(Tag::Result),
        response_tokens: transcript.response_token_count(),
        latency_ms: latencies,
    };
    Ok(EpisodeOutput {
        transcript,
        final_answer,
        metrics,
        decisions: std::mem::take(&mut ep.decisions),
        routes,
        terminate_reason,
        routing_steps,
    })
}

/// Plain retrieval-augmented answering: one retrieval on the question, one
/// answer. Written independently of [`run_episode`] as the reference for the
/// ablation identity.
pub fn naive_rag(question: &str, config: &PipelineConfig, local: &Backend, generator: &mut dyn Generator) -> Result<(ReasoningTranscript, AnswerCandidate)> {
    let mut search = config.search.clone();
    search.top_k = config.top_k;
    search.sampler.seed = mix_seed(config.seed, mix_seed(fnv1a(question.as_bytes()), 1));
    let mut session = SearchSession::new(&local.index, &search)?;
    let q = embed(question, local.embedder.as_ref(), local.index.dim())?;
    let docs: Vec<RetrievedDoc> = session
        .search(q.as_slice())?
        .results
        .into_iter()
        .map(|hit| {
            let d = local.document(&hit.doc_id).ok_or_else(|| Error::UnknownDoc(hit.doc_id.clone()))?;
            Ok(RetrievedDoc {
                id: d.id.clone(),
                title: d.title.clone(),
                text: d.text.clone(),
                score: hit.score,
            })
        })
        .collect::<Result<_>>()?;
    let generated = generator.answer(question, "", &docs, 1)?;
    let answer = AnswerCandidate::new(generated.text, generated.confidence, 1)?;
    let mut t = ReasoningTranscript::new();
    t.push(Tag::Question, question)?;
    t.push(Tag::Search, question)?;
    t.push(Tag::Result, render_docs(&docs))?;
    t.push(Tag::ShortAnswer, boxed_answer(&answer.text))?;
    Ok((t, answer))
}

//! Synthetic corpora, a document-reading generator, suite metrics and the
//! retrieval benchmarks.
//!
//! The text corpus is made of fact chains: each fact is one document of the
//! form "The mentor of A is B.", and a question asks for the end of a chain
//! of 2–4 such links starting from its head entity. Distractor documents only
//! ever mention entities outside every chain, except near-miss facts that
//! attach an unused relation to a chain head.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, Embedding, HashingEmbedder};
use crate::error::{Error, Result};
use crate::pipeline::{
    run_episode, AnswerStyle, Backend, Backends, EpisodeScript, GeneratedAnswer, Generator, PipelineConfig,
    RetrievedDoc, ScriptedGenerator,
};
use crate::retrieval::search;
use crate::dynamic_sampler::{SamplerConfig, SamplerState};
use crate::routing::RouterPolicy;
use crate::stie::TerminateReason;
use crate::text::{exact_match, mix_seed, token_f1};
use crate::vector_index::{build_index, exhaustive_search_flat, ClusterIndex, DocumentRecord, IndexParams};

/// Relation nouns used to link entities.
pub const RELATIONS: [&str; 12] = [
    "mentor",
    "founder",
    "birthplace",
    "employer",
    "sibling",
    "publisher",
    "rival",
    "architect",
    "patron",
    "successor",
    "neighbor",
    "teacher",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Total local documents: chain facts plus distractors.
    pub n_docs: usize,
    pub n_chains: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    /// Distinct entity names available.
    pub vocab_size: usize,
    /// Share of distractors that are near-miss facts about chain heads.
    pub noise_fraction: f64,
    /// Share of chains whose last fact exists only in the web corpus.
    pub web_only_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 400,
            n_chains: 50,
            min_hops: 2,
            max_hops: 4,
            vocab_size: 600,
            noise_fraction: 0.3,
            web_only_fraction: 0.1,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.min_hops) || !(self.min_hops..=4).contains(&self.max_hops) {
            return Err(Error::Config("hop depth must satisfy 2 <= min_hops <= max_hops <= 4".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("at least one fact chain is required".into()));
        }
        for (name, v) in [("noise_fraction", self.noise_fraction), ("web_only_fraction", self.web_only_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub head: String,
    /// Relations in the order they are followed from the head.
    pub relations: Vec<String>,
    pub gold: String,
    /// Fact documents of the chain, in hop order.
    pub chain_docs: Vec<String>,
    pub web_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub local: Vec<DocumentRecord>,
    /// Superset of `local`.
    pub web: Vec<DocumentRecord>,
    pub questions: Vec<QaItem>,
    pub chain_entities: BTreeSet<String>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "qu"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "x"];

fn entity_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            name.push_str(NUCLEI[rng.random_range(0..NUCLEI.len())]);
        }
        name.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        let mut chars = name.chars();
        let name: String = chars.next().map(|c| c.to_ascii_uppercase()).into_iter().chain(chars).collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

pub fn fact_text(relation: &str, subject: &str, object: &str) -> String {
    format!("The {relation} of {subject} is {object}.")
}

/// "What is the r3 of the r2 of the r1 of Head?"
pub fn chain_question(head: &str, relations: &[String]) -> String {
    let path: Vec<String> = relations.iter().rev().map(|r| format!("the {r}")).collect();
    format!("What is {} of {head}?", path.join(" of "))
}

pub fn gen_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hops: Vec<usize> = (0..spec.n_chains).map(|_| rng.random_range(spec.min_hops..=spec.max_hops)).collect();
    let chain_entity_count: usize = hops.iter().map(|h| h + 1).sum();
    let web_only_chains = (spec.web_only_fraction * spec.n_chains as f64).round() as usize;
    // the last fact of a web-only chain lives outside the local corpus
    let fact_count: usize = hops.iter().sum::<usize>() - web_only_chains;
    if spec.n_docs < fact_count {
        return Err(Error::Config(format!(
            "{} documents cannot hold the {fact_count} local chain facts",
            spec.n_docs
        )));
    }
    let distractors = spec.n_docs - fact_count;
    let noise_entities_needed = if distractors > 0 { 2 } else { 0 };
    if spec.vocab_size < chain_entity_count + noise_entities_needed {
        return Err(Error::Config(format!(
            "vocabulary of {} names is too small for {} chain entities",
            spec.vocab_size, chain_entity_count
        )));
    }
    let names = entity_names(spec.vocab_size, &mut rng);
    let (chain_names, noise_names) = names.split_at(chain_entity_count);

    let mut local = Vec::new();
    let mut web_extra = Vec::new();
    let mut questions = Vec::new();
    let mut offset = 0;
    for (c, &h) in hops.iter().enumerate() {
        let entities = &chain_names[offset..offset + h + 1];
        offset += h + 1;
        let mut rels: Vec<&str> = RELATIONS.to_vec();
        rels.shuffle(&mut rng);
        let relations: Vec<String> = rels[..h].iter().map(|r| r.to_string()).collect();
        let web_only = c < web_only_chains;
        let mut chain_docs = Vec::new();
        for k in 0..h {
            let id = format!("c{c:03}h{k}");
            let doc = DocumentRecord::new(&id, &entities[k], fact_text(&relations[k], &entities[k], &entities[k + 1]));
            if web_only && k == h - 1 {
                web_extra.push(doc);
            } else {
                local.push(doc);
            }
            chain_docs.push(id);
        }
        questions.push(QaItem {
            id: format!("q{c:03}"),
            question: chain_question(&entities[0], &relations),
            head: entities[0].clone(),
            relations,
            gold: entities[h].clone(),
            chain_docs,
            web_only,
        });
    }

    let near_miss = (spec.noise_fraction * distractors as f64).round() as usize;
    for d in 0..distractors {
        let relation = RELATIONS[rng.random_range(0..RELATIONS.len())];
        let object = &noise_names[rng.random_range(0..noise_names.len())];
        let subject = if d < near_miss {
            // attach a relation the chain does not use to its head
            let q = &questions[rng.random_range(0..questions.len())];
            let unused: Vec<&str> = RELATIONS.iter().copied().filter(|r| !q.relations.iter().any(|x| x == r)).collect();
            let relation = unused[rng.random_range(0..unused.len())];
            local.push(DocumentRecord::new(format!("d{d:04}"), &q.head, fact_text(relation, &q.head, object)));
            continue;
        } else {
            loop {
                let s = &noise_names[rng.random_range(0..noise_names.len())];
                if s != object {
                    break s;
                }
            }
        };
        local.push(DocumentRecord::new(format!("d{d:04}"), subject, fact_text(relation, subject, object)));
    }
    local.shuffle(&mut rng);
    let mut web = local.clone();
    web.extend(web_extra);
    Ok(SyntheticCorpus {
        local,
        web,
        questions,
        chain_entities: chain_names.iter().cloned().collect(),
    })
}

/// Follows a question's relation path through the documents it is shown.
/// It knows how the question decomposes but never the answer: every link
/// has to be read from a retrieved fact.
#[derive(Debug, Clone)]
pub struct FactReader {
    relations: Vec<String>,
    resolved: Vec<String>,
}

impl FactReader {
    pub fn new(item: &QaItem) -> Self {
        Self {
            relations: item.relations.clone(),
            resolved: vec![item.head.clone()],
        }
    }

    fn current(&self) -> &str {
        self.resolved.last().expect("head is always resolved")
    }

    fn hops_done(&self) -> usize {
        self.resolved.len() - 1
    }

    fn complete(&self) -> bool {
        self.hops_done() == self.relations.len()
    }

    fn advance(&mut self, docs: &[RetrievedDoc]) {
        while !self.complete() {
            let prefix = format!("The {} of {} is ", self.relations[self.hops_done()], self.current());
            let next = docs
                .iter()
                .find_map(|d| d.text.strip_prefix(&prefix).and_then(|rest| rest.strip_suffix('.')))
                .map(str::to_owned);
            match next {
                Some(e) => self.resolved.push(e),
                None => break,
            }
        }
    }

    fn next_query(&self) -> String {
        if self.complete() {
            self.current().to_owned()
        } else {
            format!("The {} of {}", self.relations[self.hops_done()], self.current())
        }
    }
}

impl Generator for FactReader {
    fn think(&mut self, _question: &str, context: &[RetrievedDoc], _round: usize) -> Result<String> {
        self.advance(context);
        Ok(if self.complete() {
            format!("Every link is resolved and the chain ends at {}.", self.current())
        } else {
            format!(
                "So far the chain reaches {}. Next I need the {} of {}.",
                self.current(),
                self.relations[self.hops_done()],
                self.current()
            )
        })
    }

    fn query(&mut self, _think: &str, _round: usize) -> Result<String> {
        Ok(self.next_query())
    }

    fn answer(&mut self, _question: &str, _think: &str, docs: &[RetrievedDoc], _round: usize) -> Result<GeneratedAnswer> {
        self.advance(docs);
        let confidence = if self.complete() {
            0.97
        } else {
            0.2 + 0.1 * self.hops_done() as f64
        };
        Ok(GeneratedAnswer {
            text: self.current().to_owned(),
            confidence,
            alternatives: Vec::new(),
        })
    }
}

/// Builds the local and web backends for a synthetic corpus.
pub fn build_backends(corpus: &SyntheticCorpus, params: &IndexParams, embedder: Arc<dyn Embedder>, web_latency_ms: f64) -> Result<(Backend, Backend)> {
    let (local_index, _) = build_index(&corpus.local, embedder.as_ref(), params)?;
    let (web_index, _) = build_index(&corpus.web, embedder.as_ref(), params)?;
    let local = Backend::new("local", local_index, &corpus.local, Arc::clone(&embedder))?;
    let web = Backend::new("web", web_index, &corpus.web, embedder)?.with_latency(web_latency_ms);
    Ok((local, web))
}

/// Index parameters sized for the small text corpora.
pub fn text_index_params(seed: u64) -> IndexParams {
    IndexParams {
        dim: 256,
        n_clusters: 8,
        min_doc: 50,
        m: 64,
        kmeans_iterations: 50,
        pq_iterations: 15,
        pq_train_cap: 65_536,
        seed,
    }
}

pub fn text_embedder() -> Arc<dyn Embedder> {
    Arc::new(HashingEmbedder::new(256))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub qa: QaItem,
    /// Replayed instead of reading documents when present.
    #[serde(default)]
    pub script: Option<EpisodeScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub id: String,
    pub prediction: String,
    pub gold: String,
    pub em: bool,
    pub f1: f64,
    pub rounds: usize,
    pub searches: usize,
    pub response_tokens: usize,
    pub terminate_reason: TerminateReason,
    pub latency_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub backend: String,
    pub calls: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn latency_stats(backend: &str, samples: &[f64]) -> LatencyStats {
    let mean = if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    };
    LatencyStats {
        backend: backend.to_owned(),
        calls: samples.len(),
        mean_ms: mean,
        // the nearest-rank p99 can never undercut the mean except by rounding
        p99_ms: percentile(samples, 0.99).max(mean),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub em: f64,
    pub f1: f64,
    /// Share of episodes with token F1 of at least 0.5; stands in for a judge
    /// model.
    pub lj_proxy: f64,
    pub mean_rounds: f64,
    pub mean_searches: f64,
    pub mean_response_tokens: f64,
    pub latency: Vec<LatencyStats>,
}

/// Aggregates per-episode summaries; the result does not depend on order.
pub fn aggregate(episodes: &[EpisodeSummary]) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::Empty("suite"));
    }
    let n = episodes.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeSummary) -> f64| {
        let mut v: Vec<f64> = episodes.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / n
    };
    let mut backends: BTreeSet<&str> = BTreeSet::new();
    for e in episodes {
        backends.extend(e.latency_ms.iter().map(|(b, _)| b.as_str()));
    }
    let latency = backends
        .into_iter()
        .map(|b| {
            let mut samples: Vec<f64> = episodes
                .iter()
                .flat_map(|e| e.latency_ms.iter().filter(|(name, _)| name == b).map(|(_, ms)| *ms))
                .collect();
            samples.sort_by(f64::total_cmp);
            latency_stats(b, &samples)
        })
        .collect();
    Ok(MetricsReport {
        episodes: episodes.len(),
        em: mean(&|e| f64::from(u8::from(e.em))),
        f1: mean(&|e| e.f1),
        lj_proxy: mean(&|e| f64::from(u8::from(e.f1 >= 0.5))),
        mean_rounds: mean(&|e| e.rounds as f64),
        mean_searches: mean(&|e| e.searches as f64),
        mean_response_tokens: mean(&|e| e.response_tokens as f64),
        latency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub report: MetricsReport,
    pub episodes: Vec<EpisodeSummary>,
    /// Rendered transcripts, in case order.
    pub transcripts: Vec<String>,
}

/// Runs every case as an independent episode (in parallel) and aggregates.
pub fn run_suite(cases: &[SuiteCase], config: &PipelineConfig, backends: Backends<'_>, router: Option<&RouterPolicy>) -> Result<SuiteReport> {
    if cases.is_empty() {
        return Err(Error::Empty("suite"));
    }
    for case in cases {
        if let Some(script) = &case.script {
            if script.question != case.qa.question {
                return Err(Error::invalid(format!(
                    "script for `{}` asks `{}` but the case asks `{}`",
                    case.qa.id, script.question, case.qa.question
                )));
            }
        }
    }
    let results: Vec<(EpisodeSummary, String)> = cases
        .par_iter()
        .map(|case| {
            let mut generator: Box<dyn Generator> = match &case.script {
                Some(s) => Box::new(ScriptedGenerator::new(s.clone())),
                None => Box::new(FactReader::new(&case.qa)),
            };
            let background = case.script.as_ref().and_then(|s| s.background.as_deref());
            let out = run_episode(&case.qa.question, background, config, backends, generator.as_mut(), router)
                .map_err(|f| f.source)?;
            let prediction = out.final_answer.text.clone();
            Ok((
                EpisodeSummary {
                    id: case.qa.id.clone(),
                    em: exact_match(&prediction, &case.qa.gold),
                    f1: token_f1(&prediction, &case.qa.gold),
                    prediction,
                    gold: case.qa.gold.clone(),
                    rounds: out.metrics.rounds,
                    searches: out.metrics.searches,
                    response_tokens: out.metrics.response_tokens,
                    terminate_reason: out.terminate_reason,
                    latency_ms: out.metrics.latency_ms,
                },
                out.transcript.render()?,
            ))
        })
        .collect::<Result<_>>()?;
    let (episodes, transcripts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SuiteReport {
        report: aggregate(&episodes)?,
        episodes,
        transcripts,
    })
}

/// Cases that read the corpus rather than replaying scripts.
pub fn fact_cases(corpus: &SyntheticCorpus) -> Vec<SuiteCase> {
    corpus
        .questions
        .iter()
        .map(|qa| SuiteCase {
            qa: qa.clone(),
            script: None,
        })
        .collect()
}

/// The full loop and its naive ablation on the same corpus and seed.
pub fn ablation_configs(seed: u64) -> (PipelineConfig, PipelineConfig) {
    let full = PipelineConfig {
        seed,
        answer_style: AnswerStyle::Short,
        ..PipelineConfig::default()
    };
    let naive = PipelineConfig {
        seed,
        ..PipelineConfig::naive()
    };
    (full, naive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorCorpusSpec {
    pub n_docs: usize,
    pub dim: usize,
    pub n_topics: usize,
    /// Standard deviation of a document around its topic center, relative
    /// to the center's unit norm.
    pub doc_spread: f64,
    /// Perturbation applied to a document to form its query; the default
    /// puts exhaustive Recall@10 near 0.82.
    pub query_noise: f64,
    pub seed: u64,
}

impl Default for VectorCorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 100_000,
            dim: 64,
            n_topics: 256,
            doc_spread: 0.6,
            query_noise: 1.35,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VectorCorpus {
    pub ids: Vec<String>,
    pub vectors: Vec<Embedding>,
    /// Row-major unit vectors, for exhaustive search.
    pub flat: Vec<f32>,
    pub dim: usize,
}

fn gaussian(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let s = scale / (dim as f64).sqrt();
    (0..dim).map(|_| (rng.sample::<f64, _>(StandardNormal) * s) as f32).collect()
}

fn add(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Unit vectors scattered around random topic centers.
pub fn gen_vector_corpus(spec: &VectorCorpusSpec) -> Result<VectorCorpus> {
    if spec.n_docs == 0 || spec.dim == 0 || spec.n_topics == 0 {
        return Err(Error::Config("vector corpus needs documents, dimensions and topics".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f32>> = (0..spec.n_topics)
        .map(|_| Embedding::normalized(gaussian(spec.dim, 1.0, &mut rng)).map(Embedding::into_inner))
        .collect::<Result<_>>()?;
    let mut vectors = Vec::with_capacity(spec.n_docs);
    for _ in 0..spec.n_docs {
        let c = &centers[rng.random_range(0..spec.n_topics)];
        vectors.push(Embedding::normalized(add(c, &gaussian(spec.dim, spec.doc_spread, &mut rng)))?);
    }
    let flat = vectors.iter().flat_map(|v| v.as_slice().iter().copied()).collect();
    Ok(VectorCorpus {
        ids: (0..spec.n_docs).map(|i| format!("v{i:06}")).collect(),
        vectors,
        flat,
        dim: spec.dim,
    })
}

/// Queries formed by perturbing randomly chosen documents; the source
/// document is the one relevant answer.
pub fn gen_vector_queries(corpus: &VectorCorpus, n: usize, noise: f64, seed: u64) -> Result<Vec<(Vec<f32>, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let target = rng.random_range(0..corpus.vectors.len());
            let q = add(corpus.vectors[target].as_slice(), &gaussian(corpus.dim, noise, &mut rng));
            Ok((Embedding::normalized(q)?.into_inner(), target))
        })
        .collect()
}

/// Index parameters for the desk-scale vector benchmark.
pub fn vector_index_params(dim: usize, seed: u64) -> IndexParams {
    IndexParams {
        dim,
        n_clusters: 256,
        min_doc: 150,
        m: dim / 2,
        kmeans_iterations: 20,
        pq_iterations: 10,
        pq_train_cap: 20_000,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub queries: usize,
    pub k: usize,
    pub exhaustive: f64,
    pub cluster: f64,
}

impl RecallReport {
    pub fn ratio(&self) -> f64 {
        if self.exhaustive == 0.0 {
            0.0
        } else {
            self.cluster / self.exhaustive
        }
    }
}

/// Recall@k of the source document for both retrieval paths. Every query
/// is an independent session: a fresh sampler state seeded per query.
pub fn recall_benchmark(
    index: &ClusterIndex,
    corpus: &VectorCorpus,
    queries: &[(Vec<f32>, usize)],
    sampler: &SamplerConfig,
    k: usize,
    rerank_fraction: f64,
) -> Result<RecallReport> {
    if queries.is_empty() {
        return Err(Error::Empty("query set"));
    }
    let hits: Vec<(bool, bool)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, (q, target))| {
            let id = &corpus.ids[*target];
            let exact = exhaustive_search_flat(q, &corpus.ids, &corpus.flat, k);
            let state = SamplerState::for_index(
                index,
                SamplerConfig {
                    seed: mix_seed(sampler.seed, i as u64),
                    ..sampler.clone()
                },
            )?;
            let approx = search(index, q, &state, k, rerank_fraction)?;
            Ok((
                exact.iter().any(|d| &d.doc_id == id),
                approx.results.iter().any(|d| &d.doc_id == id),
            ))
        })
        .collect::<Result<_>>()?;
    let n = hits.len() as f64;
    Ok(RecallReport {
        queries: hits.len(),
        k,
        exhaustive: hits.iter().filter(|h| h.0).count() as f64 / n,
        cluster: hits.iter().filter(|h| h.1).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub queries: usize,
    pub exhaustive: LatencyStats,
    pub cluster: LatencyStats,
    /// Per-query samples in milliseconds: (exhaustive, cluster).
    pub samples: Vec<(f64, f64)>,
}

impl LatencyTable {
    pub fn speedup(&self) -> f64 {
        self.exhaustive.mean_ms / self.cluster.mean_ms
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "query,exhaustive_ms,cluster_ms")?;
        for (i, (e, c)) in self.samples.iter().enumerate() {
            writeln!(out, "{i},{e},{c}")?;
        }
        Ok(())
    }
}

/// Sequential wall-clock timing of both paths on the same queries
/// (retrieval only, no embedding). Needs at least 100 queries.
pub fn bench_latency(
    index: &ClusterIndex,
    corpus: &VectorCorpus,
    queries: &[Vec<f32>],
    sampler: &SamplerConfig,
    k: usize,
    rerank_fraction: f64,
) -> Result<LatencyTable> {
    if queries.len() < 100 {
        return Err(Error::invalid(format!(
            "a p99 needs at least 100 queries, got {}",
            queries.len()
        )));
    }
    let state = SamplerState::for_index(index, sampler.clone())?;
    let mut samples = Vec::with_capacity(queries.len());
    for q in queries {
        let start = Instant::now();
        std::hint::black_box(exhaustive_search_flat(q, &corpus.ids, &corpus.flat, k));
        let exact_ms = start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        std::hint::black_box(search(index, q, &state, k, rerank_fraction)?);
        let cluster_ms = start.elapsed().as_secs_f64() * 1e3;
        samples.push((exact_ms, cluster_ms));
    }
    let exact: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let cluster: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(LatencyTable {
        queries: queries.len(),
        exhaustive: latency_stats("exhaustive", &exact),
        cluster: latency_stats("cluster", &cluster),
        samples,
    })
}

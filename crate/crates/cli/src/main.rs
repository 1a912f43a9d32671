//! `hoprag` — command-line harness around the retrieval engine.
//!
//! Every subcommand reads the optional engine config (`--config`), applies
//! the global `--seed`, and writes its artifacts under `--output`. Tabular
//! artifacts follow `--format`; indexes, corpora and policy checkpoints
//! always use their native encodings. Apart from wall-clock fields, all
//! output is a pure function of the inputs and the seed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hoprag_core::config::EngineConfig;
use hoprag_core::curriculum::{
    build_mask, build_noise_pool, mix_epoch, reward_long, reward_short, write_reward_csv, DatasetSpec,
    PoolItem, RewardBreakdown,
};
use hoprag_core::dynamic_sampler::SamplerState;
use hoprag_core::embed::{embed, Embedder};
use hoprag_core::harness::{
    bench_latency, build_backends, fact_cases, gen_corpus, gen_vector_corpus, gen_vector_queries, recall_benchmark,
    run_suite, vector_index_params, QaItem, SuiteCase, SuiteReport, SyntheticCorpus,
};
use hoprag_core::pipeline::{Backend, Backends, EpisodeScript, PipelineConfig};
use hoprag_core::retrieval::{batch_search, search};
use hoprag_core::routing::{train_bandit, write_training_csv, RouterPolicy};
use hoprag_core::vector_index::{build_index, ClusterIndex, DocumentRecord, ScoredDoc};

#[derive(Debug, Parser)]
#[command(name = "hoprag", version, about = "Multi-round retrieval engine harness")]
struct Cli {
    /// Engine config file (TOML); defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-seeds every seeded component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, default_value = "hoprag-out")]
    output: PathBuf,
    /// Encoding of tabular artifacts.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Short,
    Long,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-hop corpus and its questions.
    GenCorpus,
    /// Build and save cluster indexes.
    BuildIndex {
        /// Documents to index (JSON array of {id, title, text}).
        #[arg(long, conflicts_with = "corpus")]
        docs: Option<PathBuf>,
        /// A generated corpus; builds both the local and the web index.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Search a saved index with one query.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// Documents for titles in the output.
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        text: String,
    },
    /// Search a saved index with one query per line of a file.
    BatchQuery {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run a batch of episodes and aggregate metrics.
    RunSuite {
        /// Generated corpus; generated from the config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Episode scripts (JSON object or array) replayed instead of reading
        /// the corpus; requires --docs.
        #[arg(long, requires = "docs")]
        scripts: Option<PathBuf>,
        /// Documents retrieved by scripted episodes.
        #[arg(long)]
        docs: Option<PathBuf>,
        /// Router checkpoint; a policy is trained from the config otherwise.
        #[arg(long)]
        router: Option<PathBuf>,
        /// One retrieval, one answer: the naive baseline.
        #[arg(long)]
        naive: bool,
        /// Always retrieve locally.
        #[arg(long)]
        no_routing: bool,
        /// Only the first N cases.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train the local/web routing policy on the stateless bandit.
    TrainRouter {
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Build one epoch's gold/noise training mix.
    MixEpoch {
        #[arg(long)]
        epoch: usize,
        /// Gold pool (JSON array of {id, transcript, gold}); derived from
        /// correct episodes on the generated corpus when omitted.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Noise pool; derived by perturbing the gold pool when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Distractor lines used to derive the noise pool.
        #[arg(long)]
        distractors: Option<PathBuf>,
    },
    /// Score transcripts with the format/length/accuracy rewards.
    ScoreRewards {
        /// JSON array of {id, transcript, gold}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Task::Short)]
        task: Task,
        /// Also write per-token loss masks.
        #[arg(long)]
        masks: bool,
    },
    /// Compare exhaustive and cluster retrieval latency and recall.
    BenchLatency {
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

struct Ctx {
    config: EngineConfig,
    output: PathBuf,
    format: Format,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    fn embedder(&self) -> Arc<dyn Embedder> {
        Arc::new(self.config.embedder.clone())
    }

    fn announce(&self, path: &Path) {
        println!("wrote {}", path.display());
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.announce(&path);
        Ok(path)
    }

    /// Flat rows as a JSON array or a CSV table, per `--format`.
    fn write_rows<T: Serialize>(&self, stem: &str, rows: &[T]) -> Result<PathBuf> {
        match self.format {
            Format::Json => self.write_json(&format!("{stem}.json"), rows),
            Format::Csv => {
                let path = self.path(&format!("{stem}.csv"));
                let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
                for row in rows {
                    w.serialize(row)?;
                }
                w.flush()?;
                self.announce(&path);
                Ok(path)
            }
        }
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
        let path = self.path(name);
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok((path, BufWriter::new(file)))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A JSON file holding either one value or an array of them.
fn read_one_or_many<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        Many(Vec<T>),
        One(T),
    }
    Ok(match read_json::<OneOrMany<T>>(path)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(v) => vec![v],
    })
}

fn load_corpus(ctx: &Ctx, path: Option<&Path>) -> Result<SyntheticCorpus> {
    match path {
        Some(p) => read_json(p),
        None => Ok(gen_corpus(&ctx.config.corpus)?),
    }
}

fn load_index(ctx: &Ctx, path: &Path) -> Result<ClusterIndex> {
    let index = ClusterIndex::load(path).with_context(|| format!("loading index {}", path.display()))?;
    ensure!(
        index.dim() == ctx.config.embedder.dim,
        "index dimension {} differs from the configured embedder dimension {}",
        index.dim(),
        ctx.config.embedder.dim
    );
    Ok(index)
}

#[derive(Serialize)]
struct QuestionRow<'a> {
    id: &'a str,
    question: &'a str,
    gold: &'a str,
    hops: usize,
    web_only: bool,
}

fn cmd_gen_corpus(ctx: &Ctx) -> Result<()> {
    let corpus = gen_corpus(&ctx.config.corpus)?;
    ctx.write_json("corpus.json", &corpus)?;
    let rows: Vec<QuestionRow> = corpus
        .questions
        .iter()
        .map(|q| QuestionRow {
            id: &q.id,
            question: &q.question,
            gold: &q.gold,
            hops: q.relations.len(),
            web_only: q.web_only,
        })
        .collect();
    ctx.write_rows("questions", &rows)?;
    println!(
        "{} local documents, {} web documents, {} questions",
        corpus.local.len(),
        corpus.web.len(),
        corpus.questions.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct StorageRow {
    index: String,
    n_docs: usize,
    n_clusters: usize,
    total_bytes: usize,
    code_bytes_per_doc: f64,
    raw_bytes_per_doc: usize,
    compression_ratio: f64,
}

fn cmd_build_index(ctx: &Ctx, docs: Option<&Path>, corpus: Option<&Path>) -> Result<()> {
    let sets: Vec<(&str, Vec<DocumentRecord>)> = match docs {
        Some(p) => vec![("docs", read_json(p)?)],
        None => {
            let c = load_corpus(ctx, corpus)?;
            vec![("local", c.local), ("web", c.web)]
        }
    };
    let embedder = ctx.embedder();
    let mut rows = Vec::new();
    for (name, records) in sets {
        let (index, _) = build_index(&records, embedder.as_ref(), &ctx.config.index)?;
        let path = ctx.path(&format!("{name}.idx"));
        index.save(&path)?;
        ctx.announce(&path);
        ctx.write_json(&format!("{name}.docs.json"), &records)?;
        let report = index.storage_report();
        rows.push(StorageRow {
            index: name.to_owned(),
            n_docs: report.n_docs,
            n_clusters: index.n_clusters(),
            total_bytes: report.total_bytes,
            code_bytes_per_doc: report.code_bytes_per_doc,
            raw_bytes_per_doc: report.raw_bytes_per_doc,
            compression_ratio: report.compression_ratio(),
        });
    }
    ctx.write_rows("storage", &rows).map(|_| ())
}

#[derive(Serialize)]
struct HitRow {
    query: usize,
    rank: usize,
    doc_id: String,
    score: f32,
    title: String,
}

fn hit_rows(query: usize, hits: &[ScoredDoc], titles: &std::collections::HashMap<String, String>) -> Vec<HitRow> {
    hits.iter()
        .enumerate()
        .map(|(rank, d)| HitRow {
            query,
            rank: rank + 1,
            doc_id: d.doc_id.clone(),
            score: d.score,
            title: titles.get(&d.doc_id).cloned().unwrap_or_default(),
        })
        .collect()
}

fn titles(docs: Option<&Path>) -> Result<std::collections::HashMap<String, String>> {
    Ok(match docs {
        Some(p) => read_json::<Vec<DocumentRecord>>(p)?.into_iter().map(|d| (d.id, d.title)).collect(),
        None => Default::default(),
    })
}

fn cmd_query(ctx: &Ctx, index: &Path, docs: Option<&Path>, top_k: Option<usize>, text: &str) -> Result<()> {
    let index = load_index(ctx, index)?;
    let search_cfg = &ctx.config.pipeline.search;
    let state = SamplerState::for_index(&index, search_cfg.sampler.clone())?;
    let q = embed(text, &ctx.config.embedder, index.dim())?;
    let out = search(&index, q.as_slice(), &state, top_k.unwrap_or(search_cfg.top_k), search_cfg.rerank_fraction)?;
    let rows = hit_rows(0, &out.results, &titles(docs)?);
    for r in &rows {
        println!("{:>3}  {:<12} {:.4}  {}", r.rank, r.doc_id, r.score, r.title);
    }
    ctx.write_rows("query", &rows).map(|_| ())
}

fn cmd_batch_query(ctx: &Ctx, index: &Path, docs: Option<&Path>, queries: &Path, top_k: Option<usize>) -> Result<()> {
    let index = load_index(ctx, index)?;
    let text = fs::read_to_string(queries).with_context(|| format!("reading {}", queries.display()))?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    ensure!(!lines.is_empty(), "{} holds no queries", queries.display());
    let vectors: Vec<Vec<f32>> = lines
        .iter()
        .map(|l| embed(l, &ctx.config.embedder, index.dim()).map(|e| e.into_inner()))
        .collect::<hoprag_core::Result<_>>()?;
    let mut search_cfg = ctx.config.pipeline.search.clone();
    if let Some(k) = top_k {
        search_cfg.top_k = k;
    }
    let state = SamplerState::for_index(&index, search_cfg.sampler.clone())?;
    let results = batch_search(&index, &vectors, &state, &search_cfg)?;
    let titles = titles(docs)?;
    let rows: Vec<HitRow> = results.iter().enumerate().flat_map(|(i, hits)| hit_rows(i, hits, &titles)).collect();
    println!("{} queries, {} hits", lines.len(), rows.len());
    ctx.write_rows("batch_query", &rows).map(|_| ())
}

fn router_policy(ctx: &Ctx, path: Option<&Path>) -> Result<RouterPolicy> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(RouterPolicy::from_json(&text)?)
        }
        None => {
            let mut policy = ctx.config.router.policy();
            train_bandit(&mut policy, &ctx.config.router.bandit)?;
            Ok(policy)
        }
    }
}

fn scripted_cases(scripts: &[EpisodeScript]) -> Vec<SuiteCase> {
    scripts
        .iter()
        .enumerate()
        .map(|(i, s)| SuiteCase {
            qa: QaItem {
                id: format!("script{i:03}"),
                question: s.question.clone(),
                head: String::new(),
                relations: Vec::new(),
                gold: s.gold.clone(),
                chain_docs: Vec::new(),
                web_only: false,
            },
            script: Some(s.clone()),
        })
        .collect()
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    id: &'a str,
    prediction: &'a str,
    gold: &'a str,
    em: bool,
    f1: f64,
    rounds: usize,
    searches: usize,
    response_tokens: usize,
    terminate_reason: String,
    latency_ms: f64,
}

#[derive(Serialize)]
struct MetricRow {
    metric: String,
    value: f64,
}

fn write_suite(ctx: &Ctx, suite: &SuiteReport) -> Result<()> {
    let r = &suite.report;
    match ctx.format {
        Format::Json => {
            ctx.write_json("suite_report.json", &r)?;
            ctx.write_json("episodes.json", &suite.episodes)?;
        }
        Format::Csv => {
            let mut metrics = vec![
                ("episodes", r.episodes as f64),
                ("em", r.em),
                ("f1", r.f1),
                ("lj_proxy", r.lj_proxy),
                ("mean_rounds", r.mean_rounds),
                ("mean_searches", r.mean_searches),
                ("mean_response_tokens", r.mean_response_tokens),
            ]
            .into_iter()
            .map(|(m, v)| MetricRow { metric: m.into(), value: v })
            .collect::<Vec<_>>();
            for s in &r.latency {
                metrics.push(MetricRow { metric: format!("{}_calls", s.backend), value: s.calls as f64 });
                metrics.push(MetricRow { metric: format!("{}_mean_ms", s.backend), value: s.mean_ms });
                metrics.push(MetricRow { metric: format!("{}_p99_ms", s.backend), value: s.p99_ms });
            }
            ctx.write_rows("suite_report", &metrics)?;
            let rows: Vec<EpisodeRow> = suite
                .episodes
                .iter()
                .map(|e| EpisodeRow {
                    id: &e.id,
                    prediction: &e.prediction,
                    gold: &e.gold,
                    em: e.em,
                    f1: e.f1,
                    rounds: e.rounds,
                    searches: e.searches,
                    response_tokens: e.response_tokens,
                    terminate_reason: serde_json::to_value(e.terminate_reason)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default(),
                    latency_ms: e.latency_ms.iter().map(|(_, ms)| ms).sum(),
                })
                .collect();
            ctx.write_rows("episodes", &rows)?;
        }
    }
    let (path, mut w) = ctx.create("transcripts.jsonl")?;
    for (e, t) in suite.episodes.iter().zip(&suite.transcripts) {
        serde_json::to_writer(&mut w, &serde_json::json!({ "id": e.id, "gold": e.gold, "transcript": t }))?;
        writeln!(w)?;
    }
    w.flush()?;
    ctx.announce(&path);
    println!(
        "{} episodes: EM {:.3}, F1 {:.3}, LJ-proxy {:.3}, rounds {:.2}, searches {:.2}, response tokens {:.1}",
        r.episodes, r.em, r.f1, r.lj_proxy, r.mean_rounds, r.mean_searches, r.mean_response_tokens
    );
    for s in &r.latency {
        println!("  {}: {} calls, mean {:.2} ms, p99 {:.2} ms", s.backend, s.calls, s.mean_ms, s.p99_ms);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_suite(
    ctx: &Ctx,
    corpus: Option<&Path>,
    scripts: Option<&Path>,
    docs: Option<&Path>,
    router: Option<&Path>,
    naive: bool,
    no_routing: bool,
    limit: Option<usize>,
) -> Result<()> {
    let mut config = if naive {
        PipelineConfig {
            seed: ctx.config.pipeline.seed,
            search: ctx.config.pipeline.search.clone(),
            ..PipelineConfig::naive()
        }
    } else {
        ctx.config.pipeline.clone()
    };
    if no_routing {
        config.routing_enabled = false;
    }
    let embedder = ctx.embedder();
    let latency = ctx.config.backends.web_latency_ms;
    let (local, web, mut cases) = match scripts {
        Some(path) => {
            let docs: Vec<DocumentRecord> = read_json(docs.expect("clap enforces --docs"))?;
            let (index, _) = build_index(&docs, embedder.as_ref(), &ctx.config.index)?;
            let local = Backend::new("local", index.clone(), &docs, Arc::clone(&embedder))?;
            let web = Backend::new("web", index, &docs, embedder)?.with_latency(latency);
            (local, web, scripted_cases(&read_one_or_many(path)?))
        }
        None => {
            let corpus = load_corpus(ctx, corpus)?;
            let (local, web) = build_backends(&corpus, &ctx.config.index, embedder, latency)?;
            (local, web, fact_cases(&corpus))
        }
    };
    let local = local.with_latency(ctx.config.backends.local_latency_ms);
    if let Some(n) = limit {
        cases.truncate(n);
    }
    let policy = if config.routing_enabled { Some(router_policy(ctx, router)?) } else { None };
    let backends = Backends { local: &local, web: Some(&web) };
    let suite = run_suite(&cases, &config, backends, policy.as_ref())?;
    write_suite(ctx, &suite)
}

fn cmd_train_router(ctx: &Ctx, updates: Option<usize>) -> Result<()> {
    let mut bandit = ctx.config.router.bandit.clone();
    if let Some(u) = updates {
        bandit.updates = u;
    }
    let mut policy = ctx.config.router.policy();
    let rows = train_bandit(&mut policy, &bandit)?;
    let path = ctx.path("router.json");
    fs::write(&path, policy.to_json()?)?;
    ctx.announce(&path);
    match ctx.format {
        Format::Json => {
            ctx.write_json("training.json", &rows)?;
        }
        Format::Csv => {
            let (path, mut w) = ctx.create("training.csv")?;
            write_training_csv(&rows, &mut w)?;
            w.flush()?;
            ctx.announce(&path);
        }
    }
    if let Some(last) = rows.last() {
        println!("{} updates, final P(local) = {:.4}", rows.len(), last.p_local);
    }
    Ok(())
}

/// Gold items from correctly answered fact episodes, and the corpus
/// documents as distractor lines.
fn derived_pools(ctx: &Ctx) -> Result<(Vec<PoolItem>, Vec<String>)> {
    let corpus = gen_corpus(&ctx.config.corpus)?;
    let (local, web) = build_backends(&corpus, &ctx.config.index, ctx.embedder(), 0.0)?;
    let config = PipelineConfig {
        routing_enabled: false,
        ..ctx.config.pipeline.clone()
    };
    let suite = run_suite(&fact_cases(&corpus), &config, Backends { local: &local, web: Some(&web) }, None)?;
    let gold: Vec<PoolItem> = suite
        .episodes
        .iter()
        .zip(&suite.transcripts)
        .filter(|(e, _)| e.em)
        .map(|(e, t)| PoolItem {
            id: e.id.clone(),
            transcript: t.clone(),
            gold: e.gold.clone(),
        })
        .collect();
    let distractors = corpus.local.iter().map(|d| format!("[{}] {}: {}", d.id, d.title, d.text)).collect();
    Ok((gold, distractors))
}

#[derive(Serialize)]
struct ManifestRow<'a> {
    id: &'a str,
    provenance: hoprag_core::curriculum::Provenance,
}

fn cmd_mix_epoch(ctx: &Ctx, epoch: usize, gold: Option<&Path>, noise: Option<&Path>, distractors: Option<&Path>) -> Result<()> {
    let (gold, derived_distractors) = match gold {
        Some(p) => (read_json::<Vec<PoolItem>>(p)?, Vec::new()),
        None => {
            let (g, d) = derived_pools(ctx)?;
            ctx.write_json("gold_pool.json", &g)?;
            (g, d)
        }
    };
    let noise = match noise {
        Some(p) => read_json::<Vec<PoolItem>>(p)?,
        None => {
            let lines: Vec<String> = match distractors {
                Some(p) => fs::read_to_string(p)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect(),
                None => derived_distractors,
            };
            if lines.is_empty() {
                bail!("deriving a noise pool needs --distractors (or omit --gold to derive both pools)");
            }
            let n = build_noise_pool(&gold, &lines, ctx.config.corpus.seed)?;
            ctx.write_json("noise_pool.json", &n)?;
            n
        }
    };
    let spec = DatasetSpec {
        turning_epoch: ctx.config.curriculum.turning_epoch,
        noise_c: ctx.config.curriculum.noise_c,
        base_size: ctx.config.curriculum.base_size,
        ..DatasetSpec::new(gold, noise, epoch, ctx.config.pipeline.seed)
    };
    let manifest = mix_epoch(&spec)?;
    let stem = format!("manifest_epoch{epoch}");
    match ctx.format {
        Format::Json => {
            ctx.write_json(&format!("{stem}.json"), &manifest)?;
        }
        Format::Csv => {
            let rows: Vec<ManifestRow> = manifest.items.iter().map(|i| ManifestRow { id: &i.id, provenance: i.provenance }).collect();
            ctx.write_rows(&stem, &rows)?;
        }
    }
    use hoprag_core::curriculum::Provenance::*;
    println!(
        "epoch {epoch}: gold ratio {:.3}, noise scale {:.4}; {} gold, {} noise, {} scaled noise",
        manifest.gold_ratio,
        manifest.alpha_e,
        manifest.count(Gold),
        manifest.count(Noise),
        manifest.count(ScaledNoise)
    );
    Ok(())
}

#[derive(Serialize)]
struct RewardRow<'a> {
    id: &'a str,
    #[serde(flatten)]
    reward: &'a RewardBreakdown,
}

fn cmd_score_rewards(ctx: &Ctx, input: &Path, task: Task, masks: bool) -> Result<()> {
    let items: Vec<PoolItem> = read_json(input)?;
    let weights = &ctx.config.rewards;
    let rows: Vec<(String, RewardBreakdown)> = items
        .iter()
        .map(|item| {
            let r = match task {
                Task::Short => reward_short(&item.transcript, &item.gold, weights),
                Task::Long => reward_long(&item.transcript, &item.gold, weights),
            };
            r.map(|r| (item.id.clone(), r)).with_context(|| format!("scoring `{}`", item.id))
        })
        .collect::<Result<_>>()?;
    match ctx.format {
        Format::Json => {
            let json: Vec<RewardRow> = rows.iter().map(|(id, reward)| RewardRow { id, reward }).collect();
            ctx.write_json("rewards.json", &json)?;
        }
        Format::Csv => {
            let (path, mut w) = ctx.create("rewards.csv")?;
            write_reward_csv(&rows, &mut w)?;
            w.flush()?;
            ctx.announce(&path);
        }
    }
    if masks {
        let (path, mut w) = ctx.create("masks.jsonl")?;
        for item in &items {
            // transcripts that do not parse have no token alignment
            let mask = hoprag_core::transcript::parse_transcript(&item.transcript)
                .ok()
                .and_then(|t| build_mask(&t).ok());
            let line = match mask {
                Some(m) => serde_json::json!({ "id": item.id, "tokens": m.len(), "masked": m.zeros(), "mask": m.values }),
                None => serde_json::json!({ "id": item.id, "tokens": null, "masked": null, "mask": null }),
            };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        w.flush()?;
        ctx.announce(&path);
    }
    let mean = rows.iter().map(|(_, r)| r.total).sum::<f64>() / rows.len().max(1) as f64;
    println!("{} transcripts, mean reward {mean:.4}", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    n_docs: usize,
    dim: usize,
    n_clusters: usize,
    queries: usize,
    k: usize,
    exhaustive_mean_ms: f64,
    exhaustive_p99_ms: f64,
    cluster_mean_ms: f64,
    cluster_p99_ms: f64,
    speedup: f64,
    exhaustive_recall: f64,
    cluster_recall: f64,
    recall_ratio: f64,
}

fn cmd_bench_latency(ctx: &Ctx, n_queries: usize, k: usize) -> Result<()> {
    let spec = &ctx.config.vectors;
    let corpus = gen_vector_corpus(spec)?;
    let params = vector_index_params(spec.dim, spec.seed);
    let index = ClusterIndex::build(&corpus.ids, &corpus.vectors, &params)?;
    let queries = gen_vector_queries(&corpus, n_queries, spec.query_noise, hoprag_core::text::mix_seed(spec.seed, 1))?;
    let vectors: Vec<Vec<f32>> = queries.iter().map(|(q, _)| q.clone()).collect();
    let search_cfg = &ctx.config.pipeline.search;
    let table = bench_latency(&index, &corpus, &vectors, &search_cfg.sampler, k, search_cfg.rerank_fraction)?;
    let recall = recall_benchmark(&index, &corpus, &queries, &search_cfg.sampler, k, search_cfg.rerank_fraction)?;
    let summary = BenchSummary {
        n_docs: corpus.ids.len(),
        dim: spec.dim,
        n_clusters: index.n_clusters(),
        queries: table.queries,
        k,
        exhaustive_mean_ms: table.exhaustive.mean_ms,
        exhaustive_p99_ms: table.exhaustive.p99_ms,
        cluster_mean_ms: table.cluster.mean_ms,
        cluster_p99_ms: table.cluster.p99_ms,
        speedup: table.speedup(),
        exhaustive_recall: recall.exhaustive,
        cluster_recall: recall.cluster,
        recall_ratio: recall.ratio(),
    };
    match ctx.format {
        Format::Json => {
            ctx.write_json("latency.json", &table)?;
        }
        Format::Csv => {
            let (path, mut w) = ctx.create("latency.csv")?;
            table.write_csv(&mut w)?;
            w.flush()?;
            ctx.announce(&path);
        }
    }
    ctx.write_rows("bench_summary", std::slice::from_ref(&summary))?;
    println!(
        "exhaustive mean {:.3} ms (p99 {:.3}); cluster mean {:.3} ms (p99 {:.3}); {:.1}x faster",
        summary.exhaustive_mean_ms, summary.exhaustive_p99_ms, summary.cluster_mean_ms, summary.cluster_p99_ms, summary.speedup
    );
    println!(
        "Recall@{k}: exhaustive {:.4}, cluster {:.4}, ratio {:.4}",
        summary.exhaustive_recall, summary.cluster_recall, summary.recall_ratio
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    fs::create_dir_all(&cli.output).with_context(|| format!("creating {}", cli.output.display()))?;
    let ctx = Ctx {
        config,
        output: cli.output,
        format: cli.format,
    };
    match &cli.command {
        Command::GenCorpus => cmd_gen_corpus(&ctx),
        Command::BuildIndex { docs, corpus } => cmd_build_index(&ctx, docs.as_deref(), corpus.as_deref()),
        Command::Query { index, docs, top_k, text } => cmd_query(&ctx, index, docs.as_deref(), *top_k, text),
        Command::BatchQuery { index, docs, queries, top_k } => cmd_batch_query(&ctx, index, docs.as_deref(), queries, *top_k),
        Command::RunSuite { corpus, scripts, docs, router, naive, no_routing, limit } => cmd_run_suite(
            &ctx,
            corpus.as_deref(),
            scripts.as_deref(),
            docs.as_deref(),
            router.as_deref(),
            *naive,
            *no_routing,
            *limit,
        ),
        Command::TrainRouter { updates } => cmd_train_router(&ctx, *updates),
        Command::MixEpoch { epoch, gold, noise, distractors } => {
            cmd_mix_epoch(&ctx, *epoch, gold.as_deref(), noise.as_deref(), distractors.as_deref())
        }
        Command::ScoreRewards { input, task, masks } => cmd_score_rewards(&ctx, input, *task, *masks),
        Command::BenchLatency { queries, k } => cmd_bench_latency(&ctx, *queries, *k),
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

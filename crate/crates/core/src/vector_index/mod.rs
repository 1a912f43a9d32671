//! Cluster-based compressed dense index.
//!
//! Documents are bucketed by nearest k-means centroid (inverted file) and the
//! residual from that centroid is product-quantized to `m` bytes. Queries
//! score codes asymmetrically through a per-query lookup table, then rescore
//! a fraction of the best candidates by cosine on reconstructed vectors.

mod format;
pub mod pq;

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, dot, embed, l2_norm, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::kmeans::{assign, kmeans, KMeansParams};

pub use format::{StorageReport, INDEX_MAGIC, INDEX_VERSION};
pub use pq::{PqCodebook, PqTrainParams, CODEWORDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl DocumentRecord {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Approximate,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f32,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    pub dim: usize,
    /// Requested cluster count, capped at `corpus / min_doc` during build.
    pub n_clusters: usize,
    pub min_doc: usize,
    /// Sub-quantizers per vector (bytes per code).
    pub m: usize,
    pub kmeans_iterations: usize,
    pub pq_iterations: usize,
    /// Maximum residuals sampled for codebook training.
    pub pq_train_cap: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            dim: 768,
            n_clusters: 5000,
            min_doc: 150,
            m: 256,
            kmeans_iterations: 100,
            pq_iterations: 25,
            pq_train_cap: 65_536,
            seed: 42,
        }
    }
}

impl IndexParams {
    pub fn effective_clusters(&self, n_docs: usize) -> usize {
        let cap = if self.min_doc == 0 {
            n_docs
        } else {
            n_docs / self.min_doc
        };
        self.n_clusters.min(cap).max(1)
    }
}

/// Immutable searchable structure.
#[derive(Debug, Clone)]
pub struct ClusterIndex {
    params: IndexParams,
    centroids: Vec<f32>,
    centroid_norms: Vec<f32>,
    doc_ids: Vec<String>,
    id_lookup: HashMap<String, u32>,
    /// Position of each doc id in ascending id order, for tie-breaking.
    id_rank: Vec<u32>,
    assignments: Vec<u32>,
    postings: Vec<Vec<u32>>,
    codebook: PqCodebook,
    codes: Vec<u8>,
}

/// Embeds a corpus and builds the index over it.
pub fn build_index(
    corpus: &[DocumentRecord],
    embedder: &dyn Embedder,
    params: &IndexParams,
) -> Result<(ClusterIndex, Vec<Embedding>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if let Some(doc) = corpus.iter().find(|d| d.text.is_empty()) {
        return Err(Error::invalid(format!("document `{}` has empty text", doc.id)));
    }
    let vectors: Vec<Embedding> = corpus
        .par_iter()
        .map(|d| embed(&d.text, embedder, params.dim))
        .collect::<Result<_>>()?;
    let ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let index = ClusterIndex::build(&ids, &vectors, params)?;
    Ok((index, vectors))
}

impl ClusterIndex {
    /// Builds from precomputed embeddings. Deterministic for a fixed seed.
    pub fn build(ids: &[String], vectors: &[Embedding], params: &IndexParams) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        if ids.len() != vectors.len() {
            return Err(Error::invalid("ids and vectors differ in length"));
        }
        let dim = params.dim;
        if params.m == 0 || !dim.is_multiple_of(params.m) {
            return Err(Error::Config(format!(
                "dimension {dim} is not divisible by m = {}",
                params.m
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::Config(format!(
                "embedding of dimension {} in a {dim}-dimensional index",
                v.dim()
            )));
        }
        let mut id_lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id_lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate document id `{id}`")));
            }
        }

        let n = ids.len();
        let data: Vec<f32> = vectors.iter().flat_map(|v| v.as_slice().iter().copied()).collect();
        let k = params.effective_clusters(n);
        let fit = kmeans(
            &data,
            dim,
            &KMeansParams {
                k,
                max_iter: params.kmeans_iterations,
                tol: 1e-5,
                seed: params.seed,
            },
        )?;

        let (centroids, assignments) =
            merge_small_clusters(&data, dim, fit.centroids, fit.assignments, params.min_doc.max(1));
        let n_clusters = centroids.len() / dim;
        let mut postings = vec![Vec::new(); n_clusters];
        for (doc, &c) in assignments.iter().enumerate() {
            postings[c as usize].push(doc as u32);
        }

        let mut residuals = data.clone();
        for (i, row) in residuals.chunks_exact_mut(dim).enumerate() {
            let c = assignments[i] as usize;
            for (r, &cv) in row.iter_mut().zip(&centroids[c * dim..(c + 1) * dim]) {
                *r -= cv;
            }
        }
        let train_rows: Vec<f32> = if n > params.pq_train_cap && params.pq_train_cap > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5051_5f54_5241_494e);
            let mut picked = sample(&mut rng, n, params.pq_train_cap).into_vec();
            picked.sort_unstable();
            picked
                .iter()
                .flat_map(|&i| residuals[i * dim..(i + 1) * dim].iter().copied())
                .collect()
        } else {
            residuals.clone()
        };
        let mut codebook = PqCodebook::new(dim, params.m)?;
        codebook.train(
            &train_rows,
            PqTrainParams {
                iterations: params.pq_iterations,
                seed: params.seed.wrapping_mul(31).wrapping_add(7),
            },
        )?;

        let mut codes = vec![0u8; n * params.m];
        codes
            .par_chunks_mut(params.m)
            .zip(residuals.par_chunks(dim))
            .try_for_each(|(code, residual)| codebook.encode_residual_into(residual, code))?;

        let mut stored = params.clone();
        stored.n_clusters = n_clusters;
        Ok(Self::from_parts(
            stored,
            centroids,
            ids.to_vec(),
            assignments,
            postings,
            codebook,
            codes,
        ))
    }

    pub(crate) fn from_parts(
        params: IndexParams,
        centroids: Vec<f32>,
        doc_ids: Vec<String>,
        assignments: Vec<u32>,
        postings: Vec<Vec<u32>>,
        codebook: PqCodebook,
        codes: Vec<u8>,
    ) -> Self {
        let dim = params.dim;
        let centroid_norms = centroids.chunks_exact(dim).map(l2_norm).collect();
        let id_lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let mut order: Vec<u32> = (0..doc_ids.len() as u32).collect();
        order.sort_by(|&a, &b| doc_ids[a as usize].cmp(&doc_ids[b as usize]));
        let mut id_rank = vec![0u32; doc_ids.len()];
        for (rank, &doc) in order.iter().enumerate() {
            id_rank[doc as usize] = rank as u32;
        }
        Self {
            params,
            centroids,
            centroid_norms,
            doc_ids,
            id_lookup,
            id_rank,
            assignments,
            postings,
            codebook,
            codes,
        }
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn n_clusters(&self) -> usize {
        self.postings.len()
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn centroid(&self, cluster: usize) -> &[f32] {
        let dim = self.dim();
        &self.centroids[cluster * dim..(cluster + 1) * dim]
    }

    pub fn postings(&self, cluster: usize) -> &[u32] {
        &self.postings[cluster]
    }

    pub fn posting_sizes(&self) -> Vec<usize> {
        self.postings.iter().map(Vec::len).collect()
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.id_lookup.get(doc_id).copied()
    }

    /// Cluster of a document.
    pub fn cluster_of(&self, doc_id: &str) -> Result<usize> {
        self.ordinal(doc_id)
            .map(|o| self.assignments[o as usize] as usize)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_owned()))
    }

    pub(crate) fn cluster_of_ordinal(&self, ordinal: u32) -> usize {
        self.assignments[ordinal as usize] as usize
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn code(&self, ordinal: u32) -> &[u8] {
        let m = self.params.m;
        &self.codes[ordinal as usize * m..(ordinal as usize + 1) * m]
    }

    /// Checks the assignment/postings bijection and code sizes.
    pub fn check_consistency(&self) -> Result<()> {
        let total: usize = self.postings.iter().map(Vec::len).sum();
        if total != self.doc_ids.len() || self.assignments.len() != self.doc_ids.len() {
            return Err(Error::Format("postings do not cover every document once".into()));
        }
        let mut seen = vec![false; self.doc_ids.len()];
        for (c, list) in self.postings.iter().enumerate() {
            for &d in list {
                if seen[d as usize] || self.assignments[d as usize] as usize != c {
                    return Err(Error::Format(format!("doc {d} inconsistent with cluster {c}")));
                }
                seen[d as usize] = true;
            }
        }
        if self.codes.len() != self.doc_ids.len() * self.params.m {
            return Err(Error::Format("code block has the wrong size".into()));
        }
        Ok(())
    }

    /// Cosine between a query and every centroid.
    pub fn centroid_similarities(&self, query: &[f32]) -> Vec<f32> {
        let qn = l2_norm(query);
        self.centroids
            .chunks_exact(self.dim())
            .zip(&self.centroid_norms)
            .map(|(c, &cn)| {
                if cn == 0.0 || qn == 0.0 {
                    0.0
                } else {
                    dot(query, c) / (cn * qn)
                }
            })
            .collect()
    }

    pub(crate) fn reconstruct_ordinal(&self, ordinal: u32) -> Vec<f32> {
        let cluster = self.cluster_of_ordinal(ordinal);
        let mut out = self.centroid(cluster).to_vec();
        let sub = self.codebook.sub_dim();
        for (b, &c) in self.code(ordinal).iter().enumerate() {
            for (o, &v) in out[b * sub..(b + 1) * sub].iter_mut().zip(self.codebook.codeword(b, c)) {
                *o += v;
            }
        }
        out
    }

    /// Assigned centroid plus decoded residual.
    pub fn reconstruct(&self, doc_id: &str) -> Result<Embedding> {
        let ordinal = self
            .ordinal(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_owned()))?;
        Embedding::new(self.reconstruct_ordinal(ordinal))
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(Error::invalid(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Descending score, then ascending doc id.
    pub(crate) fn sort_hits(&self, hits: &mut [(u32, f32)]) {
        hits.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.id_rank[a.0 as usize].cmp(&self.id_rank[b.0 as usize]))
        });
    }

    pub(crate) fn to_scored(&self, hits: &[(u32, f32)], stage: Stage) -> Vec<ScoredDoc> {
        hits.iter()
            .map(|&(o, score)| ScoredDoc {
                doc_id: self.doc_ids[o as usize].clone(),
                score,
                stage,
            })
            .collect()
    }

    /// Approximate scores `<q, centroid + decoded residual>` for the best
    /// `budget` documents of each cluster (all of it when the list is shorter).
    pub(crate) fn approx_hits(&self, query: &[f32], budgets: &[(usize, usize)]) -> Result<Vec<(u32, f32)>> {
        self.check_query(query)?;
        if budgets.iter().all(|&(_, b)| b == 0) {
            return Ok(Vec::new());
        }
        let table = self.codebook.inner_product_table(query);
        let mut merged = Vec::new();
        for &(cluster, budget) in budgets {
            if cluster >= self.n_clusters() {
                return Err(Error::UnknownCluster(cluster));
            }
            if budget == 0 {
                continue;
            }
            let base = dot(query, self.centroid(cluster));
            let mut hits: Vec<(u32, f32)> = self.postings[cluster]
                .iter()
                .map(|&o| (o, base + self.adc_residual(&table, o)))
                .collect();
            if hits.len() > budget {
                let id_rank = &self.id_rank;
                hits.select_nth_unstable_by(budget - 1, |a, b| {
                    b.1.total_cmp(&a.1)
                        .then_with(|| id_rank[a.0 as usize].cmp(&id_rank[b.0 as usize]))
                });
                hits.truncate(budget);
            }
            merged.extend(hits);
        }
        self.sort_hits(&mut merged);
        Ok(merged)
    }

    #[inline]
    fn adc_residual(&self, table: &[f32], ordinal: u32) -> f32 {
        self.code(ordinal)
            .iter()
            .enumerate()
            .map(|(b, &c)| table[b * CODEWORDS + c as usize])
            .sum()
    }

    /// Approximate first-stage scoring over the given clusters and budgets.
    pub fn approx_score(&self, query: &[f32], budgets: &[(usize, usize)]) -> Result<Vec<ScoredDoc>> {
        let hits = self.approx_hits(query, budgets)?;
        Ok(self.to_scored(&hits, Stage::Approximate))
    }

    /// Rescores the top `ceil(fraction * len)` approximate hits by cosine on
    /// reconstructed vectors.
    /// Rescores the best `max(ceil(fraction * n), min_count)` candidates.
    pub(crate) fn rerank_hits(&self, query: &[f32], candidates: &[(u32, f32)], fraction: f64, min_count: usize) -> Result<Vec<(u32, f32)>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("rerank fraction {fraction} outside (0, 1]")));
        }
        self.check_query(query)?;
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut sorted = candidates.to_vec();
        self.sort_hits(&mut sorted);
        let take = ((fraction * sorted.len() as f64).ceil() as usize).max(min_count).clamp(1, sorted.len());
        let mut exact: Vec<(u32, f32)> = sorted[..take]
            .iter()
            .map(|&(o, _)| (o, cosine(query, &self.reconstruct_ordinal(o))))
            .collect();
        self.sort_hits(&mut exact);
        Ok(exact)
    }

    pub fn rerank(&self, query: &[f32], candidates: &[ScoredDoc], fraction: f64) -> Result<Vec<ScoredDoc>> {
        let hits = candidates
            .iter()
            .map(|c| {
                self.ordinal(&c.doc_id)
                    .map(|o| (o, c.score))
                    .ok_or_else(|| Error::UnknownDoc(c.doc_id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let exact = self.rerank_hits(query, &hits, fraction, 1)?;
        Ok(self.to_scored(&exact, Stage::Exact))
    }

    /// Approximate scores for arbitrary documents (used by the fallback path).
    pub(crate) fn approx_hits_for(&self, query: &[f32], ordinals: &[u32]) -> Vec<(u32, f32)> {
        let table = self.codebook.inner_product_table(query);
        ordinals
            .iter()
            .map(|&o| {
                let base = dot(query, self.centroid(self.cluster_of_ordinal(o)));
                (o, base + self.adc_residual(&table, o))
            })
            .collect()
    }
}

/// Drops clusters with fewer than `min_doc` members, reassigns their
/// documents to the nearest surviving centroid and recomputes the survivors'
/// means. Returns compacted centroids and assignments.
fn merge_small_clusters(
    data: &[f32],
    dim: usize,
    centroids: Vec<f32>,
    assignments: Vec<u32>,
    min_doc: usize,
) -> (Vec<f32>, Vec<u32>) {
    let k = centroids.len() / dim;
    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a as usize] += 1;
    }
    let mut survivors: Vec<usize> = (0..k).filter(|&c| counts[c] >= min_doc).collect();
    if survivors.len() == k {
        return (centroids, assignments);
    }
    if survivors.is_empty() {
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
        survivors.push(largest);
    }
    let kept: Vec<f32> = survivors
        .iter()
        .flat_map(|&c| centroids[c * dim..(c + 1) * dim].iter().copied())
        .collect();
    let (labels, _) = assign(data, dim, &kept);

    let k2 = survivors.len();
    let mut sums = vec![0.0f64; k2 * dim];
    let mut sizes = vec![0usize; k2];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        sizes[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
            *s += f64::from(v);
        }
    }
    let mut merged = kept;
    for c in 0..k2 {
        if sizes[c] > 0 {
            for (dst, &s) in merged[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = (s / sizes[c] as f64) as f32;
            }
        }
    }
    (merged, labels)
}

/// Exact cosine over every stored vector; the recall oracle.
pub fn exhaustive_search(query: &[f32], ids: &[String], vectors: &[Embedding], k: usize) -> Vec<ScoredDoc> {
    let qn = l2_norm(query);
    let mut hits: Vec<(usize, f32)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let vn = l2_norm(v.as_slice());
            let s = if qn == 0.0 || vn == 0.0 {
                0.0
            } else {
                dot(query, v.as_slice()) / (qn * vn)
            };
            (i, s)
        })
        .collect();
    let order = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
    let k = k.min(hits.len());
    if k == 0 {
        return Vec::new();
    }
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(order);
    hits.into_iter()
        .map(|(i, score)| ScoredDoc {
            doc_id: ids[i].clone(),
            score,
            stage: Stage::Exact,
        })
        .collect()
}

/// Exhaustive search over a flat, pre-normalized matrix. Same ordering
/// contract as [`exhaustive_search`], without per-call norm computation; used
/// by the latency benchmark.
pub fn exhaustive_search_flat(query: &[f32], ids: &[String], unit_rows: &[f32], k: usize) -> Vec<ScoredDoc> {
    let dim = query.len();
    let mut hits: Vec<(usize, f32)> = unit_rows
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, row)| (i, dot(query, row)))
        .collect();
    let order = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
    let k = k.min(hits.len());
    if k == 0 {
        return Vec::new();
    }
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(order);
    hits.into_iter()
        .map(|(i, score)| ScoredDoc {
            doc_id: ids[i].clone(),
            score,
            stage: Stage::Exact,
        })
        .collect()
}

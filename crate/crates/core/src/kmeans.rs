//! K-means++ seeding, Lloyd iterations and cluster-count selection by the
//! elbow of the inertia curve combined with the silhouette coefficient.
//!
//! Data is a flat row-major matrix: `data.len() == rows * dim`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{squared_distance, Embedding};
use crate::error::{Error, Result};

const ROW_CHUNK: usize = 512;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves further than this (L2).
    pub tol: f32,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-5,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `k * dim` row-major centroids.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Nearest centroid for every row, ties broken by the lower centroid index.
pub fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> (Vec<u32>, Vec<f32>) {
    let k = centroids.len() / dim;
    let mut labels = vec![0u32; data.len() / dim];
    let mut dists = vec![0.0f32; data.len() / dim];
    labels
        .par_chunks_mut(ROW_CHUNK)
        .zip(dists.par_chunks_mut(ROW_CHUNK))
        .enumerate()
        .for_each(|(chunk, (labels, dists))| {
            let first = chunk * ROW_CHUNK;
            for (offset, (label, dist)) in labels.iter_mut().zip(dists.iter_mut()).enumerate() {
                let row = &data[(first + offset) * dim..(first + offset + 1) * dim];
                let (mut best, mut best_d) = (0usize, f32::INFINITY);
                for c in 0..k {
                    let d = squared_distance(row, &centroids[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                *label = best as u32;
                *dist = best_d;
            }
        });
    (labels, dists)
}

/// K-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);

    let mut min_d = vec![f32::INFINITY; n];
    for c in 1..k {
        let last = &centroids[(c - 1) * dim..c * dim];
        min_d
            .par_chunks_mut(ROW_CHUNK)
            .enumerate()
            .for_each(|(chunk, dists)| {
                let first = chunk * ROW_CHUNK;
                for (offset, d) in dists.iter_mut().enumerate() {
                    let row = &data[(first + offset) * dim..(first + offset + 1) * dim];
                    let nd = squared_distance(row, last);
                    if nd < *d {
                        *d = nd;
                    }
                }
            });
        let total: f64 = min_d.iter().map(|&d| f64::from(d)).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0f64;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                acc += f64::from(d);
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the running sum
            pick.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // fewer distinct points than k: reuse unchosen rows in order
            chosen.iter().position(|&used| !used).unwrap_or(0)
        };
        chosen[next] = true;
        centroids.extend_from_slice(&data[next * dim..(next + 1) * dim]);
    }
    centroids
}

/// Distinct rows in first-occurrence order, or `None` once more than `limit`
/// have been seen.
fn distinct_rows(data: &[f32], dim: usize, limit: usize) -> Option<Vec<usize>> {
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    let mut rows = Vec::new();
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let key: Vec<u32> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            rows.push(i);
            if rows.len() > limit {
                return None;
            }
        }
    }
    Some(rows)
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// When the data holds at most `k` distinct rows the centroids are exactly
/// those rows (padded by repetition), which makes quantization lossless.
pub fn kmeans(data: &[f32], dim: usize, params: &KMeansParams) -> Result<KMeansFit> {
    if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
        return Err(Error::invalid("k-means needs a non-empty rows x dim matrix"));
    }
    let n = data.len() / dim;
    let k = params.k;
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }

    if n <= k.saturating_mul(4) {
        if let Some(rows) = distinct_rows(data, dim, k) {
            let mut centroids = Vec::with_capacity(k * dim);
            for c in 0..k {
                let r = rows[c % rows.len()];
                centroids.extend_from_slice(&data[r * dim..(r + 1) * dim]);
            }
            let (assignments, dists) = assign(data, dim, &centroids);
            return Ok(KMeansFit {
                centroids,
                assignments,
                inertia: dists.iter().map(|&d| f64::from(d)).sum(),
                iterations: 0,
            });
        }
    }
    if n < k {
        return Err(Error::invalid(format!("{n} rows cannot form {k} clusters")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_plus_plus(data, dim, k, &mut rng);
    let mut iterations = 0;
    let (mut labels, mut dists) = assign(data, dim, &centroids);

    for _ in 0..params.max_iter {
        iterations += 1;
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &label) in labels.iter().enumerate() {
            let c = label as usize;
            counts[c] += 1;
            let row = &data[i * dim..(i + 1) * dim];
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }

        let mut next = vec![0.0f32; k * dim];
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the worst-served point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                dists[far] = 0.0;
                next[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in next[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = (s * inv) as f32;
                }
            }
        }

        let shift = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0f32, f32::max);
        centroids = next;
        let (l, d) = assign(data, dim, &centroids);
        labels = l;
        dists = d;
        if shift < params.tol {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        assignments: labels,
        inertia: dists.iter().map(|&d| f64::from(d)).sum(),
        iterations,
    })
}

/// Mean silhouette coefficient, computed by brute force over all pairs.
/// Points alone in their cluster contribute 0.
pub fn mean_silhouette(data: &[f32], dim: usize, labels: &[u32], k: usize) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i] as usize;
            if sizes[own] <= 1 {
                return 0.0;
            }
            let xi = &data[i * dim..(i + 1) * dim];
            let mut sum_by_cluster = vec![0.0f64; k];
            for j in 0..n {
                if j != i {
                    let d = f64::from(squared_distance(xi, &data[j * dim..(j + 1) * dim])).sqrt();
                    sum_by_cluster[labels[j] as usize] += d;
                }
            }
            let a = sum_by_cluster[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sum_by_cluster[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .sum();
    total / n as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterCountDiagnostic {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterCountSelection {
    pub chosen: usize,
    /// Candidate at the elbow (largest second difference of inertia).
    pub knee: usize,
    pub diagnostics: Vec<ClusterCountDiagnostic>,
}

/// Picks the candidate with the best mean silhouette among candidates at or
/// past the elbow of the inertia curve.
pub fn select_cluster_count(
    sample: &[Embedding],
    candidates: &[usize],
    seed: u64,
) -> Result<ClusterCountSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate cluster counts"));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("candidates must be strictly ascending"));
    }
    if candidates[0] < 2 {
        return Err(Error::invalid("silhouette is undefined for k < 2"));
    }
    let max_k = *candidates.last().unwrap_or(&0);
    if sample.len() <= max_k {
        return Err(Error::invalid(format!(
            "sample of {} points is too small for k = {max_k}",
            sample.len()
        )));
    }
    let dim = sample[0].dim();
    if sample.iter().any(|e| e.dim() != dim) {
        return Err(Error::invalid("sample embeddings have mixed dimensions"));
    }
    let data: Vec<f32> = sample.iter().flat_map(|e| e.as_slice().iter().copied()).collect();
    if data.chunks_exact(dim).all(|row| row == &data[..dim]) {
        return Err(Error::invalid("zero variance sample: all points identical"));
    }

    let mut diagnostics = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let fit = kmeans(&data, dim, &KMeansParams::new(k, seed))?;
        let silhouette = mean_silhouette(&data, dim, &fit.assignments, k);
        diagnostics.push(ClusterCountDiagnostic {
            k,
            inertia: fit.inertia,
            silhouette,
        });
    }

    let knee_idx = if diagnostics.len() >= 3 {
        let mut best = 1;
        let mut best_val = f64::NEG_INFINITY;
        for i in 1..diagnostics.len() - 1 {
            let second = diagnostics[i - 1].inertia - 2.0 * diagnostics[i].inertia
                + diagnostics[i + 1].inertia;
            if second > best_val {
                best_val = second;
                best = i;
            }
        }
        best
    } else {
        0
    };
    let chosen = diagnostics[knee_idx..]
        .iter()
        .fold(None::<&ClusterCountDiagnostic>, |acc, d| match acc {
            Some(b) if b.silhouette >= d.silhouette => Some(b),
            _ => Some(d),
        })
        .map(|d| d.k)
        .unwrap_or(candidates[knee_idx]);

    Ok(ClusterCountSelection {
        chosen,
        knee: candidates[knee_idx],
        diagnostics,
    })
}

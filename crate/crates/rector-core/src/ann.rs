//! k-means clustering, the inverted-file index, coarse-probe search,
//! and the exact brute-force oracle it is checked against.
//!
//! Centroid ranking uses Euclidean distance, which orders unit-norm
//! embeddings the same way cosine does; centroids themselves are plain
//! Lloyd means and live off the sphere. Ties break toward the lowest
//! centroid index, and hits toward the lexicographically smallest
//! flow_id, so results are fully deterministic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{self, dot, sq_dist};
use crate::model::Embedding;
use crate::rng::{subrng, RngExt};
use crate::{Error, Result};

pub const DEFAULT_N_PROBE: usize = 8;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Auto cluster count for `build_index`: max(1, round(sqrt(M))).
pub fn auto_k(m: usize) -> usize {
    (math::round(math::sqrt(m as f64)) as usize).clamp(1, m.max(1))
}

/// Cluster count for near-linear total matching cost: max(1, round(M / log2 M)).
/// Keeps probed-list sizes logarithmic in M instead of sqrt(M).
pub fn scaling_cluster_count(m: usize) -> usize {
    if m < 4 {
        return m.max(1);
    }
    (math::round(m as f64 / math::log2(m as f64)) as usize).clamp(1, m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Distortion recorded once per Lloyd iteration (non-increasing).
    pub distortion_history: Vec<f64>,
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops when the largest centroid movement drops below `tol` or after
/// `max_iter` iterations. Empty clusters are repaired by stealing the
/// point farthest from its assigned centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult> {
    if points.is_empty() {
        return Err(Error::Argument("kmeans needs at least one point".into()));
    }
    if k < 1 || k > points.len() {
        return Err(Error::Argument(format!(
            "cluster count {k} outside [1, {}]",
            points.len()
        )));
    }
    let n = points.len();
    let dim = points[0].len();
    let mut rng = subrng(seed, 0x6b6d_6561_6e73); // "kmeans"

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.below(n as u64) as usize].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.below(n as u64) as usize
        } else {
            let r = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= r {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest_centroid(p, &centroids);
        }
        repair_empty(points, &mut centroids, &mut assignments);
        history.push(
            points
                .iter()
                .zip(assignments.iter())
                .map(|(p, &a)| sq_dist(p, &centroids[a]))
                .sum(),
        );

        let mut moved: f64 = 0.0;
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(assignments.iter()) {
            counts[a] += 1;
            math::add_scaled(&mut sums[a], p, 1.0);
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for v in sums[c].iter_mut() {
                *v /= counts[c] as f64;
            }
            moved = moved.max(math::sqrt(sq_dist(&sums[c], &centroids[c])));
            centroids[c] = core::mem::take(&mut sums[c]);
        }
        if moved < tol {
            break;
        }
    }
    // Final assignment against the converged centroids.
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest_centroid(p, &centroids);
    }
    Ok(KmeansResult {
        centroids,
        assignments,
        distortion_history: history,
    })
}

/// Moves each empty cluster's centroid onto the point currently farthest
/// from its own centroid (never emptying a singleton cluster).
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut victim = None;
        let mut worst = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[assignments[i]]);
            if d > worst {
                worst = d;
                victim = Some(i);
            }
        }
        if let Some(i) = victim {
            counts[assignments[i]] -= 1;
            centroids[c] = points[i].clone();
            assignments[i] = c;
            counts[c] = 1;
        }
    }
}

/// k-means centroids plus inverted lists of egress embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvfIndex {
    pub k: usize,
    pub n_probe_default: usize,
    pub centroids: Vec<Vec<f64>>,
    pub lists: Vec<Vec<(String, Embedding)>>,
}

impl IvfIndex {
    pub fn len(&self) -> usize {
        self.lists.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Clusters the embeddings and populates the inverted lists. `k = None`
/// selects `auto_k(M)`.
pub fn build_index(
    embeddings: &[(String, Embedding)],
    k: Option<usize>,
    seed: u64,
) -> Result<IvfIndex> {
    if embeddings.is_empty() {
        return Err(Error::Argument("cannot build an index over no embeddings".into()));
    }
    let m = embeddings.len();
    let k = match k {
        Some(k) if (1..=m).contains(&k) => k,
        Some(k) => {
            return Err(Error::Argument(format!(
                "cluster count {k} outside [1, {m}]"
            )))
        }
        None => auto_k(m),
    };
    let points: Vec<Vec<f64>> = embeddings.iter().map(|(_, e)| e.0.clone()).collect();
    let result = kmeans(&points, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let mut lists = vec![Vec::new(); k];
    for ((id, emb), &a) in embeddings.iter().zip(result.assignments.iter()) {
        lists[a].push((id.clone(), emb.clone()));
    }
    Ok(IvfIndex {
        k,
        n_probe_default: DEFAULT_N_PROBE.min(k),
        centroids: result.centroids,
        lists,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub flow_id: String,
    pub score: f64,
}

fn rank_hits(mut hits: Vec<SearchHit>, top_k: usize) -> Vec<SearchHit> {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.flow_id.cmp(&b.flow_id))
    });
    hits.truncate(top_k);
    hits
}

/// Scans the `n_probe` lists whose centroids are nearest to the query
/// and returns up to `top_k` hits by descending cosine similarity,
/// together with the number of candidate comparisons performed.
pub fn query(
    index: &IvfIndex,
    q: &Embedding,
    n_probe: usize,
    top_k: usize,
) -> Result<(Vec<SearchHit>, usize)> {
    if !(1..=index.k).contains(&n_probe) {
        return Err(Error::Argument(format!(
            "n_probe {n_probe} outside [1, {}]",
            index.k
        )));
    }
    let mut order: Vec<usize> = (0..index.k).collect();
    order.sort_by(|&a, &b| {
        sq_dist(q.as_slice(), &index.centroids[a])
            .total_cmp(&sq_dist(q.as_slice(), &index.centroids[b]))
            .then_with(|| a.cmp(&b))
    });

    let mut hits = Vec::new();
    let mut comparisons = 0;
    for &c in order.iter().take(n_probe) {
        for (id, emb) in &index.lists[c] {
            comparisons += 1;
            hits.push(SearchHit {
                flow_id: id.clone(),
                score: dot(q.as_slice(), emb.as_slice()),
            });
        }
    }
    Ok((rank_hits(hits, top_k), comparisons))
}

/// Full scan with the same ordering and tie rules as `query`; the
/// correctness oracle and the O(N*M) baseline.
pub fn exact_search(embeddings: &[(String, Embedding)], q: &Embedding, top_k: usize) -> Vec<SearchHit> {
    let hits = embeddings
        .iter()
        .map(|(id, emb)| SearchHit {
            flow_id: id.clone(),
            score: dot(q.as_slice(), emb.as_slice()),
        })
        .collect();
    rank_hits(hits, top_k)
}

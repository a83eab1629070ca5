//! K-means with k-means++ seeding in embedding space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;
use crate::spectral::FiberEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 800,
            max_iters: 300,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `K` centroids of `E` components each.
    pub centroids: Vec<Vec<f64>>,
    pub member_counts: Vec<usize>,
    /// Mean and standard deviation of member distances to their centroid.
    pub member_dist_mean: Vec<f64>,
    pub member_dist_sd: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dims(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl ClusterFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn assign(embedding: &FiberEmbedding, clusters: &ClusterModel) -> usize {
    nearest(embedding.as_slice(), &clusters.centroids).0
}

fn plus_plus(points: &[&[f64]], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // All remaining mass is zero (duplicates): take the first unused point.
            Err(_) => chosen.iter().position(|c| !c).unwrap_or(0),
        };
        chosen[next] = true;
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            let nd = sq_dist(p, &c);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let (n, k) = (points.len(), centroids.len());
    let dims = points[0].len();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let near: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = near.iter().zip(&assignments).any(|((c, _), a)| c != a);
        for (a, (c, _)) in assignments.iter_mut().zip(&near) {
            *a = *c;
        }
        let mut dists: Vec<f64> = near.iter().map(|(_, d)| *d).collect();
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Move the worst-fitting point of a multi-member cluster here.
                let mut far = None;
                for (i, d) in dists.iter().enumerate() {
                    if counts[assignments[i]] > 1 && far.is_none_or(|(_, fd)| *d > fd) {
                        far = Some((i, *d));
                    }
                }
                if let Some((i, _)) = far {
                    let old = assignments[i];
                    counts[old] -= 1;
                    for (s, v) in sums[old].iter_mut().zip(points[i].iter()) {
                        *s -= v;
                    }
                    assignments[i] = c;
                    counts[c] = 1;
                    sums[c] = points[i].to_vec();
                    dists[i] = 0.0;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (centroids, assignments, trace)
}

/// K-means with k-means++ initialization, deterministic for a fixed seed.
/// With `restarts > 1` the lowest-inertia run wins (earliest on ties).
pub fn cluster(embeddings: &[FiberEmbedding], cfg: &KMeansConfig) -> Result<ClusterFit> {
    let n = embeddings.len();
    let k = cfg.k;
    if k == 0 {
        return Err(invalid("K must be >= 1"));
    }
    if k > n {
        return Err(invalid(format!("K = {k} exceeds fiber count {n}")));
    }
    let dims = embeddings[0].dims();
    if embeddings.iter().any(|e| e.dims() != dims) {
        return Err(invalid("embeddings differ in dimension"));
    }
    if embeddings.iter().any(|e| e.0.iter().any(|v| !v.is_finite())) {
        return Err(invalid("non-finite embedding component"));
    }
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
    let mut best: Option<(Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> = None;
    for run in 0..cfg.restarts.max(1) {
        let mut r = rng::stream(cfg.seed, run as u64);
        let init = plus_plus(&points, k, &mut r);
        let fit = lloyd(&points, init, cfg.max_iters);
        let better = match &best {
            None => true,
            Some(b) => fit.2.last() < b.2.last(),
        };
        if better {
            best = Some(fit);
        }
    }
    let (centroids, assignments, trace) = best.expect("at least one run");
    let mut counts = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sum2 = vec![0.0; k];
    for (p, &a) in points.iter().zip(&assignments) {
        let d = sq_dist(p, &centroids[a]).sqrt();
        counts[a] += 1;
        sum[a] += d;
        sum2[a] += d * d;
    }
    let mean: Vec<f64> = (0..k).map(|c| if counts[c] > 0 { sum[c] / counts[c] as f64 } else { 0.0 }).collect();
    let sd = (0..k)
        .map(|c| {
            if counts[c] > 1 {
                ((sum2[c] - counts[c] as f64 * mean[c] * mean[c]) / (counts[c] - 1) as f64).max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(ClusterFit {
        model: ClusterModel {
            centroids,
            member_counts: counts,
            member_dist_mean: mean,
            member_dist_sd: sd,
        },
        assignments,
        inertia_trace: trace,
    })
}

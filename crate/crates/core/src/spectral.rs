//! Nyström spectral embedding of fibers.
//!
//! A random sample of `m` fibers defines an `m × m` Gaussian affinity matrix
//! `A`. With sample degrees `d = A·1`, the symmetric normalization
//! `N = D^{-1/2} A D^{-1/2}` is eigendecomposed and its leading eigenpairs
//! kept; with `drop_leading` the trivial eigenvector `D^{1/2}·1` is deflated
//! out of `N` first. Any fiber `x` is then embedded through the Nyström extension
//!
//! ```text
//! a_l   = exp(-mcp(x, s_l)² / σ²)
//! ã_l   = a_l / sqrt(d(x) · d_l),   d(x) = Σ_l a_l
//! v_e   = (1 / λ_e) Σ_l ã_l · u_{l,e}
//! ```
//!
//! which reproduces `u_{k,e}` exactly for a sample fiber `x = s_k`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metric::{affinity, mcp_points, FiberDistanceParams};
use crate::tractogram::{subsample_indices, ResampledFiber};

/// Eigenvalues at or below this are treated as numerically zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberEmbedding(pub Vec<f64>);

impl FiberEmbedding {
    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &FiberEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NystromConfig {
    pub sample_size: usize,
    pub dims: usize,
    pub metric: FiberDistanceParams,
    pub drop_leading: bool,
    pub seed: u64,
}

impl Default for NystromConfig {
    fn default() -> Self {
        Self {
            sample_size: 1500,
            dims: 10,
            metric: FiberDistanceParams::default(),
            drop_leading: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NystromModel {
    pub sample_fibers: Vec<ResampledFiber>,
    pub metric: FiberDistanceParams,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `m × E`, column `e` pairs with `eigenvalues[e]`.
    pub sample_eigenvectors: DMatrix<f64>,
    /// Row sums of the sample affinity matrix.
    pub row_sum_normalizer: Vec<f64>,
    pub drop_leading: bool,
}

impl NystromModel {
    pub fn dims(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn sample_size(&self) -> usize {
        self.sample_fibers.len()
    }

    pub fn sigma(&self) -> f64 {
        self.metric.sigma
    }

    pub fn points_per_fiber(&self) -> usize {
        self.sample_fibers.first().map_or(0, |f| f.len())
    }
}

/// Symmetric affinity matrix over `fibers`, computed on the upper triangle
/// and mirrored.
pub fn affinity_matrix(fibers: &[ResampledFiber], metric: &FiberDistanceParams) -> DMatrix<f64> {
    let m = fibers.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .map(|j| {
                    let d = mcp_points(fibers[i].points(), fibers[j].points(), metric.variant, metric.flip_invariant);
                    affinity(d, metric.sigma)
                })
                .collect()
        })
        .collect();
    let mut a = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            a[(i, i + k)] = *v;
            a[(i + k, i)] = *v;
        }
    }
    a
}

/// Eigenpairs of a symmetric matrix, descending, each eigenvector signed so
/// its largest-magnitude component (first on ties) is positive.
pub fn sorted_eigen(n: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let dim = n.nrows();
    let eig = SymmetricEigen::new(n);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (c, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let mut best = 0;
        for r in 1..dim {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            vectors[(r, c)] = sign * col[r];
        }
    }
    (values, vectors)
}

pub fn fit_nystrom(all_fibers: &[ResampledFiber], cfg: &NystromConfig) -> Result<NystromModel> {
    cfg.metric.validate()?;
    let n = all_fibers.len();
    let (m, dims) = (cfg.sample_size, cfg.dims);
    if m == 0 || dims == 0 {
        return Err(invalid("Nyström sample size and embedding dims must be >= 1"));
    }
    if m > n {
        return Err(invalid(format!("Nyström sample size {m} exceeds fiber count {n}")));
    }
    if dims > m {
        return Err(invalid(format!("embedding dims {dims} exceed sample size {m}")));
    }
    let p = all_fibers[0].len();
    if let Some(f) = all_fibers.iter().find(|f| f.len() != p) {
        return Err(Error::PointCountMismatch(p, f.len()));
    }
    let idx = subsample_indices(n, m, cfg.seed)?;
    let sample: Vec<ResampledFiber> = idx.iter().map(|&i| all_fibers[i].clone()).collect();
    let a = affinity_matrix(&sample, &cfg.metric);
    let degrees: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut normalized = DMatrix::from_fn(m, m, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    if cfg.drop_leading {
        // D^½·1 is exactly an eigenvector with eigenvalue 1. Deflating it,
        // instead of discarding the first computed column, stays correct when
        // a nearly disconnected graph has several eigenvalues close to 1.
        let total: f64 = degrees.iter().sum();
        let v0: Vec<f64> = degrees.iter().map(|d| (d / total).sqrt()).collect();
        for i in 0..m {
            for j in 0..m {
                normalized[(i, j)] -= v0[i] * v0[j];
            }
        }
    }
    let (values, vectors) = sorted_eigen(normalized);

    let rank = values.iter().filter(|&&v| v > RANK_TOL).count();
    if rank < dims {
        return Err(Error::RankDeficient {
            requested: dims,
            achievable: rank,
        });
    }
    let eigenvalues = values[..dims].to_vec();
    let sample_eigenvectors = vectors.columns(0, dims).into_owned();
    Ok(NystromModel {
        sample_fibers: sample,
        metric: cfg.metric,
        eigenvalues,
        sample_eigenvectors,
        row_sum_normalizer: degrees,
        drop_leading: cfg.drop_leading,
    })
}

/// Out-of-sample Nyström extension. Fibers with no affinity to any sample
/// fiber embed at the origin.
pub fn embed(fiber: &ResampledFiber, model: &NystromModel) -> FiberEmbedding {
    let m = model.sample_size();
    let mut row = Vec::with_capacity(m);
    for s in &model.sample_fibers {
        let d = mcp_points(fiber.points(), s.points(), model.metric.variant, model.metric.flip_invariant);
        row.push(affinity(d, model.metric.sigma));
    }
    let dx: f64 = row.iter().sum();
    let dims = model.dims();
    if !(dx > f64::MIN_POSITIVE) {
        return FiberEmbedding(vec![0.0; dims]);
    }
    for (v, dl) in row.iter_mut().zip(&model.row_sum_normalizer) {
        *v /= (dx * dl).sqrt();
    }
    let out = (0..dims)
        .map(|e| {
            let u = model.sample_eigenvectors.column(e);
            let s: f64 = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            s / model.eigenvalues[e]
        })
        .collect();
    FiberEmbedding(out)
}

pub fn embed_all(fibers: &[ResampledFiber], model: &NystromModel) -> Result<Vec<FiberEmbedding>> {
    let p = model.points_per_fiber();
    if let Some(f) = fibers.iter().find(|f| f.len() != p) {
        return Err(Error::PointCountMismatch(p, f.len()));
    }
    Ok(fibers.par_iter().map(|f| embed(f, model)).collect())
}

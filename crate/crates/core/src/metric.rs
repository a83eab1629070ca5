//! Mean-closest-point fiber distances and the Gaussian affinity kernel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tractogram::ResampledFiber;
use crate::transform::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum McpVariant {
    DirectedMean,
    #[default]
    SymmetricMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberDistanceParams {
    pub variant: McpVariant,
    pub flip_invariant: bool,
    /// Kernel bandwidth in millimetres.
    pub sigma: f64,
}

impl Default for FiberDistanceParams {
    fn default() -> Self {
        Self {
            variant: McpVariant::SymmetricMean,
            flip_invariant: true,
            sigma: 30.0,
        }
    }
}

impl FiberDistanceParams {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[inline(always)]
fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn check_lengths(a: &ResampledFiber, b: &ResampledFiber) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::PointCountMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Mean over the points of `a` of the distance to the closest point of `b`.
pub fn mcp_directed(a: &ResampledFiber, b: &ResampledFiber) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(directed(a.points(), b.points()))
}

fn directed(a: &[Point], b: &[Point]) -> f64 {
    let mut sum = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = dist2(p, q);
            if d < best {
                best = d;
            }
        }
        sum += best.sqrt();
    }
    sum / a.len() as f64
}

/// Fiber distance under `params`.
pub fn mcp(a: &ResampledFiber, b: &ResampledFiber, params: &FiberDistanceParams) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(mcp_points(a.points(), b.points(), params.variant, params.flip_invariant))
}

/// Unchecked core of [`mcp`]; both slices must have the same length.
///
/// The closest-point minima are computed once from a single pass over all
/// point pairs. Reversing `b` leaves the `a → b` term unchanged and only
/// reverses the summation order of the `b → a` term, so the flipped distance
/// costs one extra sum.
pub(crate) fn mcp_points(a: &[Point], b: &[Point], variant: McpVariant, flip_invariant: bool) -> f64 {
    match variant {
        McpVariant::DirectedMean => directed(a, b),
        McpVariant::SymmetricMean => {
            const STACK: usize = 64;
            let n = b.len();
            let mut col_buf = [f64::INFINITY; STACK];
            let mut col_vec;
            let col: &mut [f64] = if n <= STACK {
                &mut col_buf[..n]
            } else {
                col_vec = vec![f64::INFINITY; n];
                &mut col_vec
            };
            let mut ab = 0.0;
            for p in a {
                let mut best = f64::INFINITY;
                for (q, c) in b.iter().zip(col.iter_mut()) {
                    let d = dist2(p, q);
                    if d < best {
                        best = d;
                    }
                    if d < *c {
                        *c = d;
                    }
                }
                ab += best.sqrt();
            }
            let ab = ab / a.len() as f64;
            let mut ba_fwd = 0.0;
            for c in col.iter_mut() {
                *c = c.sqrt();
                ba_fwd += *c;
            }
            let fwd = (ab + ba_fwd / n as f64) / 2.0;
            if !flip_invariant {
                return fwd;
            }
            let mut ba_rev = 0.0;
            for c in col.iter().rev() {
                ba_rev += *c;
            }
            let rev = (ab + ba_rev / n as f64) / 2.0;
            fwd.min(rev)
        }
    }
}

/// Gaussian affinity `exp(-d²/σ²)`.
#[inline]
pub fn affinity(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (sigma * sigma)).exp()
}

/// Matrix of `mcp(a_i, b_j)`. Rows are computed in parallel; the result does
/// not depend on the number of workers.
pub fn pairwise_distance_matrix(
    fibers_a: &[ResampledFiber],
    fibers_b: &[ResampledFiber],
    params: &FiberDistanceParams,
) -> Result<DMatrix<f64>> {
    if fibers_a.is_empty() || fibers_b.is_empty() {
        return Err(invalid("pairwise distance matrix needs nonempty fiber lists"));
    }
    let p = fibers_a[0].len();
    if let Some(f) = fibers_a.iter().chain(fibers_b).find(|f| f.len() != p) {
        return Err(Error::PointCountMismatch(p, f.len()));
    }
    let rows: Vec<Vec<f64>> = fibers_a
        .par_iter()
        .map(|a| {
            fibers_b
                .iter()
                .map(|b| mcp_points(a.points(), b.points(), params.variant, params.flip_invariant))
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(fibers_a.len(), fibers_b.len(), |i, j| rows[i][j]))
}

/// Sequential variant of [`pairwise_distance_matrix`].
pub fn pairwise_distance_matrix_sequential(
    fibers_a: &[ResampledFiber],
    fibers_b: &[ResampledFiber],
    params: &FiberDistanceParams,
) -> Result<DMatrix<f64>> {
    if fibers_a.is_empty() || fibers_b.is_empty() {
        return Err(invalid("pairwise distance matrix needs nonempty fiber lists"));
    }
    let mut m = DMatrix::zeros(fibers_a.len(), fibers_b.len());
    for (i, a) in fibers_a.iter().enumerate() {
        for (j, b) in fibers_b.iter().enumerate() {
            m[(i, j)] = mcp(a, b, params)?;
        }
    }
    Ok(m)
}

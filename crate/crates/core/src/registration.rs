//! Multiscale groupwise registration of tractograms.
//!
//! Each subject gets an affine transform (rigid, similarity or full affine)
//! chosen to minimize a kernelized mean-closest-point cost between its fibers
//! and every other subject's fibers. Optimization is derivative-free: subjects
//! are visited round-robin and each subject's parameters are improved with
//! Powell-style line searches, from the widest kernel bandwidth to the
//! narrowest.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metric::{McpVariant, mcp_points};
use crate::optimize::{powell_sweep, SweepSettings};
use crate::rng;
use crate::tractogram::{resample, subsample_indices, ResampledFiber, Tractogram};
use crate::transform::{AffineTransform, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformFamily {
    Rigid,
    Similarity,
    Affine,
}

impl TransformFamily {
    pub fn parameter_count(self) -> usize {
        match self {
            TransformFamily::Rigid => 6,
            TransformFamily::Similarity => 7,
            TransformFamily::Affine => 12,
        }
    }

    fn scale_coords(self) -> std::ops::Range<usize> {
        match self {
            TransformFamily::Rigid => 6..6,
            TransformFamily::Similarity => 6..7,
            TransformFamily::Affine => 6..9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub transform_family: TransformFamily,
    /// Kernel bandwidths in mm, strictly decreasing.
    pub sigma_schedule: Vec<f64>,
    pub fibers_per_subject_sample: usize,
    pub max_iters_per_scale: usize,
    /// Relative objective change per sweep below which a scale is done.
    pub convergence_tol: f64,
    pub seed: u64,
    pub points_per_fiber: usize,
    pub mcp_variant: McpVariant,
    /// Added inside the log so distant pairs stay finite.
    pub epsilon: f64,
    /// Start from centroid (and, with scaling, RMS-radius) alignment.
    pub moment_init: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            transform_family: TransformFamily::Similarity,
            sigma_schedule: vec![30.0, 20.0, 10.0, 5.0],
            fibers_per_subject_sample: 200,
            max_iters_per_scale: 20,
            convergence_tol: 1e-5,
            seed: 0,
            points_per_fiber: crate::tractogram::DEFAULT_POINTS,
            mcp_variant: McpVariant::SymmetricMean,
            epsilon: 1e-12,
            moment_init: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_schedule.is_empty() {
            return Err(invalid("sigma_schedule must be nonempty"));
        }
        if self.sigma_schedule.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("sigma_schedule entries must be > 0"));
        }
        if self.sigma_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("sigma_schedule must be strictly decreasing"));
        }
        if self.fibers_per_subject_sample < 10 {
            return Err(invalid("fibers_per_subject_sample must be >= 10"));
        }
        if self.max_iters_per_scale == 0 {
            return Err(invalid("max_iters_per_scale must be >= 1"));
        }
        if self.points_per_fiber < 2 {
            return Err(invalid("points_per_fiber must be >= 2"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub scale: usize,
    pub sigma: f64,
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRegistrationResult {
    pub transforms: Vec<AffineTransform>,
    pub objective_trace: Vec<TracePoint>,
    pub converged: bool,
}

/// Builds the transform `x ↦ A·(x − c) + c + t` from a parameter vector
/// `[t(3), rotation vector(3), log-scales(0|1|3), shears(0|3)]`.
pub fn params_to_transform(family: TransformFamily, params: &[f64], center: &Point) -> AffineTransform {
    let t = Vector3::new(params[0], params[1], params[2]);
    let r = Rotation3::from_scaled_axis(Vector3::new(params[3], params[4], params[5])).into_inner();
    let linear = match family {
        TransformFamily::Rigid => r,
        TransformFamily::Similarity => r * params[6].exp(),
        TransformFamily::Affine => {
            let s = Matrix3::from_diagonal(&Vector3::new(params[6].exp(), params[7].exp(), params[8].exp()));
            let h = Matrix3::new(1.0, params[9], params[10], 0.0, 1.0, params[11], 0.0, 0.0, 1.0);
            r * s * h
        }
    };
    let offset = center - linear * center + t;
    AffineTransform::new(linear, offset).unwrap_or_else(|_| AffineTransform::identity())
}

/// Transformed fibers stored coordinate-major per fiber (all x, then all y,
/// then all z), with per-fiber bounding spheres.
struct Cloud {
    soa: Vec<f64>,
    centers: Vec<Point>,
    radii: Vec<f64>,
    p: usize,
}

impl Cloud {
    fn new(native: &[Point], p: usize, t: &AffineTransform) -> Self {
        let n = native.len() / p;
        let mut soa = vec![0.0; native.len() * 3];
        let mut centers = Vec::with_capacity(n);
        let mut radii = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(p);
        for (f, chunk) in native.chunks_exact(p).enumerate() {
            buf.clear();
            buf.extend(chunk.iter().map(|x| t.apply(x)));
            let c = buf.iter().fold(Point::zeros(), |acc, x| acc + x) / p as f64;
            let r = buf.iter().map(|x| (x - c).norm()).fold(0.0, f64::max);
            let base = f * 3 * p;
            for (k, x) in buf.iter().enumerate() {
                soa[base + k] = x.x;
                soa[base + p + k] = x.y;
                soa[base + 2 * p + k] = x.z;
            }
            centers.push(c);
            radii.push(r);
        }
        Self { soa, centers, radii, p }
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn fiber(&self, i: usize) -> &[f64] {
        &self.soa[i * 3 * self.p..(i + 1) * 3 * self.p]
    }
}

/// Mean closest point distance on coordinate-major fibers. Closest-point
/// matching ignores point order, so the result is already flip invariant.
#[inline]
fn mcp_soa(a: &[f64], b: &[f64], p: usize, variant: McpVariant) -> f64 {
    if p == 15 {
        let a: &[f64; 45] = a.try_into().expect("fiber length");
        let b: &[f64; 45] = b.try_into().expect("fiber length");
        return mcp_fixed::<15, 45>(a, b, variant);
    }
    let unpack = |f: &[f64]| (0..p).map(|k| Point::new(f[k], f[p + k], f[2 * p + k])).collect::<Vec<_>>();
    mcp_points(&unpack(a), &unpack(b), variant, true)
}

#[inline]
fn mcp_fixed<const P: usize, const P3: usize>(a: &[f64; P3], b: &[f64; P3], variant: McpVariant) -> f64 {
    let mut col = [f64::INFINITY; P];
    let mut d2 = [0.0; P];
    let mut row_sum = 0.0;
    for i in 0..P {
        let (x, y, z) = (a[i], a[P + i], a[2 * P + i]);
        for j in 0..P {
            let (dx, dy, dz) = (x - b[j], y - b[P + j], z - b[2 * P + j]);
            d2[j] = dx * dx + dy * dy + dz * dz;
        }
        // Compare-select instead of f64::min: inputs are never NaN.
        let mut m = f64::INFINITY;
        for j in 0..P {
            let d = d2[j];
            col[j] = if d < col[j] { d } else { col[j] };
            m = if d < m { d } else { m };
        }
        row_sum += m.sqrt();
    }
    match variant {
        McpVariant::DirectedMean => row_sum / P as f64,
        McpVariant::SymmetricMean => {
            let col_sum: f64 = col.iter().map(|v| v.sqrt()).sum();
            0.5 * (row_sum + col_sum) / P as f64
        }
    }
}

/// `−ln(exp(−d²/σ²) + ε)` with exact shortcuts for pairs too far apart to
/// change the sum.
struct PairCost {
    inv_sigma2: f64,
    epsilon: f64,
    saturated: f64,
    cutoff: f64,
    variant: McpVariant,
}

impl PairCost {
    fn new(sigma: f64, epsilon: f64, variant: McpVariant) -> Self {
        // Beyond this, exp(−d²/σ²) is below half an ulp of ε and ε + k == ε.
        let t = -epsilon.ln() + 54.0 * std::f64::consts::LN_2 + 1.0;
        Self {
            inv_sigma2: 1.0 / (sigma * sigma),
            epsilon,
            saturated: -epsilon.ln(),
            cutoff: sigma * t.sqrt(),
            variant,
        }
    }

    #[inline]
    fn of_distance(&self, d: f64) -> f64 {
        -((-(d * d) * self.inv_sigma2).exp() + self.epsilon).ln()
    }

    #[inline]
    fn between(&self, a: &Cloud, i: usize, b: &Cloud, j: usize) -> f64 {
        let gap = (a.centers[i] - b.centers[j]).norm() - a.radii[i] - b.radii[j];
        if gap > self.cutoff {
            return self.saturated;
        }
        self.of_distance(mcp_soa(a.fiber(i), b.fiber(j), a.p, self.variant))
    }

    /// Sum over all fiber pairs; rows in parallel, summed in order.
    fn cross_sum(&self, a: &Cloud, b: &Cloud) -> f64 {
        let rows: Vec<f64> = (0..a.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for j in 0..b.len() {
                    s += self.between(a, i, b, j);
                }
                s
            })
            .collect();
        rows.iter().sum()
    }
}

fn flatten(fibers: &[ResampledFiber]) -> Result<(Vec<Point>, usize)> {
    let p = fibers.first().map(|f| f.len()).ok_or_else(|| invalid("empty fiber sample"))?;
    let mut pts = Vec::with_capacity(fibers.len() * p);
    for f in fibers {
        if f.len() != p {
            return Err(Error::PointCountMismatch(p, f.len()));
        }
        pts.extend_from_slice(f.points());
    }
    Ok((pts, p))
}

/// Groupwise cost of `samples` under `transforms`: the negative mean, over all
/// fiber pairs drawn from different subjects, of
/// `ln(affinity(mcp(T_s·f_i, T_t·f_j), σ) + ε)`. Lower is better.
///
/// Each unordered subject pair `s < t` contributes every `(i ∈ s, j ∈ t)`
/// fiber pair once, using the symmetric flip-invariant distance.
pub fn group_objective(samples: &[Vec<ResampledFiber>], transforms: &[AffineTransform], sigma: f64) -> Result<f64> {
    group_objective_with(samples, transforms, sigma, 1e-12, McpVariant::SymmetricMean)
}

pub fn group_objective_with(
    samples: &[Vec<ResampledFiber>],
    transforms: &[AffineTransform],
    sigma: f64,
    epsilon: f64,
    variant: McpVariant,
) -> Result<f64> {
    if samples.len() < 2 {
        return Err(invalid("group objective needs at least 2 subjects"));
    }
    if transforms.len() != samples.len() {
        return Err(invalid("one transform per subject required"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be > 0"));
    }
    let mut p0 = None;
    let mut clouds = Vec::with_capacity(samples.len());
    for (s, t) in samples.iter().zip(transforms) {
        let (pts, p) = flatten(s)?;
        if *p0.get_or_insert(p) != p {
            return Err(Error::PointCountMismatch(p0.unwrap(), p));
        }
        clouds.push(Cloud::new(&pts, p, t));
    }
    let cost = PairCost::new(sigma, epsilon, variant);
    let (sum, count) = total_cost(&clouds, &cost);
    Ok(sum / count)
}

fn total_cost(clouds: &[Cloud], cost: &PairCost) -> (f64, f64) {
    let mut sum = 0.0;
    let mut count = 0.0;
    for s in 0..clouds.len() {
        for t in s + 1..clouds.len() {
            sum += cost.cross_sum(&clouds[s], &clouds[t]);
            count += (clouds[s].len() * clouds[t].len()) as f64;
        }
    }
    (sum, count)
}

fn partial_cost(clouds: &[Cloud], s: usize, moving: &Cloud, cost: &PairCost) -> f64 {
    let mut sum = 0.0;
    for (t, c) in clouds.iter().enumerate() {
        if t < s {
            sum += cost.cross_sum(c, moving);
        } else if t > s {
            sum += cost.cross_sum(moving, c);
        }
    }
    sum
}

fn point_stats(points: impl Iterator<Item = Point> + Clone) -> (Point, f64, f64) {
    let mut n = 0usize;
    let mut sum = Point::zeros();
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    let c = if n == 0 { sum } else { sum / n as f64 };
    let mut ss = 0.0;
    let mut max = 0.0f64;
    for p in points {
        let d = (p - c).norm();
        ss += d * d;
        max = max.max(d);
    }
    let rms = if n == 0 { 0.0 } else { (ss / n as f64).sqrt() };
    (c, rms, max)
}

fn tractogram_stats(t: &Tractogram) -> (Point, f64, f64) {
    point_stats(t.streamlines().iter().flat_map(|s| s.points().iter().copied()))
}

/// Line-search step and tolerance per coordinate for bandwidth `sigma`;
/// angular and log-scale coordinates are converted through `radius`.
fn sweep_settings(family: TransformFamily, sigma: f64, radius: f64) -> SweepSettings {
    // While σ is large next to the cloud the log-affinity is close to a plain
    // sum of squared distances over all pairs. That sum barely sees rotation
    // and is lowered by shrinking a subject, so only translation moves there.
    let coarse = sigma > radius * COARSE_SIGMA_FRACTION;
    let step_t = sigma / 4.0;
    let tol_t = sigma / 100.0;
    let limit_t = sigma / 2.0;
    let r = radius.max(1.0);
    let limit_a = MAX_ANGLE_MOVE.to_radians();
    let np = family.parameter_count();
    let mut steps = vec![step_t; 3];
    let mut tols = vec![tol_t; 3];
    let mut limits = vec![limit_t; 3];
    steps.extend(std::iter::repeat_n((step_t / r).min(limit_a), np - 3));
    tols.extend(std::iter::repeat_n(tol_t / r, np - 3));
    limits.extend(std::iter::repeat_n(limit_a, np - 3));
    if coarse {
        limits[3..].fill(0.0);
    }
    SweepSettings {
        steps,
        tols,
        limits,
        max_evals_per_line: 40,
        extrapolate: true,
    }
}

/// Largest single line-search move for rotation and deformation coordinates, in degrees
/// (radian equivalent for scale and shear).
const MAX_ANGLE_MOVE: f64 = 5.0;

/// Above this fraction of the RMS cloud radius a bandwidth counts as coarse
/// and only translation is optimized.
pub const COARSE_SIGMA_FRACTION: f64 = 0.25;

fn sample_subject(t: &Tractogram, n: usize, seed: u64, stream: u64, points: usize) -> Result<Vec<Point>> {
    let idx = {
        let mut r = rng::stream(seed, stream);
        let s: u64 = rand::Rng::random(&mut r);
        subsample_indices(t.len(), n, s)?
    };
    let mut pts = Vec::with_capacity(n * points);
    for i in idx {
        let f = resample(&t.streamlines()[i], points).map_err(|e| match e {
            Error::ZeroLengthStreamline => Error::DegenerateSubject(t.subject_id().to_string()),
            other => other,
        })?;
        pts.extend_from_slice(f.points());
    }
    Ok(pts)
}

fn check_subject(t: &Tractogram, cfg: &RegistrationConfig) -> Result<(Point, f64)> {
    if t.len() < cfg.fibers_per_subject_sample {
        return Err(invalid(format!(
            "subject {} has {} streamlines, fewer than the {} sampled for registration",
            t.subject_id(),
            t.len(),
            cfg.fibers_per_subject_sample
        )));
    }
    let (c, rms, max) = tractogram_stats(t);
    if !(max > 1e-9) {
        return Err(Error::DegenerateSubject(t.subject_id().to_string()));
    }
    Ok((c, rms))
}

/// Aligns all subjects into one common space.
///
/// The gauge is fixed by keeping the mean log-scale at zero throughout (each
/// scale-coordinate step on one subject is balanced across the others) and by
/// re-centering translations to zero mean after every sweep. Failure to reach
/// `convergence_tol` is reported through `converged`, not as an error.
pub fn register_group(tractograms: &[Tractogram], cfg: &RegistrationConfig) -> Result<GroupRegistrationResult> {
    cfg.validate()?;
    let n = tractograms.len();
    if n < 2 {
        return Err(invalid("groupwise registration needs at least 2 tractograms"));
    }
    let stats: Vec<(Point, f64)> = tractograms.iter().map(|t| check_subject(t, cfg)).collect::<Result<_>>()?;
    let family = cfg.transform_family;
    let np = family.parameter_count();
    let center = stats.iter().fold(Point::zeros(), |a, (c, _)| a + c) / n as f64;
    let mean_log_rms = stats.iter().map(|(_, r)| r.max(1e-9).ln()).sum::<f64>() / n as f64;
    let radius = mean_log_rms.exp();

    let mut params = vec![vec![0.0; np]; n];
    if cfg.moment_init {
        for (s, (c, rms)) in stats.iter().enumerate() {
            if family != TransformFamily::Rigid {
                let ls = mean_log_rms - rms.max(1e-9).ln();
                for k in family.scale_coords() {
                    params[s][k] = ls;
                }
            }
            let t0 = params_to_transform(family, &params[s], &center);
            let t = center - t0.apply(c);
            params[s][..3].copy_from_slice(t.as_slice());
        }
        recenter(&mut params);
    }

    let mut trace = Vec::new();
    let mut converged = false;
    for (scale, &sigma) in cfg.sigma_schedule.iter().enumerate() {
        let natives: Vec<Vec<Point>> = tractograms
            .iter()
            .enumerate()
            .map(|(s, t)| {
                sample_subject(
                    t,
                    cfg.fibers_per_subject_sample,
                    cfg.seed,
                    (scale as u64) << 32 | s as u64,
                    cfg.points_per_fiber,
                )
            })
            .collect::<Result<_>>()?;
        let p = cfg.points_per_fiber;
        let cost = PairCost::new(sigma, cfg.epsilon, cfg.mcp_variant);
        let settings = sweep_settings(family, sigma, radius);
        let build = |params: &[Vec<f64>]| -> Vec<Cloud> {
            natives
                .iter()
                .zip(params)
                .map(|(x, pr)| Cloud::new(x, p, &params_to_transform(family, pr, &center)))
                .collect()
        };
        let mut clouds = build(&params);
        let (mut total, count) = total_cost(&clouds, &cost);
        trace.push(TracePoint {
            scale,
            sigma,
            iteration: 0,
            objective: total / count,
        });
        converged = false;
        for iter in 1..=cfg.max_iters_per_scale {
            let before = total;
            for s in 0..n {
                let current = partial_cost(&clouds, s, &clouds[s], &cost);
                let rest = total - current;
                let scale_coords = family.scale_coords();
                // Non-scale coordinates only move subject s.
                let mut x = params[s].clone();
                let mut f = |v: &[f64]| {
                    let moving = Cloud::new(&natives[s], p, &params_to_transform(family, v, &center));
                    partial_cost(&clouds, s, &moving, &cost)
                };
                let mut fx = current;
                if scale_coords.is_empty() {
                    let (v, _) = powell_sweep(&mut f, &mut x, fx, &settings);
                    fx = v;
                } else {
                    // Scale coordinates are searched jointly below.
                    let (v, _) = sweep_subset(&mut f, &mut x, fx, &settings, 0..6);
                    fx = v;
                    if np > 9 {
                        let (v, _) = sweep_subset(&mut f, &mut x, fx, &settings, 9..np);
                        fx = v;
                    }
                }
                params[s] = x;
                clouds[s] = Cloud::new(&natives[s], p, &params_to_transform(family, &params[s], &center));
                total = rest + fx;

                if !scale_coords.is_empty() {
                    // Scale coordinates move subject s by α and every other subject by −α/(n−1).
                    for k in scale_coords.filter(|&k| settings.limits[k] > 0.0) {
                        let base: Vec<f64> = params.iter().map(|pr| pr[k]).collect();
                        let mut g = |a: f64| {
                            let mut trial = params.clone();
                            for (u, pr) in trial.iter_mut().enumerate() {
                                pr[k] = if u == s { base[u] + a } else { base[u] - a / (n - 1) as f64 };
                            }
                            total_cost(&build(&trial), &cost).0
                        };
                        let r = crate::optimize::line_minimize_within(
                            &mut g,
                            total,
                            settings.steps[k],
                            settings.tols[k],
                            settings.max_evals_per_line,
                            settings.limits[k],
                        );
                        if r.alpha != 0.0 {
                            for (u, pr) in params.iter_mut().enumerate() {
                                pr[k] = if u == s { base[u] + r.alpha } else { base[u] - r.alpha / (n - 1) as f64 };
                            }
                            clouds = build(&params);
                            total = r.value;
                        }
                    }
                }
            }
            recenter(&mut params);
            clouds = build(&params);
            // Re-centering is a common rigid motion: only rounding changes.
            total = total_cost(&clouds, &cost).0;
            trace.push(TracePoint {
                scale,
                sigma,
                iteration: iter,
                objective: total / count,
            });
            log::debug!("registration scale {scale} (sigma {sigma}) iter {iter}: {}", total / count);
            if (before - total).abs() <= cfg.convergence_tol * before.abs() {
                converged = true;
                break;
            }
        }
    }
    let transforms = params.iter().map(|pr| params_to_transform(family, pr, &center)).collect();
    Ok(GroupRegistrationResult {
        transforms,
        objective_trace: trace,
        converged,
    })
}

fn sweep_subset<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &mut [f64],
    fx: f64,
    settings: &SweepSettings,
    coords: std::ops::Range<usize>,
) -> (f64, usize) {
    let full = x.to_vec();
    let mut sub: Vec<f64> = x[coords.clone()].to_vec();
    let local = SweepSettings {
        steps: settings.steps[coords.clone()].to_vec(),
        tols: settings.tols[coords.clone()].to_vec(),
        limits: settings.limits[coords.clone()].to_vec(),
        ..settings.clone()
    };
    let mut buf = full.clone();
    let mut g = |v: &[f64]| {
        buf[coords.clone()].copy_from_slice(v);
        f(&buf)
    };
    let r = powell_sweep(&mut g, &mut sub, fx, &local);
    x[coords].copy_from_slice(&sub);
    r
}

fn recenter(params: &mut [Vec<f64>]) {
    let n = params.len() as f64;
    for k in 0..3 {
        let mean = params.iter().map(|p| p[k]).sum::<f64>() / n;
        for p in params.iter_mut() {
            p[k] -= mean;
        }
    }
}

/// Aligns one subject to a fixed set of atlas fibers. The atlas never moves.
///
/// Distances are measured halfway between the two spaces (divided by
/// `det(L)^{1/6}`), which is the groupwise mean-log-scale gauge for a pair.
/// Without it the kernel cost is lowered by simply shrinking the subject.
pub fn register_to_atlas(
    subject: &Tractogram,
    atlas_fibers: &[ResampledFiber],
    cfg: &RegistrationConfig,
) -> Result<AffineTransform> {
    cfg.validate()?;
    if atlas_fibers.is_empty() {
        return Err(invalid("atlas fiber sample is empty"));
    }
    let (atlas_pts, p) = flatten(atlas_fibers)?;
    if p != cfg.points_per_fiber {
        return Err(Error::PointCountMismatch(cfg.points_per_fiber, p));
    }
    let (center, rms) = check_subject(subject, cfg)?;
    let (atlas_center, atlas_rms, _) = point_stats(atlas_pts.iter().copied());
    let family = cfg.transform_family;
    let np = family.parameter_count();
    let mut params = vec![0.0; np];
    if cfg.moment_init {
        if family != TransformFamily::Rigid && rms > 1e-9 && atlas_rms > 1e-9 {
            for k in family.scale_coords() {
                params[k] = (atlas_rms / rms).ln();
            }
        }
        let t = atlas_center - center;
        params[..3].copy_from_slice(t.as_slice());
    }
    let atlas = Cloud::new(&atlas_pts, p, &AffineTransform::identity());
    let radius = atlas_rms;
    for (scale, &sigma) in cfg.sigma_schedule.iter().enumerate() {
        let native = sample_subject(subject, cfg.fibers_per_subject_sample, cfg.seed, (scale as u64) << 32, p)?;
        let cost = PairCost::new(sigma, cfg.epsilon, cfg.mcp_variant);
        let settings = sweep_settings(family, sigma, radius);
        let mut f = |v: &[f64]| {
            let t = params_to_transform(family, v, &center);
            let moving = Cloud::new(&native, p, &t);
            let half = t.determinant().abs().powf(1.0 / 6.0);
            if half == 1.0 {
                cost.cross_sum(&moving, &atlas)
            } else {
                PairCost::new(sigma * half, cfg.epsilon, cfg.mcp_variant).cross_sum(&moving, &atlas)
            }
        };
        let mut fx = f(&params);
        for iter in 1..=cfg.max_iters_per_scale {
            let before = fx;
            let (v, _) = powell_sweep(&mut f, &mut params, fx, &settings);
            fx = v;
            log::debug!("atlas registration scale {scale} iter {iter}: {fx}");
            if (before - fx).abs() <= cfg.convergence_tol * before.abs() {
                break;
            }
        }
    }
    Ok(params_to_transform(family, &params, &center))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = RegistrationConfig::default();
        assert!(c.validate().is_ok());
        c.sigma_schedule = vec![10.0, 10.0];
        assert!(c.validate().is_err());
        c.sigma_schedule = vec![];
        assert!(c.validate().is_err());
        c = RegistrationConfig {
            fibers_per_subject_sample: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn params_identity() {
        let c = Point::new(3.0, -2.0, 7.0);
        for fam in [TransformFamily::Rigid, TransformFamily::Similarity, TransformFamily::Affine] {
            let t = params_to_transform(fam, &vec![0.0; fam.parameter_count()], &c);
            assert_eq!(t, AffineTransform::identity());
        }
        let mut p = vec![0.0; 7];
        p[6] = 1.5f64.ln();
        let t = params_to_transform(TransformFamily::Similarity, &p, &c);
        assert!((t.apply(&c) - c).norm() < 1e-12);
        assert!((t.mean_scale() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_cost_is_exact() {
        let cost = PairCost::new(5.0, 1e-12, McpVariant::SymmetricMean);
        assert_eq!(cost.of_distance(cost.cutoff), cost.saturated);
        assert_eq!(cost.of_distance(cost.cutoff * 3.0), cost.saturated);
        assert!(cost.of_distance(10.0) < cost.saturated);
    }
}

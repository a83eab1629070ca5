//! Atlas construction, label transfer and the on-disk bundle format.

pub mod bundle;
pub mod taxonomy;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kmeans::{cluster, ClusterModel, KMeansConfig};
use crate::metric::{mcp_points, FiberDistanceParams};
use crate::registration::{register_group, register_to_atlas, GroupRegistrationResult, RegistrationConfig};
use crate::rng::derive_seed;
use crate::spectral::{embed_all, fit_nystrom, FiberEmbedding, NystromConfig, NystromModel};
use crate::tractogram::{resample, subsample_indices, ResampledFiber, Streamline, SubjectMeta, Tractogram};
use crate::transform::AffineTransform;

pub use bundle::{load_atlas, save_atlas};
pub use taxonomy::{AnatomicalLabel, TractCategory, UNLABELED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasConfig {
    /// Per-subject downsample target.
    pub fibers_per_subject: usize,
    pub points_per_fiber: usize,
    /// Run groupwise registration; off means subjects are already aligned.
    pub register: bool,
    pub registration: RegistrationConfig,
    pub nystrom_sample: usize,
    pub embedding_dims: usize,
    pub metric: FiberDistanceParams,
    pub drop_leading: bool,
    pub clusters: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_restarts: usize,
    pub representatives: usize,
    pub seed: u64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            fibers_per_subject: 210_000,
            points_per_fiber: crate::tractogram::DEFAULT_POINTS,
            register: true,
            registration: RegistrationConfig::default(),
            nystrom_sample: 1500,
            embedding_dims: 10,
            metric: FiberDistanceParams::default(),
            drop_leading: true,
            clusters: 800,
            kmeans_max_iters: 300,
            kmeans_restarts: 1,
            representatives: 10,
            seed: 0,
        }
    }
}

impl AtlasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fibers_per_subject == 0 {
            return Err(invalid("fibers_per_subject must be >= 1"));
        }
        if self.points_per_fiber < 2 {
            return Err(invalid("points_per_fiber must be >= 2"));
        }
        if self.nystrom_sample == 0 || self.embedding_dims == 0 || self.embedding_dims > self.nystrom_sample {
            return Err(invalid("need 1 <= embedding_dims <= nystrom_sample"));
        }
        if self.clusters == 0 || self.representatives == 0 {
            return Err(invalid("clusters and representatives must be >= 1"));
        }
        self.metric.validate()?;
        if self.register {
            self.registration.validate()?;
            if self.registration.points_per_fiber != self.points_per_fiber {
                return Err(invalid("registration.points_per_fiber must equal points_per_fiber"));
            }
        }
        Ok(())
    }

    /// Checks that depend on the input cohort size.
    pub fn validate_for(&self, subjects: usize, min_fibers: usize) -> Result<()> {
        if subjects < 2 {
            return Err(invalid(format!("atlas build needs at least 2 subjects, got {subjects}")));
        }
        if min_fibers < self.fibers_per_subject {
            return Err(invalid(format!(
                "a subject has {min_fibers} fibers, below the downsample target {}",
                self.fibers_per_subject
            )));
        }
        let pooled = subjects * self.fibers_per_subject;
        if self.nystrom_sample > pooled {
            return Err(invalid(format!("nystrom_sample {} exceeds pooled fiber count {pooled}", self.nystrom_sample)));
        }
        if self.clusters > pooled {
            return Err(invalid(format!("K = {} exceeds pooled fiber count {pooled}", self.clusters)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: AtlasConfig,
    pub subject_ids: Vec<String>,
    pub fibers_per_subject: Vec<usize>,
    pub pooled_fibers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub nystrom: NystromModel,
    pub clusters: ClusterModel,
    pub labels: Vec<AnatomicalLabel>,
    pub representative_fibers: Vec<Vec<ResampledFiber>>,
    pub provenance: Provenance,
}

impl Atlas {
    pub fn k(&self) -> usize {
        self.clusters.k()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().any(|l| !l.is_unlabeled())
    }

    /// Distinct tract names carried by the labels, without "unlabeled".
    pub fn tract_names(&self) -> BTreeSet<String> {
        self.labels.iter().filter(|l| !l.is_unlabeled()).map(|l| l.tract_name.clone()).collect()
    }

    pub fn clusters_for(&self, tract: &str) -> Vec<usize> {
        (0..self.k()).filter(|&c| self.labels[c].tract_name == tract).collect()
    }

    pub fn points_per_fiber(&self) -> usize {
        self.nystrom.points_per_fiber()
    }

    /// The same atlas with every stored fiber mapped through `t`.
    pub fn transformed(&self, t: &AffineTransform) -> Atlas {
        let mut out = self.clone();
        for f in &mut out.nystrom.sample_fibers {
            *f = f.transformed(t);
        }
        for reps in &mut out.representative_fibers {
            for f in reps.iter_mut() {
                *f = f.transformed(t);
            }
        }
        out
    }

    /// Representative fibers pooled into a tractogram, e.g. as a registration
    /// source.
    pub fn representatives_tractogram(&self, id: &str) -> Result<Tractogram> {
        let lines = self
            .representative_fibers
            .iter()
            .flatten()
            .map(|f| Streamline::new(f.points().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Tractogram::new(id, lines, SubjectMeta::new(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.labels.len() != k || self.representative_fibers.len() != k {
            return Err(invalid("labels and representatives must have one entry per cluster"));
        }
        if self.clusters.dims() != self.nystrom.dims() {
            return Err(invalid("cluster centroids and embedding differ in dimension"));
        }
        if let Some(l) = self.labels.iter().find(|l| !l.is_consistent()) {
            return Err(invalid(format!("inconsistent label {l:?}")));
        }
        Ok(())
    }
}

/// Where each pooled fiber came from: (subject index, streamline index).
pub type FiberOrigin = (usize, usize);

#[derive(Debug, Clone)]
pub struct AtlasBuild {
    pub atlas: Atlas,
    pub transforms: Vec<AffineTransform>,
    pub registration: Option<GroupRegistrationResult>,
    pub origins: Vec<FiberOrigin>,
    pub pooled: Vec<ResampledFiber>,
    pub embeddings: Vec<FiberEmbedding>,
    pub assignments: Vec<usize>,
}

impl AtlasBuild {
    /// Pooled fibers of one subject, in pooled order.
    pub fn subject_fibers(&self, subject: usize) -> Vec<usize> {
        (0..self.origins.len()).filter(|&i| self.origins[i].0 == subject).collect()
    }
}

/// Indices of the `r` members nearest the centroid (ties by index).
fn representatives(embeddings: &[FiberEmbedding], assignments: &[usize], model: &ClusterModel, r: usize) -> Vec<Vec<usize>> {
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); model.k()];
    for (i, (e, &c)) in embeddings.iter().zip(assignments).enumerate() {
        let d: f64 = e.0.iter().zip(&model.centroids[c]).map(|(a, b)| (a - b) * (a - b)).sum();
        members[c].push((d, i));
    }
    members
        .into_iter()
        .map(|mut m| {
            m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            m.into_iter().take(r).map(|(_, i)| i).collect()
        })
        .collect()
}

/// Subsample → register → pool and resample → Nyström → k-means.
pub fn build_atlas(tractograms: &[Tractogram], cfg: &AtlasConfig) -> Result<AtlasBuild> {
    cfg.validate()?;
    let min_fibers = tractograms.iter().map(Tractogram::len).min().unwrap_or(0);
    cfg.validate_for(tractograms.len(), min_fibers)?;

    let picked: Vec<Vec<usize>> = tractograms
        .iter()
        .enumerate()
        .map(|(s, t)| subsample_indices(t.len(), cfg.fibers_per_subject, derive_seed(cfg.seed, s as u64)))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("subsample"))?;
    let subsets: Vec<Tractogram> = tractograms.iter().zip(&picked).map(|(t, idx)| t.select(idx)).collect();

    let (transforms, registration) = if cfg.register {
        let res = register_group(&subsets, &cfg.registration).map_err(|e| e.in_stage("registration"))?;
        (res.transforms.clone(), Some(res))
    } else {
        (vec![AffineTransform::identity(); subsets.len()], None)
    };

    let mut origins = Vec::new();
    let mut jobs = Vec::new();
    for (s, (t, idx)) in subsets.iter().zip(&picked).enumerate() {
        for (line, &orig) in t.streamlines().iter().zip(idx) {
            origins.push((s, orig));
            jobs.push((s, line));
        }
    }
    let pooled: Vec<ResampledFiber> = jobs
        .par_iter()
        .map(|(s, line)| resample(&line.transformed(&transforms[*s]), cfg.points_per_fiber))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("resample"))?;

    let ncfg = NystromConfig {
        sample_size: cfg.nystrom_sample,
        dims: cfg.embedding_dims,
        metric: cfg.metric,
        drop_leading: cfg.drop_leading,
        seed: derive_seed(cfg.seed, 0x4e59_5354),
    };
    let nystrom = fit_nystrom(&pooled, &ncfg).map_err(|e| e.in_stage("embedding"))?;
    let embeddings = embed_all(&pooled, &nystrom).map_err(|e| e.in_stage("embedding"))?;
    let kcfg = KMeansConfig {
        k: cfg.clusters,
        max_iters: cfg.kmeans_max_iters,
        restarts: cfg.kmeans_restarts,
        seed: derive_seed(cfg.seed, 0x4b4d_4541),
    };
    let fit = cluster(&embeddings, &kcfg).map_err(|e| e.in_stage("clustering"))?;
    let reps = representatives(&embeddings, &fit.assignments, &fit.model, cfg.representatives);
    let representative_fibers = reps.iter().map(|r| r.iter().map(|&i| pooled[i].clone()).collect()).collect();
    let atlas = Atlas {
        labels: vec![AnatomicalLabel::unlabeled(); fit.model.k()],
        nystrom,
        clusters: fit.model,
        representative_fibers,
        provenance: Provenance {
            config: cfg.clone(),
            subject_ids: tractograms.iter().map(|t| t.subject_id().to_string()).collect(),
            fibers_per_subject: picked.iter().map(Vec::len).collect(),
            pooled_fibers: pooled.len(),
            label_source: None,
        },
    };
    Ok(AtlasBuild {
        atlas,
        transforms,
        registration,
        origins,
        pooled,
        embeddings,
        assignments: fit.assignments,
    })
}

/// Mean pairwise MCP between representative sets: rows are clusters of
/// `new`, columns clusters of `reference`.
pub fn cluster_distances(new: &Atlas, reference: &Atlas, params: &FiberDistanceParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let p = new.points_per_fiber();
    if reference.points_per_fiber() != p {
        return Err(Error::PointCountMismatch(p, reference.points_per_fiber()));
    }
    for (name, a) in [("new", new), ("reference", reference)] {
        if let Some(c) = a.representative_fibers.iter().position(Vec::is_empty) {
            return Err(invalid(format!("{name} atlas cluster {c} has no representative fibers")));
        }
    }
    let kr = reference.k();
    let rows: Vec<Vec<f64>> = new
        .representative_fibers
        .par_iter()
        .map(|reps| {
            (0..kr)
                .map(|r| {
                    let other = &reference.representative_fibers[r];
                    let mut sum = 0.0;
                    for a in reps {
                        for b in other {
                            sum += mcp_points(a.points(), b.points(), params.variant, params.flip_invariant);
                        }
                    }
                    sum / (reps.len() * other.len()) as f64
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(new.k(), kr, |i, j| rows[i][j]))
}

/// For each cluster of `new`, the nearest reference cluster (ties to the
/// lowest index).
pub fn correspondence(new: &Atlas, reference: &Atlas, params: &FiberDistanceParams) -> Result<Vec<usize>> {
    let d = cluster_distances(new, reference, params)?;
    Ok((0..d.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..d.ncols() {
                if d[(i, j)] < d[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Copies each new cluster's label from its nearest reference cluster. Both
/// atlases must already share a space.
pub fn transfer_labels(new: &Atlas, reference: &Atlas, params: &FiberDistanceParams) -> Result<Atlas> {
    if let Some(c) = reference.labels.iter().position(AnatomicalLabel::is_unlabeled) {
        return Err(Error::UnlabeledReferenceCluster(c));
    }
    let nearest = correspondence(new, reference, params)?;
    let mut out = new.clone();
    out.labels = nearest.iter().map(|&r| reference.labels[r].clone()).collect();
    out.provenance.label_source = Some(format!(
        "nearest-cluster transfer from a {}-cluster reference ({} subjects)",
        reference.k(),
        reference.provenance.subject_ids.len()
    ));
    Ok(out)
}

/// Registers the new atlas's representatives onto the reference sample, then
/// transfers labels. The returned atlas keeps its own geometry.
pub fn transfer_labels_registered(
    new: &Atlas,
    reference: &Atlas,
    params: &FiberDistanceParams,
    reg: &RegistrationConfig,
) -> Result<(Atlas, AffineTransform)> {
    let reps = new.representatives_tractogram("atlas-representatives")?;
    let mut cfg = reg.clone();
    cfg.fibers_per_subject_sample = cfg.fibers_per_subject_sample.min(reps.len());
    let t = register_to_atlas(&reps, &reference.nystrom.sample_fibers, &cfg).map_err(|e| e.in_stage("label registration"))?;
    let labeled = transfer_labels(&new.transformed(&t), reference, params)?;
    let mut out = new.clone();
    out.labels = labeled.labels;
    out.provenance.label_source = labeled.provenance.label_source;
    Ok((out, t))
}

/// Labels each cluster with the most common ground-truth label among its
/// members (ties to the lexicographically smallest name); empty clusters stay
/// unlabeled.
pub fn label_by_majority(atlas: &Atlas, assignments: &[usize], fiber_labels: &[String]) -> Result<Atlas> {
    if assignments.len() != fiber_labels.len() {
        return Err(invalid("assignments and fiber labels differ in length"));
    }
    let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); atlas.k()];
    for (&c, l) in assignments.iter().zip(fiber_labels) {
        if c >= atlas.k() {
            return Err(invalid(format!("assignment {c} out of range")));
        }
        *votes[c].entry(l.as_str()).or_default() += 1;
    }
    let mut out = atlas.clone();
    out.labels = votes
        .iter()
        .map(|v| {
            let mut best: Option<(&str, usize)> = None;
            for (name, &n) in v {
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((name, n));
                }
            }
            match best {
                Some((name, _)) => AnatomicalLabel::tract(name),
                None => Ok(AnatomicalLabel::unlabeled()),
            }
        })
        .collect::<Result<_>>()?;
    out.provenance.label_source = Some("majority vote over ground-truth fiber labels".to_string());
    Ok(out)
}

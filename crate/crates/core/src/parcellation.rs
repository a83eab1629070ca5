//! Subject parcellation against a labeled atlas, and identification rates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{Atlas, UNLABELED};
use crate::error::{invalid, Error, Result};
use crate::kmeans::assign;
use crate::registration::{register_to_atlas, RegistrationConfig};
use crate::spectral::embed;
use crate::tractogram::{resample, Tractogram};
use crate::transform::AffineTransform;

pub const DEFAULT_THRESHOLD: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParcellationConfig {
    /// Register the subject to the atlas sample first; off means the subject
    /// is already in atlas space.
    pub register: bool,
    pub registration: RegistrationConfig,
    /// Drop fibers farther from their centroid than `mean + c·sd` of the
    /// cluster's training members. Off by default.
    pub outlier_sd: Option<f64>,
}

impl Default for ParcellationConfig {
    fn default() -> Self {
        Self {
            register: true,
            registration: RegistrationConfig::default(),
            outlier_sd: None,
        }
    }
}

impl ParcellationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.register {
            self.registration.validate()?;
        }
        if let Some(c) = self.outlier_sd {
            if !(c >= 0.0) {
                return Err(invalid(format!("outlier_sd must be >= 0, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parcellation {
    pub subject_id: String,
    /// Cluster of every subject fiber, in streamline order.
    pub cluster_of: Vec<usize>,
    /// Fiber indices per tract; every tract named by the atlas is present,
    /// possibly empty.
    pub tracts: BTreeMap<String, Vec<usize>>,
    /// Fibers in unlabeled clusters plus rejected outliers.
    pub unlabeled: Vec<usize>,
    /// Outliers only (a subset of `unlabeled`).
    #[serde(default)]
    pub rejected: Vec<usize>,
    pub transform_used: AffineTransform,
}

impl Parcellation {
    pub fn fiber_count(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn tract_count(&self, tract: &str) -> usize {
        self.tracts.get(tract).map_or(0, Vec::len)
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.tracts.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }
}

/// Registers the subject to the atlas sample, then parcellates.
pub fn parcellate(subject: &Tractogram, atlas: &Atlas, cfg: &ParcellationConfig) -> Result<Parcellation> {
    cfg.validate()?;
    check_inputs(subject, atlas)?;
    let t = if cfg.register {
        let mut reg = cfg.registration.clone();
        reg.points_per_fiber = atlas.points_per_fiber();
        reg.fibers_per_subject_sample = reg.fibers_per_subject_sample.min(subject.len());
        register_to_atlas(subject, &atlas.nystrom.sample_fibers, &reg).map_err(|e| e.in_stage("parcellation registration"))?
    } else {
        AffineTransform::identity()
    };
    parcellate_with_transform(subject, atlas, &t, cfg.outlier_sd)
}

/// Parcellates with a known subject-to-atlas transform.
pub fn parcellate_with_transform(
    subject: &Tractogram,
    atlas: &Atlas,
    t: &AffineTransform,
    outlier_sd: Option<f64>,
) -> Result<Parcellation> {
    check_inputs(subject, atlas)?;
    let p = atlas.points_per_fiber();
    let assigned: Vec<(usize, bool)> = subject
        .streamlines()
        .par_iter()
        .map(|line| {
            let f = resample(&line.transformed(t), p)?;
            let e = embed(&f, &atlas.nystrom);
            let c = assign(&e, &atlas.clusters);
            let outlier = outlier_sd.is_some_and(|k| {
                let d: f64 = e.0.iter().zip(&atlas.clusters.centroids[c]).map(|(a, b)| (a - b) * (a - b)).sum();
                d.sqrt() > atlas.clusters.member_dist_mean[c] + k * atlas.clusters.member_dist_sd[c]
            });
            Ok((c, outlier))
        })
        .collect::<Result<_>>()?;

    let mut tracts: BTreeMap<String, Vec<usize>> = atlas.tract_names().into_iter().map(|n| (n, Vec::new())).collect();
    let mut unlabeled = Vec::new();
    let mut rejected = Vec::new();
    for (i, &(c, outlier)) in assigned.iter().enumerate() {
        let label = &atlas.labels[c];
        if outlier {
            rejected.push(i);
            unlabeled.push(i);
        } else if label.is_unlabeled() {
            unlabeled.push(i);
        } else {
            tracts.get_mut(&label.tract_name).expect("atlas tract").push(i);
        }
    }
    Ok(Parcellation {
        subject_id: subject.subject_id().to_string(),
        cluster_of: assigned.into_iter().map(|(c, _)| c).collect(),
        tracts,
        unlabeled,
        rejected,
        transform_used: *t,
    })
}

fn check_inputs(subject: &Tractogram, atlas: &Atlas) -> Result<()> {
    if !atlas.is_labeled() {
        return Err(Error::UnlabeledAtlas);
    }
    subject.require_nonempty()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub subject_id: String,
    pub threshold: usize,
    pub counts: BTreeMap<String, usize>,
    pub identified: BTreeMap<String, bool>,
}

impl IdentificationResult {
    pub fn is_identified(&self, tract: &str) -> bool {
        self.identified.get(tract).copied().unwrap_or(false)
    }
}

/// A tract is identified when it holds at least `threshold` fibers.
pub fn identify(parc: &Parcellation, threshold: usize) -> Result<IdentificationResult> {
    identify_counts(&parc.subject_id, &parc.counts(), threshold)
}

pub fn identify_counts(subject_id: &str, counts: &BTreeMap<String, usize>, threshold: usize) -> Result<IdentificationResult> {
    if threshold == 0 {
        return Err(invalid("threshold must be >= 1"));
    }
    Ok(IdentificationResult {
        subject_id: subject_id.to_string(),
        threshold,
        identified: counts.iter().filter(|(k, _)| k.as_str() != UNLABELED).map(|(k, &n)| (k.clone(), n >= threshold)).collect(),
        counts: counts.clone(),
    })
}

/// Percentage of subjects in which `tract` is identified. A tract missing from
/// a subject's result counts as not identified.
pub fn identification_rate(results: &[IdentificationResult], tract: &str) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let hits = results.iter().filter(|r| r.is_identified(tract)).count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

/// IR of every tract seen in any result.
pub fn identification_rates(results: &[IdentificationResult]) -> Result<BTreeMap<String, f64>> {
    if results.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let names: std::collections::BTreeSet<&String> = results.iter().flat_map(|r| r.identified.keys()).collect();
    names.into_iter().map(|n| Ok((n.clone(), identification_rate(results, n)?))).collect()
}

/// Cohort mean IR over tracts.
pub fn mean_identification_rate(rates: &BTreeMap<String, f64>) -> Result<f64> {
    if rates.is_empty() {
        return Err(invalid("no tracts to average"));
    }
    Ok(rates.values().sum::<f64>() / rates.len() as f64)
}

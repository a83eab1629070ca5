//! Atlas bundle directory format.
//!
//! ```text
//! <dir>/manifest.json        magic, format version, labels, provenance,
//!                            scalar parameters, and one entry per array
//! <dir>/<array>.bin          8-byte magic "FBATARR1" + little-endian f64 data
//! ```
//!
//! Each manifest array entry records file name, shape and the SHA-256 of the
//! whole `.bin` file. Readers accept any `1.x` bundle and reject other major
//! versions.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AnatomicalLabel, Atlas, Provenance};
use crate::error::{BundleError, Error, Result};
use crate::io::sha256_hex;
use crate::kmeans::ClusterModel;
use crate::metric::FiberDistanceParams;
use crate::spectral::NystromModel;
use crate::tractogram::ResampledFiber;
use crate::transform::Point;

pub const BUNDLE_MAGIC: &str = "fiberatlas-bundle";
pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;
pub const MANIFEST: &str = "manifest.json";
const ARRAY_MAGIC: &[u8; 8] = b"FBATARR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub format_version: String,
    pub points_per_fiber: usize,
    pub sample_size: usize,
    pub dims: usize,
    pub clusters: usize,
    pub metric: FiberDistanceParams,
    pub drop_leading: bool,
    pub labels: Vec<AnatomicalLabel>,
    pub representative_counts: Vec<usize>,
    pub provenance: Provenance,
    pub arrays: Vec<ArrayEntry>,
}

pub fn format_version() -> String {
    format!("{FORMAT_MAJOR}.{FORMAT_MINOR}")
}

fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(ARRAY_MAGIC);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn flat_points<'a>(fibers: impl IntoIterator<Item = &'a ResampledFiber>) -> Vec<f64> {
    fibers.into_iter().flat_map(|f| f.points().iter().flat_map(|p| [p.x, p.y, p.z])).collect()
}

pub fn save_atlas(atlas: &Atlas, dir: &Path) -> Result<Manifest> {
    atlas.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (m, e, k, p) = (atlas.nystrom.sample_size(), atlas.nystrom.dims(), atlas.k(), atlas.points_per_fiber());
    let reps_total: usize = atlas.representative_fibers.iter().map(Vec::len).sum();
    let ev = &atlas.nystrom.sample_eigenvectors;
    let arrays: Vec<(&str, Vec<usize>, Vec<f64>)> = vec![
        ("sample_points", vec![m, p, 3], flat_points(&atlas.nystrom.sample_fibers)),
        ("eigenvalues", vec![e], atlas.nystrom.eigenvalues.clone()),
        (
            "sample_eigenvectors",
            vec![m, e],
            (0..m).flat_map(|i| (0..e).map(move |j| ev[(i, j)])).collect(),
        ),
        ("row_sum_normalizer", vec![m], atlas.nystrom.row_sum_normalizer.clone()),
        ("centroids", vec![k, e], atlas.clusters.centroids.concat()),
        ("member_counts", vec![k], atlas.clusters.member_counts.iter().map(|&c| c as f64).collect()),
        ("member_dist_mean", vec![k], atlas.clusters.member_dist_mean.clone()),
        ("member_dist_sd", vec![k], atlas.clusters.member_dist_sd.clone()),
        (
            "representative_points",
            vec![reps_total, p, 3],
            flat_points(atlas.representative_fibers.iter().flatten()),
        ),
    ];
    let mut entries = Vec::new();
    for (name, shape, values) in arrays {
        let bytes = encode(&values);
        let file = format!("{name}.bin");
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ArrayEntry {
            name: name.to_string(),
            file,
            dtype: "f64le".to_string(),
            shape,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        magic: BUNDLE_MAGIC.to_string(),
        format_version: format_version(),
        points_per_fiber: p,
        sample_size: m,
        dims: e,
        clusters: k,
        metric: atlas.nystrom.metric,
        drop_leading: atlas.nystrom.drop_leading,
        labels: atlas.labels.clone(),
        representative_counts: atlas.representative_fibers.iter().map(Vec::len).collect(),
        provenance: atlas.provenance.clone(),
        arrays: entries,
    };
    crate::io::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn not_bundle(msg: impl Into<String>) -> Error {
    Error::Bundle(BundleError::NotAnAtlasBundle(msg.into()))
}

/// Reads and checks the manifest header without touching the arrays.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(not_bundle(format!("{} has no {MANIFEST}", dir.display())));
    }
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| not_bundle(format!("{}: {e}", path.display())))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(BUNDLE_MAGIC) {
        return Err(not_bundle(format!("{}: missing or wrong magic", path.display())));
    }
    let found = value.get("format_version").and_then(|v| v.as_str()).unwrap_or("").to_string();
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(FORMAT_MAJOR) {
        return Err(Error::Bundle(BundleError::VersionMismatch {
            found,
            supported: format_version(),
        }));
    }
    serde_json::from_value(value).map_err(|e| Error::json(&path, e))
}

fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < ARRAY_MAGIC.len() || &bytes[..8] != ARRAY_MAGIC {
        return Err(not_bundle(format!("{}: bad array magic", entry.file)));
    }
    let expected = 8 + 8 * entry.shape.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Bundle(BundleError::Truncated {
            file: entry.file.clone(),
            expected,
            found: bytes.len(),
        }));
    }
    if bytes.len() != expected || sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::Bundle(BundleError::ChecksumMismatch { file: entry.file.clone() }));
    }
    Ok(bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn fibers(values: &[f64], p: usize) -> Result<Vec<ResampledFiber>> {
    values
        .chunks_exact(3 * p)
        .map(|c| ResampledFiber::from_points(c.chunks_exact(3).map(|x| Point::new(x[0], x[1], x[2])).collect()))
        .collect()
}

pub fn load_atlas(dir: &Path) -> Result<Atlas> {
    let manifest = read_manifest(dir)?;
    let (m, e, k, p) = (manifest.sample_size, manifest.dims, manifest.clusters, manifest.points_per_fiber);
    let array = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let entry = manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format("atlas manifest", dir.join(MANIFEST), format!("missing array {name}")))?;
        if entry.shape != shape || entry.dtype != "f64le" {
            return Err(Error::format(
                "atlas manifest",
                dir.join(MANIFEST),
                format!("array {name} has shape {:?} ({}), expected {shape:?} (f64le)", entry.shape, entry.dtype),
            ));
        }
        read_array(dir, entry)
    };
    let reps_total: usize = manifest.representative_counts.iter().sum();
    if manifest.labels.len() != k || manifest.representative_counts.len() != k {
        return Err(Error::format("atlas manifest", dir.join(MANIFEST), "per-cluster lists do not match cluster count"));
    }
    let sample_fibers = fibers(&array("sample_points", &[m, p, 3])?, p)?;
    let eigenvalues = array("eigenvalues", &[e])?;
    let ev = array("sample_eigenvectors", &[m, e])?;
    let row_sum_normalizer = array("row_sum_normalizer", &[m])?;
    let centroids = array("centroids", &[k, e])?.chunks_exact(e.max(1)).map(<[f64]>::to_vec).collect();
    let member_counts = array("member_counts", &[k])?.into_iter().map(|c| c as usize).collect();
    let member_dist_mean = array("member_dist_mean", &[k])?;
    let member_dist_sd = array("member_dist_sd", &[k])?;
    let rep_flat = fibers(&array("representative_points", &[reps_total, p, 3])?, p)?;
    let mut rep_iter = rep_flat.into_iter();
    let representative_fibers = manifest
        .representative_counts
        .iter()
        .map(|&n| rep_iter.by_ref().take(n).collect())
        .collect();
    let atlas = Atlas {
        nystrom: NystromModel {
            sample_fibers,
            metric: manifest.metric,
            eigenvalues,
            sample_eigenvectors: DMatrix::from_row_slice(m, e, &ev),
            row_sum_normalizer,
            drop_leading: manifest.drop_leading,
        },
        clusters: ClusterModel {
            centroids,
            member_counts,
            member_dist_mean,
            member_dist_sd,
        },
        labels: manifest.labels,
        representative_fibers,
        provenance: manifest.provenance,
    };
    atlas.validate()?;
    Ok(atlas)
}

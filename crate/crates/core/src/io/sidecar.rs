//! Tractogram sidecar: subject metadata and per-point scalar channels next to
//! a `.tck` geometry file.
//!
//! `<stem>.json` describes the subject and lists the channels; the channel
//! values live in `<stem>.scalars.bin` as little-endian float64, one block of
//! `points_total` values per channel in the listed order, points ordered by
//! streamline then by point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, sha256_hex, tck, write_json};
use crate::error::{Error, Result};
use crate::tractogram::{IngestReport, RawStreamline, SubjectMeta, Tractogram};

pub const SIDECAR_FORMAT: &str = "fiberatlas-tractogram";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarBlock {
    pub file: String,
    pub dtype: String,
    pub channels: Vec<String>,
    pub points_total: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub subject_id: String,
    pub meta: SubjectMeta,
    pub geometry: String,
    pub streamline_count: usize,
    pub point_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalars: Option<ScalarBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TractogramFiles {
    pub sidecar: PathBuf,
    pub geometry: PathBuf,
    pub scalars: Option<PathBuf>,
}

/// Writes `<dir>/<stem>.tck`, `<stem>.json` and (if any channel exists)
/// `<stem>.scalars.bin`.
pub fn save_tractogram(dir: &Path, stem: &str, t: &Tractogram) -> Result<TractogramFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let geometry = format!("{stem}.tck");
    let gpath = dir.join(&geometry);
    tck::write(&gpath, t.streamlines().iter().map(|s| s.points()))?;

    // Channels present on every streamline are written.
    let mut names: Vec<String> = t
        .streamlines()
        .first()
        .map(|s| s.scalars().keys().cloned().collect())
        .unwrap_or_default();
    names.retain(|n| t.streamlines().iter().all(|s| s.scalar(n).is_some()));
    let point_counts: Vec<usize> = t.streamlines().iter().map(|s| s.len()).collect();
    let points_total: usize = point_counts.iter().sum();

    let mut scalars = None;
    let mut spath = None;
    if !names.is_empty() {
        let mut bytes = Vec::with_capacity(names.len() * points_total * 8);
        for n in &names {
            for s in t.streamlines() {
                for v in s.scalar(n).expect("filtered above") {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let file = format!("{stem}.scalars.bin");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        scalars = Some(ScalarBlock {
            file,
            dtype: "f64le".into(),
            channels: names,
            points_total,
            sha256: sha256_hex(&bytes),
        });
        spath = Some(path);
    }
    let sidecar = Sidecar {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        subject_id: t.subject_id().to_string(),
        meta: t.meta.clone(),
        geometry,
        streamline_count: t.len(),
        point_counts,
        scalars,
    };
    let jpath = dir.join(format!("{stem}.json"));
    write_json(&jpath, &sidecar)?;
    Ok(TractogramFiles {
        sidecar: jpath,
        geometry: gpath,
        scalars: spath,
    })
}

/// Reads a tractogram from its sidecar JSON (which names the `.tck` file).
pub fn load_tractogram(sidecar_path: &Path) -> Result<(Tractogram, IngestReport)> {
    let sc: Sidecar = read_json(sidecar_path)?;
    let bad = |reason: String| Error::format("sidecar", sidecar_path, reason);
    if sc.format != SIDECAR_FORMAT {
        return Err(bad(format!("unexpected format {:?}", sc.format)));
    }
    if sc.version > SIDECAR_VERSION {
        return Err(bad(format!("version {} newer than supported {}", sc.version, SIDECAR_VERSION)));
    }
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let data = tck::read(&dir.join(&sc.geometry))?;
    if data.streamlines.len() != sc.streamline_count {
        return Err(bad(format!(
            "geometry has {} streamlines, sidecar says {}",
            data.streamlines.len(),
            sc.streamline_count
        )));
    }
    let counts: Vec<usize> = data.streamlines.iter().map(Vec::len).collect();
    if counts != sc.point_counts {
        return Err(bad("per-streamline point counts differ from geometry".into()));
    }
    let mut channels: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(block) = &sc.scalars {
        if block.dtype != "f64le" {
            return Err(bad(format!("unsupported scalar dtype {}", block.dtype)));
        }
        let spath = dir.join(&block.file);
        let bytes = std::fs::read(&spath).map_err(|e| Error::io(&spath, e))?;
        let expected = block.channels.len() * block.points_total * 8;
        if bytes.len() != expected || block.points_total != counts.iter().sum::<usize>() {
            return Err(bad(format!("scalar file has {} bytes, expected {expected}", bytes.len())));
        }
        if sha256_hex(&bytes) != block.sha256 {
            return Err(bad("scalar checksum mismatch".into()));
        }
        for (c, name) in block.channels.iter().enumerate() {
            let base = c * block.points_total * 8;
            let vals = bytes[base..base + block.points_total * 8]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            channels.push((name.clone(), vals));
        }
    }
    let mut raw: Vec<RawStreamline> = Vec::with_capacity(counts.len());
    let mut start = 0usize;
    for pts in data.streamlines {
        let n = pts.len();
        let ch: BTreeMap<String, Vec<f64>> =
            channels.iter().map(|(k, v)| (k.clone(), v[start..start + n].to_vec())).collect();
        start += n;
        raw.push((pts, ch));
    }
    Tractogram::ingest(sc.subject_id, raw, sc.meta)
}

/// Reads a bare `.tck` with externally supplied identity and metadata.
pub fn load_tck(path: &Path, subject_id: &str, meta: SubjectMeta) -> Result<(Tractogram, IngestReport)> {
    let data = tck::read(path)?;
    let raw = data.streamlines.into_iter().map(|p| (p, BTreeMap::new())).collect();
    Tractogram::ingest(subject_id, raw, meta)
}

//! Cohort directories: tractogram sidecars plus optional ground truth, listed
//! in `cohort.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fiberatlas::io::sidecar::{load_tractogram, save_tractogram, Sidecar, SIDECAR_FORMAT};
use fiberatlas::synth::{GroundTruth, SyntheticSubject};
use fiberatlas::{IngestReport, Tractogram};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const COHORT_INDEX: &str = "cohort.json";
const COHORT_FORMAT: &str = "fiberatlas-cohort";
const TRUTH_SUFFIX: &str = ".truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub subject_id: String,
    pub sidecar: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortIndex {
    pub format: String,
    pub version: u32,
    pub subjects: Vec<CohortEntry>,
}

pub struct CohortSubject {
    pub tractogram: Tractogram,
    pub truth: Option<GroundTruth>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Encode {
        what: path.display().to_string(),
        message: e.to_string(),
    })?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes generated subjects as sidecars plus `<id>.truth.json`.
pub fn write_synthetic(dir: &Path, subjects: &[SyntheticSubject]) -> CliResult<CohortIndex> {
    let mut entries = Vec::new();
    for s in subjects {
        let id = s.tractogram.subject_id().to_string();
        save_tractogram(dir, &id, &s.tractogram)?;
        let truth = format!("{id}{TRUTH_SUFFIX}");
        write_json(&dir.join(&truth), &s.truth)?;
        entries.push(CohortEntry {
            sidecar: format!("{id}.json"),
            truth: Some(truth),
            subject_id: id,
        });
    }
    let index = CohortIndex {
        format: COHORT_FORMAT.to_string(),
        version: 1,
        subjects: entries,
    };
    write_json(&dir.join(COHORT_INDEX), &index)?;
    Ok(index)
}

fn is_sidecar(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if !name.ends_with(".json") || name.ends_with(TRUTH_SUFFIX) || name == COHORT_INDEX {
        return false;
    }
    fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<Sidecar>(&t).ok())
        .is_some_and(|s| s.format == SIDECAR_FORMAT)
}

/// The cohort index of `dir`, or one discovered from the sidecars it holds
/// (sorted by file name).
pub fn discover(dir: &Path) -> CliResult<CohortIndex> {
    let index_path = dir.join(COHORT_INDEX);
    if index_path.is_file() {
        return read_json(&index_path);
    }
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_sidecar(p))
        .collect();
    sidecars.sort();
    if sidecars.is_empty() {
        return Err(CliError::Usage(format!("{} holds no tractogram sidecars", dir.display())));
    }
    let mut subjects = Vec::new();
    for p in sidecars {
        let sc: Sidecar = read_json(&p)?;
        let file = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let stem = file.trim_end_matches(".json");
        let truth = format!("{stem}{TRUTH_SUFFIX}");
        subjects.push(CohortEntry {
            subject_id: sc.subject_id,
            sidecar: file.clone(),
            truth: dir.join(&truth).is_file().then_some(truth),
        });
    }
    Ok(CohortIndex {
        format: COHORT_FORMAT.to_string(),
        version: 1,
        subjects,
    })
}

pub fn load_entry(dir: &Path, entry: &CohortEntry) -> CliResult<(CohortSubject, IngestReport)> {
    let (tractogram, report) = load_tractogram(&dir.join(&entry.sidecar))
        .map_err(|e| CliError::from(e).in_stage("load", Some(&entry.subject_id)))?;
    let truth = match &entry.truth {
        Some(t) => Some(read_json::<GroundTruth>(&dir.join(t))?),
        None => None,
    };
    if let Some(t) = &truth {
        if t.fiber_labels.len() != tractogram.len() {
            return Err(CliError::Usage(format!(
                "{}: ground truth lists {} fibers, tractogram has {}",
                entry.subject_id,
                t.fiber_labels.len(),
                tractogram.len()
            )));
        }
    }
    Ok((CohortSubject { tractogram, truth }, report))
}

pub fn load_cohort(dir: &Path) -> CliResult<Vec<CohortSubject>> {
    let index = discover(dir)?;
    index.subjects.iter().map(|e| load_entry(dir, e).map(|(s, _)| s)).collect()
}

/// Re-writes every discovered sidecar of `input` into `out` in canonical
/// form, copying ground truth where present.
pub fn ingest_dir(input: &Path, out: &Path) -> CliResult<(CohortIndex, BTreeMap<String, IngestReport>)> {
    let index = discover(input)?;
    let mut entries = Vec::new();
    let mut reports = BTreeMap::new();
    for e in &index.subjects {
        let (s, report) = load_entry(input, e)?;
        if report.rejected() > 0 {
            log::warn!("stage=ingest subject={} rejected={} streamlines", e.subject_id, report.rejected());
        }
        let id = s.tractogram.subject_id().to_string();
        save_tractogram(out, &id, &s.tractogram)?;
        let truth = match &s.truth {
            Some(t) => {
                let name = format!("{id}{TRUTH_SUFFIX}");
                write_json(&out.join(&name), t)?;
                Some(name)
            }
            None => None,
        };
        entries.push(CohortEntry {
            sidecar: format!("{id}.json"),
            truth,
            subject_id: id.clone(),
        });
        reports.insert(id, report);
    }
    let index = CohortIndex {
        format: COHORT_FORMAT.to_string(),
        version: 1,
        subjects: entries,
    };
    write_json(&out.join(COHORT_INDEX), &index)?;
    Ok((index, reports))
}

/// Relative path → SHA-256 of every file under `dir`, sorted.
pub fn checksums(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
        for e in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let path = e.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                out.insert(rel, fiberatlas::io::sha256_file(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    if dir.is_dir() {
        walk(dir, dir, &mut out)?;
    }
    Ok(out)
}

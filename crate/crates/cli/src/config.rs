//! Pipeline configuration: one versioned TOML file covering every stage.

use std::fmt;
use std::path::{Path, PathBuf};

use fiberatlas::measures::{Aggregation, Measure};
use fiberatlas::registration::{RegistrationConfig, TransformFamily};
use fiberatlas::synth::CohortSpec;
use fiberatlas::AtlasConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variables that may override path settings (and nothing else).
pub const ENV_RUN_DIR: &str = "FIBERATLAS_RUN_DIR";
pub const ENV_INPUT_DIR: &str = "FIBERATLAS_INPUT_DIR";
pub const ENV_REFERENCE_ATLAS: &str = "FIBERATLAS_REFERENCE_ATLAS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// Generate the cohort from `[synth]`.
    Synth,
    /// Read tractogram sidecars from `paths.input_dir`.
    Ingest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub run_dir: PathBuf,
    pub input_dir: Option<PathBuf>,
    pub reference_atlas: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("fiberatlas-run"),
            input_dir: None,
            reference_atlas: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Majority vote over the generator's per-fiber labels (`*.truth.json`).
    GroundTruth,
    /// Transfer from the atlas at `paths.reference_atlas`.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub source: LabelSource,
    /// Register the new atlas onto the reference before transferring.
    pub register_to_reference: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            source: LabelSource::GroundTruth,
            register_to_reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParcellationStageConfig {
    /// Subjects that trained the atlas reuse the transform found during the
    /// build instead of being registered again.
    pub reuse_training_transforms: bool,
    pub register: bool,
    pub registration: RegistrationConfig,
    pub outlier_sd: Option<f64>,
}

impl Default for ParcellationStageConfig {
    fn default() -> Self {
        Self {
            reuse_training_transforms: true,
            register: true,
            registration: desk_registration(),
            outlier_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresConfig {
    pub aggregation: Aggregation,
}

impl Default for MeasuresConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::PointWeighted,
        }
    }
}

/// How the cohort is split for the two-group comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSplit {
    /// Female (A) vs male (B).
    Sex,
    /// Term (A) vs preterm (B) birth.
    Preterm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub split: GroupSplit,
    pub response: Measure,
    pub covariates: Vec<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            split: GroupSplit::Sex,
            response: Measure::Fa,
            covariates: vec!["birth_weight".to_string(), "head_circumference".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Minimum streamline count for a tract to count as identified.
    pub threshold: usize,
    /// Extra thresholds reported in the IR table.
    pub ir_thresholds: Vec<usize>,
    pub responses: Vec<Measure>,
    /// Covariates of the developmental GLM (age is always included).
    pub covariates: Vec<String>,
    pub confidence: f64,
    pub compare: Option<CompareConfig>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            threshold: fiberatlas::parcellation::DEFAULT_THRESHOLD,
            ir_thresholds: vec![5, 10, 15],
            responses: vec![Measure::Fa, Measure::Nos],
            covariates: Vec::new(),
            confidence: 0.95,
            compare: Some(CompareConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub input: InputSource,
    pub paths: PathsConfig,
    pub synth: CohortSpec,
    pub atlas: AtlasConfig,
    pub labels: LabelConfig,
    pub parcellation: ParcellationStageConfig,
    pub measures: MeasuresConfig,
    pub stats: StatsConfig,
}

fn desk_registration() -> RegistrationConfig {
    RegistrationConfig {
        transform_family: TransformFamily::Rigid,
        sigma_schedule: vec![30.0, 20.0, 10.0, 5.0],
        fibers_per_subject_sample: 30,
        max_iters_per_scale: 3,
        ..RegistrationConfig::default()
    }
}

impl Default for PipelineConfig {
    /// The desk-scale synthetic run: 20 subjects of 8 bundles × 100 fibers.
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            input: InputSource::Synth,
            paths: PathsConfig::default(),
            synth: CohortSpec::default(),
            atlas: AtlasConfig {
                fibers_per_subject: 100,
                register: true,
                registration: desk_registration(),
                nystrom_sample: 400,
                embedding_dims: 10,
                clusters: 16,
                kmeans_max_iters: 100,
                representatives: 10,
                ..AtlasConfig::default()
            },
            labels: LabelConfig::default(),
            parcellation: ParcellationStageConfig::default(),
            measures: MeasuresConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

/// One violated precondition, named by its config key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical JSON form, ignoring `paths.run_dir` so a run
    /// can be moved or repeated elsewhere.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.run_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes to JSON");
        fiberatlas::io::sha256_hex(&bytes)
    }

    /// Applies `FIBERATLAS_*` path overrides through `lookup`.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_RUN_DIR) {
            self.paths.run_dir = v.into();
        }
        if let Some(v) = lookup(ENV_INPUT_DIR) {
            self.paths.input_dir = Some(v.into());
        }
        if let Some(v) = lookup(ENV_REFERENCE_ATLAS) {
            self.paths.reference_atlas = Some(v.into());
        }
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.run_dir);
        if let Some(p) = self.paths.input_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.reference_atlas.as_mut() {
            fix(p);
        }
    }
}

/// Reads a config file, applies environment path overrides and resolves
/// relative paths against the file's directory. Does not validate.
pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = PipelineConfig::from_toml_str(&text, path)?;
    cfg.apply_env_overrides(|k| std::env::var(k).ok());
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn check_schedule(issues: &mut Vec<ConfigIssue>, field: &str, reg: &RegistrationConfig) -> bool {
    let before = issues.len();
    let s = &reg.sigma_schedule;
    if s.is_empty() {
        issues.push(issue(field, "sigma schedule is empty"));
    } else if s.iter().any(|v| !(*v > 0.0)) {
        issues.push(issue(field, "sigma values must be > 0"));
    } else if s.windows(2).any(|w| w[1] >= w[0]) {
        issues.push(issue(field, format!("sigma schedule {s:?} is not strictly decreasing")));
    }
    issues.len() == before
}

fn issue(field: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Checks every stage precondition that can be decided before compute and
/// reports all violations together.
pub fn validate_config(cfg: &PipelineConfig) -> Result<(), Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    if cfg.format_version != CONFIG_VERSION {
        issues.push(issue(
            "format_version",
            format!("version {} is not supported (expected {CONFIG_VERSION})", cfg.format_version),
        ));
    }

    // Cohort size bounds, known up front only for synthetic input.
    let mut cohort: Option<(usize, usize)> = None;
    match cfg.input {
        InputSource::Synth => match cfg.synth.validate() {
            Ok(()) => {
                let per_subject = cfg.synth.bundles.iter().map(|b| b.fiber_count).sum();
                cohort = Some((cfg.synth.subjects, per_subject));
            }
            Err(e) => issues.push(issue("synth", e.to_string())),
        },
        InputSource::Ingest => match &cfg.paths.input_dir {
            None => issues.push(issue("paths.input_dir", "required when input = \"ingest\"")),
            Some(p) if !p.is_dir() => issues.push(issue("paths.input_dir", format!("{} is not a directory", p.display()))),
            Some(_) => {}
        },
    }
    let a = &cfg.atlas;
    let mut atlas_ok = true;
    if a.register {
        atlas_ok &= check_schedule(&mut issues, "atlas.registration.sigma_schedule", &a.registration);
        if a.registration.points_per_fiber != a.points_per_fiber {
            issues.push(issue(
                "atlas.registration.points_per_fiber",
                format!("{} differs from atlas.points_per_fiber {}", a.registration.points_per_fiber, a.points_per_fiber),
            ));
            atlas_ok = false;
        }
    }
    if a.embedding_dims == 0 || a.embedding_dims > a.nystrom_sample {
        issues.push(issue(
            "atlas.embedding_dims",
            format!("must be in 1..={} (nystrom_sample), got {}", a.nystrom_sample, a.embedding_dims),
        ));
        atlas_ok = false;
    }
    if let Some((subjects, per_subject)) = cohort {
        if a.fibers_per_subject > per_subject {
            issues.push(issue(
                "atlas.fibers_per_subject",
                format!("{} exceeds the {per_subject} fibers generated per subject", a.fibers_per_subject),
            ));
            atlas_ok = false;
        }
        let pooled = subjects * a.fibers_per_subject.min(per_subject);
        if a.clusters > pooled {
            issues.push(issue("atlas.clusters", format!("K = {} exceeds the pooled fiber count {pooled}", a.clusters)));
            atlas_ok = false;
        }
        if a.nystrom_sample > pooled {
            issues.push(issue(
                "atlas.nystrom_sample",
                format!("{} exceeds the pooled fiber count {pooled}", a.nystrom_sample),
            ));
            atlas_ok = false;
        }
    }
    if atlas_ok {
        if let Err(e) = a.validate() {
            issues.push(issue("atlas", e.to_string()));
        }
    }

    if cfg.labels.source == LabelSource::Reference {
        match &cfg.paths.reference_atlas {
            None => issues.push(issue("paths.reference_atlas", "required when labels.source = \"reference\"")),
            Some(p) if !p.join(fiberatlas::atlas::bundle::MANIFEST).is_file() => issues.push(issue(
                "paths.reference_atlas",
                format!("{} is not an atlas bundle directory", p.display()),
            )),
            Some(_) => {}
        }
    }

    let p = &cfg.parcellation;
    if p.register && check_schedule(&mut issues, "parcellation.registration.sigma_schedule", &p.registration) {
        let mut reg = p.registration.clone();
        reg.points_per_fiber = a.points_per_fiber;
        if let Err(e) = reg.validate() {
            issues.push(issue("parcellation.registration", e.to_string()));
        }
    }
    if let Some(c) = p.outlier_sd {
        if !(c >= 0.0) {
            issues.push(issue("parcellation.outlier_sd", format!("must be >= 0, got {c}")));
        }
    }

    let s = &cfg.stats;
    if s.threshold == 0 {
        issues.push(issue("stats.threshold", "must be >= 1"));
    }
    if s.ir_thresholds.contains(&0) {
        issues.push(issue("stats.ir_thresholds", "thresholds must be >= 1"));
    }
    if !(s.confidence > 0.0 && s.confidence < 1.0) {
        issues.push(issue("stats.confidence", format!("must be in (0, 1), got {}", s.confidence)));
    }
    if s.responses.is_empty() {
        issues.push(issue("stats.responses", "at least one response measure is required"));
    }
    if let Some((subjects, _)) = cohort {
        let k = s.covariates.len() + 2;
        if subjects <= k {
            issues.push(issue(
                "stats.covariates",
                format!("{subjects} subjects cannot fit intercept, age and {} covariates", s.covariates.len()),
            ));
        }
    }
    if cfg.input == InputSource::Synth {
        let known: Vec<&String> = cfg.synth.covariates.keys().collect();
        let compare_covs = s.compare.iter().flat_map(|c| c.covariates.iter());
        for (field, name) in s.covariates.iter().map(|c| ("stats.covariates", c)).chain(compare_covs.map(|c| ("stats.compare.covariates", c))) {
            if !cfg.synth.covariates.contains_key(name) {
                issues.push(issue(field, format!("covariate `{name}` is not generated (known: {known:?})")));
            }
        }
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

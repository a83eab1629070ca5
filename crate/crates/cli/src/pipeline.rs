//! `run_pipeline`: cohort → atlas → label → parcellate → measure → stats,
//! each stage writing into its own directory of the run and recorded in
//! `manifest.json`.
//!
//! A stage is skipped on re-run when the manifest holds a finished record
//! with the same key (config hash plus the checksums of the stage's inputs)
//! and its outputs still match their recorded checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fiberatlas::atlas::{label_by_majority, transfer_labels_registered, Atlas};
use fiberatlas::parcellation::{parcellate_with_transform, Parcellation};
use fiberatlas::registration::GroupRegistrationResult;
use fiberatlas::stats::{compare_groups, glm_by_tract, GlmReport, GlmSpec};
use fiberatlas::synth::generate_cohort;
use fiberatlas::{build_atlas, extract_measures, load_atlas, save_atlas, transfer_labels, AffineTransform, Measure};
use fiberatlas::{parcellate, ParcellationConfig, TractMeasureTable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compare_csv, glm_csv, ir_csv, ir_table, split_table};
use crate::cohort::{self, checksums, read_json, write_json, write_text, CohortSubject};
use crate::config::{validate_config, InputSource, LabelSource, PipelineConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_FORMAT: &str = "fiberatlas-run";
pub const TRAINING: &str = "training.json";

pub const STAGES: [&str; 6] = ["cohort", "atlas", "label", "parcellate", "measure", "stats"];

/// Per-fiber bookkeeping of an atlas build, kept next to the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub subject_ids: Vec<String>,
    /// Subject-to-atlas transform of each training subject.
    pub transforms: Vec<AffineTransform>,
    /// `(subject index, streamline index)` of each pooled fiber.
    pub origins: Vec<(usize, usize)>,
    pub assignments: Vec<usize>,
    pub registration: Option<GroupRegistrationResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub status: StageStatus,
    pub resumed: bool,
    pub seconds: f64,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Checksums of ingested input files, keyed by file name.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub checks: Vec<Check>,
    pub status: RunStatus,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Every stage output, prefixed by its stage directory.
    pub fn output_checksums(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(move |(k, v)| (format!("{}/{k}", s.name), v.clone())))
            .collect()
    }

    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Recompute every stage even when its recorded outputs are intact.
    pub force: bool,
    /// Also write the figure tables under `plot_data/`.
    pub plot_data: bool,
}

fn digest(map: &BTreeMap<String, String>) -> String {
    fiberatlas::io::sha256_hex(serde_json::to_string(map).expect("map serializes").as_bytes())
}

fn seeds(cfg: &PipelineConfig) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    if cfg.input == InputSource::Synth {
        s.insert("synth".to_string(), cfg.synth.seed);
    }
    s.insert("atlas".to_string(), cfg.atlas.seed);
    s.insert("atlas.registration".to_string(), cfg.atlas.registration.seed);
    s.insert("parcellation.registration".to_string(), cfg.parcellation.registration.seed);
    s
}

fn input_checksums(cfg: &PipelineConfig) -> CliResult<BTreeMap<String, String>> {
    match (&cfg.input, &cfg.paths.input_dir) {
        (InputSource::Ingest, Some(dir)) => checksums(dir),
        _ => Ok(BTreeMap::new()),
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    run_dir: PathBuf,
    previous: Option<RunManifest>,
    manifest: RunManifest,
    force: bool,
    upstream: String,
}

impl Runner<'_> {
    fn save(&self) -> CliResult<()> {
        write_json(&self.run_dir.join(MANIFEST), &self.manifest)
    }

    fn stage(&mut self, name: &str, body: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<()> {
        let dir = self.run_dir.join(name);
        let key = fiberatlas::io::sha256_hex(format!("{name}|{}|{}", self.manifest.config_hash, self.upstream).as_bytes());
        let prior = self.previous.as_ref().and_then(|m| m.stage(name)).filter(|r| r.status == StageStatus::Done && r.key == key);
        if let (false, Some(prior)) = (self.force, prior) {
            if checksums(&dir)? == prior.outputs {
                log::info!("stage={name} status=resumed");
                let mut rec = prior.clone();
                rec.resumed = true;
                rec.seconds = 0.0;
                self.upstream = digest(&rec.outputs);
                self.manifest.stages.push(rec);
                return self.save();
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        log::info!("stage={name} status=started");
        let t0 = Instant::now();
        let result = body(&dir);
        let seconds = t0.elapsed().as_secs_f64();
        match result {
            Ok(()) => {
                let outputs = checksums(&dir)?;
                log::info!("stage={name} status=done seconds={seconds:.2} files={}", outputs.len());
                self.upstream = digest(&outputs);
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    key,
                    status: StageStatus::Done,
                    resumed: false,
                    seconds,
                    outputs,
                    error: None,
                });
                self.save()
            }
            Err(e) => {
                let e = match e {
                    CliError::Stage { subject, source, .. } => CliError::Stage {
                        stage: name.to_string(),
                        subject,
                        source,
                    },
                    e => e.in_stage(name, None),
                };
                log::error!("stage={name} status=failed seconds={seconds:.2} error={e}");
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    key,
                    status: StageStatus::Failed,
                    resumed: false,
                    seconds,
                    outputs: checksums(&dir).unwrap_or_default(),
                    error: Some(e.to_string()),
                });
                self.manifest.status = RunStatus::Failed;
                self.save()?;
                Err(e)
            }
        }
    }
}

/// Runs every stage into `cfg.paths.run_dir` and returns the final manifest.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> CliResult<RunManifest> {
    validate_config(cfg).map_err(CliError::Config)?;
    let run_dir = cfg.paths.run_dir.clone();
    fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
    let manifest_path = run_dir.join(MANIFEST);
    let previous = if manifest_path.is_file() {
        match read_json::<RunManifest>(&manifest_path) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("ignoring unreadable previous manifest: {e}");
                None
            }
        }
    } else {
        None
    };
    let inputs = input_checksums(cfg)?;
    let t0 = Instant::now();
    let mut r = Runner {
        cfg,
        run_dir: run_dir.clone(),
        previous,
        manifest: RunManifest {
            format: RUN_FORMAT.to_string(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds: seeds(cfg),
            inputs: BTreeMap::new(),
            stages: Vec::new(),
            checks: Vec::new(),
            status: RunStatus::Running,
            total_seconds: 0.0,
        },
        force: opts.force,
        upstream: digest(&inputs),
    };
    r.manifest.inputs = inputs;

    let c = r.cfg;
    let rd = run_dir.clone();
    r.stage("cohort", |dir| stage_cohort(c, dir))?;
    r.stage("atlas", |dir| stage_atlas(c, &rd, dir))?;
    r.stage("label", |dir| stage_label(c, &rd, dir))?;
    r.stage("parcellate", |dir| stage_parcellate(c, &rd, dir))?;
    r.stage("measure", |dir| stage_measure(c, &rd, dir))?;
    r.stage("stats", |dir| stage_stats(c, &rd, dir))?;

    if opts.plot_data {
        crate::plot::export(&run_dir, &run_dir.join("plot_data"))?;
    }
    r.manifest.checks = run_checks(c, &run_dir)?;
    for check in &r.manifest.checks {
        let level = if check.passed { log::Level::Info } else { log::Level::Warn };
        log::log!(level, "check={} passed={} {}", check.name, check.passed, check.detail);
    }
    r.manifest.status = RunStatus::Complete;
    r.manifest.total_seconds = t0.elapsed().as_secs_f64();
    r.save()?;
    Ok(r.manifest)
}

fn stage_cohort(cfg: &PipelineConfig, dir: &Path) -> CliResult<()> {
    match cfg.input {
        InputSource::Synth => {
            let subjects = generate_cohort(&cfg.synth)?;
            cohort::write_synthetic(dir, &subjects)?;
        }
        InputSource::Ingest => {
            let input = cfg.paths.input_dir.as_deref().expect("validated input_dir");
            let (_, reports) = cohort::ingest_dir(input, dir)?;
            write_json(&dir.join("ingest_report.json"), &reports)?;
        }
    }
    Ok(())
}

fn tractograms(subjects: Vec<CohortSubject>) -> Vec<fiberatlas::Tractogram> {
    subjects.into_iter().map(|s| s.tractogram).collect()
}

fn stage_atlas(cfg: &PipelineConfig, run: &Path, dir: &Path) -> CliResult<()> {
    let subjects = tractograms(cohort::load_cohort(&run.join("cohort"))?);
    let build = build_atlas(&subjects, &cfg.atlas)?;
    save_atlas(&build.atlas, &dir.join("bundle"))?;
    let record = TrainingRecord {
        subject_ids: subjects.iter().map(|t| t.subject_id().to_string()).collect(),
        transforms: build.transforms,
        origins: build.origins,
        assignments: build.assignments,
        registration: build.registration,
    };
    write_json(&dir.join(TRAINING), &record)
}

/// Majority-vote labels from ground truth for an atlas built from `cohort_dir`.
pub fn label_from_truth(atlas: &Atlas, training: &TrainingRecord, cohort_dir: &Path) -> CliResult<Atlas> {
    let index = cohort::discover(cohort_dir)?;
    let mut truth = BTreeMap::new();
    for e in &index.subjects {
        if let Some(t) = &e.truth {
            let gt: fiberatlas::synth::GroundTruth = read_json(&cohort_dir.join(t))?;
            truth.insert(e.subject_id.clone(), gt.fiber_labels);
        }
    }
    let mut labels = Vec::with_capacity(training.origins.len());
    for &(s, i) in &training.origins {
        let id = &training.subject_ids[s];
        let fl = truth.get(id).ok_or_else(|| {
            CliError::Usage("ground-truth labels are missing".to_string()).in_stage("label", Some(id))
        })?;
        let l = fl.get(i).ok_or_else(|| CliError::Usage(format!("fiber {i} has no ground-truth label")).in_stage("label", Some(id)))?;
        labels.push(l.clone());
    }
    Ok(label_by_majority(atlas, &training.assignments, &labels)?)
}

fn stage_label(cfg: &PipelineConfig, run: &Path, dir: &Path) -> CliResult<()> {
    let atlas_dir = run.join("atlas");
    let atlas = load_atlas(&atlas_dir.join("bundle"))?;
    let labeled = match cfg.labels.source {
        LabelSource::GroundTruth => {
            let training: TrainingRecord = read_json(&atlas_dir.join(TRAINING))?;
            label_from_truth(&atlas, &training, &run.join("cohort"))?
        }
        LabelSource::Reference => {
            let path = cfg.paths.reference_atlas.as_deref().expect("validated reference_atlas");
            let reference = load_atlas(path)?;
            let metric = atlas.nystrom.metric;
            if cfg.labels.register_to_reference {
                let mut reg = cfg.parcellation.registration.clone();
                reg.points_per_fiber = atlas.points_per_fiber();
                let (labeled, t) = transfer_labels_registered(&atlas, &reference, &metric, &reg)?;
                write_json(&dir.join("reference_transform.json"), &t)?;
                labeled
            } else {
                transfer_labels(&atlas, &reference, &metric)?
            }
        }
    };
    save_atlas(&labeled, &dir.join("bundle"))?;
    Ok(())
}

fn stage_parcellate(cfg: &PipelineConfig, run: &Path, dir: &Path) -> CliResult<()> {
    let atlas = load_atlas(&run.join("label").join("bundle"))?;
    let training: TrainingRecord = read_json(&run.join("atlas").join(TRAINING))?;
    let subjects = cohort::load_cohort(&run.join("cohort"))?;
    let p = &cfg.parcellation;
    let parcs: Vec<Parcellation> = subjects
        .par_iter()
        .map(|s| {
            let t = &s.tractogram;
            let id = t.subject_id();
            let trained = training.subject_ids.iter().position(|x| x == id);
            let result = match (p.reuse_training_transforms, trained) {
                (true, Some(k)) => parcellate_with_transform(t, &atlas, &training.transforms[k], p.outlier_sd),
                _ => parcellate(
                    t,
                    &atlas,
                    &ParcellationConfig {
                        register: p.register,
                        registration: p.registration.clone(),
                        outlier_sd: p.outlier_sd,
                    },
                ),
            };
            result.map_err(|e| CliError::from(e).in_stage("parcellate", Some(id)))
        })
        .collect::<CliResult<_>>()?;
    for parc in &parcs {
        log::debug!("stage=parcellate subject={} unlabeled={}", parc.subject_id, parc.unlabeled.len());
        write_json(&dir.join(format!("{}.json", parc.subject_id)), parc)?;
    }
    Ok(())
}

/// Reads `<dir>/<subject>.json` for every subject of the cohort, in order.
pub fn read_parcellations(dir: &Path, subject_ids: &[String]) -> CliResult<Vec<Parcellation>> {
    subject_ids.iter().map(|id| read_json(&dir.join(format!("{id}.json")))).collect()
}

fn stage_measure(cfg: &PipelineConfig, run: &Path, dir: &Path) -> CliResult<()> {
    let subjects = cohort::load_cohort(&run.join("cohort"))?;
    let ids: Vec<String> = subjects.iter().map(|s| s.tractogram.subject_id().to_string()).collect();
    let parcs = read_parcellations(&run.join("parcellate"), &ids)?;
    let mut rows = Vec::new();
    for (s, parc) in subjects.iter().zip(&parcs) {
        rows.extend(
            extract_measures(parc, &s.tractogram, cfg.measures.aggregation)
                .map_err(|e| CliError::from(e).in_stage("measure", Some(&parc.subject_id)))?,
        );
    }
    TractMeasureTable::new(rows).write_csv(&dir.join("measures.csv"))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    pub threshold: usize,
    pub subjects: usize,
    pub mean_ir_percent: f64,
    pub glm: BTreeMap<String, GlmReport>,
    pub compare: Option<fiberatlas::stats::GroupComparison>,
    pub compare_unassigned_rows: usize,
}

/// Per-subject, per-tract streamline counts taken from a measure table.
pub fn counts_from_table(table: &TractMeasureTable) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in &table.rows {
        counts.entry(r.subject_id.clone()).or_default().insert(r.tract.clone(), r.nos);
    }
    counts
}

fn stage_stats(cfg: &PipelineConfig, run: &Path, dir: &Path) -> CliResult<()> {
    let s = &cfg.stats;
    let table = TractMeasureTable::read_csv(&run.join("measure").join("measures.csv"))?;
    let counts = counts_from_table(&table);
    let mut thresholds = s.ir_thresholds.clone();
    thresholds.push(s.threshold);
    let ir = ir_table(&counts, &thresholds)?;
    write_text(&dir.join("ir.csv"), &ir_csv(&ir)?)?;
    let at: Vec<f64> = ir.iter().filter(|r| r.threshold == s.threshold).map(|r| r.ir_percent).collect();
    let mean_ir = if at.is_empty() { 0.0 } else { at.iter().sum::<f64>() / at.len() as f64 };

    let mut glm = BTreeMap::new();
    for &m in &s.responses {
        let spec = GlmSpec {
            response: m,
            covariates: s.covariates.clone(),
            tests: None,
            confidence: s.confidence,
        };
        let report = glm_by_tract(&table, &spec)?;
        for (t, why) in &report.failed {
            log::warn!("stage=stats tract={t} response={} glm failed: {why}", m.as_str());
        }
        write_text(&dir.join(format!("glm_{}.csv", m.as_str())), &glm_csv(&report)?)?;
        glm.insert(m.as_str().to_string(), report);
    }

    let (mut compare, mut unassigned) = (None, 0);
    if let Some(c) = &s.compare {
        let (a, b, dropped) = split_table(&table, c.split);
        unassigned = dropped;
        let spec = GlmSpec {
            response: c.response,
            covariates: c.covariates.clone(),
            tests: None,
            confidence: s.confidence,
        };
        let cmp = compare_groups(&a, &b, &spec)?;
        let (tracts, cats) = compare_csv(&cmp)?;
        write_text(&dir.join("compare_tracts.csv"), &tracts)?;
        write_text(&dir.join("compare_categories.csv"), &cats)?;
        compare = Some(cmp);
    }
    let summary = StatsSummary {
        threshold: s.threshold,
        subjects: counts.len(),
        mean_ir_percent: mean_ir,
        glm,
        compare,
        compare_unassigned_rows: unassigned,
    };
    write_json(&dir.join("summary.json"), &summary)
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Consistency checks over a finished run; truth-based ones only when the
/// cohort carries ground truth.
pub fn run_checks(cfg: &PipelineConfig, run: &Path) -> CliResult<Vec<Check>> {
    use crate::analysis::{read_csv_rows, GlmCsvRow};
    let mut checks = Vec::new();
    let cohort_dir = run.join("cohort");
    let index = cohort::discover(&cohort_dir)?;
    let ids: Vec<String> = index.subjects.iter().map(|e| e.subject_id.clone()).collect();
    let parcs = read_parcellations(&run.join("parcellate"), &ids)?;
    let table = TractMeasureTable::read_csv(&run.join("measure").join("measures.csv"))?;

    let tracts = parcs.first().map_or(0, |p| p.tracts.len());
    checks.push(check(
        "measure_rows",
        table.rows.len() == ids.len() * tracts,
        format!("{} rows for {} subjects x {tracts} tracts", table.rows.len(), ids.len()),
    ));

    for &m in &cfg.stats.responses {
        let rows: Vec<GlmCsvRow> = read_csv_rows(&run.join("stats").join(format!("glm_{}.csv", m.as_str())))?;
        checks.push(check(
            &format!("glm_{}_fitted", m.as_str()),
            rows.len() == tracts,
            format!("{} of {tracts} tracts fitted", rows.len()),
        ));
    }

    let truths: Vec<Option<fiberatlas::synth::GroundTruth>> = index
        .subjects
        .iter()
        .map(|e| e.truth.as_ref().map(|t| read_json(&cohort_dir.join(t))).transpose())
        .collect::<CliResult<_>>()?;
    if truths.iter().all(Option::is_some) && !truths.is_empty() {
        let truths: Vec<_> = truths.into_iter().flatten().collect();
        let mut worst = 1.0f64;
        let mut missed = Vec::new();
        for (parc, truth) in parcs.iter().zip(&truths) {
            let mut tract_of = vec![""; parc.fiber_count()];
            for (name, fibers) in &parc.tracts {
                for &i in fibers {
                    tract_of[i] = name;
                }
            }
            let agree = tract_of.iter().zip(&truth.fiber_labels).filter(|(a, b)| **a == b.as_str()).count();
            worst = worst.min(agree as f64 / parc.fiber_count().max(1) as f64);
            for (bundle, &n) in &truth.bundle_counts {
                if n >= cfg.stats.threshold && parc.tract_count(bundle) < cfg.stats.threshold {
                    missed.push(format!("{}:{bundle}", parc.subject_id));
                }
            }
        }
        checks.push(check(
            "parcellation_accuracy",
            worst >= 0.95,
            format!("lowest per-subject agreement with ground truth {:.4} (need >= 0.95)", worst),
        ));
        checks.push(check(
            "truth_tracts_identified",
            missed.is_empty(),
            if missed.is_empty() { "every generated bundle identified in every subject".to_string() } else { format!("missed {missed:?}") },
        ));

        if cfg.stats.responses.contains(&Measure::Fa) && cfg.stats.covariates.is_empty() {
            let rows: Vec<GlmCsvRow> = read_csv_rows(&run.join("stats").join("glm_fa.csv"))?;
            let mut bad = Vec::new();
            let mut tested = 0;
            for r in &rows {
                let slopes: Vec<f64> = truths.iter().filter_map(|t| t.true_fa_slopes.get(&r.tract).copied()).collect();
                let Some(&truth) = slopes.first() else { continue };
                if slopes.iter().any(|s| *s != truth) {
                    continue;
                }
                tested += 1;
                if !((r.beta - truth).abs() <= 4.0 * r.se) {
                    bad.push(format!("{}: beta {:.5} vs {truth:.5} (se {:.5})", r.tract, r.beta, r.se));
                }
            }
            checks.push(check(
                "fa_slope_recovery",
                bad.is_empty() && tested > 0,
                if bad.is_empty() { format!("{tested} tract slopes within 4 SE of truth") } else { bad.join("; ") },
            ));
        }
    }
    Ok(checks)
}

/// Reads the manifest of a run directory.
pub fn read_run_manifest(run: &Path) -> CliResult<RunManifest> {
    read_json(&run.join(MANIFEST))
}


use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fiberatlas::atlas::bundle::read_manifest;
use fiberatlas::io::sidecar::load_tck;
use fiberatlas::measures::Aggregation;
use fiberatlas::parcellation::{parcellate_with_transform, Parcellation};
use fiberatlas::stats::{compare_groups, glm_by_tract, GlmSpec};
use fiberatlas::synth::{desk_bundles, generate_cohort, CohortSpec};
use fiberatlas::{extract_measures, load_atlas, parcellate, save_atlas, transfer_labels, Measure, ParcellationConfig};
use fiberatlas::{Sex, SubjectMeta, TractMeasureTable};
use serde_json::json;

use crate::analysis::{compare_csv, glm_csv, ir_csv, ir_table, ir_test, read_ir_csv, split_table};
use crate::cohort::{self, read_json, write_json, write_text};
use crate::config::{load_config, validate_config, GroupSplit, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{counts_from_table, label_from_truth, read_parcellations, run_pipeline, RunOptions, TrainingRecord, TRAINING};

#[derive(Debug, Parser)]
#[command(name = "fiberatlas", version, about = "Fiber clustering atlas pipeline")]
pub struct Cli {
    /// Worker threads for per-subject and per-pair work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Only warnings and errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Debug-level logging.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic data generation.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Validate tractograms and write them in canonical sidecar form.
    Ingest(IngestArgs),
    #[command(subcommand)]
    Atlas(AtlasCommand),
    /// Parcellate subjects into anatomical tracts.
    Parcellate(ParcellateArgs),
    /// Identification rates from the streamline counts of a measure table.
    Ir(IrArgs),
    /// Per-tract measure table from parcellations.
    Measure(MeasureArgs),
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Generate a cohort of tractograms with ground-truth sidecars.
    Cohort(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML cohort spec (the `[synth]` table format); defaults to the desk cohort.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Fibers per bundle (desk bundles only).
    #[arg(long)]
    pub fibers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A directory of sidecars, or a bare `.tck` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Subject id for a bare `.tck`.
    #[arg(long)]
    pub subject_id: Option<String>,
    /// Age at scan for a bare `.tck`.
    #[arg(long)]
    pub age: Option<f64>,
    #[arg(long, value_enum)]
    pub sex: Option<SexArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SexArg {
    Female,
    Male,
}

#[derive(Debug, Subcommand)]
pub enum AtlasCommand {
    /// Build an (unlabeled) atlas from a cohort directory.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config whose `[atlas]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Label an atlas from ground truth or a reference atlas.
    Label {
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cohort directory with `*.truth.json` used to build the atlas.
        #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
        truth: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Transfer labels without first registering to the reference.
        #[arg(long)]
        no_register: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a summary of an atlas bundle.
    Inspect {
        #[arg(long)]
        atlas: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ParcellateArgs {
    #[arg(long)]
    pub atlas: PathBuf,
    /// Cohort directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Subjects are already in atlas space.
    #[arg(long)]
    pub no_register: bool,
    /// Register training subjects again instead of reusing the build transforms.
    #[arg(long)]
    pub no_reuse_transforms: bool,
    #[arg(long)]
    pub outlier_sd: Option<f64>,
    /// Pipeline config whose `[parcellation]` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IrArgs {
    /// Measure table (CSV) whose NoS column gives the counts.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub thresholds: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub parcellations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "point-weighted")]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    PointWeighted,
    FiberMean,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Per-tract GLM of a measure against age.
    Glm {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "fa")]
        response: String,
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Bonferroni test count (default: tracts fitted).
        #[arg(long)]
        tests: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired t-test of per-tract IRs between two IR tables.
    IrTest {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 10)]
        threshold: usize,
    },
    /// Side-by-side GLM betas of two groups.
    Compare {
        /// Single table split by `--split`.
        #[arg(long, conflicts_with_all = ["a", "b"])]
        table: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sex")]
        split: SplitArg,
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long, default_value = "fa")]
        response: String,
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Sex,
    Preterm,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Recompute every stage.
    #[arg(long)]
    pub force: bool,
    /// Also write figure tables to `<run>/plot_data`.
    #[arg(long)]
    pub plot_data: bool,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Print the default desk-scale config.
    Default,
    /// Check a config file and list every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn pipeline_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn measure(name: &str) -> CliResult<Measure> {
    name.parse().map_err(|e: fiberatlas::Error| CliError::Usage(e.to_string()))
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(SynthCommand::Cohort(a)) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Atlas(a) => atlas(a),
        Command::Parcellate(a) => parcellate_cmd(a),
        Command::Ir(a) => {
            let table = TractMeasureTable::read_csv(&a.table)?;
            let rows = ir_table(&counts_from_table(&table), &a.thresholds)?;
            write_text(&a.out, &ir_csv(&rows)?)
        }
        Command::Measure(a) => measure_cmd(a),
        Command::Stats(s) => stats(s),
        Command::Run(a) => {
            let cfg = load_config(&a.config)?;
            let m = run_pipeline(
                &cfg,
                &RunOptions {
                    force: a.force,
                    plot_data: a.plot_data,
                },
            )?;
            for c in &m.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("run directory: {}", cfg.paths.run_dir.display());
            if m.checks_passed() {
                Ok(())
            } else {
                Err(CliError::ChecksFailed(m.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()))
            }
        }
        Command::Config(ConfigCommand::Default) => {
            print!("{}", PipelineConfig::default().to_toml_string());
            Ok(())
        }
        Command::Config(ConfigCommand::Validate { config }) => {
            let cfg = load_config(&config)?;
            validate_config(&cfg).map_err(CliError::Config)?;
            println!("ok: {} (hash {})", config.display(), cfg.hash());
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            toml::from_str::<CohortSpec>(&text).map_err(|e| CliError::Parse {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => CohortSpec::default(),
    };
    if let Some(n) = a.subjects {
        spec.subjects = n;
    }
    if let Some(f) = a.fibers {
        spec.bundles = desk_bundles(f);
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let subjects = generate_cohort(&spec)?;
    let index = cohort::write_synthetic(&a.out, &subjects)?;
    print(&json!({ "out": a.out, "subjects": index.subjects.len() }));
    Ok(())
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    if a.input.is_dir() {
        let (index, reports) = cohort::ingest_dir(&a.input, &a.out)?;
        write_json(&a.out.join("ingest_report.json"), &reports)?;
        print(&json!({ "subjects": index.subjects.len(), "reports": reports }));
        return Ok(());
    }
    let (Some(id), Some(age)) = (a.subject_id, a.age) else {
        return Err(CliError::Usage("a bare .tck needs --subject-id and --age".into()));
    };
    let mut meta = SubjectMeta::new(age);
    meta.sex = match a.sex {
        Some(SexArg::Female) => Sex::Female,
        Some(SexArg::Male) => Sex::Male,
        None => Sex::Unknown,
    };
    meta.validate()?;
    let (t, report) = load_tck(&a.input, &id, meta)?;
    fiberatlas::io::sidecar::save_tractogram(&a.out, &id, &t)?;
    print(&json!({ "subject_id": id, "report": report }));
    Ok(())
}

fn atlas(cmd: AtlasCommand) -> CliResult<()> {
    match cmd {
        AtlasCommand::Build { input, out, config } => {
            let cfg = pipeline_config(config.as_deref())?;
            let subjects: Vec<_> = cohort::load_cohort(&input)?.into_iter().map(|s| s.tractogram).collect();
            let build = fiberatlas::build_atlas(&subjects, &cfg.atlas)?;
            save_atlas(&build.atlas, &out)?;
            let record = TrainingRecord {
                subject_ids: subjects.iter().map(|t| t.subject_id().to_string()).collect(),
                transforms: build.transforms,
                origins: build.origins,
                assignments: build.assignments,
                registration: build.registration,
            };
            write_json(&out.join(TRAINING), &record)?;
            print(&json!({ "out": out, "clusters": build.atlas.k(), "pooled_fibers": record.origins.len() }));
            Ok(())
        }
        AtlasCommand::Label {
            atlas,
            out,
            truth,
            reference,
            no_register,
            config,
        } => {
            let a = load_atlas(&atlas)?;
            let training_path = atlas.join(TRAINING);
            let labeled = match (truth, reference) {
                (Some(cohort_dir), _) => {
                    let training: TrainingRecord = read_json(&training_path)?;
                    label_from_truth(&a, &training, &cohort_dir)?
                }
                (None, Some(r)) => {
                    let reference = load_atlas(&r)?;
                    let metric = a.nystrom.metric;
                    if no_register {
                        transfer_labels(&a, &reference, &metric)?
                    } else {
                        let cfg = pipeline_config(config.as_deref())?;
                        let mut reg = cfg.parcellation.registration;
                        reg.points_per_fiber = a.points_per_fiber();
                        fiberatlas::atlas::transfer_labels_registered(&a, &reference, &metric, &reg)?.0
                    }
                }
                (None, None) => return Err(CliError::Usage("need --truth or --reference".into())),
            };
            save_atlas(&labeled, &out)?;
            if training_path.is_file() {
                std::fs::copy(&training_path, out.join(TRAINING)).map_err(|e| CliError::io(&training_path, e))?;
            }
            let tracts: Vec<String> = labeled.tract_names().into_iter().collect();
            print(&json!({ "out": out, "tracts": tracts }));
            Ok(())
        }
        AtlasCommand::Inspect { atlas } => {
            let m = read_manifest(&atlas)?;
            let a = load_atlas(&atlas)?;
            let per_tract: std::collections::BTreeMap<String, usize> =
                a.tract_names().into_iter().map(|t| (t.clone(), a.clusters_for(&t).len())).collect();
            print(&json!({
                "format_version": m.format_version,
                "clusters": m.clusters,
                "sample_size": m.sample_size,
                "dims": m.dims,
                "points_per_fiber": m.points_per_fiber,
                "metric": m.metric,
                "labeled": a.is_labeled(),
                "clusters_per_tract": per_tract,
                "subjects": m.provenance.subject_ids,
                "label_source": m.provenance.label_source,
            }));
            Ok(())
        }
    }
}

fn parcellate_cmd(a: ParcellateArgs) -> CliResult<()> {
    let cfg = pipeline_config(a.config.as_deref())?;
    let atlas = load_atlas(&a.atlas)?;
    let training: Option<TrainingRecord> = {
        let p = a.atlas.join(TRAINING);
        if p.is_file() && !a.no_reuse_transforms {
            Some(read_json(&p)?)
        } else {
            None
        }
    };
    let pc = ParcellationConfig {
        register: !a.no_register,
        registration: cfg.parcellation.registration.clone(),
        outlier_sd: a.outlier_sd.or(cfg.parcellation.outlier_sd),
    };
    let subjects = cohort::load_cohort(&a.input)?;
    let mut summary = serde_json::Map::new();
    for s in &subjects {
        let t = &s.tractogram;
        let id = t.subject_id();
        let trained = training.as_ref().and_then(|r| r.subject_ids.iter().position(|x| x == id).map(|k| r.transforms[k]));
        let parc: Parcellation = match trained {
            Some(tf) if !a.no_register => parcellate_with_transform(t, &atlas, &tf, pc.outlier_sd),
            _ => parcellate(t, &atlas, &pc),
        }
        .map_err(|e| CliError::from(e).in_stage("parcellate", Some(id)))?;
        write_json(&a.out.join(format!("{id}.json")), &parc)?;
        summary.insert(id.to_string(), json!(parc.counts()));
    }
    print(&serde_json::Value::Object(summary));
    Ok(())
}

fn measure_cmd(a: MeasureArgs) -> CliResult<()> {
    let subjects = cohort::load_cohort(&a.input)?;
    let ids: Vec<String> = subjects.iter().map(|s| s.tractogram.subject_id().to_string()).collect();
    let parcs = read_parcellations(&a.parcellations, &ids)?;
    let how = match a.aggregation {
        AggregationArg::PointWeighted => Aggregation::PointWeighted,
        AggregationArg::FiberMean => Aggregation::FiberMean,
    };
    let mut rows = Vec::new();
    for (s, p) in subjects.iter().zip(&parcs) {
        rows.extend(extract_measures(p, &s.tractogram, how).map_err(|e| CliError::from(e).in_stage("measure", Some(&p.subject_id)))?);
    }
    let n = rows.len();
    TractMeasureTable::new(rows).write_csv(&a.out)?;
    print(&json!({ "out": a.out, "rows": n }));
    Ok(())
}

fn stats(cmd: StatsCommand) -> CliResult<()> {
    match cmd {
        StatsCommand::Glm {
            table,
            response,
            covariates,
            confidence,
            tests,
            out,
        } => {
            let t = TractMeasureTable::read_csv(&table)?;
            let spec = GlmSpec {
                response: measure(&response)?,
                covariates,
                tests,
                confidence,
            };
            let report = glm_by_tract(&t, &spec)?;
            write_text(&out.join(format!("glm_{}.csv", spec.response.as_str())), &glm_csv(&report)?)?;
            write_json(&out.join(format!("glm_{}.json", spec.response.as_str())), &report)?;
            print(&json!({ "fitted": report.results.len(), "failed": report.failed, "tests": report.tests }));
            Ok(())
        }
        StatsCommand::IrTest { a, b, threshold } => {
            let (tracts, t) = ir_test(&read_ir_csv(&a)?, &read_ir_csv(&b)?, threshold)?;
            print(&json!({ "tracts": tracts.len(), "t": t.t, "df": t.df, "p": t.p, "mean_difference": t.mean_difference }));
            Ok(())
        }
        StatsCommand::Compare {
            table,
            split,
            a,
            b,
            response,
            covariates,
            out,
        } => {
            let (ta, tb) = match (table, a, b) {
                (Some(t), _, _) => {
                    let split = match split {
                        SplitArg::Sex => GroupSplit::Sex,
                        SplitArg::Preterm => GroupSplit::Preterm,
                    };
                    let (x, y, dropped) = split_table(&TractMeasureTable::read_csv(&t)?, split);
                    if dropped > 0 {
                        log::warn!("stats compare: {dropped} rows could not be assigned to a group");
                    }
                    (x, y)
                }
                (None, Some(a), Some(b)) => (TractMeasureTable::read_csv(&a)?, TractMeasureTable::read_csv(&b)?),
                _ => return Err(CliError::Usage("need --table or both --a and --b".into())),
            };
            let spec = GlmSpec {
                response: measure(&response)?,
                covariates,
                tests: None,
                confidence: 0.95,
            };
            let cmp = compare_groups(&ta, &tb, &spec)?;
            let (tracts, cats) = compare_csv(&cmp)?;
            write_text(&out.join("compare_tracts.csv"), &tracts)?;
            write_text(&out.join("compare_categories.csv"), &cats)?;
            write_json(&out.join("compare.json"), &cmp)?;
            print(&json!({ "tracts": cmp.tracts.len(), "excluded": cmp.excluded }));
            Ok(())
        }
    }
}

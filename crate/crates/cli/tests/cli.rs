use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fiberatlas_cli::PipelineConfig;

fn fiberatlas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberatlas")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn default_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = fiberatlas(&["config", "default"]);
    assert!(out.status.success());
    let path = dir.path().join("c.toml");
    fs::write(&path, &out.stdout).unwrap();
    let parsed = PipelineConfig::from_toml_str(std::str::from_utf8(&out.stdout).unwrap(), &path).unwrap();
    assert_eq!(parsed, PipelineConfig::default());
    assert_eq!(fiberatlas(&["config", "validate", "--config", p(&path)]).status.code(), Some(0));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.atlas.clusters = 0;
    cfg.stats.threshold = 0;
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, cfg.to_toml_string()).unwrap();
    let out = fiberatlas(&["config", "validate", "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clusters") && err.contains("stats.threshold"), "{err}");

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, "format_version = 1\nclusterz = 3\n").unwrap();
    assert_eq!(fiberatlas(&["config", "validate", "--config", p(&typo)]).status.code(), Some(1));

    let missing = dir.path().join("missing.toml");
    assert_eq!(fiberatlas(&["config", "validate", "--config", p(&missing)]).status.code(), Some(3));

    let out = fiberatlas(&["atlas", "inspect", "--atlas", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not an atlas bundle"));

    assert_eq!(fiberatlas(&["parcellate"]).status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn step_by_step_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let mut cfg = PipelineConfig::default();
    cfg.atlas.fibers_per_subject = 40;
    cfg.atlas.nystrom_sample = 100;
    cfg.atlas.embedding_dims = 7;
    cfg.atlas.clusters = 8;
    cfg.atlas.register = false;
    cfg.parcellation.register = false;
    fs::write(d("c.toml"), cfg.to_toml_string()).unwrap();

    let ok = |args: &[&str]| {
        let out = fiberatlas(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["synth", "cohort", "--out", p(&d("cohort")), "--subjects", "6", "--fibers", "12", "--seed", "4"]);
    ok(&["atlas", "build", "--input", p(&d("cohort")), "--out", p(&d("atlas")), "--config", p(&d("c.toml"))]);
    ok(&["atlas", "label", "--atlas", p(&d("atlas")), "--out", p(&d("labeled")), "--truth", p(&d("cohort"))]);
    let inspect = ok(&["atlas", "inspect", "--atlas", p(&d("labeled"))]);
    let info: serde_json::Value = serde_json::from_slice(&inspect.stdout).unwrap();
    assert_eq!(info["clusters"], 8);
    assert_eq!(info["labeled"], true);
    ok(&["parcellate", "--atlas", p(&d("labeled")), "--input", p(&d("cohort")), "--out", p(&d("parc")), "--no-register"]);
    ok(&["measure", "--input", p(&d("cohort")), "--parcellations", p(&d("parc")), "--out", p(&d("m.csv"))]);
    ok(&["ir", "--table", p(&d("m.csv")), "--thresholds", "5,10,15", "--out", p(&d("ir.csv"))]);
    ok(&["stats", "glm", "--table", p(&d("m.csv")), "--out", p(&d("glm"))]);

    let m = fs::read_to_string(d("m.csv")).unwrap();
    assert_eq!(m.lines().count(), 1 + 6 * 8, "one row per subject and tract");
    let ir = fs::read_to_string(d("ir.csv")).unwrap();
    assert_eq!(ir.lines().count(), 1 + 3 * 8);
    let glm = fs::read_to_string(d("glm/glm_fa.csv")).unwrap();
    assert_eq!(glm.lines().count(), 1 + 8);
}

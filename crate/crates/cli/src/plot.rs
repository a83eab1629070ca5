//! Tables behind the standard figures, derived from a finished run:
//!
//! - `ir_by_threshold.csv`: IR per tract at each threshold
//! - `measure_vs_age.csv`: per-subject tract measures with the fitted FA line
//! - `beta_by_tract.csv`, `beta_by_category.csv`: developmental slopes
//! - `group_betas_by_tract.csv`, `group_betas_by_category.csv`: two-group betas

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fiberatlas::TractMeasureTable;
use serde::Serialize;

use crate::analysis::{read_csv_rows, write_csv_rows, GlmCsvRow};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct AgeRow<'a> {
    subject_id: &'a str,
    tract: &'a str,
    age_at_scan: f64,
    nos: usize,
    mean_fa: Option<f64>,
    mean_md: Option<f64>,
    fitted_fa: Option<f64>,
}

#[derive(Serialize)]
struct CategoryRow {
    category: String,
    response: String,
    tracts: usize,
    mean_beta: f64,
}

fn copy(from: &Path, to: &Path) -> CliResult<()> {
    if from.is_file() {
        fs::copy(from, to).map_err(|e| CliError::io(from, e))?;
    }
    Ok(())
}

pub fn export(run: &Path, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let stats = run.join("stats");
    copy(&stats.join("ir.csv"), &out.join("ir_by_threshold.csv"))?;
    copy(&stats.join("compare_tracts.csv"), &out.join("group_betas_by_tract.csv"))?;
    copy(&stats.join("compare_categories.csv"), &out.join("group_betas_by_category.csv"))?;

    let mut glm: Vec<GlmCsvRow> = Vec::new();
    let mut names: Vec<_> = fs::read_dir(&stats)
        .map_err(|e| CliError::io(&stats, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("glm_") && n.ends_with(".csv")))
        .collect();
    names.sort();
    for p in names {
        glm.extend(read_csv_rows::<GlmCsvRow>(&p)?);
    }
    write_csv_rows(&out.join("beta_by_tract.csv"), &glm)?;

    let mut cats: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in glm.iter().filter(|r| !r.category.is_empty()) {
        cats.entry((r.category.clone(), r.response.clone())).or_default().push(r.beta);
    }
    let cat_rows: Vec<CategoryRow> = cats
        .into_iter()
        .map(|((category, response), b)| CategoryRow {
            category,
            response,
            tracts: b.len(),
            mean_beta: b.iter().sum::<f64>() / b.len() as f64,
        })
        .collect();
    write_csv_rows(&out.join("beta_by_category.csv"), &cat_rows)?;

    let table = TractMeasureTable::read_csv(&run.join("measure").join("measures.csv"))?;
    let fa_line: BTreeMap<&str, (f64, f64)> =
        glm.iter().filter(|r| r.response == "fa").map(|r| (r.tract.as_str(), (r.intercept, r.beta))).collect();
    let rows: Vec<AgeRow> = table
        .rows
        .iter()
        .map(|r| AgeRow {
            subject_id: &r.subject_id,
            tract: &r.tract,
            age_at_scan: r.meta.age_at_scan,
            nos: r.nos,
            mean_fa: r.mean_fa,
            mean_md: r.mean_md,
            fitted_fa: fa_line.get(r.tract.as_str()).map(|(a, b)| a + b * r.meta.age_at_scan),
        })
        .collect();
    write_csv_rows(&out.join("measure_vs_age.csv"), &rows)
}

//! Cohort-level reports: identification rates, GLM and group comparison
//! tables, and the paired IR test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use fiberatlas::atlas::taxonomy::category_of;
use fiberatlas::parcellation::{identify_counts, identification_rate, IdentificationResult};
use fiberatlas::stats::{paired_ttest, GlmReport, GroupComparison, TTest};
use fiberatlas::{Sex, TractMeasureRow, TractMeasureTable};
use serde::{Deserialize, Serialize};

use crate::config::GroupSplit;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrRow {
    pub tract: String,
    pub threshold: usize,
    pub identified: usize,
    pub subjects: usize,
    pub ir_percent: f64,
}

/// IR of every tract at every threshold. `counts` maps subject to per-tract
/// streamline counts.
pub fn ir_table(counts: &BTreeMap<String, BTreeMap<String, usize>>, thresholds: &[usize]) -> CliResult<Vec<IrRow>> {
    let mut rows = Vec::new();
    let mut ts: Vec<usize> = thresholds.to_vec();
    ts.sort_unstable();
    ts.dedup();
    for &t in &ts {
        let results: Vec<IdentificationResult> =
            counts.iter().map(|(s, c)| identify_counts(s, c, t)).collect::<Result<_, _>>()?;
        let tracts: BTreeSet<&String> = results.iter().flat_map(|r| r.identified.keys()).collect();
        for tract in tracts {
            let ir = identification_rate(&results, tract)?;
            rows.push(IrRow {
                tract: tract.clone(),
                threshold: t,
                identified: results.iter().filter(|r| r.is_identified(tract)).count(),
                subjects: results.len(),
                ir_percent: ir,
            });
        }
    }
    rows.sort_by(|a, b| a.tract.cmp(&b.tract).then(a.threshold.cmp(&b.threshold)));
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Encode {
            what: "csv row".into(),
            message: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Encode {
        what: "csv".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn ir_csv(rows: &[IrRow]) -> CliResult<String> {
    to_csv(rows)
}

pub fn read_ir_csv(path: &Path) -> CliResult<Vec<IrRow>> {
    read_csv_rows(path)
}

/// Paired t-test of per-tract IRs at `threshold` between two reports, over
/// the tracts present in both.
pub fn ir_test(a: &[IrRow], b: &[IrRow], threshold: usize) -> CliResult<(Vec<String>, TTest)> {
    let pick = |rows: &[IrRow]| -> BTreeMap<String, f64> {
        rows.iter().filter(|r| r.threshold == threshold).map(|r| (r.tract.clone(), r.ir_percent)).collect()
    };
    let (ma, mb) = (pick(a), pick(b));
    let tracts: Vec<String> = ma.keys().filter(|t| mb.contains_key(*t)).cloned().collect();
    let x: Vec<f64> = tracts.iter().map(|t| ma[t]).collect();
    let y: Vec<f64> = tracts.iter().map(|t| mb[t]).collect();
    Ok((tracts, paired_ttest(&x, &y)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmCsvRow {
    pub tract: String,
    pub category: String,
    pub response: String,
    pub n: usize,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub p_bonferroni: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub intercept: f64,
    pub dropped_covariate: usize,
    pub dropped_response: usize,
}

pub fn glm_rows(report: &GlmReport) -> Vec<GlmCsvRow> {
    report
        .results
        .iter()
        .map(|r| GlmCsvRow {
            tract: r.tract.clone(),
            category: category_of(&r.tract).map_or("", |c| c.as_str()).to_string(),
            response: r.response.as_str().to_string(),
            n: r.n,
            beta: r.beta,
            se: r.se,
            t: r.t,
            df: r.df,
            p_value: r.p_value,
            p_bonferroni: r.p_bonferroni,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            intercept: r.intercept,
            dropped_covariate: r.dropped_covariate,
            dropped_response: r.dropped_response,
        })
        .collect()
}

pub fn glm_csv(report: &GlmReport) -> CliResult<String> {
    to_csv(&glm_rows(report))
}

pub fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    crate::cohort::write_text(path, &to_csv(rows)?)
}

#[derive(Serialize)]
struct CompareCsvRow<'a> {
    tract: &'a str,
    category: &'a str,
    beta_a: f64,
    ci_low_a: f64,
    ci_high_a: f64,
    n_a: usize,
    beta_b: f64,
    ci_low_b: f64,
    ci_high_b: f64,
    n_b: usize,
}

#[derive(Serialize)]
struct CategoryCsvRow<'a> {
    category: &'a str,
    tracts: usize,
    mean_beta_a: f64,
    mean_beta_b: f64,
}

/// Per-tract side-by-side betas and per-category means.
pub fn compare_csv(c: &GroupComparison) -> CliResult<(String, String)> {
    let tracts: Vec<CompareCsvRow> = c
        .tracts
        .iter()
        .map(|t| CompareCsvRow {
            tract: &t.tract,
            category: t.category.map_or("", |c| c.as_str()),
            beta_a: t.a.beta,
            ci_low_a: t.a.ci_low,
            ci_high_a: t.a.ci_high,
            n_a: t.a.n,
            beta_b: t.b.beta,
            ci_low_b: t.b.ci_low,
            ci_high_b: t.b.ci_high,
            n_b: t.b.n,
        })
        .collect();
    let cats: Vec<CategoryCsvRow> = c
        .categories
        .iter()
        .map(|m| CategoryCsvRow {
            category: m.category.as_str(),
            tracts: m.tracts,
            mean_beta_a: m.mean_beta_a,
            mean_beta_b: m.mean_beta_b,
        })
        .collect();
    Ok((to_csv(&tracts)?, to_csv(&cats)?))
}

/// Splits rows into groups A and B; rows the split cannot place are dropped
/// and counted.
pub fn split_table(table: &TractMeasureTable, split: GroupSplit) -> (TractMeasureTable, TractMeasureTable, usize) {
    let side = |r: &TractMeasureRow| -> Option<bool> {
        match split {
            GroupSplit::Sex => match r.meta.sex {
                Sex::Female => Some(false),
                Sex::Male => Some(true),
                Sex::Unknown => None,
            },
            GroupSplit::Preterm => r.meta.is_preterm(),
        }
    };
    let (mut a, mut b, mut dropped) = (Vec::new(), Vec::new(), 0);
    for r in &table.rows {
        match side(r) {
            Some(false) => a.push(r.clone()),
            Some(true) => b.push(r.clone()),
            None => dropped += 1,
        }
    }
    (TractMeasureTable::new(a), TractMeasureTable::new(b), dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, &[(&str, usize)])]) -> BTreeMap<String, BTreeMap<String, usize>> {
        pairs
            .iter()
            .map(|(s, c)| (s.to_string(), c.iter().map(|(t, n)| (t.to_string(), *n)).collect()))
            .collect()
    }

    #[test]
    fn ir_table_by_hand() {
        let c = counts(&[
            ("s1", &[("AF_left", 12), ("CST_left", 4)]),
            ("s2", &[("AF_left", 9), ("CST_left", 30)]),
        ]);
        let rows = ir_table(&c, &[10, 5]).unwrap();
        let get = |t: &str, th: usize| rows.iter().find(|r| r.tract == t && r.threshold == th).unwrap().ir_percent;
        assert_eq!(get("AF_left", 10), 50.0);
        assert_eq!(get("AF_left", 5), 100.0);
        assert_eq!(get("CST_left", 5), 50.0);
        let back: Vec<IrRow> = csv::Reader::from_reader(ir_csv(&rows).unwrap().as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, rows);
    }
}

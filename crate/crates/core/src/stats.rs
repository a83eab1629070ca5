//! GLM slopes, multiple-comparison correction, paired t-tests, group
//! comparisons and clustering agreement.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::atlas::taxonomy::{category_of, TractCategory};
use crate::error::{invalid, Error, Result};
use crate::measures::{Measure, TractMeasureRow, TractMeasureTable};

/// Relative residual norm below which a design column counts as a linear
/// combination of the earlier ones.
const COLLINEAR_TOL: f64 = 1e-9;

fn t_dist(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("df > 0")
}

/// Two-sided p value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    (2.0 * t_dist(df).cdf(-t.abs())).min(1.0)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    t_dist(df).inverse_cdf(p)
}

/// `min(1, p·m)` for each p.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() {
        return Err(invalid(format!("test count {m} is below the {} p values given", p_values.len())));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("p value {p} outside [0, 1]")));
    }
    Ok(p_values.iter().map(|p| (p * m as f64).min(1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_difference: f64,
}

/// Paired t-test on `x − y`.
pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(invalid(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(invalid(format!("paired t-test needs at least 3 pairs, got {n}")));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite paired difference"));
    }
    if d.iter().all(|v| *v == d[0]) {
        return Err(Error::DegeneratePairedSample);
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
        mean_difference: mean,
    })
}

/// Ordinary least squares fit of `y` on named columns (no implicit intercept).
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub df: f64,
    pub rss: f64,
}

/// Rejects the first column that is (numerically) a combination of earlier
/// ones, naming the earlier columns involved.
fn check_rank(columns: &[(String, Vec<f64>)]) -> Result<()> {
    for k in 0..columns.len() {
        let (name, c) = &columns[k];
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let previous = if k > 0 { vec![columns[0].0.clone()] } else { vec![] };
            return Err(Error::CollinearDesign {
                column: name.clone(),
                previous,
            });
        }
        if k == 0 {
            continue;
        }
        let x = DMatrix::from_fn(c.len(), k, |i, j| columns[j].1[i]);
        let qr = x.qr();
        let r = qr.r();
        let qt_c = qr.q().transpose() * DVector::from_column_slice(c);
        let Some(coef) = r.solve_upper_triangular(&qt_c) else {
            continue;
        };
        let fitted = DMatrix::from_fn(c.len(), k, |i, j| columns[j].1[i]) * &coef;
        let resid = (DVector::from_column_slice(c) - fitted).norm();
        if resid <= COLLINEAR_TOL * norm {
            let scale = coef.amax().max(f64::MIN_POSITIVE);
            let previous = (0..k).filter(|&j| coef[j].abs() > 1e-8 * scale).map(|j| columns[j].0.clone()).collect();
            return Err(Error::CollinearDesign {
                column: name.clone(),
                previous,
            });
        }
    }
    Ok(())
}

pub fn ols(y: &[f64], columns: &[(String, Vec<f64>)]) -> Result<OlsFit> {
    let n = y.len();
    let k = columns.len();
    if columns.iter().any(|(_, c)| c.len() != n) {
        return Err(invalid("design columns and response differ in length"));
    }
    if n <= k {
        return Err(invalid(format!("{n} observations cannot fit {k} parameters")));
    }
    check_rank(columns)?;
    let x = DMatrix::from_fn(n, k, |i, j| columns[j].1[i]);
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let coef = r
        .solve_upper_triangular(&(q.transpose() * &yv))
        .ok_or_else(|| invalid("singular design after rank check"))?;
    let resid = &yv - &x * &coef;
    let rss = resid.norm_squared();
    let df = (n - k) as f64;
    let s2 = rss / df;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| invalid("singular design after rank check"))?;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ; only the diagonal is needed.
    let se = (0..k).map(|j| (s2 * rinv.row(j).norm_squared()).sqrt()).collect();
    Ok(OlsFit {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        coef: coef.iter().copied().collect(),
        se,
        df,
        rss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmSpec {
    pub response: Measure,
    pub covariates: Vec<String>,
    /// Number of tests for Bonferroni; `None` means the number of tracts fitted
    /// together (1 for a single fit).
    pub tests: Option<usize>,
    pub confidence: f64,
}

impl Default for GlmSpec {
    fn default() -> Self {
        Self {
            response: Measure::Fa,
            covariates: Vec::new(),
            tests: None,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmResult {
    pub tract: String,
    pub response: Measure,
    /// Age coefficient.
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub p_bonferroni: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub intercept: f64,
    pub covariate_betas: BTreeMap<String, f64>,
    pub n: usize,
    /// Rows dropped for a missing covariate.
    pub dropped_covariate: usize,
    /// Rows dropped for a missing response (e.g. FA of an empty tract).
    pub dropped_response: usize,
}

/// OLS of the response on intercept + age + mean-centered covariates, for the
/// rows of one tract.
pub fn glm_fit<'a>(rows: impl IntoIterator<Item = &'a TractMeasureRow>, spec: &GlmSpec) -> Result<GlmResult> {
    if !(spec.confidence > 0.0 && spec.confidence < 1.0) {
        return Err(invalid(format!("confidence must be in (0, 1), got {}", spec.confidence)));
    }
    let rows: Vec<&TractMeasureRow> = rows.into_iter().collect();
    let tract = rows.first().map(|r| r.tract.clone()).unwrap_or_default();
    if rows.iter().any(|r| r.tract != tract) {
        return Err(invalid("glm_fit expects rows of a single tract"));
    }
    let mut dropped_covariate = 0;
    let mut dropped_response = 0;
    let mut y = Vec::new();
    let mut age = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); spec.covariates.len()];
    for r in &rows {
        let Some(v) = spec.response.of(r) else {
            dropped_response += 1;
            continue;
        };
        let values: Option<Vec<f64>> = spec.covariates.iter().map(|c| r.meta.covariates.get(c).copied()).collect();
        let Some(values) = values else {
            dropped_covariate += 1;
            continue;
        };
        y.push(v);
        age.push(r.meta.age_at_scan);
        for (c, v) in covs.iter_mut().zip(values) {
            c.push(v);
        }
    }
    if dropped_covariate > 0 {
        log::info!("glm {tract}: dropped {dropped_covariate} subjects with missing covariates");
    }
    let n = y.len();
    let k = spec.covariates.len() + 2;
    if n <= k {
        return Err(invalid(format!("tract {tract}: n = {n} must exceed covariate count + 2 = {k}")));
    }
    let mut columns = vec![("intercept".to_string(), vec![1.0; n]), ("age".to_string(), age)];
    for (name, mut c) in spec.covariates.iter().cloned().zip(covs) {
        let mean = c.iter().sum::<f64>() / n as f64;
        c.iter_mut().for_each(|v| *v -= mean);
        columns.push((name, c));
    }
    let m = spec.tests.unwrap_or(1);
    let q = t_quantile(0.5 + spec.confidence / 2.0, (n - k) as f64);

    if y.iter().all(|v| *v == y[0]) {
        // Constant response: exact zero slope; residual noise would only
        // produce a meaningless t ratio of rounding errors.
        check_rank(&columns)?;
        return Ok(GlmResult {
            tract,
            response: spec.response,
            beta: 0.0,
            se: 0.0,
            t: 0.0,
            df: (n - k) as f64,
            p_value: 1.0,
            p_bonferroni: 1.0,
            ci_low: 0.0,
            ci_high: 0.0,
            intercept: y[0],
            covariate_betas: spec.covariates.iter().map(|c| (c.clone(), 0.0)).collect(),
            n,
            dropped_covariate,
            dropped_response,
        });
    }

    let fit = ols(&y, &columns)?;
    let (beta, se) = (fit.coef[1], fit.se[1]);
    let t = if se > 0.0 {
        beta / se
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    };
    let p = t_two_sided_p(t, fit.df);
    Ok(GlmResult {
        tract,
        response: spec.response,
        beta,
        se,
        t,
        df: fit.df,
        p_value: p,
        p_bonferroni: (p * m as f64).min(1.0),
        ci_low: beta - q * se,
        ci_high: beta + q * se,
        intercept: fit.coef[0],
        covariate_betas: spec.covariates.iter().cloned().zip(fit.coef[2..].iter().copied()).collect(),
        n,
        dropped_covariate,
        dropped_response,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmReport {
    pub results: Vec<GlmResult>,
    /// Tracts that could not be fitted, with the reason.
    pub failed: Vec<(String, String)>,
    pub tests: usize,
}

/// Fits every tract of the table; Bonferroni over the tracts fitted unless
/// `spec.tests` says otherwise.
pub fn glm_by_tract(table: &TractMeasureTable, spec: &GlmSpec) -> Result<GlmReport> {
    use rayon::prelude::*;
    let tracts: Vec<String> = table.tracts().into_iter().collect();
    let fits: Vec<(String, Result<GlmResult>)> = tracts
        .par_iter()
        .map(|t| {
            let mut s = spec.clone();
            s.tests = Some(1);
            (t.clone(), glm_fit(table.rows_for(t), &s))
        })
        .collect();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in fits {
        match r {
            Ok(r) => results.push(r),
            Err(e) => failed.push((t, e.to_string())),
        }
    }
    let m = spec.tests.unwrap_or(results.len()).max(results.len());
    for r in &mut results {
        r.p_bonferroni = (r.p_value * m as f64).min(1.0);
    }
    Ok(GlmReport { results, failed, tests: m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractComparison {
    pub tract: String,
    pub category: Option<TractCategory>,
    pub a: GlmResult,
    pub b: GlmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMean {
    pub category: TractCategory,
    pub tracts: usize,
    pub mean_beta_a: f64,
    pub mean_beta_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub tracts: Vec<TractComparison>,
    pub categories: Vec<CategoryMean>,
    /// Tracts present in only one group, or not fittable in one of them.
    pub excluded: Vec<(String, String)>,
}

/// Per-tract GLM in each group, side by side, with category means over the
/// tracts fitted in both.
pub fn compare_groups(a: &TractMeasureTable, b: &TractMeasureTable, spec: &GlmSpec) -> Result<GroupComparison> {
    let ra = glm_by_tract(a, spec)?;
    let rb = glm_by_tract(b, spec)?;
    let fa: BTreeMap<&str, &GlmResult> = ra.results.iter().map(|r| (r.tract.as_str(), r)).collect();
    let fb: BTreeMap<&str, &GlmResult> = rb.results.iter().map(|r| (r.tract.as_str(), r)).collect();
    let all: BTreeSet<String> = a.tracts().union(&b.tracts()).cloned().collect();
    let mut tracts = Vec::new();
    let mut excluded = Vec::new();
    for t in all {
        match (fa.get(t.as_str()), fb.get(t.as_str())) {
            (Some(x), Some(y)) => tracts.push(TractComparison {
                category: category_of(&t),
                tract: t,
                a: (*x).clone(),
                b: (*y).clone(),
            }),
            (x, y) => {
                let side = match (x.is_some(), y.is_some()) {
                    (false, false) => "both groups",
                    (false, true) => "group A",
                    _ => "group B",
                };
                excluded.push((t, format!("not fitted in {side}")));
            }
        }
    }
    if tracts.is_empty() {
        return Err(invalid("no tract could be fitted in both groups"));
    }
    let categories = TractCategory::ALL
        .iter()
        .filter_map(|&c| {
            let members: Vec<&TractComparison> = tracts.iter().filter(|t| t.category == Some(c)).collect();
            (!members.is_empty()).then(|| CategoryMean {
                category: c,
                tracts: members.len(),
                mean_beta_a: members.iter().map(|t| t.a.beta).sum::<f64>() / members.len() as f64,
                mean_beta_b: members.iter().map(|t| t.b.beta).sum::<f64>() / members.len() as f64,
            })
        })
        .collect();
    Ok(GroupComparison {
        tracts,
        categories,
        excluded,
    })
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("labelings differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("empty labelings"));
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len() as u64).max(1.0);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both labelings trivial (all singletons or a single cluster).
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("pearson needs two equal-length samples of at least 2"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("pearson of a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

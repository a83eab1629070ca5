//! Per-tract diffusion measures.
//!
//! CSV layout of [`TractMeasureTable`], one row per (subject, tract):
//!
//! ```text
//! subject_id,tract,nos,mean_fa,mean_md,age_at_scan,sex,group,birth_age,<covariate>...
//! ```
//!
//! Absent values (no fibers, no MD channel, no birth age, missing covariate)
//! are empty cells. Covariate columns follow in name order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parcellation::Parcellation;
use crate::tractogram::{Group, Sex, SubjectMeta, Tractogram, FA, MD};

/// How per-point values are pooled over a tract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every point of every fiber weighs the same.
    #[default]
    PointWeighted,
    /// Mean over fibers of each fiber's own mean.
    FiberMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractMeasureRow {
    pub subject_id: String,
    pub tract: String,
    pub nos: usize,
    pub mean_fa: Option<f64>,
    pub mean_md: Option<f64>,
    pub meta: SubjectMeta,
}

/// Response variables a GLM can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Fa,
    Md,
    Nos,
}

impl Measure {
    pub fn of(self, row: &TractMeasureRow) -> Option<f64> {
        match self {
            Measure::Fa => row.mean_fa,
            Measure::Md => row.mean_md,
            Measure::Nos => Some(row.nos as f64),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Fa => "fa",
            Measure::Md => "md",
            Measure::Nos => "nos",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(Measure::Fa),
            "md" => Ok(Measure::Md),
            "nos" => Ok(Measure::Nos),
            other => Err(invalid(format!("unknown measure `{other}` (expected fa, md or nos)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TractMeasureTable {
    pub rows: Vec<TractMeasureRow>,
}

fn pooled_mean(subject: &Tractogram, fibers: &[usize], channel: &str, how: Aggregation) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in fibers {
        let values = subject.streamlines()[i].scalar(channel)?;
        match how {
            Aggregation::PointWeighted => {
                sum += values.iter().sum::<f64>();
                n += values.len();
            }
            Aggregation::FiberMean => {
                sum += values.iter().sum::<f64>() / values.len() as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// One row per tract of `parc`. FA must be present on every streamline; MD is
/// reported only when every fiber of the tract carries it.
pub fn extract_measures(parc: &Parcellation, subject: &Tractogram, how: Aggregation) -> Result<Vec<TractMeasureRow>> {
    if parc.fiber_count() != subject.len() {
        return Err(invalid(format!(
            "parcellation covers {} fibers, subject {} has {}",
            parc.fiber_count(),
            subject.subject_id(),
            subject.len()
        )));
    }
    if subject.streamlines().iter().any(|s| s.scalar(FA).is_none()) {
        return Err(Error::MissingChannel(FA.to_string()));
    }
    Ok(parc
        .tracts
        .iter()
        .map(|(tract, fibers)| TractMeasureRow {
            subject_id: subject.subject_id().to_string(),
            tract: tract.clone(),
            nos: fibers.len(),
            mean_fa: pooled_mean(subject, fibers, FA, how),
            mean_md: pooled_mean(subject, fibers, MD, how),
            meta: subject.meta.clone(),
        })
        .collect())
}

const FIXED_COLUMNS: [&str; 9] = [
    "subject_id",
    "tract",
    "nos",
    "mean_fa",
    "mean_md",
    "age_at_scan",
    "sex",
    "group",
    "birth_age",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| format!("{what}: {e}"))
}

fn enum_str<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn enum_parse<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("{what}: unknown value `{s}`"))
}

impl TractMeasureTable {
    pub fn new(rows: Vec<TractMeasureRow>) -> Self {
        Self { rows }
    }

    pub fn tracts(&self) -> BTreeSet<String> {
        self.rows.iter().map(|r| r.tract.clone()).collect()
    }

    pub fn rows_for<'a>(&'a self, tract: &'a str) -> impl Iterator<Item = &'a TractMeasureRow> + 'a {
        self.rows.iter().filter(move |r| r.tract == tract)
    }

    pub fn covariate_names(&self) -> BTreeSet<String> {
        self.rows.iter().flat_map(|r| r.meta.covariates.keys().cloned()).collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let covs = self.covariate_names();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(covs.iter().map(String::as_str)).collect();
        let csv_err = |e: csv::Error| invalid(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone(),
                r.tract.clone(),
                r.nos.to_string(),
                opt(r.mean_fa),
                opt(r.mean_md),
                format!("{:?}", r.meta.age_at_scan),
                enum_str(&r.meta.sex),
                enum_str(&r.meta.group),
                opt(r.meta.birth_age),
            ];
            rec.extend(covs.iter().map(|c| opt(r.meta.covariates.get(c).copied())));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|reason| Error::format("measure table", path, reason))
    }

    pub fn from_csv_str(text: &str) -> std::result::Result<Self, String> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
        if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(format!("header must start with {}", FIXED_COLUMNS.join(",")));
        }
        let covs = &header[FIXED_COLUMNS.len()..];
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let at = |what: &str, e: String| format!("row {}: {what}: {e}", line + 2);
            let f = |i: usize| rec.get(i).unwrap_or("");
            let mut meta = SubjectMeta::new(f(5).parse().map_err(|e: std::num::ParseFloatError| at("age_at_scan", e.to_string()))?);
            meta.sex = enum_parse::<Sex>(f(6), "sex").map_err(|e| at("sex", e))?;
            meta.group = enum_parse::<Group>(f(7), "group").map_err(|e| at("group", e))?;
            meta.birth_age = parse_opt(f(8), "birth_age").map_err(|e| at("birth_age", e))?;
            let mut covariates = BTreeMap::new();
            for (k, name) in covs.iter().enumerate() {
                if let Some(v) = parse_opt(f(FIXED_COLUMNS.len() + k), name).map_err(|e| at(name, e))? {
                    covariates.insert(name.clone(), v);
                }
            }
            meta.covariates = covariates;
            rows.push(TractMeasureRow {
                subject_id: f(0).to_string(),
                tract: f(1).to_string(),
                nos: f(2).parse().map_err(|e: std::num::ParseIntError| at("nos", e.to_string()))?,
                mean_fa: parse_opt(f(3), "mean_fa").map_err(|e| at("mean_fa", e))?,
                mean_md: parse_opt(f(4), "mean_md").map_err(|e| at("mean_md", e))?,
                meta,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tractogram::Streamline;
    use crate::transform::{AffineTransform, Point};

    fn line(fa: &[f64]) -> Streamline {
        let pts = (0..fa.len()).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        Streamline::new(pts).unwrap().with_scalar(FA, fa.to_vec()).unwrap()
    }

    fn parc(n: usize, tracts: &[(&str, Vec<usize>)]) -> Parcellation {
        Parcellation {
            subject_id: "s".into(),
            cluster_of: vec![0; n],
            tracts: tracts.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            unlabeled: vec![],
            rejected: vec![],
            transform_used: AffineTransform::identity(),
        }
    }

    #[test]
    fn point_weighted_and_fiber_mean() {
        let t = Tractogram::new("s", vec![line(&[0.4, 0.5, 0.6]), line(&[0.2, 0.2])], SubjectMeta::new(30.0)).unwrap();
        let p = parc(2, &[("AF_left", vec![0]), ("CC2", vec![0, 1]), ("MCP", vec![])]);
        let rows = extract_measures(&p, &t, Aggregation::PointWeighted).unwrap();
        let af = rows.iter().find(|r| r.tract == "AF_left").unwrap();
        assert!((af.mean_fa.unwrap() - 0.5).abs() < 1e-15);
        let cc = rows.iter().find(|r| r.tract == "CC2").unwrap();
        assert!((cc.mean_fa.unwrap() - 1.9 / 5.0).abs() < 1e-15);
        assert_eq!(cc.mean_md, None);
        let mcp = rows.iter().find(|r| r.tract == "MCP").unwrap();
        assert_eq!((mcp.nos, mcp.mean_fa), (0, None));
        let rows = extract_measures(&p, &t, Aggregation::FiberMean).unwrap();
        let cc = rows.iter().find(|r| r.tract == "CC2").unwrap();
        assert!((cc.mean_fa.unwrap() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn missing_fa() {
        let s = Streamline::new(vec![Point::zeros(), Point::new(1.0, 0.0, 0.0)]).unwrap();
        let t = Tractogram::new("s", vec![s], SubjectMeta::new(30.0)).unwrap();
        assert!(matches!(extract_measures(&parc(1, &[]), &t, Aggregation::PointWeighted), Err(Error::MissingChannel(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut meta = SubjectMeta::new(40.5);
        meta.sex = Sex::Female;
        meta.group = Group::Neonate;
        meta.birth_age = Some(30.0);
        meta.covariates.insert("birth_weight".into(), 1.25);
        let table = TractMeasureTable::new(vec![
            TractMeasureRow {
                subject_id: "sub-000".into(),
                tract: "AF_left".into(),
                nos: 12,
                mean_fa: Some(0.1 + 0.2),
                mean_md: None,
                meta: meta.clone(),
            },
            TractMeasureRow {
                subject_id: "sub-001".into(),
                tract: "CB-D_left".into(),
                nos: 0,
                mean_fa: None,
                mean_md: None,
                meta: SubjectMeta::new(41.0),
            },
        ]);
        let text = table.to_csv_string().unwrap();
        assert!(text.starts_with("subject_id,tract,nos,mean_fa,mean_md,age_at_scan,sex,group,birth_age,birth_weight\n"));
        assert_eq!(TractMeasureTable::from_csv_str(&text).unwrap(), table);
        assert!(TractMeasureTable::from_csv_str("a,b\n1,2\n").is_err());
    }
}

//! Streamlines, tractograms and subject metadata.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::transform::{AffineTransform, Point};

pub const FA: &str = "FA";
pub const MD: &str = "MD";

/// Default number of points per resampled fiber.
pub const DEFAULT_POINTS: usize = 15;

/// An ordered 3D polyline with optional per-point scalar channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    points: Vec<Point>,
    scalars: BTreeMap<String, Vec<f64>>,
}

impl Streamline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteCoordinate);
        }
        Ok(Self {
            points,
            scalars: BTreeMap::new(),
        })
    }

    pub fn with_scalar(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.points.len() {
            return Err(Error::ScalarLength {
                name,
                expected: self.points.len(),
                got: values.len(),
            });
        }
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::ScalarRange {
                name,
                value: v,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
        if name == FA {
            if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::ScalarRange {
                    name,
                    value: v,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        self.scalars.insert(name, values);
        Ok(self)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.scalars.get(name).map(Vec::as_slice)
    }

    pub fn scalars(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.scalars
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn transformed(&self, t: &AffineTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            scalars: self.scalars.clone(),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        let scalars = self
            .scalars
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().rev().copied().collect()))
            .collect();
        Self { points, scalars }
    }
}

/// A fiber resampled to a fixed number of points with equal spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledFiber {
    points: Vec<Point>,
}

impl ResampledFiber {
    /// Wraps points that are already resampled (e.g. read back from an atlas bundle).
    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn transformed(&self, t: &AffineTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

/// Resamples `fiber` to `count` points.
///
/// Points are marched along the raw polyline so that consecutive points are
/// separated by one common chord length and the endpoints are preserved. On a
/// straight fiber this is plain equal-arclength interpolation; on a curved
/// one the output polyline has equal segment lengths, which makes resampling
/// idempotent.
pub fn resample(fiber: &Streamline, count: usize) -> Result<ResampledFiber> {
    resample_points(fiber.points(), count)
}

pub fn resample_points(points: &[Point], count: usize) -> Result<ResampledFiber> {
    if count < 2 {
        return Err(invalid(format!("resample point count must be >= 2, got {count}")));
    }
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let total: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroLengthStreamline);
    }
    let first = points[0];
    let last = points[points.len() - 1];
    if count == 2 {
        return Ok(ResampledFiber {
            points: vec![first, last],
        });
    }
    let steps = count - 1;
    let arc = equal_arclength(points, count, total);
    let chords: Vec<f64> = arc.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let (cmin, cmax) = chords.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    if cmax - cmin <= 1e-12 * total {
        return Ok(ResampledFiber { points: arc });
    }
    if (last - first).norm() > 1e-12 * total {
        let tol = 1e-10 * total;
        let cmax = total / steps as f64;
        if let Some(pts) = chord_root(points, steps, 0.0, cmax, tol) {
            return Ok(ResampledFiber { points: finish(pts, last) });
        }
        // The march can jump where the curve grazes the ball, so the single
        // bracket may miss; scan for every sign change, largest chord first.
        const GRID: usize = 64;
        for i in (0..GRID).rev() {
            let (lo, hi) = (cmax * i as f64 / GRID as f64, cmax * (i + 1) as f64 / GRID as f64);
            if let Some(pts) = chord_root(points, steps, lo, hi, tol) {
                return Ok(ResampledFiber { points: finish(pts, last) });
            }
        }
    }
    Ok(ResampledFiber { points: arc })
}

fn finish(mut pts: Vec<Point>, last: Point) -> Vec<Point> {
    pts.push(last);
    pts
}

/// Gap residual of a march with chord `c`; negative when the march runs off
/// the end of the polyline.
fn chord_residual(points: &[Point], c: f64, steps: usize) -> (f64, Option<Vec<Point>>) {
    match march(points, c, steps) {
        None => (f64::NEG_INFINITY, None),
        Some(pts) => {
            let gap = (points[points.len() - 1] - pts[steps - 1]).norm();
            (gap - c, Some(pts))
        }
    }
}

/// Bisects for an equal-chord solution in `(lo, hi]` when the residual
/// changes sign over the bracket.
fn chord_root(points: &[Point], steps: usize, mut lo: f64, mut hi: f64, tol: f64) -> Option<Vec<Point>> {
    let (g_hi, _) = chord_residual(points, hi, steps);
    if g_hi > 0.0 {
        return None;
    }
    if lo > 0.0 && chord_residual(points, lo, steps).0 < 0.0 {
        return None;
    }
    let mut best: Option<(Vec<Point>, f64)> = None;
    for _ in 0..200 {
        let c = 0.5 * (lo + hi);
        let (g, pts) = chord_residual(points, c, steps);
        if g > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        if let Some(pts) = pts {
            if best.as_ref().is_none_or(|(_, e)| g.abs() < *e) {
                best = Some((pts, g.abs()));
            }
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    best.filter(|(_, e)| *e <= tol).map(|(p, _)| p)
}

/// Places `steps - 1` interior points at chord distance `c` from each other,
/// starting at the first point. Returns the placed points (including the
/// first), or `None` if the
/// polyline ends before all points are placed.
fn march(points: &[Point], c: f64, steps: usize) -> Option<Vec<Point>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = points[0];
    out.push(x);
    let (mut seg, mut frac) = (0usize, 0.0f64);
    let c2 = c * c;
    for _ in 1..steps {
        let mut found = false;
        while seg + 1 < points.len() {
            let a = points[seg] + (points[seg + 1] - points[seg]) * frac;
            let d = points[seg + 1] - points[seg];
            let dd = d.norm_squared();
            if dd > 0.0 {
                // Solve |a + u·d - x|² = c² for the exit root along this segment.
                let ax = a - x;
                let b = ax.dot(&d);
                let cc = ax.norm_squared() - c2;
                let disc = (b * b - dd * cc).max(0.0);
                let u = (-b + disc.sqrt()) / dd;
                let remaining = 1.0 - frac;
                if u <= remaining && u >= 0.0 {
                    frac += u;
                    x = points[seg] + d * frac;
                    found = true;
                    break;
                }
            }
            seg += 1;
            frac = 0.0;
        }
        if !found {
            return None;
        }
        out.push(x);
    }
    Some(out)
}

fn equal_arclength(points: &[Point], count: usize, total: f64) -> Vec<Point> {
    let step = total / (count - 1) as f64;
    let mut out = Vec::with_capacity(count);
    out.push(points[0]);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for k in 1..count - 1 {
        let target = step * k as f64;
        loop {
            let len = (points[seg + 1] - points[seg]).norm();
            if seg_start + len >= target || seg + 2 == points.len() {
                let u = if len > 0.0 { ((target - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push(points[seg] + (points[seg + 1] - points[seg]) * u);
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(points[points.len() - 1]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Neonate,
    #[default]
    Adult,
}

/// Demographics attached to a tractogram. Neonatal ages are weeks PMA,
/// adult ages years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub age_at_scan: f64,
    #[serde(default)]
    pub sex: Sex,
    #[serde(default)]
    pub group: Group,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_age: Option<f64>,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
}

/// Birth age (weeks PMA) below which a neonate counts as preterm.
pub const PRETERM_WEEKS: f64 = 32.0;

impl SubjectMeta {
    pub fn new(age_at_scan: f64) -> Self {
        Self {
            age_at_scan,
            sex: Sex::Unknown,
            group: Group::Adult,
            birth_age: None,
            covariates: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.age_at_scan > 0.0) || !self.age_at_scan.is_finite() {
            return Err(invalid(format!("age_at_scan must be > 0, got {}", self.age_at_scan)));
        }
        if let Some(b) = self.birth_age {
            if !(b > 0.0) {
                return Err(invalid(format!("birth_age must be > 0, got {b}")));
            }
        }
        Ok(())
    }

    pub fn is_preterm(&self) -> Option<bool> {
        self.birth_age.map(|b| b < PRETERM_WEEKS)
    }
}

/// A subject's streamline set.
#[derive(Debug, Clone, PartialEq)]
pub struct Tractogram {
    subject_id: String,
    streamlines: Vec<Streamline>,
    pub meta: SubjectMeta,
}

/// Counts of streamlines rejected while building a tractogram from raw data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub too_few_points: usize,
    pub zero_length: usize,
    pub invalid_values: usize,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.too_few_points + self.zero_length + self.invalid_values
    }
}

/// One raw streamline: points plus named per-point channels.
pub type RawStreamline = (Vec<Point>, BTreeMap<String, Vec<f64>>);

impl Tractogram {
    pub fn new(subject_id: impl Into<String>, streamlines: Vec<Streamline>, meta: SubjectMeta) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() {
            return Err(invalid("subject_id must be nonempty"));
        }
        meta.validate()?;
        Ok(Self {
            subject_id,
            streamlines,
            meta,
        })
    }

    /// Builds a tractogram from unvalidated input, dropping (and counting)
    /// streamlines with fewer than two points, zero length or bad values.
    pub fn ingest(
        subject_id: impl Into<String>,
        raw: Vec<RawStreamline>,
        meta: SubjectMeta,
    ) -> Result<(Self, IngestReport)> {
        let mut report = IngestReport::default();
        let mut kept = Vec::with_capacity(raw.len());
        for (points, channels) in raw {
            if points.len() < 2 {
                report.too_few_points += 1;
                continue;
            }
            let s = match Streamline::new(points) {
                Ok(s) => s,
                Err(_) => {
                    report.invalid_values += 1;
                    continue;
                }
            };
            if !(s.arc_length() > 0.0) {
                report.zero_length += 1;
                continue;
            }
            let mut s = Some(s);
            for (name, values) in channels {
                s = s.and_then(|s| s.with_scalar(name, values).ok());
            }
            match s {
                Some(s) => kept.push(s),
                None => report.invalid_values += 1,
            }
        }
        report.accepted = kept.len();
        let t = Self::new(subject_id, kept, meta)?;
        if report.rejected() > 0 {
            log::warn!(
                "subject {}: rejected {} streamlines ({} short, {} zero-length, {} invalid)",
                t.subject_id,
                report.rejected(),
                report.too_few_points,
                report.zero_length,
                report.invalid_values
            );
        }
        Ok((t, report))
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn streamlines(&self) -> &[Streamline] {
        &self.streamlines
    }

    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.streamlines.is_empty() {
            Err(invalid(format!("subject {} has no streamlines", self.subject_id)))
        } else {
            Ok(())
        }
    }

    /// Mean of all streamline points.
    pub fn centroid(&self) -> Point {
        let mut sum = Point::zeros();
        let mut n = 0usize;
        for s in &self.streamlines {
            for p in s.points() {
                sum += p;
                n += 1;
            }
        }
        if n == 0 {
            sum
        } else {
            sum / n as f64
        }
    }

    pub fn transformed(&self, t: &AffineTransform) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            streamlines: self.streamlines.iter().map(|s| s.transformed(t)).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Uniform scaling about the tractogram centroid.
    pub fn scaled_about_centroid(&self, factor: f64) -> Result<Self> {
        let t = AffineTransform::scaling_about(&self.centroid(), factor)?;
        Ok(self.transformed(&t))
    }

    pub fn resampled(&self, count: usize) -> Result<Vec<ResampledFiber>> {
        self.streamlines.iter().map(|s| resample(s, count)).collect()
    }

    /// A copy holding only the streamlines at `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            streamlines: indices.iter().map(|&i| self.streamlines[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Sorted indices of a uniform random `n`-subset of `0..len`.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(invalid("subsample size must be >= 1"));
    }
    if n > len {
        return Err(invalid(format!("cannot subsample {n} streamlines from {len}")));
    }
    let mut rng = rng::seeded(seed);
    let mut idx = index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Uniform random subset of exactly `n` streamlines, without replacement.
pub fn subsample(tractogram: &Tractogram, n: usize, seed: u64) -> Result<Tractogram> {
    let idx = subsample_indices(tractogram.len(), n, seed)?;
    Ok(tractogram.select(&idx))
}

pub fn apply_transform(tractogram: &Tractogram, t: &AffineTransform) -> Tractogram {
    tractogram.transformed(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn p(x: f64, y: f64, z: f64) -> Point {
        Vector3::new(x, y, z)
    }

    fn line(points: &[(f64, f64, f64)]) -> Streamline {
        Streamline::new(points.iter().map(|&(x, y, z)| p(x, y, z)).collect()).unwrap()
    }

    #[test]
    fn resample_straight_segment() {
        let f = resample(&line(&[(0., 0., 0.), (10., 0., 0.)]), 3).unwrap();
        assert_eq!(f.points(), &[p(0., 0., 0.), p(5., 0., 0.), p(10., 0., 0.)]);
    }

    #[test]
    fn resample_equispaced_identity() {
        let s = line(&[(0., 0., 0.), (1., 0., 0.), (2., 0., 0.), (3., 0., 0.)]);
        let f = resample(&s, 4).unwrap();
        for (a, b) in f.points().iter().zip(s.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn resample_two_points_is_endpoints() {
        let f = resample(&line(&[(0., 0., 0.), (4., 0., 0.), (4., 3., 0.)]), 2).unwrap();
        assert_eq!(f.points(), &[p(0., 0., 0.), p(4., 3., 0.)]);
    }

    #[test]
    fn resample_errors() {
        let s = line(&[(1., 1., 1.), (1., 1., 1.)]);
        assert!(matches!(resample(&s, 5), Err(Error::ZeroLengthStreamline)));
        assert!(resample(&line(&[(0., 0., 0.), (1., 0., 0.)]), 1).is_err());
        assert!(matches!(Streamline::new(vec![p(0., 0., 0.)]), Err(Error::TooFewPoints(1))));
        assert!(matches!(
            Streamline::new(vec![p(0., 0., 0.), p(f64::NAN, 0., 0.)]),
            Err(Error::NonFiniteCoordinate)
        ));
    }

    #[test]
    fn scalar_validation() {
        let s = line(&[(0., 0., 0.), (1., 0., 0.)]);
        assert!(matches!(s.clone().with_scalar(FA, vec![0.3]), Err(Error::ScalarLength { .. })));
        assert!(matches!(s.clone().with_scalar(FA, vec![0.3, 1.2]), Err(Error::ScalarRange { .. })));
        assert!(s.with_scalar(MD, vec![0.0007, 0.0008]).is_ok());
    }

    #[test]
    fn right_angle_spacing_and_endpoints() {
        let s = line(&[(0., 0., 0.), (4., 0., 0.), (4., 3., 0.)]);
        let f = resample(&s, 15).unwrap();
        assert_eq!(f.points()[0], p(0., 0., 0.));
        assert_eq!(f.points()[14], p(4., 3., 0.));
        let d: Vec<f64> = f.points().windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        for x in &d {
            assert!((x - d[0]).abs() <= 1e-6 * d[0]);
        }
    }

    #[test]
    fn subsample_rules() {
        let fibers: Vec<_> = (0..20).map(|i| line(&[(i as f64, 0., 0.), (i as f64, 1., 0.)])).collect();
        let t = Tractogram::new("s", fibers, SubjectMeta::new(30.0)).unwrap();
        let all = subsample(&t, 20, 1).unwrap();
        assert_eq!(all.streamlines(), t.streamlines());
        assert!(subsample(&t, 0, 1).is_err());
        assert!(subsample(&t, 21, 1).is_err());
        assert_eq!(subsample(&t, 7, 9).unwrap(), subsample(&t, 7, 9).unwrap());
    }

    #[test]
    fn ingest_counts_rejections() {
        let raw: Vec<RawStreamline> = vec![
            (vec![p(0., 0., 0.), p(1., 0., 0.)], BTreeMap::new()),
            (vec![p(0., 0., 0.)], BTreeMap::new()),
            (vec![p(2., 2., 2.), p(2., 2., 2.)], BTreeMap::new()),
            (vec![p(0., 0., 0.), p(1., 0., 0.)], BTreeMap::from([(FA.to_string(), vec![0.5, 2.0])])),
        ];
        let (t, r) = Tractogram::ingest("s1", raw, SubjectMeta::new(40.0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((r.accepted, r.too_few_points, r.zero_length, r.invalid_values), (1, 1, 1, 1));
    }

    #[test]
    fn meta_validation() {
        assert!(Tractogram::new("", vec![], SubjectMeta::new(1.0)).is_err());
        assert!(Tractogram::new("a", vec![], SubjectMeta::new(0.0)).is_err());
        let mut m = SubjectMeta::new(40.0);
        m.birth_age = Some(-1.0);
        assert!(m.validate().is_err());
        m.birth_age = Some(30.0);
        assert_eq!(m.is_preterm(), Some(true));
    }

    fn arb_polyline() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64), 2..30)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| p(x, y, z)).collect())
    }

    /// Curved fibers that progress along one axis (no hairpins), irregularly
    /// sampled.
    fn arb_fiber() -> impl Strategy<Value = Vec<Point>> {
        (
            10.0..150.0f64,
            prop::array::uniform3(-0.4..0.4f64),
            prop::array::uniform3(-0.4..0.4f64),
            prop::collection::vec(0.01..1.0f64, 1..60),
        )
            .prop_map(|(len, cy, cz, gaps)| {
                let total: f64 = gaps.iter().sum();
                let mut t = 0.0;
                let mut ts = vec![0.0];
                for g in &gaps {
                    t += g / total;
                    ts.push(t.min(1.0));
                }
                ts.into_iter()
                    .map(|t| {
                        let y = len * (cy[0] * t + cy[1] * t * t + cy[2] * t * t * t);
                        let z = len * (cz[0] * t + cz[1] * t * t + cz[2] * t * t * t);
                        p(len * t, y, z)
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn resample_idempotent(points in arb_fiber(), count in 2usize..25) {
            let s = Streamline::new(points).unwrap();
            let once = resample(&s, count).unwrap();
            let twice = resample_points(once.points(), count).unwrap();
            for (a, b) in once.points().iter().zip(twice.points()) {
                prop_assert!((a - b).norm() < 1e-9, "{:?} vs {:?}", a, b);
            }
        }

        #[test]
        fn resample_keeps_endpoints(points in arb_polyline(), count in 2usize..25) {
            let s = Streamline::new(points).unwrap();
            prop_assume!(s.arc_length() > 1e-3);
            let once = resample(&s, count).unwrap();
            prop_assert_eq!(once.len(), count);
            prop_assert_eq!(once.points()[0], s.points()[0]);
            prop_assert_eq!(once.points()[count - 1], s.points()[s.len() - 1]);
        }

        #[test]
        fn transform_composition(points in arb_polyline(),
                                 r1 in prop::array::uniform3(-1.0..1.0f64),
                                 t1 in prop::array::uniform3(-20.0..20.0f64),
                                 s2 in 0.5..2.0f64) {
            let s = Streamline::new(points).unwrap();
            let t = Tractogram::new("a", vec![s], SubjectMeta::new(1.0)).unwrap();
            let a = AffineTransform::rigid_about(&p(1., 2., 3.), Vector3::from(r1), Vector3::from(t1));
            let b = AffineTransform::scaling_about(&p(-4., 0., 9.), s2).unwrap();
            let seq = apply_transform(&apply_transform(&t, &a), &b);
            let once = apply_transform(&t, &b.compose(&a));
            for (x, y) in seq.streamlines()[0].points().iter().zip(once.streamlines()[0].points()) {
                prop_assert!((x - y).norm() < 1e-9);
            }
        }
    }
}

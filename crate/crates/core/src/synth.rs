//! Synthetic bundles and cohorts with known labels, transforms and slopes.
//!
//! Each bundle is a tube of fibers around a smooth centerline. Fiber offsets
//! are low-order polynomials in arclength within the tube radius, drawn once
//! per cohort so that every subject shares the same template fibers. Subjects
//! then differ by optional per-fiber and per-bundle jitter, a global
//! rigid/similarity perturbation, and their FA/MD channels.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::taxonomy::category_of;
use crate::error::{invalid, Result};
use crate::rng::{self, Rng};
use crate::tractogram::{Group, Sex, Streamline, SubjectMeta, Tractogram, FA, MD};
use crate::transform::{AffineTransform, Point};

/// Linear developmental profile of a per-point scalar:
/// `intercept + slope * age + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarProfile {
    pub intercept: f64,
    pub slope: f64,
    pub noise_sd: f64,
}

impl ScalarProfile {
    pub fn mean_at(&self, age: f64) -> f64 {
        self.intercept + self.slope * age
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub label: String,
    /// Control points of the centerline, interpolated by a Catmull-Rom spline.
    pub centerline: Vec<[f64; 3]>,
    pub radius: f64,
    pub fiber_count: usize,
    pub fa_profile: ScalarProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub md_profile: Option<ScalarProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeDistribution {
    Uniform,
    /// Ages evenly spaced over the range in subject order.
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SexAssignment {
    /// Female for even subject indices, male for odd.
    Alternate,
    Random { p_male: f64 },
    All(Sex),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    All,
    Sex(Sex),
    Preterm,
    Term,
}

impl Selector {
    pub fn matches(&self, meta: &SubjectMeta) -> bool {
        match self {
            Selector::All => true,
            Selector::Sex(s) => meta.sex == *s,
            Selector::Preterm => meta.is_preterm() == Some(true),
            Selector::Term => meta.is_preterm() == Some(false),
        }
    }
}

/// Replaces the FA slope for matching subjects (and tract, if given).
/// Later overrides win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeOverride {
    pub selector: Selector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tract: Option<String>,
    pub fa_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
    /// Per-subject scale drawn log-uniformly from `[1/(1+s), 1+s]`.
    pub scale_jitter: f64,
    /// Fixed scale applied to every subject (e.g. 1.5 for an enlarged cohort).
    pub base_scale: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            max_translation_mm: 0.0,
            max_rotation_deg: 0.0,
            scale_jitter: 0.0,
            base_scale: 1.0,
        }
    }
}

impl Perturbation {
    pub fn rigid(max_translation_mm: f64, max_rotation_deg: f64) -> Self {
        Self {
            max_translation_mm,
            max_rotation_deg,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub mean: f64,
    pub sd: f64,
    /// Linear dependence on age at scan.
    #[serde(default)]
    pub age_coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub bundles: Vec<BundleSpec>,
    pub subjects: usize,
    pub subject_prefix: String,
    pub age_min: f64,
    pub age_max: f64,
    pub age_distribution: AgeDistribution,
    pub sex: SexAssignment,
    pub group: Group,
    /// Birth ages drawn uniformly from this range, capped at the scan age.
    pub birth_age_range: Option<(f64, f64)>,
    pub slope_overrides: Vec<SlopeOverride>,
    pub perturbation: Perturbation,
    /// Smooth per-subject displacement of every fiber, mm.
    pub fiber_jitter_mm: f64,
    /// Smooth per-subject displacement of each whole bundle, mm.
    pub shape_jitter_mm: f64,
    /// Per-subject, per-bundle FA offset standard deviation.
    pub subject_fa_sd: f64,
    /// Raw point spacing along generated fibers, mm.
    pub step_mm: f64,
    pub covariates: BTreeMap<String, CovariateSpec>,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            bundles: desk_bundles(100),
            subjects: 20,
            subject_prefix: "sub".to_string(),
            age_min: 26.0,
            age_max: 45.0,
            age_distribution: AgeDistribution::Uniform,
            sex: SexAssignment::Alternate,
            group: Group::Neonate,
            birth_age_range: Some((24.0, 42.0)),
            slope_overrides: Vec::new(),
            perturbation: Perturbation::rigid(5.0, 5.0),
            fiber_jitter_mm: 0.5,
            shape_jitter_mm: 0.5,
            subject_fa_sd: 0.01,
            step_mm: 2.0,
            covariates: BTreeMap::from([
                (
                    "birth_weight".to_string(),
                    CovariateSpec {
                        mean: 3.2,
                        sd: 0.4,
                        age_coef: 0.0,
                    },
                ),
                (
                    "head_circumference".to_string(),
                    CovariateSpec {
                        mean: 15.0,
                        sd: 1.0,
                        age_coef: 0.5,
                    },
                ),
            ]),
            seed: 0,
        }
    }
}

fn fa(intercept: f64, slope: f64) -> ScalarProfile {
    ScalarProfile {
        intercept,
        slope,
        noise_sd: 0.03,
    }
}

/// Eight brain-like bundles on an adult-sized (~140 mm) frame, FA slopes in
/// the neonatal range. Right-hemisphere bundles mirror the left in x.
pub fn desk_bundles(fiber_count: usize) -> Vec<BundleSpec> {
    let mirror = |pts: &[[f64; 3]]| pts.iter().map(|p| [-p[0], p[1], p[2]]).collect::<Vec<_>>();
    let af = vec![[-32.0, 22.0, 28.0], [-40.0, -5.0, 34.0], [-44.0, -38.0, 24.0], [-50.0, -36.0, 0.0], [-52.0, -14.0, -14.0]];
    let cst = vec![[-22.0, -18.0, 66.0], [-20.0, -20.0, 36.0], [-14.0, -20.0, 6.0], [-9.0, -26.0, -30.0]];
    let ilf = vec![[-30.0, -92.0, 6.0], [-40.0, -62.0, -6.0], [-42.0, -30.0, -18.0], [-38.0, -6.0, -30.0]];
    let cc2 = vec![[-42.0, 30.0, 36.0], [-18.0, 26.0, 26.0], [0.0, 24.0, 20.0], [18.0, 26.0, 26.0], [42.0, 30.0, 36.0]];
    let cbd = vec![[-7.0, 40.0, 12.0], [-8.0, 12.0, 34.0], [-8.0, -26.0, 40.0], [-7.0, -56.0, 18.0]];
    let md = Some(ScalarProfile {
        intercept: 1.6e-3,
        slope: -1.5e-5,
        noise_sd: 5e-5,
    });
    let b = |label: &str, centerline: Vec<[f64; 3]>, profile: ScalarProfile| BundleSpec {
        label: label.to_string(),
        centerline,
        radius: 4.0,
        fiber_count,
        fa_profile: profile,
        md_profile: md,
    };
    vec![
        b("AF_left", af.clone(), fa(-0.51, 0.022820)),
        b("AF_right", mirror(&af), fa(-0.37, 0.019116)),
        b("CST_left", cst.clone(), fa(0.05, 0.010159)),
        b("CST_right", mirror(&cst), fa(0.03, 0.010802)),
        b("ILF_left", ilf.clone(), fa(-0.33, 0.019183)),
        b("ILF_right", mirror(&ilf), fa(-0.29, 0.018033)),
        b("CC2", cc2, fa(-0.20, 0.017053)),
        b("CB-D_left", cbd, fa(0.02, 0.010623)),
    ]
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bundles.is_empty() {
            return Err(invalid("cohort spec has no bundles"));
        }
        if self.subjects < 2 {
            return Err(invalid(format!("cohort needs >= 2 subjects, got {}", self.subjects)));
        }
        if !(self.age_max > self.age_min) || !(self.age_min > 0.0) {
            return Err(invalid(format!(
                "age range must be positive-width and > 0, got [{}, {}]",
                self.age_min, self.age_max
            )));
        }
        if !(self.step_mm > 0.0) {
            return Err(invalid("step_mm must be > 0"));
        }
        let p = &self.perturbation;
        if !(p.base_scale > 0.0) || p.scale_jitter < 0.0 || p.max_rotation_deg < 0.0 || p.max_translation_mm < 0.0 {
            return Err(invalid("perturbation magnitudes must be >= 0 and base_scale > 0"));
        }
        if self.fiber_jitter_mm < 0.0 || self.shape_jitter_mm < 0.0 || self.subject_fa_sd < 0.0 {
            return Err(invalid("jitter and noise magnitudes must be >= 0"));
        }
        if let SexAssignment::Random { p_male } = self.sex {
            if !(0.0..=1.0).contains(&p_male) {
                return Err(invalid("p_male must lie in [0, 1]"));
            }
        }
        if let Some((lo, hi)) = self.birth_age_range {
            if !(lo > 0.0 && hi >= lo) {
                return Err(invalid("birth_age_range must be positive and ordered"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.bundles {
            if category_of(&b.label).is_none() {
                return Err(invalid(format!("bundle label {:?} is not a known tract", b.label)));
            }
            if !seen.insert(&b.label) {
                return Err(invalid(format!("duplicate bundle label {:?}", b.label)));
            }
            if !(b.radius > 0.0) || b.fiber_count == 0 || b.centerline.len() < 2 {
                return Err(invalid(format!(
                    "bundle {:?} needs radius > 0, fiber_count >= 1 and >= 2 centerline points",
                    b.label
                )));
            }
            let mut slopes = vec![b.fa_profile.slope];
            slopes.extend(
                self.slope_overrides
                    .iter()
                    .filter(|o| o.tract.as_ref().is_none_or(|t| t == &b.label))
                    .map(|o| o.fa_slope),
            );
            for slope in slopes {
                for age in [self.age_min, self.age_max] {
                    let v = b.fa_profile.intercept + slope * age;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(invalid(format!(
                            "bundle {:?}: mean FA {v:.4} at age {age} leaves [0, 1]",
                            b.label
                        )));
                    }
                }
            }
        }
        for o in &self.slope_overrides {
            if let Some(t) = &o.tract {
                if !seen.contains(t) {
                    return Err(invalid(format!("slope override names unknown bundle {t:?}")));
                }
            }
        }
        Ok(())
    }

    /// Centroid of all centerline control points; the perturbation centre.
    pub fn template_center(&self) -> Point {
        let mut c = Point::zeros();
        let mut n = 0.0;
        for b in &self.bundles {
            for p in &b.centerline {
                c += Point::from(*p);
                n += 1.0;
            }
        }
        c / n
    }

    pub fn subject_id(&self, index: usize) -> String {
        format!("{}-{:03}", self.subject_prefix, index)
    }
}

/// Ground truth emitted alongside each synthetic tractogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_id: String,
    pub index: usize,
    /// Bundle label of each streamline, in tractogram order.
    pub fiber_labels: Vec<String>,
    /// Maps template coordinates into this subject's space.
    pub true_transform: AffineTransform,
    pub meta: SubjectMeta,
    pub true_fa_slopes: BTreeMap<String, f64>,
    pub bundle_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub tractogram: Tractogram,
    pub truth: GroundTruth,
}

struct Frame {
    points: Vec<Point>,
    n1: Vec<Vector3<f64>>,
    n2: Vec<Vector3<f64>>,
}

fn catmull_rom(ctrl: &[Point], step: f64) -> Vec<Point> {
    let n = ctrl.len();
    let get = |i: isize| -> Point {
        if i < 0 {
            ctrl[0] * 2.0 - ctrl[1]
        } else if i as usize >= n {
            ctrl[n - 1] * 2.0 - ctrl[n - 2]
        } else {
            ctrl[i as usize]
        }
    };
    let mut dense = Vec::new();
    for seg in 0..n - 1 {
        let (p0, p1, p2, p3) = (get(seg as isize - 1), get(seg as isize), get(seg as isize + 1), get(seg as isize + 2));
        let sub = 32;
        for k in 0..sub {
            let t = k as f64 / sub as f64;
            let (t2, t3) = (t * t, t * t * t);
            dense.push(
                (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) * 0.5,
            );
        }
    }
    dense.push(ctrl[n - 1]);
    // Re-space the dense spline at roughly `step` along its arclength.
    let total: f64 = dense.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let count = ((total / step).round() as usize).max(2) + 1;
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut acc = 0.0;
    for k in 0..count {
        let target = total * k as f64 / (count - 1) as f64;
        while seg + 2 < dense.len() && acc + (dense[seg + 1] - dense[seg]).norm() < target {
            acc += (dense[seg + 1] - dense[seg]).norm();
            seg += 1;
        }
        let len = (dense[seg + 1] - dense[seg]).norm();
        let u = if len > 0.0 { ((target - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(dense[seg] + (dense[seg + 1] - dense[seg]) * u);
    }
    out
}

fn frame(ctrl: &[[f64; 3]], step: f64) -> Frame {
    let ctrl: Vec<Point> = ctrl.iter().map(|p| Point::from(*p)).collect();
    let points = catmull_rom(&ctrl, step);
    let n = points.len();
    let tangent = |i: usize| {
        let (a, b) = (points[i.saturating_sub(1)], points[(i + 1).min(n - 1)]);
        (b - a).normalize()
    };
    let t0 = tangent(0);
    let seed = if t0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let mut prev = (seed - t0 * t0.dot(&seed)).normalize();
    let (mut n1, mut n2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let t = tangent(i);
        // Parallel transport of the normal along the curve.
        let v = (prev - t * t.dot(&prev)).normalize();
        n1.push(v);
        n2.push(t.cross(&v));
        prev = v;
    }
    Frame { points, n1, n2 }
}

fn disk(rng: &mut Rng, radius: f64) -> Vector2<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let a = std::f64::consts::TAU * rng.random::<f64>();
    Vector2::new(r * a.cos(), r * a.sin())
}

fn normal3(rng: &mut Rng, sd: f64) -> Vector3<f64> {
    if sd == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sd).expect("sd > 0");
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Template fiber: centerline index range plus a smooth in-plane offset.
struct TemplateFiber {
    start: usize,
    end: usize,
    coef: [Vector2<f64>; 3],
}

fn template_fibers(spec: &CohortSpec, bundle: &BundleSpec, n_points: usize) -> Vec<TemplateFiber> {
    let mut r = rng::stream(spec.seed, rng::name_stream(&bundle.label));
    let trim = ((n_points as f64) * 0.04).floor() as usize;
    let wobble = Normal::new(0.0, 0.15 * bundle.radius).expect("radius > 0");
    (0..bundle.fiber_count)
        .map(|_| {
            let start = r.random_range(0..=trim);
            let end = n_points - 1 - r.random_range(0..=trim);
            let a0 = disk(&mut r, 0.8 * bundle.radius);
            let a1 = Vector2::new(wobble.sample(&mut r), wobble.sample(&mut r));
            let a2 = Vector2::new(wobble.sample(&mut r), wobble.sample(&mut r));
            TemplateFiber {
                start,
                end,
                coef: [a0, a1, a2],
            }
        })
        .collect()
}

fn smooth3(rng: &mut Rng, sd: f64) -> [Vector3<f64>; 2] {
    [normal3(rng, sd), normal3(rng, sd)]
}

fn subject_meta(spec: &CohortSpec, index: usize, r: &mut Rng) -> SubjectMeta {
    let age = match spec.age_distribution {
        AgeDistribution::Uniform => r.random_range(spec.age_min..=spec.age_max),
        AgeDistribution::Even => {
            spec.age_min + (spec.age_max - spec.age_min) * index as f64 / (spec.subjects - 1).max(1) as f64
        }
    };
    let sex = match spec.sex {
        SexAssignment::Alternate => {
            if index % 2 == 0 {
                Sex::Female
            } else {
                Sex::Male
            }
        }
        SexAssignment::Random { p_male } => {
            if r.random::<f64>() < p_male {
                Sex::Male
            } else {
                Sex::Female
            }
        }
        SexAssignment::All(s) => s,
    };
    let birth_age = spec.birth_age_range.map(|(lo, hi)| r.random_range(lo..=hi).min(age));
    let mut covariates = BTreeMap::new();
    for (name, c) in &spec.covariates {
        let noise = if c.sd > 0.0 { Normal::new(0.0, c.sd).expect("sd > 0").sample(r) } else { 0.0 };
        covariates.insert(name.clone(), c.mean + c.age_coef * (age - spec.age_min) + noise);
    }
    SubjectMeta {
        age_at_scan: age,
        sex,
        group: spec.group,
        birth_age,
        covariates,
    }
}

fn subject_transform(spec: &CohortSpec, r: &mut Rng) -> AffineTransform {
    let p = &spec.perturbation;
    let center = spec.template_center();
    let axis: [f64; 3] = UnitSphere.sample(r);
    let angle = r.random::<f64>() * p.max_rotation_deg.to_radians();
    let dir: [f64; 3] = UnitSphere.sample(r);
    let shift = Vector3::from(dir) * (r.random::<f64>() * p.max_translation_mm);
    let log_s = if p.scale_jitter > 0.0 {
        r.random_range(-1.0..=1.0) * (1.0 + p.scale_jitter).ln()
    } else {
        0.0
    };
    let scale = p.base_scale * log_s.exp();
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    let linear = rot.matrix() * scale;
    let translation = center + shift - linear * center;
    AffineTransform::new(linear, translation).expect("scale > 0 keeps the transform regular")
}

/// Generates subject `index` of the cohort.
pub fn generate_subject(spec: &CohortSpec, index: usize) -> Result<SyntheticSubject> {
    spec.validate()?;
    if index >= spec.subjects {
        return Err(invalid(format!("subject index {index} out of range (cohort has {})", spec.subjects)));
    }
    let frames: Vec<Frame> = spec.bundles.iter().map(|b| frame(&b.centerline, spec.step_mm)).collect();
    let templates: Vec<Vec<TemplateFiber>> = spec
        .bundles
        .iter()
        .zip(&frames)
        .map(|(b, f)| template_fibers(spec, b, f.points.len()))
        .collect();
    subject_from_templates(spec, index, &frames, &templates)
}

fn subject_from_templates(
    spec: &CohortSpec,
    index: usize,
    frames: &[Frame],
    templates: &[Vec<TemplateFiber>],
) -> Result<SyntheticSubject> {
    let mut r = rng::stream(spec.seed, index as u64 + 1);
    let meta = subject_meta(spec, index, &mut r);
    let transform = subject_transform(spec, &mut r);
    let age = meta.age_at_scan;

    let mut streamlines = Vec::new();
    let mut labels = Vec::new();
    let mut slopes = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for ((bundle, fr), fibers) in spec.bundles.iter().zip(frames).zip(templates) {
        let mut slope = bundle.fa_profile.slope;
        for o in &spec.slope_overrides {
            if o.selector.matches(&meta) && o.tract.as_ref().is_none_or(|t| t == &bundle.label) {
                slope = o.fa_slope;
            }
        }
        slopes.insert(bundle.label.clone(), slope);
        counts.insert(bundle.label.clone(), fibers.len());
        let shape = smooth3(&mut r, spec.shape_jitter_mm);
        let subject_fa = if spec.subject_fa_sd > 0.0 {
            Normal::new(0.0, spec.subject_fa_sd).expect("sd > 0").sample(&mut r)
        } else {
            0.0
        };
        let fa_mean = bundle.fa_profile.intercept + slope * age + subject_fa;
        let fa_noise = (bundle.fa_profile.noise_sd > 0.0).then(|| Normal::new(0.0, bundle.fa_profile.noise_sd).expect("sd > 0"));
        let md_noise = bundle
            .md_profile
            .filter(|m| m.noise_sd > 0.0)
            .map(|m| Normal::new(0.0, m.noise_sd).expect("sd > 0"));
        let last = (fr.points.len() - 1) as f64;
        for tf in fibers {
            let jitter = smooth3(&mut r, spec.fiber_jitter_mm);
            let mut pts = Vec::with_capacity(tf.end - tf.start + 1);
            for i in tf.start..=tf.end {
                let s = i as f64 / last - 0.5;
                let [a0, a1, a2] = tf.coef;
                let mut off = a0 + a1 * s + a2 * (6.0 * s * s - 0.5);
                let norm = off.norm();
                if norm > bundle.radius {
                    off *= bundle.radius / norm;
                }
                let local = fr.points[i] + fr.n1[i] * off.x + fr.n2[i] * off.y;
                let displaced = local + shape[0] + shape[1] * (2.0 * s) + jitter[0] + jitter[1] * (2.0 * s);
                pts.push(transform.apply(&displaced));
            }
            let n = pts.len();
            let fa_values: Vec<f64> = (0..n)
                .map(|_| (fa_mean + fa_noise.map_or(0.0, |d| d.sample(&mut r))).clamp(0.0, 1.0))
                .collect();
            let mut s = Streamline::new(pts)?.with_scalar(FA, fa_values)?;
            if let Some(md) = bundle.md_profile {
                let md_values = (0..n)
                    .map(|_| (md.mean_at(age) + md_noise.map_or(0.0, |d| d.sample(&mut r))).max(0.0))
                    .collect();
                s = s.with_scalar(MD, md_values)?;
            }
            streamlines.push(s);
            labels.push(bundle.label.clone());
        }
    }
    let subject_id = spec.subject_id(index);
    let tractogram = Tractogram::new(subject_id.clone(), streamlines, meta.clone())?;
    Ok(SyntheticSubject {
        tractogram,
        truth: GroundTruth {
            subject_id,
            index,
            fiber_labels: labels,
            true_transform: transform,
            meta,
            true_fa_slopes: slopes,
            bundle_counts: counts,
        },
    })
}

/// Generates every subject; bit-reproducible for a fixed seed.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticSubject>> {
    spec.validate()?;
    let frames: Vec<Frame> = spec.bundles.iter().map(|b| frame(&b.centerline, spec.step_mm)).collect();
    let templates: Vec<Vec<TemplateFiber>> = spec
        .bundles
        .iter()
        .zip(&frames)
        .map(|(b, f)| template_fibers(spec, b, f.points.len()))
        .collect();
    (0..spec.subjects)
        .into_par_iter()
        .map(|i| subject_from_templates(spec, i, &frames, &templates))
        .collect()
}

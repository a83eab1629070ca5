//! Acceptance criteria 1-10. Each prints one PASS/FAIL line; the binary
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use fiberatlas::atlas::{build_atlas, label_by_majority, AtlasConfig};
use fiberatlas::kmeans::{assign, cluster, KMeansConfig};
use fiberatlas::parcellation::{identification_rate, identify_counts, parcellate, parcellate_with_transform, Parcellation, ParcellationConfig};
use fiberatlas::registration::{register_group, RegistrationConfig, TransformFamily};
use fiberatlas::rng::seeded;
use fiberatlas::spectral::{embed, embed_all, fit_nystrom, NystromConfig};
use fiberatlas::stats::{adjusted_rand_index, bonferroni, compare_groups, glm_fit, paired_ttest, pearson, GlmSpec};
use fiberatlas::synth::{desk_bundles, generate_cohort, generate_subject, CohortSpec, Perturbation, Selector, SlopeOverride};
use fiberatlas::{
    extract_measures, load_atlas, mcp, save_atlas, Aggregation, AffineTransform, BundleError, Error, FiberDistanceParams,
    Point, ResampledFiber, Sex, SubjectMeta, TractMeasureRow, TractMeasureTable,
};
use fiberatlas_cli::{run_pipeline, PipelineConfig, RunOptions};
use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(t0: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let e = t0.elapsed();
    ensure(e < limit, format!("{what} took {e:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence

fn random_fiber(rng: &mut impl Rng, p: usize) -> ResampledFiber {
    let origin = Point::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
    let mut pts = vec![origin];
    for _ in 1..p {
        let step = Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        let last = *pts.last().unwrap();
        pts.push(last + step);
    }
    ResampledFiber::from_points(pts).unwrap()
}

/// Naive MCP: nearest Euclidean distance per point in each direction,
/// averaged, then the better of the two orientations of `b`.
fn brute_mcp(a: &[Point], b: &[Point]) -> f64 {
    let directed = |x: &[Point], y: &[Point]| -> f64 {
        let mut sum = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                let d = ((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2])).sqrt();
                if d < best {
                    best = d;
                }
            }
            sum += best;
        }
        sum / x.len() as f64
    };
    let fwd = (directed(a, b) + directed(b, a)) / 2.0;
    let rb: Vec<Point> = b.iter().rev().copied().collect();
    let rev = (directed(a, &rb) + directed(&rb, a)) / 2.0;
    fwd.min(rev)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seeded(1);
    let params = FiberDistanceParams::default();
    let shift = AffineTransform::translation(Vector3::new(37.5, -12.25, 80.0));
    let scale = AffineTransform::uniform_scale(1.5).unwrap();
    let pairs = 1000;
    let mut worst_prop = 0.0f64;
    for i in 0..pairs {
        let (a, b) = (random_fiber(&mut rng, 15), random_fiber(&mut rng, 15));
        let d = mcp(&a, &b, &params).unwrap();
        let oracle = brute_mcp(a.points(), b.points());
        ensure(d.to_bits() == oracle.to_bits(), format!("pair {i}: mcp {d:e} != oracle {oracle:e}"))?;
        let props = [
            (mcp(&b, &a, &params).unwrap(), d),
            (mcp(&a, &b.reversed(), &params).unwrap(), d),
            (mcp(&a.transformed(&shift), &b.transformed(&shift), &params).unwrap(), d),
            (mcp(&a.transformed(&scale), &b.transformed(&scale), &params).unwrap(), 1.5 * d),
        ];
        for (x, y) in props {
            worst_prop = worst_prop.max((x - y).abs());
        }
    }
    ensure(worst_prop <= 1e-9, format!("property deviation {worst_prop:e} > 1e-9"))?;
    within_time(t0, Duration::from_secs(10), "metric checks")?;
    Ok(format!("{pairs} pairs bitwise equal to brute force; max property deviation {worst_prop:.1e}"))
}

// ---------------------------------------------------------------------------
// 2. Registration recovery

fn registration_spec(seed: u64) -> CohortSpec {
    CohortSpec {
        bundles: desk_bundles(50),
        subjects: 4,
        perturbation: Perturbation::rigid(20.0, 15.0),
        fiber_jitter_mm: 0.0,
        shape_jitter_mm: 0.0,
        seed,
        ..CohortSpec::default()
    }
}

fn registration_cfg(family: TransformFamily, seed: u64) -> RegistrationConfig {
    RegistrationConfig {
        transform_family: family,
        fibers_per_subject_sample: 60,
        max_iters_per_scale: 4,
        seed,
        ..RegistrationConfig::default()
    }
}

/// Relative (translation at `c`, rotation degrees, mean scale) of each
/// subject's end-to-end template map against subject 0's.
fn relative_errors(found: &[AffineTransform], truths: &[AffineTransform], c: &Point) -> Vec<(f64, f64, f64)> {
    let e0 = found[0].compose(&truths[0]);
    (1..found.len())
        .map(|s| {
            let rel = found[s].compose(&truths[s]).compose(&e0.inverse());
            ((rel.apply(c) - c).norm(), rel.rotation_angle().to_degrees(), rel.mean_scale())
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let spec = registration_spec(seed);
        let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
        let tracts: Vec<_> = cohort.iter().map(|s| s.tractogram.clone()).collect();
        let truths: Vec<_> = cohort.iter().map(|s| s.truth.true_transform).collect();
        let res = register_group(&tracts, &registration_cfg(TransformFamily::Rigid, seed)).map_err(|e| e.to_string())?;
        for (s, (dt, da, _)) in relative_errors(&res.transforms, &truths, &spec.template_center()).into_iter().enumerate() {
            ensure(dt <= 1.0 && da <= 2.0, format!("seed {seed} subject {}: {dt:.3} mm, {da:.3} deg", s + 1))?;
            worst = (worst.0.max(dt), worst.1.max(da));
        }
    }

    let spec = registration_spec(0);
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let mut tracts: Vec<_> = cohort.iter().map(|s| s.tractogram.clone()).collect();
    let mut truths: Vec<_> = cohort.iter().map(|s| s.truth.true_transform).collect();
    let grow = AffineTransform::scaling_about(&tracts[1].centroid(), 1.5).unwrap();
    tracts[1] = tracts[1].transformed(&grow);
    truths[1] = grow.compose(&truths[1]);
    let res = register_group(&tracts, &registration_cfg(TransformFamily::Similarity, 0)).map_err(|e| e.to_string())?;
    let rel = relative_errors(&res.transforms, &truths, &spec.template_center());
    let scale_err = rel.iter().map(|r| (r.2 - 1.0).abs()).fold(0.0, f64::max);
    let recovered = res.transforms[1].mean_scale() / res.transforms[0].mean_scale();
    ensure(scale_err <= 0.03, format!("1.5x scale recovered with relative error {scale_err:.4}"))?;
    within_time(t0, Duration::from_secs(120), "registration suite")?;
    Ok(format!(
        "5 seeds: worst {:.3} mm / {:.3} deg; injected 1.5x undone by {:.4} (relative error {:.4})",
        worst.0, worst.1, recovered, scale_err
    ))
}

// ---------------------------------------------------------------------------
// 3. Embedding fidelity

fn pairwise(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            out.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let spec = CohortSpec {
        bundles: desk_bundles(25),
        subjects: 2,
        seed: 11,
        ..CohortSpec::default()
    };
    let subject = generate_subject(&spec, 0).map_err(|e| e.to_string())?;
    let fibers = subject.tractogram.resampled(15).map_err(|e| e.to_string())?;
    let n = fibers.len();
    let dims = 10;
    let cfg = NystromConfig {
        sample_size: n,
        dims,
        seed: 5,
        ..NystromConfig::default()
    };
    let model = fit_nystrom(&fibers, &cfg).map_err(|e| e.to_string())?;
    let nys: Vec<Vec<f64>> = embed_all(&fibers, &model).map_err(|e| e.to_string())?.into_iter().map(|e| e.0).collect();

    // Full spectral oracle: dense affinity from the brute-force metric,
    // symmetric normalization, eigenvectors 2..=dims+1.
    let sigma = cfg.metric.sigma;
    let a = DMatrix::from_fn(n, n, |i, j| {
        let d = brute_mcp(fibers[i].points(), fibers[j].points());
        (-(d * d) / (sigma * sigma)).exp()
    });
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let norm = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (deg[i] * deg[j]).sqrt());
    let eig = SymmetricEigen::new(norm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let oracle: Vec<Vec<f64>> = (0..n).map(|i| order[1..=dims].iter().map(|&c| eig.eigenvectors[(i, c)]).collect()).collect();
    let r = pearson(&pairwise(&nys), &pairwise(&oracle)).map_err(|e| e.to_string())?;
    ensure(r >= 0.999, format!("Pearson r {r:.6} < 0.999"))?;

    let mut worst = 0.0f64;
    for (k, s) in model.sample_fibers.iter().enumerate() {
        let e = embed(s, &model);
        for (d, v) in e.0.iter().enumerate() {
            worst = worst.max((v - model.sample_eigenvectors[(k, d)]).abs());
        }
    }
    ensure(worst <= 1e-6, format!("in-sample reproduction error {worst:e} > 1e-6"))?;
    Ok(format!("m = n = {n}: Pearson r {r:.7}; in-sample max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. Clustering ground truth

fn cluster_ari(bundles: Vec<fiberatlas::synth::BundleSpec>, k: usize, seed: u64) -> Result<f64, String> {
    let spec = CohortSpec {
        bundles,
        subjects: 2,
        seed,
        perturbation: Perturbation::default(),
        ..CohortSpec::default()
    };
    let s = generate_subject(&spec, 0).map_err(|e| e.to_string())?;
    let fibers = s.tractogram.resampled(15).map_err(|e| e.to_string())?;
    let model = fit_nystrom(
        &fibers,
        &NystromConfig {
            sample_size: fibers.len().min(100),
            dims: k - 1,
            seed,
            ..NystromConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let e = embed_all(&fibers, &model).map_err(|e| e.to_string())?;
    let fit = cluster(&e, &KMeansConfig { k, seed, ..KMeansConfig::default() }).map_err(|e| e.to_string())?;
    adjusted_rand_index(&fit.assignments, &s.truth.fiber_labels).map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let mut aris = Vec::new();
    for seed in 0..5 {
        let ari = cluster_ari(desk_bundles(50), 8, seed)?;
        ensure(ari >= 0.95, format!("seed {seed}: ARI {ari:.4} < 0.95"))?;
        aris.push(ari);
    }
    let two: Vec<_> = desk_bundles(50).into_iter().filter(|b| b.label == "AF_left" || b.label == "AF_right").collect();
    let ari2 = cluster_ari(two, 2, 0)?;
    ensure(ari2 == 1.0, format!("K = 2 ARI {ari2}"))?;
    let min = aris.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("K = 8 over 5 seeds: min ARI {min:.4}; K = 2: ARI {ari2}"))
}

// ---------------------------------------------------------------------------
// 5. Parcellation self-consistency

fn criterion_5() -> Outcome {
    let spec = CohortSpec {
        bundles: desk_bundles(100),
        subjects: 6,
        seed: 3,
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let tracts: Vec<_> = cohort.iter().map(|s| s.tractogram.clone()).collect();
    let mut cfg = AtlasConfig {
        fibers_per_subject: 400,
        nystrom_sample: 300,
        clusters: 16,
        ..AtlasConfig::default()
    };
    cfg.registration.fibers_per_subject_sample = 60;
    cfg.registration.max_iters_per_scale = 4;
    let b = build_atlas(&tracts, &cfg).map_err(|e| e.to_string())?;
    let labels: Vec<String> = b.origins.iter().map(|&(s, i)| cohort[s].truth.fiber_labels[i].clone()).collect();
    let atlas = label_by_majority(&b.atlas, &b.assignments, &labels).map_err(|e| e.to_string())?;

    let (mut agree, mut total) = (0usize, 0usize);
    for (s, t) in tracts.iter().enumerate() {
        let p = parcellate_with_transform(t, &atlas, &b.transforms[s], None).map_err(|e| e.to_string())?;
        for i in b.subject_fibers(s) {
            total += 1;
            agree += usize::from(p.cluster_of[b.origins[i].1] == b.assignments[i]);
        }
    }
    let rate = agree as f64 / total as f64;
    ensure(rate >= 0.99, format!("training fibers reassigned to their cluster: {rate:.4} < 0.99"))?;

    let pc = ParcellationConfig {
        registration: cfg.registration.clone(),
        ..ParcellationConfig::default()
    };
    let moved = AffineTransform::rigid_about(&tracts[0].centroid(), Vector3::new(0.1, -0.05, 0.08), Vector3::new(8.0, -5.0, 3.0));
    let a = parcellate(&tracts[0], &atlas, &pc).map_err(|e| e.to_string())?.counts();
    let c = parcellate(&tracts[0].transformed(&moved), &atlas, &pc).map_err(|e| e.to_string())?.counts();
    let mut worst = 0.0f64;
    for (tract, &n) in &a {
        let m = c.get(tract).copied().unwrap_or(0);
        worst = worst.max((n as f64 - m as f64).abs() / (n.max(1)) as f64);
    }
    ensure(worst <= 0.01, format!("rigid copy changes a tract count by {:.2}%", 100.0 * worst))?;
    Ok(format!("{:.2}% of {total} training fibers reassigned; rigid copy max count change {:.2}%", 100.0 * rate, 100.0 * worst))
}

// ---------------------------------------------------------------------------
// 6. IR mechanics

fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn criterion_6() -> Outcome {
    let at10 = identify_counts("s", &counts(&[("AF_left", 10), ("AF_right", 9)]), 10).map_err(|e| e.to_string())?;
    ensure(at10.is_identified("AF_left") && !at10.is_identified("AF_right"), "threshold boundary 10/9 wrong")?;

    let mut rng = seeded(6);
    let tracts = ["AF_left", "AF_right", "CST_left", "CC2", "ILF_left"];
    let cohort: Vec<BTreeMap<String, usize>> = (0..40)
        .map(|_| tracts.iter().map(|t| (t.to_string(), rng.random_range(0..25usize))).collect())
        .collect();
    for t in tracts {
        let mut last = f64::INFINITY;
        for th in [5, 10, 15] {
            let results: Vec<_> = cohort.iter().map(|c| identify_counts("s", c, th).unwrap()).collect();
            let ir = identification_rate(&results, t).map_err(|e| e.to_string())?;
            let hand = 100.0 * cohort.iter().filter(|c| c[t] >= th).count() as f64 / cohort.len() as f64;
            ensure(ir == hand, format!("{t} at {th}: IR {ir} vs hand {hand}"))?;
            ensure(ir <= last, format!("{t}: IR rises from {last} to {ir} at threshold {th}"))?;
            last = ir;
        }
    }

    // Constructed cohort: 3 of 4 subjects reach 10 CST_left fibers.
    let built: Vec<_> = [12, 3, 40, 10]
        .iter()
        .map(|&n| identify_counts("s", &counts(&[("CST_left", n), ("CC2", 10)]), 10).unwrap())
        .collect();
    let cst = identification_rate(&built, "CST_left").map_err(|e| e.to_string())?;
    let cc2 = identification_rate(&built, "CC2").map_err(|e| e.to_string())?;
    ensure(cst == 75.0 && cc2 == 100.0, format!("constructed IRs {cst}, {cc2}"))?;
    Ok("10 identifies and 9 does not; IR monotone over {5, 10, 15} for 5 tracts x 40 subjects; constructed IRs 75% and 100%".into())
}

// ---------------------------------------------------------------------------
// 7. Statistics

fn row(tract: &str, age: f64, fa: f64) -> TractMeasureRow {
    TractMeasureRow {
        subject_id: String::new(),
        tract: tract.to_string(),
        nos: 20,
        mean_fa: Some(fa),
        mean_md: None,
        meta: SubjectMeta::new(age),
    }
}

/// Two-sided p for Student t with 2 degrees of freedom, closed form.
fn t2_two_sided(t: f64) -> f64 {
    1.0 - t.abs() / (t * t + 2.0).sqrt()
}

fn criterion_7() -> Outcome {
    let rows: Vec<_> = (0..30).map(|i| 26.0 + i as f64 * 0.6).map(|a| row("AF_left", a, 0.022820 * a + 0.1)).collect();
    let fit = glm_fit(&rows, &GlmSpec::default()).map_err(|e| e.to_string())?;
    ensure((fit.beta - 0.022820).abs() <= 1e-9, format!("noiseless beta {}", fit.beta))?;

    let mut rng = seeded(7);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut covered = 0;
    for _ in 0..500 {
        let rows: Vec<_> = (0..300)
            .map(|_| {
                let a = rng.random_range(26.0..45.0);
                row("AF_left", a, 0.0228 * a + 0.1 + noise.sample(&mut rng))
            })
            .collect();
        let f = glm_fit(&rows, &GlmSpec::default()).map_err(|e| e.to_string())?;
        covered += usize::from(f.ci_low <= 0.0228 && 0.0228 <= f.ci_high);
    }
    let coverage = covered as f64 / 500.0;
    ensure(coverage >= 0.93, format!("CI coverage {coverage:.3} < 0.93"))?;

    let y = [0.5, 1.7, -0.2];
    let x: Vec<f64> = y.iter().zip([1.0, 2.0, 3.0]).map(|(y, d)| y + d).collect();
    let tt = paired_ttest(&x, &y).map_err(|e| e.to_string())?;
    let t_err = (tt.t - 2.0 * 3f64.sqrt()).abs();
    let p_err = (tt.p - t2_two_sided(tt.t)).abs();
    ensure(t_err <= 1e-9 && tt.df == 2.0, format!("t {} df {}", tt.t, tt.df))?;
    ensure(p_err <= 1e-8, format!("p {} vs oracle {}", tt.p, t2_two_sided(tt.t)))?;

    let b = bonferroni(&[0.0005], 78).map_err(|e| e.to_string())?;
    ensure((b[0] - 0.039).abs() <= 1e-12, format!("bonferroni {}", b[0]))?;
    Ok(format!(
        "noiseless beta error {:.1e}; CI coverage {:.1}%; t = 2*sqrt(3) (error {t_err:.1e}), p error {p_err:.1e}; bonferroni {}",
        (fit.beta - 0.022820).abs(),
        100.0 * coverage,
        b[0]
    ))
}

// ---------------------------------------------------------------------------
// 8. Group-comparison recovery

/// Measures from the generator's own fiber labels, standing in for a perfect
/// parcellation.
fn truth_table(cohort: &[fiberatlas::synth::SyntheticSubject]) -> Result<TractMeasureTable, String> {
    let mut rows = Vec::new();
    for s in cohort {
        let mut tracts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, l) in s.truth.fiber_labels.iter().enumerate() {
            tracts.entry(l.clone()).or_default().push(i);
        }
        let parc = Parcellation {
            subject_id: s.tractogram.subject_id().to_string(),
            cluster_of: vec![0; s.tractogram.len()],
            tracts,
            unlabeled: Vec::new(),
            rejected: Vec::new(),
            transform_used: AffineTransform::identity(),
        };
        rows.extend(extract_measures(&parc, &s.tractogram, Aggregation::PointWeighted).map_err(|e| e.to_string())?);
    }
    Ok(TractMeasureTable::new(rows))
}

fn criterion_8() -> Outcome {
    let mut bundles = desk_bundles(10);
    // Every subject matches an override, so the base slope only has to keep
    // the profile inside [0, 1].
    for b in &mut bundles {
        b.fa_profile.intercept = 0.1;
        b.fa_profile.slope = 0.0125;
    }
    let spec = GlmSpec {
        covariates: vec!["birth_weight".into(), "head_circumference".into()],
        ..GlmSpec::default()
    };
    let (mut correct, mut total) = (0, 0);
    for rep in 0..100 {
        let cohort_spec = CohortSpec {
            bundles: bundles.clone(),
            subjects: 40,
            slope_overrides: vec![
                SlopeOverride {
                    selector: Selector::Sex(Sex::Female),
                    tract: None,
                    fa_slope: 0.010,
                },
                SlopeOverride {
                    selector: Selector::Sex(Sex::Male),
                    tract: None,
                    fa_slope: 0.015,
                },
            ],
            perturbation: Perturbation::default(),
            seed: 1000 + rep,
            ..CohortSpec::default()
        };
        let cohort = generate_cohort(&cohort_spec).map_err(|e| e.to_string())?;
        let table = truth_table(&cohort)?;
        let (f, m): (Vec<_>, Vec<_>) = table.rows.into_iter().partition(|r| r.meta.sex == Sex::Female);
        let cmp = compare_groups(&TractMeasureTable::new(f), &TractMeasureTable::new(m), &spec).map_err(|e| e.to_string())?;
        ensure(cmp.excluded.is_empty(), format!("replicate {rep}: excluded {:?}", cmp.excluded))?;
        for t in &cmp.tracts {
            total += 1;
            correct += usize::from(t.a.beta < t.b.beta);
        }
    }
    let rate = correct as f64 / total as f64;
    ensure(rate >= 0.95, format!("correct ordering {rate:.4} < 0.95"))?;
    Ok(format!("{correct}/{total} tract replicates ordered correctly ({:.1}%)", 100.0 * rate))
}

// ---------------------------------------------------------------------------
// 9. End-to-end determinism

fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, threads: usize| -> Result<fiberatlas_cli::RunManifest, String> {
        let mut cfg = PipelineConfig::default();
        cfg.paths.run_dir = dir.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| run_pipeline(&cfg, &RunOptions::default())).map_err(|e| e.to_string())
    };
    let a = run("a", 1)?;
    let b = run("b", 3)?;
    let (ca, cb) = (a.output_checksums(), b.output_checksums());
    ensure(!ca.is_empty(), "no outputs recorded")?;
    ensure(ca == cb, "output checksums differ between runs")?;
    ensure(a.config_hash == b.config_hash, "config hashes differ")?;
    let failed: Vec<_> = a.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    ensure(failed.is_empty(), format!("run checks failed: {failed:?}"))?;
    within_time(t0, Duration::from_secs(600), "two desk runs")?;
    Ok(format!(
        "{} outputs identical across runs (1 and 3 workers); {} run checks pass; {:.0} s + {:.0} s",
        ca.len(),
        a.checks.len(),
        a.total_seconds,
        b.total_seconds
    ))
}

// ---------------------------------------------------------------------------
// 10. Atlas round trip

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

fn criterion_10() -> Outcome {
    let spec = CohortSpec {
        bundles: desk_bundles(40),
        subjects: 2,
        seed: 10,
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec).map_err(|e| e.to_string())?;
    let tracts: Vec<_> = cohort.iter().map(|s| s.tractogram.clone()).collect();
    let cfg = AtlasConfig {
        fibers_per_subject: 200,
        register: false,
        nystrom_sample: 200,
        clusters: 16,
        ..AtlasConfig::default()
    };
    let b = build_atlas(&tracts, &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let good = dir.path().join("atlas");
    save_atlas(&b.atlas, &good).map_err(|e| e.to_string())?;
    let loaded = load_atlas(&good).map_err(|e| e.to_string())?;

    let probe = generate_subject(&CohortSpec { bundles: desk_bundles(125), seed: 99, ..spec.clone() }, 0).map_err(|e| e.to_string())?;
    let fibers = probe.tractogram.resampled(15).map_err(|e| e.to_string())?;
    ensure(fibers.len() == 1000, format!("{} probe fibers", fibers.len()))?;
    for f in &fibers {
        let (e1, e2) = (embed(f, &b.atlas.nystrom), embed(f, &loaded.nystrom));
        ensure(e1 == e2, "embedding changed after reload")?;
        ensure(assign(&e1, &b.atlas.clusters) == assign(&e2, &loaded.clusters), "assignment changed after reload")?;
    }

    let corrupt = dir.path().join("corrupt");
    copy_dir(&good, &corrupt);
    let mut bytes = fs::read(corrupt.join("centroids.bin")).unwrap();
    bytes[20] ^= 0x40;
    fs::write(corrupt.join("centroids.bin"), bytes).unwrap();

    let truncated = dir.path().join("truncated");
    copy_dir(&good, &truncated);
    let bytes = fs::read(truncated.join("eigenvalues.bin")).unwrap();
    fs::write(truncated.join("eigenvalues.bin"), &bytes[..bytes.len() - 8]).unwrap();

    let future = dir.path().join("future");
    copy_dir(&good, &future);
    let m = fs::read_to_string(future.join("manifest.json")).unwrap();
    fs::write(future.join("manifest.json"), m.replace("\"format_version\": \"1.0\"", "\"format_version\": \"2.0\"")).unwrap();

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();

    let kind = |p: &Path| match load_atlas(p) {
        Err(Error::Bundle(BundleError::ChecksumMismatch { .. })) => "checksum mismatch",
        Err(Error::Bundle(BundleError::Truncated { .. })) => "truncated",
        Err(Error::Bundle(BundleError::VersionMismatch { .. })) => "version mismatch",
        Err(Error::Bundle(BundleError::NotAnAtlasBundle(_))) => "not an atlas bundle",
        Err(_) => "other error",
        Ok(_) => "loaded",
    };
    let got = [kind(&corrupt), kind(&truncated), kind(&future), kind(&empty)];
    let want = ["checksum mismatch", "truncated", "version mismatch", "not an atlas bundle"];
    ensure(got == want, format!("error kinds {got:?}, expected {want:?}"))?;
    Ok(format!("1000 probe fibers embed and assign identically after reload; errors: {}", got.join(", ")))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "metric oracle equivalence", criterion_1),
        (2, "registration recovery", criterion_2),
        (3, "embedding fidelity", criterion_3),
        (4, "clustering ground truth", criterion_4),
        (5, "parcellation self-consistency", criterion_5),
        (6, "IR mechanics", criterion_6),
        (7, "statistics", criterion_7),
        (8, "group-comparison recovery", criterion_8),
        (9, "end-to-end determinism", criterion_9),
        (10, "atlas round trip", criterion_10),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion_{n}_{}: test", name.replace([' ', '-'], "_"));
        }
        return;
    }
    let mut failures = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failures += 1;
                println!("criterion {n:>2} FAIL {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

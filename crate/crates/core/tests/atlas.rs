use std::fs;

use fiberatlas::atlas::{label_by_majority, AtlasBuild};
use fiberatlas::parcellation::{identify, parcellate_with_transform};
use fiberatlas::synth::{desk_bundles, generate_cohort, CohortSpec, Perturbation, SyntheticSubject};
use fiberatlas::{build_atlas, load_atlas, parcellate, save_atlas, AffineTransform, AtlasConfig, BundleError, Error, ParcellationConfig};

fn cohort() -> Vec<SyntheticSubject> {
    generate_cohort(&CohortSpec {
        bundles: desk_bundles(15),
        subjects: 2,
        perturbation: Perturbation::default(),
        seed: 8,
        ..CohortSpec::default()
    })
    .unwrap()
}

fn small_build(subjects: &[SyntheticSubject]) -> AtlasBuild {
    let tracts: Vec<_> = subjects.iter().map(|s| s.tractogram.clone()).collect();
    build_atlas(
        &tracts,
        &AtlasConfig {
            fibers_per_subject: 120,
            register: false,
            nystrom_sample: 100,
            embedding_dims: 7,
            clusters: 8,
            ..AtlasConfig::default()
        },
    )
    .unwrap()
}

fn labeled(subjects: &[SyntheticSubject], b: &AtlasBuild) -> fiberatlas::Atlas {
    let labels: Vec<String> = b.origins.iter().map(|&(s, i)| subjects[s].truth.fiber_labels[i].clone()).collect();
    label_by_majority(&b.atlas, &b.assignments, &labels).unwrap()
}

#[test]
fn build_is_deterministic_and_complete() {
    let c = cohort();
    let a = small_build(&c);
    let b = small_build(&c);
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.atlas.clusters, b.atlas.clusters);
    assert_eq!(a.pooled.len(), 240);
    assert_eq!(a.atlas.k(), 8);
    assert_eq!(a.atlas.clusters.member_counts.iter().sum::<usize>(), 240);
    assert!(a.transforms.iter().all(|t| *t == AffineTransform::identity()));
}

#[test]
fn bundle_round_trip_and_errors() {
    let c = cohort();
    let b = small_build(&c);
    let atlas = labeled(&c, &b);
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("atlas");
    let manifest = save_atlas(&atlas, &good).unwrap();
    assert_eq!(load_atlas(&good).unwrap(), atlas);

    for entry in &manifest.arrays {
        let broken = dir.path().join(format!("broken_{}", entry.name));
        fs::create_dir_all(&broken).unwrap();
        for f in fs::read_dir(&good).unwrap() {
            let f = f.unwrap();
            fs::copy(f.path(), broken.join(f.file_name())).unwrap();
        }
        let path = broken.join(&entry.file);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(
            matches!(load_atlas(&broken), Err(Error::Bundle(BundleError::ChecksumMismatch { .. }))),
            "{}",
            entry.file
        );
        bytes.truncate(last);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_atlas(&broken), Err(Error::Bundle(BundleError::Truncated { .. }))), "{}", entry.file);
    }
    assert!(matches!(load_atlas(dir.path()), Err(Error::Bundle(BundleError::NotAnAtlasBundle(_)))));
}

#[test]
fn parcellation_reproduces_training_clusters() {
    let c = cohort();
    let b = small_build(&c);
    let atlas = labeled(&c, &b);
    for (s, subj) in c.iter().enumerate() {
        let p = parcellate_with_transform(&subj.tractogram, &atlas, &AffineTransform::identity(), None).unwrap();
        for i in b.subject_fibers(s) {
            assert_eq!(p.cluster_of[b.origins[i].1], b.assignments[i]);
        }
        let mut seen: Vec<usize> = p.tracts.values().flatten().chain(&p.unlabeled).copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..subj.tractogram.len()).collect::<Vec<_>>(), "every fiber placed exactly once");
        let correct = p.tracts.iter().map(|(t, fs)| fs.iter().filter(|&&f| subj.truth.fiber_labels[f] == *t).count()).sum::<usize>();
        assert!(correct as f64 >= 0.95 * subj.tractogram.len() as f64);
        let id = identify(&p, 10).unwrap();
        assert_eq!(id.identified.len(), atlas.tract_names().len());
    }
}

#[test]
fn unlabeled_atlas_cannot_parcellate() {
    let c = cohort();
    let b = small_build(&c);
    let cfg = ParcellationConfig {
        register: false,
        ..ParcellationConfig::default()
    };
    assert!(matches!(parcellate(&c[0].tractogram, &b.atlas, &cfg), Err(Error::UnlabeledAtlas)));
}

#[test]
fn outlier_rejection_only_removes_fibers() {
    let c = cohort();
    let b = small_build(&c);
    let atlas = labeled(&c, &b);
    let all = parcellate_with_transform(&c[0].tractogram, &atlas, &AffineTransform::identity(), None).unwrap();
    let strict = parcellate_with_transform(&c[0].tractogram, &atlas, &AffineTransform::identity(), Some(0.0)).unwrap();
    assert!(!strict.rejected.is_empty());
    for (t, fs) in &strict.tracts {
        assert!(fs.iter().all(|f| all.tracts[t].contains(f)));
    }
    assert!(strict.rejected.iter().all(|f| strict.unlabeled.contains(f)));
}

use std::collections::BTreeMap;

use fiberatlas::{extract_measures, Aggregation, AffineTransform, Parcellation, Point, Streamline, SubjectMeta, Tractogram};
use proptest::prelude::*;

fn streamline(fa: &[f64], y: f64) -> Streamline {
    let pts = (0..fa.len()).map(|k| Point::new(k as f64, y, 0.0)).collect();
    Streamline::new(pts).unwrap().with_scalar("FA", fa.to_vec()).unwrap()
}

fn parcellation(tracts: BTreeMap<String, Vec<usize>>, n: usize) -> Parcellation {
    Parcellation {
        subject_id: "s".into(),
        cluster_of: vec![0; n],
        tracts,
        unlabeled: Vec::new(),
        rejected: Vec::new(),
        transform_used: AffineTransform::identity(),
    }
}

proptest! {
    #[test]
    fn point_weighted_mean_is_flat_concatenation(fibers in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2..12), 1..10)) {
        let n = fibers.len();
        let sls: Vec<_> = fibers.iter().enumerate().map(|(i, f)| streamline(f, i as f64)).collect();
        let t = Tractogram::new("s", sls, SubjectMeta::new(30.0)).unwrap();
        let members: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let parc = parcellation(BTreeMap::from([("AF_left".to_string(), members.clone())]), n);
        let rows = extract_measures(&parc, &t, Aggregation::PointWeighted).unwrap();
        let flat: Vec<f64> = members.iter().flat_map(|&i| fibers[i].iter().copied()).collect();
        let oracle = flat.iter().sum::<f64>() / flat.len() as f64;
        prop_assert_eq!(rows.len(), 1);
        prop_assert_eq!(rows[0].nos, members.len());
        let got = rows[0].mean_fa.unwrap();
        prop_assert!((got - oracle).abs() <= 1e-12);
        let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= got && got <= hi + 1e-12);

        let fm = extract_measures(&parc, &t, Aggregation::FiberMean).unwrap()[0].mean_fa.unwrap();
        let oracle = members.iter().map(|&i| fibers[i].iter().sum::<f64>() / fibers[i].len() as f64).sum::<f64>() / members.len() as f64;
        prop_assert!((fm - oracle).abs() <= 1e-12);
    }
}

#[test]
fn empty_tract_has_no_fa_and_zero_count() {
    let t = Tractogram::new("s", vec![streamline(&[0.2, 0.4], 0.0)], SubjectMeta::new(30.0)).unwrap();
    let parc = parcellation(BTreeMap::from([("AF_left".to_string(), vec![0]), ("CC2".to_string(), vec![])]), 1);
    let rows = extract_measures(&parc, &t, Aggregation::PointWeighted).unwrap();
    let cc2 = rows.iter().find(|r| r.tract == "CC2").unwrap();
    assert_eq!(cc2.nos, 0);
    assert_eq!(cc2.mean_fa, None);
    let af = rows.iter().find(|r| r.tract == "AF_left").unwrap();
    assert!((af.mean_fa.unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(af.mean_md, None);
}

#[test]
fn mismatched_parcellation_is_rejected() {
    let t = Tractogram::new("s", vec![streamline(&[0.2, 0.4], 0.0)], SubjectMeta::new(30.0)).unwrap();
    let parc = parcellation(BTreeMap::new(), 3);
    assert!(extract_measures(&parc, &t, Aggregation::PointWeighted).is_err());
}

#[test]
fn table_csv_round_trip() {
    let t = Tractogram::new("s", vec![streamline(&[0.2, 0.4], 0.0), streamline(&[0.5, 0.5, 0.6], 1.0)], SubjectMeta::new(30.0)).unwrap();
    let parc = parcellation(BTreeMap::from([("AF_left".to_string(), vec![0, 1])]), 2);
    let table = fiberatlas::TractMeasureTable::new(extract_measures(&parc, &t, Aggregation::PointWeighted).unwrap());
    let back = fiberatlas::TractMeasureTable::from_csv_str(&table.to_csv_string().unwrap()).unwrap();
    assert_eq!(back, table);
}

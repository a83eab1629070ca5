use fiberatlas::metric::pairwise_distance_matrix_sequential;
use fiberatlas::{affinity, mcp, mcp_directed, pairwise_distance_matrix, AffineTransform, FiberDistanceParams, Point, ResampledFiber};
use nalgebra::Vector3;
use proptest::prelude::*;

fn fiber() -> impl Strategy<Value = ResampledFiber> {
    (prop::array::uniform3(-50.0..50.0f64), prop::collection::vec(prop::array::uniform3(-6.0..6.0f64), 14)).prop_filter_map(
        "degenerate",
        |(start, steps)| {
            let mut pts = vec![Point::new(start[0], start[1], start[2])];
            for s in steps {
                let last = *pts.last().unwrap();
                pts.push(last + Vector3::new(s[0], s[1], s[2]));
            }
            ResampledFiber::from_points(pts).ok()
        },
    )
}

fn naive(a: &ResampledFiber, b: &ResampledFiber) -> f64 {
    let dir = |x: &[Point], y: &[Point]| x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64;
    let rb: Vec<Point> = b.points().iter().rev().copied().collect();
    let f = (dir(a.points(), b.points()) + dir(b.points(), a.points())) / 2.0;
    let r = (dir(a.points(), &rb) + dir(&rb, a.points())) / 2.0;
    f.min(r)
}

proptest! {
    #[test]
    fn symmetric_and_flip_invariant(a in fiber(), b in fiber()) {
        let p = FiberDistanceParams::default();
        let d = mcp(&a, &b, &p).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - mcp(&b, &a, &p).unwrap()).abs() <= 1e-9);
        prop_assert!((d - mcp(&a, &b.reversed(), &p).unwrap()).abs() <= 1e-9);
        prop_assert!((d - mcp(&a.reversed(), &b, &p).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn rigid_invariant_and_scale_homogeneous(a in fiber(), b in fiber(), rv in prop::array::uniform3(-1.0..1.0f64), t in prop::array::uniform3(-80.0..80.0f64), s in 0.2..4.0f64) {
        let p = FiberDistanceParams::default();
        let d = mcp(&a, &b, &p).unwrap();
        let rigid = AffineTransform::rigid_about(&Point::zeros(), Vector3::from(rv), Vector3::from(t));
        let scale = AffineTransform::uniform_scale(s).unwrap();
        prop_assert!((mcp(&a.transformed(&rigid), &b.transformed(&rigid), &p).unwrap() - d).abs() <= 1e-9);
        prop_assert!((mcp(&a.transformed(&scale), &b.transformed(&scale), &p).unwrap() - s * d).abs() <= 1e-9 * (1.0 + s * d));
    }

    #[test]
    fn matches_naive_oracle(a in fiber(), b in fiber()) {
        let d = mcp(&a, &b, &FiberDistanceParams::default()).unwrap();
        prop_assert!((d - naive(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn self_distance_is_zero(a in fiber()) {
        prop_assert_eq!(mcp(&a, &a, &FiberDistanceParams::default()).unwrap(), 0.0);
        prop_assert_eq!(mcp_directed(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn affinity_in_unit_interval(d in 0.0..500.0f64, sigma in 0.5..100.0f64) {
        let a = affinity(d, sigma);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(affinity(d + 1.0, sigma) <= a);
    }
}

#[test]
fn distance_matrix_is_symmetric_with_zero_diagonal() {
    let fibers: Vec<ResampledFiber> = (0..6)
        .map(|i| {
            let pts = (0..15).map(|k| Point::new(k as f64 * 3.0, i as f64 * 2.0, (k * i) as f64 * 0.1)).collect();
            ResampledFiber::from_points(pts).unwrap()
        })
        .collect();
    let p = FiberDistanceParams::default();
    let m = pairwise_distance_matrix(&fibers, &fibers, &p).unwrap();
    assert_eq!(m, pairwise_distance_matrix_sequential(&fibers, &fibers, &p).unwrap());
    for i in 0..6 {
        assert_eq!(m[(i, i)], 0.0);
        for j in 0..6 {
            assert_eq!(m[(i, j)], m[(j, i)]);
            assert_eq!(m[(i, j)], mcp(&fibers[i], &fibers[j], &p).unwrap());
        }
    }
}

#[test]
fn rejects_mismatched_point_counts() {
    let a = ResampledFiber::from_points((0..15).map(|k| Point::new(k as f64, 0.0, 0.0)).collect()).unwrap();
    let b = ResampledFiber::from_points((0..10).map(|k| Point::new(k as f64, 1.0, 0.0)).collect()).unwrap();
    assert!(mcp(&a, &b, &FiberDistanceParams::default()).is_err());
}

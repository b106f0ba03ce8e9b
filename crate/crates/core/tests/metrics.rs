mod common;

use common::oracle;
use flowbench_core::metrics::{aggregate, speed_bucket_of, Accumulator, MetricConfig, SpeedBuckets, VelocityHistogram};
use flowbench_core::FlowField;
use proptest::prelude::*;

#[test]
fn entry_points_match_brute_force_oracle() {
    for seed in 0..100 {
        let fx = oracle::random_fixture(seed);
        oracle::check(&fx).unwrap_or_else(|e| panic!("fixture {seed}: {e}"));
    }
}

#[test]
fn table_one_bucket_boundaries() {
    let b = SpeedBuckets::default();
    let cases = [(0.0, 0), (0.49, 0), (0.5, 1), (0.7, 1), (1.0, 2), (1.99, 2), (2.0, 3), (3.2, 3)];
    for (speed, want) in cases {
        assert_eq!(speed_bucket_of(speed, &b).unwrap(), want, "speed {speed}");
    }
    assert!(speed_bucket_of(-0.1, &b).is_err());
}

fn accumulate(fixtures: &[oracle::Fixture]) -> Accumulator {
    let mut acc = Accumulator::new(MetricConfig::default()).unwrap();
    for fx in fixtures {
        acc.add_pair(&fx.pred, &fx.gt, &fx.meta).unwrap();
        acc.add_semantic(&fx.pred_class, &fx.gt_class).unwrap();
    }
    acc
}

#[test]
fn sharded_merge_equals_single_pass() {
    let fixtures: Vec<_> = (0..100).map(oracle::random_fixture).collect();
    let single = accumulate(&fixtures).report();
    let shards: Vec<Accumulator> = fixtures.chunks(10).map(accumulate).collect();
    let mut reversed = shards.clone();
    reversed.reverse();
    for merged in [aggregate(&shards).unwrap().report(), aggregate(&reversed).unwrap().report()] {
        assert!(single.max_abs_diff(&merged).unwrap() <= 1e-9);
        assert_eq!(single.counts, merged.counts);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_equivariance(seed in 0u64..10_000, k in -4i32..=4) {
        // Powers of two scale exactly, so boundary points stay on their boundaries.
        let s = 2f64.powi(k);
        let fx = oracle::random_fixture(seed);
        let mut scaled = oracle::random_fixture(seed);
        for v in scaled.gt.vectors.iter_mut().chain(scaled.pred.vectors.iter_mut()) {
            *v *= s;
        }
        for m in &mut scaled.meta {
            m.gt_flow *= s;
            m.gt_speed *= s;
        }
        let base = SpeedBuckets::default();
        let stretched = SpeedBuckets {
            edges: base.edges.iter().map(|e| e * s).collect(),
            dynamic_threshold: base.dynamic_threshold * s,
        };
        let report = |f: &oracle::Fixture, b: SpeedBuckets| {
            let mut a = Accumulator::new(MetricConfig { speed_buckets: b, ..MetricConfig::default() }).unwrap();
            a.add_pair(&f.pred, &f.gt, &f.meta).unwrap();
            a.report()
        };
        let (a, b) = (report(&fx, base), report(&scaled, stretched));
        prop_assert_eq!(a.bucket_table.len(), b.bucket_table.len());
        for (x, y) in a.bucket_table.iter().zip(&b.bucket_table) {
            prop_assert_eq!(x.count, y.count);
            prop_assert!((y.raw_epe_m - s * x.raw_epe_m).abs() <= 1e-9 * s);
            match (x.normalized_epe, y.normalized_epe) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() <= 1e-9),
                (p, q) => prop_assert_eq!(p, q),
            }
        }
    }

    #[test]
    fn added_error_never_lowers_raw_epe(seed in 0u64..10_000, extra in 0.01f64..1.0) {
        let fx = oracle::random_fixture(seed);
        let mut worse = oracle::random_fixture(seed);
        for (p, g) in worse.pred.vectors.iter_mut().zip(&worse.gt.vectors) {
            let d = *p - g;
            let dir = if d.norm() > 0.0 { d.normalize() } else { nalgebra::Vector3::x() };
            *p += dir * extra;
        }
        let report = |f: &oracle::Fixture| {
            let mut a = Accumulator::new(MetricConfig::default()).unwrap();
            a.add_pair(&f.pred, &f.gt, &f.meta).unwrap();
            a.report()
        };
        let (a, b) = (report(&fx), report(&worse));
        for (x, y) in a.bucket_table.iter().zip(&b.bucket_table) {
            prop_assert!(y.raw_epe_m >= x.raw_epe_m);
        }
    }

    #[test]
    fn constant_error_field(seed in 0u64..10_000, e in 0.0f64..1.0) {
        let mut fx = oracle::random_fixture(seed);
        fx.pred = FlowField { vectors: fx.gt.vectors.iter().map(|g| g + nalgebra::Vector3::new(0.0, e, 0.0)).collect(), valid: fx.pred.valid.clone() };
        let t = flowbench_core::metrics::three_way_epe(&fx.pred, &fx.gt, &fx.meta, oracle::THRESHOLD).unwrap();
        for v in [t.mean, t.fd, t.fs, t.bs].into_iter().flatten() {
            prop_assert!((v - 100.0 * e).abs() <= 1e-9);
        }
    }
}

#[test]
fn velocity_histogram_scales_with_speed() {
    let fx = oracle::random_fixture(3);
    let mut fast = oracle::random_fixture(3);
    for m in &mut fast.meta {
        m.gt_speed *= 2.0;
    }
    let mut a = VelocityHistogram::new(0.25, 0.0).unwrap();
    a.add(&fx.meta);
    let mut b = VelocityHistogram::new(0.5, 0.0).unwrap();
    b.add(&fast.meta);
    assert_eq!(a.counts, b.counts);
    assert!(VelocityHistogram::new(0.25, 0.05).unwrap().counts.is_empty());
}

#[test]
fn histogram_csv_edges_are_clean() {
    let mut h = VelocityHistogram::new(0.1, 0.0).unwrap();
    h.counts.insert(2, 5);
    h.counts.insert(14, 1);
    assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n0.2,0.3,5\n1.4,1.5,1\n");
}

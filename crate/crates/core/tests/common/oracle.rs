//! Brute-force metric recomputation used as an independent reference.
//! Bucket edges are written out literally instead of read from config.

use flowbench_core::{CoarseClass, FlowField, PointMeta};
use flowbench_core::metrics::{bucket_normalized_epe, range_bucketed, semantic_metrics, three_way_epe, SpeedBuckets, RangeBuckets};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const THRESHOLD: f64 = 0.05;
const SPEED_EDGES: [f64; 5] = [0.0, 0.5, 1.0, 2.0, f64::INFINITY];
const RANGE_EDGES: [f64; 6] = [0.0, 35.0, 50.0, 75.0, 100.0, f64::INFINITY];
const CLASSES: [CoarseClass; 4] = [CoarseClass::Car, CoarseClass::Other, CoarseClass::Pedestrian, CoarseClass::Vru];

pub struct Fixture {
    pub pred: FlowField,
    pub gt: FlowField,
    pub meta: Vec<PointMeta>,
    pub pred_class: Vec<CoarseClass>,
    pub gt_class: Vec<CoarseClass>,
}

fn unit(r: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

pub fn random_fixture(seed: u64) -> Fixture {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(50..400);
    let boundary = [0.0, 0.05, 0.5, 1.0, 2.0];
    let mut fx = Fixture {
        pred: FlowField::zeros(0),
        gt: FlowField::zeros(0),
        meta: Vec::with_capacity(n),
        pred_class: Vec::with_capacity(n),
        gt_class: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let class = match r.random_range(0..6) {
            0 | 1 => None,
            k => Some(CLASSES[k - 2]),
        };
        let speed = match (class, r.random_range(0..10)) {
            (None, 0) => r.random_range(0.0..0.3),
            (None, _) => 0.0,
            (Some(_), 0..=1) => boundary[r.random_range(0..boundary.len())],
            (Some(_), 2) => 0.0,
            (Some(_), _) => r.random_range(0.0..4.0),
        };
        let gt_flow = unit(&mut r) * speed;
        let gt_speed = gt_flow.norm();
        let pred = gt_flow + unit(&mut r) * r.random_range(0.0..0.5);
        fx.gt.vectors.push(gt_flow);
        fx.gt.valid.push(r.random::<f64>() > 0.05);
        fx.pred.vectors.push(pred);
        fx.pred.valid.push(r.random::<f64>() > 0.02);
        fx.meta.push(PointMeta {
            gt_flow,
            gt_speed,
            class,
            instance_id: class.map(|_| "i".to_owned()),
            is_ground: r.random::<f64>() < 0.1,
            range_m: if r.random::<f64>() < 0.1 { RANGE_EDGES[r.random_range(0..5)] } else { r.random_range(0.0..130.0) },
        });
        let gt_c = CLASSES[r.random_range(0..4)];
        fx.gt_class.push(gt_c);
        fx.pred_class.push(if r.random::<f64>() < 0.6 { gt_c } else { CLASSES[r.random_range(0..4)] });
    }
    fx
}

fn evaluated(fx: &Fixture, i: usize) -> bool {
    fx.gt.valid[i] && fx.pred.valid[i] && !fx.meta[i].is_ground
}

fn epe(fx: &Fixture, i: usize) -> f64 {
    let d = fx.pred.vectors[i] - fx.gt.vectors[i];
    (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) }
}

/// `[mean, FD, FS, BS]` in centimeters.
pub fn threeway(fx: &Fixture) -> [Option<f64>; 4] {
    let mut cats: [Vec<f64>; 3] = Default::default();
    for i in 0..fx.meta.len() {
        if !evaluated(fx, i) {
            continue;
        }
        let m = &fx.meta[i];
        let dynamic = m.gt_speed >= THRESHOLD;
        let slot = match (m.class.is_some(), dynamic) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => continue,
        };
        cats[slot].push(epe(fx, i) * 100.0);
    }
    let vals: Vec<Option<f64>> = cats.iter().map(|c| mean(c)).collect();
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    [mean(&present), vals[0], vals[1], vals[2]]
}

pub struct OracleBucket {
    pub raw: f64,
    pub speed: f64,
    pub normalized: Option<f64>,
    pub count: u64,
}

/// Cells keyed by (class, bucket), per-class dynamic means and the dynamic mean,
/// restricted to points with `keep`.
pub fn buckets(fx: &Fixture, keep: impl Fn(&PointMeta) -> bool) -> (Vec<(CoarseClass, usize, OracleBucket)>, Vec<(CoarseClass, f64)>, Option<f64>) {
    let mut cells = Vec::new();
    let mut per_class = Vec::new();
    for class in CLASSES {
        let mut normalized = Vec::new();
        for b in 0..4 {
            let (lo, hi) = (SPEED_EDGES[b], SPEED_EDGES[b + 1]);
            let idx: Vec<usize> = (0..fx.meta.len())
                .filter(|&i| evaluated(fx, i) && keep(&fx.meta[i]))
                .filter(|&i| fx.meta[i].class == Some(class) && fx.meta[i].gt_speed >= lo && fx.meta[i].gt_speed < hi)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let raw = idx.iter().map(|&i| epe(fx, i)).sum::<f64>() / idx.len() as f64;
            let speed = idx.iter().map(|&i| fx.meta[i].gt_speed).sum::<f64>() / idx.len() as f64;
            let norm = (speed >= THRESHOLD).then(|| raw / speed);
            normalized.extend(norm);
            cells.push((class, b, OracleBucket { raw, speed, normalized: norm, count: idx.len() as u64 }));
        }
        if let Some(m) = mean(&normalized) {
            per_class.push((class, m));
        }
    }
    let overall = mean(&per_class.iter().map(|p| p.1).collect::<Vec<_>>());
    (cells, per_class, overall)
}

/// Dynamic mean per range bucket.
pub fn ranges(fx: &Fixture) -> Vec<Option<f64>> {
    (0..5)
        .map(|k| buckets(fx, |m| m.range_m >= RANGE_EDGES[k] && m.range_m < RANGE_EDGES[k + 1]).2)
        .collect()
}

/// `(miou, accuracy, per-class IoU for classes with a non-empty union)`.
pub fn semantic(pred: &[CoarseClass], gt: &[CoarseClass]) -> (f64, f64, Vec<(CoarseClass, f64)>) {
    let mut ious = Vec::new();
    let mut present = Vec::new();
    for c in CLASSES {
        let tp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count();
        let fp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g != c).count();
        let fn_ = pred.iter().zip(gt).filter(|(p, g)| **p != c && **g == c).count();
        if tp + fp + fn_ > 0 {
            let iou = tp as f64 / (tp + fp + fn_) as f64;
            ious.push((c, iou));
            if tp + fn_ > 0 {
                present.push(iou);
            }
        }
    }
    let acc = pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / gt.len() as f64;
    (mean(&present).unwrap(), acc, ious)
}

fn close(a: Option<f64>, b: Option<f64>, what: &str) -> Result<(), String> {
    match (a, b) {
        (None, None) => Ok(()),
        (Some(x), Some(y)) if (x - y).abs() <= 1e-9 => Ok(()),
        _ => Err(format!("{what}: {a:?} vs oracle {b:?}")),
    }
}

/// Compares every metric entry point against the oracle on one fixture.
pub fn check(fx: &Fixture) -> Result<(), String> {
    let t = three_way_epe(&fx.pred, &fx.gt, &fx.meta, THRESHOLD).map_err(|e| e.to_string())?;
    let o = threeway(fx);
    close(t.mean, o[0], "mean")?;
    close(t.fd, o[1], "FD")?;
    close(t.fs, o[2], "FS")?;
    close(t.bs, o[3], "BS")?;

    let b = bucket_normalized_epe(&fx.pred, &fx.gt, &fx.meta, &SpeedBuckets::default()).map_err(|e| e.to_string())?;
    let (cells, per_class, overall) = buckets(fx, |_| true);
    if b.table.len() != cells.len() {
        return Err(format!("{} bucket cells vs oracle {}", b.table.len(), cells.len()));
    }
    for (e, (class, bi, ob)) in b.table.iter().zip(&cells) {
        if e.class != *class || e.bucket_index != *bi || e.count != ob.count {
            return Err(format!("cell {:?}/{} vs oracle {class:?}/{bi}", e.class, e.bucket_index));
        }
        close(Some(e.raw_epe_m), Some(ob.raw), "raw EPE")?;
        close(Some(e.mean_speed), Some(ob.speed), "mean speed")?;
        close(e.normalized_epe, ob.normalized, "normalized EPE")?;
    }
    if b.per_class_dynamic.len() != per_class.len() {
        return Err("per-class dynamic classes differ".into());
    }
    for (class, v) in &per_class {
        close(b.per_class_dynamic.get(class).copied(), Some(*v), "per-class dynamic")?;
    }
    close(b.dynamic_mean, overall, "dynamic mean")?;

    let r = range_bucketed(&fx.pred, &fx.gt, &fx.meta, &RangeBuckets::default()).map_err(|e| e.to_string())?;
    for (e, o) in r.iter().zip(ranges(fx)) {
        close(e.dynamic_mean, o, &format!("range {}", e.label))?;
    }

    let s = semantic_metrics(&fx.pred_class, &fx.gt_class).map_err(|e| e.to_string())?;
    let (miou, acc, ious) = semantic(&fx.pred_class, &fx.gt_class);
    close(Some(s.miou), Some(miou), "mIoU")?;
    close(Some(s.accuracy), Some(acc), "accuracy")?;
    if s.per_class_iou.len() != ious.len() {
        return Err("per-class IoU classes differ".into());
    }
    for (c, v) in ious {
        close(s.per_class_iou.get(&c).copied(), Some(v), "IoU")?;
    }
    Ok(())
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Accumulator, BucketGrid, Category, Confusion, Counts, MetricConfig, N_CLASSES};
use crate::types::CoarseClass;

/// How per-bucket normalized EPE is folded into the dynamic mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicMeanMode {
    /// Mean over classes of the mean over each class's dynamic buckets.
    #[default]
    PerClass,
    /// Mean over all dynamic (class, bucket) cells.
    Pooled,
}

/// Mean EPE per category in centimeters; absent categories are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreeWay {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(rename = "FD", skip_serializing_if = "Option::is_none")]
    pub fd: Option<f64>,
    #[serde(rename = "FS", skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    #[serde(rename = "BS", skip_serializing_if = "Option::is_none")]
    pub bs: Option<f64>,
}

impl ThreeWay {
    pub fn get(&self, c: Category) -> Option<f64> {
        match c {
            Category::ForegroundDynamic => self.fd,
            Category::ForegroundStatic => self.fs,
            Category::BackgroundStatic => self.bs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub class: CoarseClass,
    pub bucket: String,
    pub bucket_index: usize,
    pub raw_epe_m: f64,
    /// Present only for buckets whose mean speed reaches the dynamic threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_epe: Option<f64>,
    pub mean_speed: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamic_mean: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub miou: f64,
    pub accuracy: f64,
    /// Classes that occur in the ground truth or the prediction.
    pub per_class_iou: BTreeMap<CoarseClass, f64>,
}

impl SemanticReport {
    /// `None` for an empty matrix. mIoU averages classes present in the ground truth.
    pub fn from_confusion(c: &Confusion) -> Option<Self> {
        let total = c.total();
        if total == 0 {
            return None;
        }
        let m = &c.matrix;
        let mut per_class_iou = BTreeMap::new();
        let mut present = Vec::new();
        let mut correct = 0;
        for class in CoarseClass::ALL {
            let k = class.index();
            let tp = m[k][k];
            correct += tp;
            let gt_total: u64 = m[k].iter().sum();
            let pred_total: u64 = (0..N_CLASSES).map(|g| m[g][k]).sum();
            let union = gt_total + pred_total - tp;
            if union > 0 {
                let iou = tp as f64 / union as f64;
                per_class_iou.insert(class, iou);
                if gt_total > 0 {
                    present.push(iou);
                }
            }
        }
        Some(Self {
            miou: present.iter().sum::<f64>() / present.len() as f64,
            accuracy: correct as f64 / total as f64,
            per_class_iou,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub threeway: ThreeWay,
    pub bucket_table: Vec<BucketEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamic_mean: Option<f64>,
    pub per_class_dynamic: BTreeMap<CoarseClass, f64>,
    pub range_table: Vec<RangeEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticReport>,
    pub counts: Counts,
}

fn bucket_entries(grid: &BucketGrid, cfg: &MetricConfig) -> Vec<BucketEntry> {
    let mut out = Vec::new();
    for class in CoarseClass::ALL {
        for (b, cells) in grid.cells.iter().enumerate() {
            let s = &cells[class.index()];
            let (Some(raw), Some(speed)) = (s.mean_epe(), s.mean_speed()) else { continue };
            out.push(BucketEntry {
                class,
                bucket: cfg.speed_buckets.label(b),
                bucket_index: b,
                raw_epe_m: raw,
                normalized_epe: s.normalized(cfg.speed_buckets.dynamic_threshold),
                mean_speed: speed,
                count: s.count,
            });
        }
    }
    out
}

impl MetricReport {
    pub fn from_accumulator(acc: &Accumulator) -> Self {
        let cfg = &acc.config;
        let thr = cfg.speed_buckets.dynamic_threshold;
        let cat = |c: Category| {
            let (sum, n) = acc.threeway[c as usize];
            (n > 0).then(|| 100.0 * sum / n as f64)
        };
        let present: Vec<f64> = Category::ALL.iter().filter_map(|&c| cat(c)).collect();
        let threeway = ThreeWay {
            mean: (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64),
            fd: cat(Category::ForegroundDynamic),
            fs: cat(Category::ForegroundStatic),
            bs: cat(Category::BackgroundStatic),
        };
        let (per_class_dynamic, dynamic_mean) = acc.buckets.dynamic(thr, cfg.dynamic_mean_mode);
        let range_table = acc
            .ranges
            .iter()
            .enumerate()
            .map(|(i, g)| RangeEntry {
                label: cfg.range_buckets.label(i),
                dynamic_mean: g.dynamic(thr, cfg.dynamic_mean_mode).1,
                count: g.cells.iter().flatten().map(|s| s.count).sum(),
            })
            .collect();
        Self {
            config: cfg.clone(),
            threeway,
            bucket_table: bucket_entries(&acc.buckets, cfg),
            dynamic_mean,
            per_class_dynamic,
            range_table,
            semantic: SemanticReport::from_confusion(&acc.confusion),
            counts: acc.counts,
        }
    }

    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn bucket(&self, class: CoarseClass, bucket_index: usize) -> Option<&BucketEntry> {
        self.bucket_table
            .iter()
            .find(|e| e.class == class && e.bucket_index == bucket_index)
    }

    /// Largest absolute difference between numeric fields of two reports,
    /// or `None` when their structure differs.
    pub fn max_abs_diff(&self, other: &MetricReport) -> Option<f64> {
        let a = serde_json::to_value(self).ok()?;
        let b = serde_json::to_value(other).ok()?;
        value_diff(&a, &b)
    }
}

fn value_diff(a: &Value, b: &Value) -> Option<f64> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).try_fold(0.0f64, |m, (p, q)| Some(m.max(value_diff(p, q)?)))
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x.iter().try_fold(0.0f64, |m, (k, p)| {
            Some(m.max(value_diff(p, y.get(k)?)?))
        }),
        _ => (a == b).then_some(0.0),
    }
}

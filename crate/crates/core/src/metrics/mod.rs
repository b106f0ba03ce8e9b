//! Scene-flow evaluation: three-way EPE, class-aware speed-bucket-normalized
//! EPE, range-bucketed dynamic mean, semantic IoU and velocity histograms.
//!
//! Per-pair evaluation produces an [`Accumulator`] of sums and counts.
//! Accumulators merge by addition, so reports over any partition of the
//! pairs agree; [`MetricReport`] derives means from the sums.

mod report;
mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{CoarseClass, FlowField, PointMeta};
use crate::{Error, Result};

pub use report::{BucketEntry, DynamicMeanMode, MetricReport, RangeEntry, SemanticReport, ThreeWay};
pub use table::render_table;

const N_CLASSES: usize = CoarseClass::ALL.len();

/// Half-open speed buckets in meters per frame; the last is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedBuckets {
    /// Lower edges, starting at 0.
    pub edges: Vec<f64>,
    pub dynamic_threshold: f64,
}

impl Default for SpeedBuckets {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 0.5, 1.0, 2.0],
            dynamic_threshold: 0.05,
        }
    }
}

fn check_edges(edges: &[f64], what: &str) -> Result<()> {
    if edges.first() != Some(&0.0) || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidConfig(format!("{what} edges must start at 0 and increase strictly")));
    }
    Ok(())
}

fn edge_label(v: f64) -> String {
    if v.fract() == 0.0 { format!("{v:.1}") } else { format!("{v}") }
}

impl SpeedBuckets {
    pub fn validate(&self) -> Result<()> {
        check_edges(&self.edges, "speed bucket")?;
        let first_nonzero = self.edges.get(1).copied().unwrap_or(f64::INFINITY);
        if !(self.dynamic_threshold > 0.0 && self.dynamic_threshold < first_nonzero) {
            return Err(Error::InvalidConfig("dynamic threshold must lie below the first nonzero edge".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn label(&self, i: usize) -> String {
        let hi = self.edges.get(i + 1).map_or("inf".to_owned(), |&e| edge_label(e));
        format!("[{}, {hi})", edge_label(self.edges[i]))
    }
}

/// Bucket index of `speed`; boundaries belong to the upper bucket.
pub fn speed_bucket_of(speed: f64, buckets: &SpeedBuckets) -> Result<usize> {
    if !(speed >= 0.0) {
        return Err(Error::InvalidSpeed(speed));
    }
    Ok(buckets.edges.partition_point(|&e| e <= speed) - 1)
}

/// Half-open horizontal range buckets in meters; the last is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBuckets {
    pub edges: Vec<f64>,
}

impl Default for RangeBuckets {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 35.0, 50.0, 75.0, 100.0],
        }
    }
}

impl RangeBuckets {
    pub fn validate(&self) -> Result<()> {
        check_edges(&self.edges, "range bucket")
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn bucket_of(&self, range_m: f64) -> usize {
        self.edges.partition_point(|&e| e <= range_m).max(1) - 1
    }

    pub fn label(&self, i: usize) -> String {
        let hi = self.edges.get(i + 1).map_or("inf".to_owned(), |e| format!("{e}"));
        format!("{}-{hi}", self.edges[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    #[serde(default)]
    pub speed_buckets: SpeedBuckets,
    #[serde(default)]
    pub range_buckets: RangeBuckets,
    #[serde(default)]
    pub dynamic_mean_mode: DynamicMeanMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            speed_buckets: SpeedBuckets::default(),
            range_buckets: RangeBuckets::default(),
            dynamic_mean_mode: DynamicMeanMode::PerClass,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        self.speed_buckets.validate()?;
        self.range_buckets.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "FD")]
    ForegroundDynamic,
    #[serde(rename = "FS")]
    ForegroundStatic,
    #[serde(rename = "BS")]
    BackgroundStatic,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::ForegroundDynamic,
        Category::ForegroundStatic,
        Category::BackgroundStatic,
    ];
}

/// `None` for background points that move (excluded everywhere).
pub fn classify_point(meta: &PointMeta, dynamic_threshold: f64) -> Option<Category> {
    let dynamic = meta.gt_speed >= dynamic_threshold;
    match (meta.class.is_some(), dynamic) {
        (true, true) => Some(Category::ForegroundDynamic),
        (true, false) => Some(Category::ForegroundStatic),
        (false, false) => Some(Category::BackgroundStatic),
        (false, true) => None,
    }
}

pub fn classify_points(meta: &[PointMeta], dynamic_threshold: f64) -> Vec<Option<Category>> {
    meta.iter().map(|m| classify_point(m, dynamic_threshold)).collect()
}

/// Running sums of one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub sum_epe: f64,
    pub sum_speed: f64,
    pub count: u64,
}

impl BucketStats {
    fn add(&mut self, epe: f64, speed: f64) {
        self.sum_epe += epe;
        self.sum_speed += speed;
        self.count += 1;
    }

    fn merge(&mut self, o: &BucketStats) {
        self.sum_epe += o.sum_epe;
        self.sum_speed += o.sum_speed;
        self.count += o.count;
    }

    pub fn mean_epe(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_epe / self.count as f64)
    }

    pub fn mean_speed(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_speed / self.count as f64)
    }

    /// Ratio of bucket means; `None` unless the bucket is dynamic.
    pub fn normalized(&self, dynamic_threshold: f64) -> Option<f64> {
        let speed = self.mean_speed()?;
        (speed >= dynamic_threshold).then(|| self.sum_epe / self.sum_speed)
    }
}

/// Class x speed-bucket table of sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketGrid {
    pub cells: Vec<[BucketStats; N_CLASSES]>,
}

impl BucketGrid {
    fn new(n_buckets: usize) -> Self {
        Self {
            cells: vec![[BucketStats::default(); N_CLASSES]; n_buckets],
        }
    }

    pub fn get(&self, class: CoarseClass, bucket: usize) -> &BucketStats {
        &self.cells[bucket][class.index()]
    }

    fn merge(&mut self, o: &BucketGrid) {
        for (a, b) in self.cells.iter_mut().zip(&o.cells) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    /// Per-class mean of dynamic normalized EPE and its aggregate.
    pub fn dynamic(&self, threshold: f64, mode: DynamicMeanMode) -> (BTreeMap<CoarseClass, f64>, Option<f64>) {
        let mut per_class = BTreeMap::new();
        let mut pooled = Vec::new();
        for class in CoarseClass::ALL {
            let vals: Vec<f64> = self.cells.iter().filter_map(|c| c[class.index()].normalized(threshold)).collect();
            if !vals.is_empty() {
                per_class.insert(class, vals.iter().sum::<f64>() / vals.len() as f64);
                pooled.extend(vals);
            }
        }
        let overall = match mode {
            DynamicMeanMode::PerClass => mean(per_class.values().copied()),
            DynamicMeanMode::Pooled => mean(pooled.into_iter()),
        };
        (per_class, overall)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Confusion counts, `matrix[gt][pred]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub matrix: [[u64; N_CLASSES]; N_CLASSES],
}

impl Confusion {
    pub fn add(&mut self, gt: CoarseClass, pred: CoarseClass) {
        self.matrix[gt.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    fn merge(&mut self, o: &Confusion) {
        for (a, b) in self.matrix.iter_mut().zip(&o.matrix) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pairs: u64,
    pub points: u64,
    pub evaluated: u64,
    pub invalid: u64,
    pub ground: u64,
    /// Moving background points, excluded from the three-way split.
    pub background_dynamic: u64,
}

impl Counts {
    fn merge(&mut self, o: &Counts) {
        self.pairs += o.pairs;
        self.points += o.points;
        self.evaluated += o.evaluated;
        self.invalid += o.invalid;
        self.ground += o.ground;
        self.background_dynamic += o.background_dynamic;
    }
}

/// Mergeable sufficient statistics of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub config: MetricConfig,
    /// (sum of EPE, count) for FD, FS, BS.
    pub threeway: [(f64, u64); 3],
    pub buckets: BucketGrid,
    /// One class x speed grid per range bucket.
    pub ranges: Vec<BucketGrid>,
    pub confusion: Confusion,
    pub counts: Counts,
}

impl Accumulator {
    pub fn new(config: MetricConfig) -> Result<Self> {
        config.validate()?;
        let nb = config.speed_buckets.len();
        Ok(Self {
            threeway: [(0.0, 0); 3],
            buckets: BucketGrid::new(nb),
            ranges: vec![BucketGrid::new(nb); config.range_buckets.len()],
            confusion: Confusion::default(),
            counts: Counts::default(),
            config,
        })
    }

    /// Adds one frame pair. Points count when both flows are valid and the
    /// point is not ground.
    pub fn add_pair(&mut self, pred: &FlowField, gt: &FlowField, meta: &[PointMeta]) -> Result<()> {
        let n = gt.len();
        if pred.len() != n || gt.valid.len() != n || pred.valid.len() != n {
            return Err(Error::shape(n, pred.len()));
        }
        if meta.len() != n {
            return Err(Error::shape(n, meta.len()));
        }
        let thr = self.config.speed_buckets.dynamic_threshold;
        self.counts.pairs += 1;
        self.counts.points += n as u64;
        for i in 0..n {
            let m = &meta[i];
            if !(gt.valid[i] && pred.valid[i]) {
                self.counts.invalid += 1;
                continue;
            }
            if m.is_ground {
                self.counts.ground += 1;
                continue;
            }
            self.counts.evaluated += 1;
            let epe = (pred.vectors[i] - gt.vectors[i]).norm();
            match classify_point(m, thr) {
                Some(cat) => {
                    let slot = &mut self.threeway[cat as usize];
                    slot.0 += epe;
                    slot.1 += 1;
                }
                None => self.counts.background_dynamic += 1,
            }
            if let Some(class) = m.class {
                let b = speed_bucket_of(m.gt_speed, &self.config.speed_buckets)?;
                self.buckets.cells[b][class.index()].add(epe, m.gt_speed);
                let r = self.config.range_buckets.bucket_of(m.range_m);
                self.ranges[r].cells[b][class.index()].add(epe, m.gt_speed);
            }
        }
        Ok(())
    }

    pub fn add_semantic(&mut self, pred: &[CoarseClass], gt: &[CoarseClass]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(gt.len(), pred.len()));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.confusion.add(g, p);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch);
        }
        for (a, b) in self.threeway.iter_mut().zip(&other.threeway) {
            a.0 += b.0;
            a.1 += b.1;
        }
        self.buckets.merge(&other.buckets);
        for (a, b) in self.ranges.iter_mut().zip(&other.ranges) {
            a.merge(b);
        }
        self.confusion.merge(&other.confusion);
        self.counts.merge(&other.counts);
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        MetricReport::from_accumulator(self)
    }
}

/// Merges accumulators; fails on differing configurations.
pub fn aggregate(accs: &[Accumulator]) -> Result<Accumulator> {
    let (first, rest) = accs.split_first().ok_or_else(|| Error::EmptyInput("no reports to aggregate".into()))?;
    let mut out = first.clone();
    for a in rest {
        out.merge(a)?;
    }
    Ok(out)
}

/// Derived report of the merged accumulators.
pub fn aggregate_reports(accs: &[Accumulator]) -> Result<MetricReport> {
    Ok(aggregate(accs)?.report())
}

fn single(pred: &FlowField, gt: &FlowField, meta: &[PointMeta], config: MetricConfig) -> Result<Accumulator> {
    let mut acc = Accumulator::new(config)?;
    acc.add_pair(pred, gt, meta)?;
    Ok(acc)
}

/// Three-way EPE of one pair, in centimeters.
pub fn three_way_epe(pred: &FlowField, gt: &FlowField, meta: &[PointMeta], dynamic_threshold: f64) -> Result<ThreeWay> {
    let config = MetricConfig {
        speed_buckets: SpeedBuckets {
            dynamic_threshold,
            ..SpeedBuckets::default()
        },
        ..MetricConfig::default()
    };
    Ok(single(pred, gt, meta, config)?.report().threeway)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketResult {
    pub table: Vec<BucketEntry>,
    pub per_class_dynamic: BTreeMap<CoarseClass, f64>,
    pub dynamic_mean: Option<f64>,
}

pub fn bucket_normalized_epe(pred: &FlowField, gt: &FlowField, meta: &[PointMeta], buckets: &SpeedBuckets) -> Result<BucketResult> {
    let config = MetricConfig {
        speed_buckets: buckets.clone(),
        ..MetricConfig::default()
    };
    let r = single(pred, gt, meta, config)?.report();
    Ok(BucketResult {
        table: r.bucket_table,
        per_class_dynamic: r.per_class_dynamic,
        dynamic_mean: r.dynamic_mean,
    })
}

/// Dynamic mean within each range bucket.
pub fn range_bucketed(pred: &FlowField, gt: &FlowField, meta: &[PointMeta], rb: &RangeBuckets) -> Result<Vec<RangeEntry>> {
    let config = MetricConfig {
        range_buckets: rb.clone(),
        ..MetricConfig::default()
    };
    Ok(single(pred, gt, meta, config)?.report().range_table)
}

pub fn semantic_metrics(pred: &[CoarseClass], gt: &[CoarseClass]) -> Result<SemanticReport> {
    let mut c = Confusion::default();
    if pred.len() != gt.len() {
        return Err(Error::shape(gt.len(), pred.len()));
    }
    for (&g, &p) in gt.iter().zip(pred) {
        c.add(g, p);
    }
    SemanticReport::from_confusion(&c).ok_or_else(|| Error::EmptyInput("no labels to score".into()))
}

/// Histogram of foreground dynamic speeds with fixed-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityHistogram {
    pub bin_width: f64,
    pub dynamic_threshold: f64,
    /// Bin index `floor(speed / bin_width)` to count.
    pub counts: BTreeMap<u64, u64>,
}

impl VelocityHistogram {
    pub fn new(bin_width: f64, dynamic_threshold: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::InvalidConfig("histogram bin width must be positive".into()));
        }
        Ok(Self {
            bin_width,
            dynamic_threshold,
            counts: BTreeMap::new(),
        })
    }

    pub fn add(&mut self, meta: &[PointMeta]) {
        for m in meta {
            if m.class.is_some() && !m.is_ground && m.gt_speed >= self.dynamic_threshold {
                *self.counts.entry((m.gt_speed / self.bin_width).floor() as u64).or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, o: &VelocityHistogram) -> Result<()> {
        if self.bin_width != o.bin_width || self.dynamic_threshold != o.dynamic_threshold {
            return Err(Error::ConfigMismatch);
        }
        for (k, v) in &o.counts {
            *self.counts.entry(*k).or_default() += v;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Bin edges are rounded to 1e-9 so `k * width` prints without float noise.
    pub fn to_csv(&self) -> String {
        let edge = |k: u64| (k as f64 * self.bin_width * 1e9).round() / 1e9;
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (&k, &c) in &self.counts {
            out.push_str(&format!("{},{},{c}\n", edge(k), edge(k + 1)));
        }
        out
    }
}

pub fn velocity_histogram<'a>(
    metas: impl IntoIterator<Item = &'a [PointMeta]>,
    bin_width: f64,
    dynamic_threshold: f64,
) -> Result<VelocityHistogram> {
    let mut h = VelocityHistogram::new(bin_width, dynamic_threshold)?;
    for m in metas {
        h.add(m);
    }
    Ok(h)
}

//! `flowbench evaluate`: scores a predictor on every pair of a manifest.
//!
//! Pairs are evaluated in parallel into per-pair accumulators, which are
//! merged in pair order. The report therefore does not depend on `--jobs`.
//! With `--shards n` the pair list is cut into `n` contiguous shards that
//! are merged separately and then combined.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use flowbench_core::baselines::{cluster_icp_flow, ego_flow_baseline, load_predictions, IcpParams};
use flowbench_core::groundseg::{remove_ground, segment_ground, GroundParams};
use flowbench_core::io;
use flowbench_core::metrics::{aggregate, render_table, Accumulator, DynamicMeanMode, MetricConfig, MetricReport};
use flowbench_core::unify::{DatasetManifest, PairRef, TaxonomyMap};
use flowbench_core::{Error, FlowField, FramePair, LabeledPair};

use crate::{emit, load_config, load_taxonomy, JobsArg};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predictor {
    /// Zero flow.
    Ego,
    /// Cluster ICP on the ground-removed pair.
    Icp,
    /// Flow files under a prediction root.
    Dir(PathBuf),
}

impl FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ego" => Ok(Predictor::Ego),
            "icp" => Ok(Predictor::Icp),
            _ => match s.strip_prefix("dir:") {
                Some(p) if !p.is_empty() => Ok(Predictor::Dir(PathBuf::from(p))),
                _ => Err(format!("expected ego, icp or dir:PATH, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// ego | icp | dir:PATH
    #[arg(long)]
    pub pred: Predictor,
    /// Merge the pairs in this many contiguous shards.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Evaluate ground points too.
    #[arg(long)]
    pub keep_ground: bool,
    /// Only pairs of this dataset; repeatable.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    /// Metric config JSON (speed buckets, range buckets, dynamic mean mode).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Lower speed-bucket edges in m/frame, e.g. 0,0.5,1,2.
    #[arg(long, value_delimiter = ',')]
    pub speed_edges: Option<Vec<f64>>,
    /// Lower range-bucket edges in meters.
    #[arg(long, value_delimiter = ',')]
    pub range_edges: Option<Vec<f64>>,
    /// per-class | pooled
    #[arg(long)]
    pub dynamic_mean: Option<String>,
    #[arg(long)]
    pub ground_config: Option<PathBuf>,
    #[arg(long)]
    pub icp_config: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Text table; printed to stdout when omitted and --report is given.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub pred: Predictor,
    pub shards: usize,
    pub keep_ground: bool,
    pub datasets: Vec<String>,
    pub metric: MetricConfig,
    pub ground: GroundParams,
    pub icp: IcpParams,
    pub taxonomy: TaxonomyMap,
}

impl EvalOptions {
    pub fn new(pred: Predictor) -> Self {
        Self {
            pred,
            shards: 1,
            keep_ground: false,
            datasets: Vec::new(),
            metric: MetricConfig::default(),
            ground: GroundParams::default(),
            icp: IcpParams::default(),
            taxonomy: TaxonomyMap::default(),
        }
    }
}

/// ICP flow of the non-ground points, scattered back to the full first
/// sweep; ground points get zero flow.
pub fn icp_prediction(pair: &FramePair, ground_first: &[bool], ground: &GroundParams, icp: &IcpParams) -> Result<FlowField> {
    let keep: Vec<bool> = ground_first.iter().map(|g| !g).collect();
    let second = if pair.second.is_empty() { pair.second.clone() } else { remove_ground(&pair.second, ground)? };
    let reduced = FramePair::new(
        pair.first.filtered(&keep),
        second,
        pair.annotations_first.clone(),
        pair.annotations_second.clone(),
    )?;
    let mut out = FlowField::zeros(pair.first.len());
    let flow = match cluster_icp_flow(&reduced, icp) {
        Ok(f) => f,
        Err(Error::EmptyInput(_)) => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    let kept = keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i);
    for (i, (v, ok)) in kept.zip(flow.vectors.iter().zip(&flow.valid)) {
        out.vectors[i] = *v;
        out.valid[i] = *ok;
    }
    Ok(out)
}

/// Accumulator of a single pair.
pub fn evaluate_pair(manifest: &DatasetManifest, r: &PairRef, opts: &EvalOptions) -> Result<Accumulator> {
    let pair = manifest.load_pair(r, &opts.taxonomy)?;
    let mut lp = LabeledPair::from_pair(pair)?;
    let ground = if lp.pair.first.is_empty() {
        Vec::new()
    } else {
        segment_ground(&lp.pair.first, &opts.ground)?
    };
    if !opts.keep_ground {
        lp.set_ground_mask(&ground)?;
    }
    let pred = match &opts.pred {
        Predictor::Ego => ego_flow_baseline(&lp.pair),
        Predictor::Icp => icp_prediction(&lp.pair, &ground, &opts.ground, &opts.icp)?,
        Predictor::Dir(root) => {
            let path = io::prediction_path(root, &r.dataset_id, &r.sequence_id, r.first_frame);
            load_predictions(&path, &lp.pair).with_context(|| format!("prediction {}", path.display()))?
        }
    };
    let mut acc = Accumulator::new(opts.metric.clone())?;
    acc.add_pair(&pred, &lp.gt, &lp.meta)?;
    Ok(acc)
}

/// Pairs selected by `opts.datasets`, in manifest order.
pub fn selected_pairs(manifest: &DatasetManifest, datasets: &[String]) -> Result<Vec<PairRef>> {
    for id in datasets {
        if manifest.dataset(id).is_none() {
            return Err(Error::UnknownDataset(id.clone()).into());
        }
    }
    Ok(manifest
        .pairs()
        .into_iter()
        .filter(|p| datasets.is_empty() || datasets.contains(&p.dataset_id))
        .collect())
}

/// Merged accumulator over all selected pairs. Runs on the current rayon pool.
pub fn evaluate_accumulator(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<Accumulator> {
    if opts.shards == 0 {
        bail!("--shards must be at least 1");
    }
    let pairs = selected_pairs(manifest, &opts.datasets)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no frame pairs to evaluate".into()).into());
    }
    let per_pair: Vec<Accumulator> = pairs
        .par_iter()
        .map(|r| {
            evaluate_pair(manifest, r, opts)
                .with_context(|| format!("pair {}/{}/{}", r.dataset_id, r.sequence_id, r.first_frame))
        })
        .collect::<Result<_>>()?;
    let size = per_pair.len().div_ceil(opts.shards);
    let shards: Vec<Accumulator> = per_pair.chunks(size).map(aggregate).collect::<Result<_, _>>()?;
    Ok(aggregate(&shards)?)
}

pub fn evaluate(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<MetricReport> {
    Ok(evaluate_accumulator(manifest, opts)?.report())
}

fn options(a: &EvaluateArgs) -> Result<EvalOptions> {
    let mut metric: MetricConfig = load_config(a.config.as_deref())?;
    if let Some(e) = &a.speed_edges {
        metric.speed_buckets.edges = e.clone();
    }
    if let Some(e) = &a.range_edges {
        metric.range_buckets.edges = e.clone();
    }
    if let Some(m) = &a.dynamic_mean {
        metric.dynamic_mean_mode = match m.as_str() {
            "per-class" | "per_class" => DynamicMeanMode::PerClass,
            "pooled" => DynamicMeanMode::Pooled,
            _ => bail!("unknown dynamic mean mode `{m}`"),
        };
    }
    metric.validate()?;
    let icp: IcpParams = load_config(a.icp_config.as_deref())?;
    icp.validate()?;
    let ground: GroundParams = load_config(a.ground_config.as_deref())?;
    ground.validate()?;
    Ok(EvalOptions {
        pred: a.pred.clone(),
        shards: a.shards,
        keep_ground: a.keep_ground,
        datasets: a.datasets.clone(),
        metric,
        ground,
        icp,
        taxonomy: load_taxonomy(a.taxonomy.as_deref())?,
    })
}

pub fn run(a: &EvaluateArgs) -> Result<()> {
    let opts = options(a)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = a.jobs.pool()?.install(|| evaluate(&manifest, &opts))?;
    emit(a.report.as_ref(), &report.to_json())?;
    if a.table.is_some() || a.report.is_some() {
        emit(a.table.as_ref(), &render_table(&report))?;
    }
    Ok(())
}

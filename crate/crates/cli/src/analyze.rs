//! `flowbench analyze`: velocity histograms and range tables as CSV.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use rayon::prelude::*;

use flowbench_core::groundseg::{segment_ground, GroundParams};
use flowbench_core::io;
use flowbench_core::metrics::{MetricReport, SpeedBuckets, VelocityHistogram};
use flowbench_core::unify::{DatasetManifest, TaxonomyMap};
use flowbench_core::LabeledPair;

use crate::evaluate::selected_pairs;
use crate::{emit, load_config, load_taxonomy, JobsArg};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Histogram of dynamic ground-truth speeds over a manifest.
    VelocityHist(VelocityHistArgs),
    /// Range-bucketed dynamic mean of an evaluation report.
    RangeTable(RangeTableArgs),
}

#[derive(Debug, Args)]
pub struct VelocityHistArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bin width in m/frame.
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    /// Count ground points too.
    #[arg(long)]
    pub keep_ground: bool,
    /// Only pairs of this dataset; repeatable.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    #[arg(long)]
    pub ground_config: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct RangeTableArgs {
    /// Report JSON written by `evaluate`.
    #[arg(long)]
    pub report: PathBuf,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Speed histogram of the dynamic foreground points of every selected pair.
pub fn velocity_hist(
    manifest: &DatasetManifest,
    datasets: &[String],
    bin_width: f64,
    ground: Option<&GroundParams>,
    taxonomy: &TaxonomyMap,
) -> Result<VelocityHistogram> {
    let threshold = SpeedBuckets::default().dynamic_threshold;
    let parts: Vec<VelocityHistogram> = selected_pairs(manifest, datasets)?
        .par_iter()
        .map(|r| {
            let mut lp = LabeledPair::from_pair(manifest.load_pair(r, taxonomy)?)?;
            if let Some(g) = ground.filter(|_| !lp.pair.first.is_empty()) {
                lp.set_ground_mask(&segment_ground(&lp.pair.first, g)?)?;
            }
            let mut h = VelocityHistogram::new(bin_width, threshold)?;
            h.add(&lp.meta);
            Ok(h)
        })
        .collect::<Result<_>>()?;
    let mut out = VelocityHistogram::new(bin_width, threshold)?;
    for p in &parts {
        out.merge(p)?;
    }
    Ok(out)
}

pub fn range_csv(report: &MetricReport) -> String {
    let mut out = String::from("range_m,dynamic_mean,count\n");
    for e in &report.range_table {
        let dm = e.dynamic_mean.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("{},{dm},{}\n", e.label, e.count));
    }
    out
}

pub fn run(c: &AnalyzeCommand) -> Result<()> {
    match c {
        AnalyzeCommand::VelocityHist(a) => {
            let manifest = DatasetManifest::load(&a.manifest)?;
            let ground: Option<GroundParams> =
                if a.keep_ground { None } else { Some(load_config(a.ground_config.as_deref())?) };
            let taxonomy = load_taxonomy(a.taxonomy.as_deref())?;
            let h = a
                .jobs
                .pool()?
                .install(|| velocity_hist(&manifest, &a.datasets, a.bin_width, ground.as_ref(), &taxonomy))?;
            emit(a.out.as_ref(), &h.to_csv())
        }
        AnalyzeCommand::RangeTable(a) => {
            let report: MetricReport = io::read_json(&a.report)?;
            emit(a.out.as_ref(), &range_csv(&report))
        }
    }
}

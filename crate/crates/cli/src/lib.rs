//! Command-line front end: argument definitions, command dispatch and
//! machine-readable error reporting.

pub mod analyze;
pub mod augment;
pub mod dataset;
pub mod evaluate;
pub mod synth;
pub mod voxel;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use flowbench_core::io;
use flowbench_core::unify::TaxonomyMap;

#[derive(Debug, Parser)]
#[command(name = "flowbench", version, about = "Unified LiDAR scene-flow datasets, augmentation, sampling and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic scenes into a unified dataset.
    Synth(synth::SynthArgs),
    /// Write an augmented copy of a unified dataset.
    Augment(augment::AugmentArgs),
    /// Build dataset manifests.
    #[command(subcommand)]
    Manifest(dataset::ManifestCommand),
    /// Draw a weighted sample log from a manifest.
    Sample(dataset::SampleArgs),
    /// Score a flow predictor on every pair of a manifest.
    Evaluate(evaluate::EvaluateArgs),
    /// Dataset and report statistics as CSV.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Voxel grid utilities.
    #[command(subcommand)]
    Voxel(voxel::VoxelCommand),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Augment(_) => "augment",
            Command::Manifest(_) => "manifest",
            Command::Sample(_) => "sample",
            Command::Evaluate(_) => "evaluate",
            Command::Analyze(_) => "analyze",
            Command::Voxel(_) => "voxel",
        }
    }
}

/// Worker pool size shared by the parallel commands.
#[derive(Debug, Clone, Args)]
pub struct JobsArg {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "FLOWBENCH_JOBS")]
    pub jobs: Option<usize>,
}

impl JobsArg {
    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        let n = self
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        anyhow::ensure!(n > 0, "--jobs must be at least 1");
        Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Augment(a) => augment::run(&a),
        Command::Manifest(c) => dataset::run_manifest(&c),
        Command::Sample(a) => dataset::run_sample(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Analyze(c) => analyze::run(&c),
        Command::Voxel(c) => voxel::run(&c),
    }
}

/// `kind` of the first core error in the chain, `cli` otherwise.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<flowbench_core::Error>())
        .map_or("cli", flowbench_core::Error::kind)
}

/// One-line JSON error record for stderr.
pub fn error_json(command: &str, kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "command": command, "kind": kind, "message": message } }).to_string()
}

/// A JSON config file, or the type's default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(io::read_json(p).with_context(|| format!("loading config {}", p.display()))?),
        None => Ok(T::default()),
    }
}

pub fn load_taxonomy(path: Option<&Path>) -> Result<TaxonomyMap> {
    match path {
        Some(p) => Ok(TaxonomyMap::load(p).with_context(|| format!("loading taxonomy {}", p.display()))?),
        None => Ok(TaxonomyMap::default()),
    }
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

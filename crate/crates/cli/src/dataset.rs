//! `flowbench manifest` and `flowbench sample`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use flowbench_core::io;
use flowbench_core::sampler::{resolve_weights, sample_stream, WeightStrategy, DEFAULT_HEAVY_WEIGHT};
use flowbench_core::unify::{build_manifest, DatasetManifest};

#[derive(Debug, Subcommand)]
pub enum ManifestCommand {
    /// Scan dataset roots and write a manifest.
    Build(BuildArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Dataset root; repeat for several datasets.
    #[arg(long = "root", required = true)]
    pub roots: Vec<PathBuf>,
    /// Standardized frame rate, Hz.
    #[arg(long, default_value_t = 10.0)]
    pub target_hz: f64,
    /// uniform | proportional | heavy:<id>[:<w>] | explicit:<json or @file>
    #[arg(long, visible_alias = "weights", default_value = "uniform")]
    pub strategy: String,
    /// Output manifest JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Draws to emit.
    #[arg(long)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the manifest weights; same syntax as `manifest build`.
    #[arg(long, visible_alias = "weights")]
    pub strategy: Option<String>,
    /// JSON-lines output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `uniform`, `proportional`, `heavy:<id>[:<w>]` or `explicit:<json>`;
/// `explicit:@path` reads the weight map from a file.
pub fn parse_strategy(s: &str) -> Result<WeightStrategy> {
    let (head, rest) = s.split_once(':').unwrap_or((s, ""));
    Ok(match head {
        "uniform" if rest.is_empty() => WeightStrategy::Uniform,
        "proportional" if rest.is_empty() => WeightStrategy::Proportional,
        "heavy" if !rest.is_empty() => match rest.rsplit_once(':') {
            Some((id, w)) if w.parse::<f64>().is_ok() => WeightStrategy::Heavy {
                dataset_id: id.to_owned(),
                weight: w.parse()?,
            },
            _ => WeightStrategy::Heavy {
                dataset_id: rest.to_owned(),
                weight: DEFAULT_HEAVY_WEIGHT,
            },
        },
        "explicit" if !rest.is_empty() => {
            let text = match rest.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
                None => rest.to_owned(),
            };
            let map: BTreeMap<String, f64> = serde_json::from_str(&text).context("parsing explicit weights")?;
            WeightStrategy::Explicit(map)
        }
        _ => bail!("unknown weighting strategy `{s}`"),
    })
}

/// Builds a manifest with absolute roots and resolves `strategy` against
/// its pair counts.
pub fn build(roots: &[PathBuf], target_hz: f64, strategy: &WeightStrategy) -> Result<DatasetManifest> {
    let mut ids = Vec::new();
    let mut abs = Vec::new();
    for r in roots {
        ids.push(io::read_dataset_meta(r)?.dataset_id);
        abs.push(std::fs::canonicalize(r).with_context(|| format!("resolving {}", r.display()))?);
    }
    let uniform: BTreeMap<String, f64> = ids.iter().map(|id| (id.clone(), 1.0 / ids.len() as f64)).collect();
    let mut manifest = build_manifest(&abs, &uniform, target_hz)?;
    manifest.weights = resolve_weights(&manifest, strategy)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn run_manifest(c: &ManifestCommand) -> Result<()> {
    match c {
        ManifestCommand::Build(a) => {
            let manifest = build(&a.roots, a.target_hz, &parse_strategy(&a.strategy)?)?;
            manifest.save(&a.out)?;
            Ok(())
        }
    }
}

pub fn run_sample(a: &SampleArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let weights = match &a.strategy {
        Some(s) => resolve_weights(&manifest, &parse_strategy(s)?)?,
        None => manifest.weights.clone(),
    };
    let stream = sample_stream(&manifest, &weights, a.seed)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    };
    for rec in stream.take(a.count as usize) {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_parse() {
        assert_eq!(parse_strategy("uniform").unwrap(), WeightStrategy::Uniform);
        assert_eq!(parse_strategy("proportional").unwrap(), WeightStrategy::Proportional);
        assert_eq!(parse_strategy("heavy:av2").unwrap(), WeightStrategy::heavy("av2"));
        assert_eq!(
            parse_strategy("heavy:av2:0.7").unwrap(),
            WeightStrategy::Heavy {
                dataset_id: "av2".into(),
                weight: 0.7
            }
        );
        assert_eq!(
            parse_strategy(r#"explicit:{"a":0.6,"b":0.4}"#).unwrap(),
            WeightStrategy::Explicit(BTreeMap::from([("a".into(), 0.6), ("b".into(), 0.4)]))
        );
        assert!(parse_strategy("heavy").is_err());
        assert!(parse_strategy("weighted").is_err());
    }
}

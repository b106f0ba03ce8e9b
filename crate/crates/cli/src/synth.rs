//! `flowbench synth`: renders scenes into the unified on-disk format.

use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use flowbench_core::io::{self, DatasetMeta};
use flowbench_core::rng;
use flowbench_core::synth::{random_scene, SceneConfig, SensorConfig, SyntheticSequence};
use flowbench_core::unify::Sequence;

use crate::JobsArg;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis config, or a single scene config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; scene `i` uses a seed derived from (seed, i).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Every k-th frame is an annotated keyframe.
    #[arg(long)]
    pub keyframe_every: Option<usize>,
    /// Range noise standard deviation, meters.
    #[arg(long)]
    pub range_noise: Option<f64>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

fn default_dataset_id() -> String {
    "synth".to_owned()
}

fn one() -> usize {
    1
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomScenes {
    pub count: u64,
    pub frames: u32,
    #[serde(default = "ten")]
    pub hz: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    #[serde(default = "SensorConfig::default_64")]
    pub sensor: SensorConfig,
    #[serde(default = "one")]
    pub keyframe_every: usize,
    #[serde(default)]
    pub scenes: Vec<SceneConfig>,
    #[serde(default)]
    pub random: Option<RandomScenes>,
}

impl SynthConfig {
    /// Parses a synthesis config; a bare scene config becomes a one-scene dataset.
    pub fn from_value(v: Value) -> Result<Self> {
        if v.get("duration_frames").is_some() {
            let scene: SceneConfig = serde_json::from_value(v)?;
            return Ok(Self {
                dataset_id: scene.dataset_id.clone(),
                sensor: SensorConfig::default_64(),
                keyframe_every: 1,
                scenes: vec![scene],
                random: None,
            });
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Scene list after applying the base seed.
    pub fn scene_list(&self, seed: Option<u64>) -> Vec<SceneConfig> {
        let mut scenes: Vec<SceneConfig> = self
            .scenes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut s = s.clone();
                if let Some(seed) = seed {
                    s.seed = rng::derive_seed(seed, &[i as u64]);
                }
                s
            })
            .collect();
        if let Some(r) = &self.random {
            let base = seed.unwrap_or(r.seed);
            let offset = scenes.len() as u64;
            scenes.extend((0..r.count).map(|i| random_scene(rng::derive_seed(base, &[offset + i]), r.frames, r.hz)));
        }
        for s in &mut scenes {
            s.dataset_id = self.dataset_id.clone();
        }
        scenes
    }
}

/// Renders every scene; sequence `i` is named `seq{i:03}`.
pub fn render_all(cfg: &SynthConfig, seed: Option<u64>) -> Result<Vec<Sequence>> {
    let scenes = cfg.scene_list(seed);
    ensure!(!scenes.is_empty(), "synthesis config has no scenes");
    ensure!(cfg.keyframe_every >= 1, "keyframe_every must be at least 1");
    let hz = scenes[0].frame_hz;
    ensure!(scenes.iter().all(|s| s.frame_hz == hz), "all scenes of a dataset must share frame_hz");
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seq = SyntheticSequence::render(s, &cfg.sensor).with_context(|| format!("rendering scene {i}"))?;
            Ok(seq.to_sequence(&format!("seq{i:03}"), cfg.keyframe_every))
        })
        .collect()
}

pub fn run(a: &SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = SynthConfig::from_value(serde_json::from_str(&text).context("parsing synthesis config")?)?;
    if let Some(k) = a.keyframe_every {
        cfg.keyframe_every = k;
    }
    if let Some(sigma) = a.range_noise {
        cfg.sensor.range_noise_sigma = sigma;
    }
    let sequences = a.jobs.pool()?.install(|| render_all(&cfg, a.seed))?;
    let hz = sequences[0].hz;
    let meta = DatasetMeta {
        dataset_id: cfg.dataset_id.clone(),
        native_hz: hz,
        annotation_hz: hz / cfg.keyframe_every as f64,
    };
    io::write_dataset(&a.out, &meta, &sequences).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

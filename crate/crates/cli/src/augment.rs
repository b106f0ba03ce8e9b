//! `flowbench augment`: writes an augmented copy of a unified dataset.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use flowbench_core::augment::{augment_pair, pair_key, velocity_resample, AugmentConfig, Stages};
use flowbench_core::groundseg::{remove_ground_pair, GroundParams};
use flowbench_core::io::{self, DatasetMeta};
use flowbench_core::unify::{pair_annotated_frames, Sequence, SequenceFrame, TaxonomyMap};
use flowbench_core::LabeledPair;

use crate::{load_config, load_taxonomy, JobsArg};

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input dataset root.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Raise the apparent sensor height by a random offset per pair
    #[arg(long)]
    pub height_jitter: bool,
    /// Drop every other beam with the configured probability
    #[arg(long)]
    pub beam_dropout: bool,
    /// Keep even beams only.
    #[arg(long)]
    pub sparsify: bool,
    /// Downsample by k and name the output `<dataset>-fast<k>`.
    #[arg(long)]
    pub velocity_factor: Option<usize>,
    /// Overrides `seed` of the augmentation config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Remove ground from both sweeps before augmenting.
    #[arg(long)]
    pub ground_remove: bool,
    /// Augmentation config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground segmentation config JSON.
    #[arg(long)]
    pub ground_config: Option<PathBuf>,
    /// Raw-to-coarse class map JSON.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

pub struct Plan {
    pub cfg: AugmentConfig,
    pub stages: Stages,
    pub ground: Option<GroundParams>,
    pub velocity_factor: Option<usize>,
}

impl Plan {
    fn per_pair(&self) -> bool {
        self.stages.height_jitter || self.stages.beam_dropout || self.stages.sparsify || self.ground.is_some()
    }
}

/// Augments every pair of `seq` and returns one two-frame sequence per
/// pair, named `<sequence>_<first frame>`.
pub fn augment_sequence(seq: &Sequence, plan: &Plan) -> Result<Vec<Sequence>> {
    let pairs = pair_annotated_frames(seq, &seq.annotated_frame_indices())?;
    pairs
        .into_par_iter()
        .map(|pair| {
            let first = pair.first.frame_index;
            let pair = match &plan.ground {
                Some(g) => remove_ground_pair(&pair, g)?,
                None => pair,
            };
            let lp = LabeledPair::from_pair(pair)?;
            let key = pair_key(&seq.dataset_id, &seq.sequence_id, first);
            let out = augment_pair(&lp, &plan.cfg, plan.stages, key)?.pair;
            Ok(Sequence {
                dataset_id: seq.dataset_id.clone(),
                sequence_id: format!("{}_{first:06}", seq.sequence_id),
                hz: seq.hz,
                frames: vec![
                    SequenceFrame {
                        cloud: out.first,
                        annotations: out.annotations_first,
                        keyframe: true,
                    },
                    SequenceFrame {
                        cloud: out.second,
                        annotations: out.annotations_second,
                        keyframe: false,
                    },
                ],
            })
        })
        .collect()
}

/// Reads `input`, applies `plan` and writes the result under `out`.
pub fn augment_dataset(input: &Path, out: &Path, plan: &Plan, taxonomy: &TaxonomyMap) -> Result<DatasetMeta> {
    let meta = io::read_dataset_meta(input)?;
    let mut out_meta = meta.clone();
    if let Some(k) = plan.velocity_factor {
        out_meta.dataset_id = format!("{}-fast{k}", meta.dataset_id);
        out_meta.native_hz = meta.native_hz / k as f64;
        out_meta.annotation_hz = meta.annotation_hz.min(out_meta.native_hz);
    }
    io::write_json(&io::dataset_meta_path(out), &out_meta)?;
    for id in io::list_sequences(input)? {
        let mut seq = io::read_sequence(input, &meta, &id, taxonomy).with_context(|| format!("reading sequence {id}"))?;
        if let Some(k) = plan.velocity_factor {
            seq = velocity_resample(&seq, k)?;
        }
        if plan.per_pair() {
            for s in augment_sequence(&seq, plan).with_context(|| format!("augmenting sequence {id}"))? {
                io::write_sequence(out, &s)?;
            }
        } else {
            io::write_sequence(out, &seq)?;
        }
    }
    Ok(out_meta)
}

pub fn run(a: &AugmentArgs) -> Result<()> {
    let mut cfg: AugmentConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let plan = Plan {
        cfg,
        stages: Stages {
            height_jitter: a.height_jitter,
            beam_dropout: a.beam_dropout,
            sparsify: a.sparsify,
        },
        ground: if a.ground_remove { Some(load_config(a.ground_config.as_deref())?) } else { None },
        velocity_factor: a.velocity_factor,
    };
    let taxonomy = load_taxonomy(a.taxonomy.as_deref())?;
    a.jobs.pool()?.install(|| augment_dataset(&a.input, &a.out, &plan, &taxonomy))?;
    Ok(())
}

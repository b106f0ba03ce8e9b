//! Training-time augmentations: height jitter, beam dropout, sparsification
//! and velocity augmentation by frame-rate downsampling.
//!
//! Every stage draws once per pair and applies the same draw to both sweeps.
//! [`augment_pair`] gives each stage its own random stream derived from the
//! seed and the pair identity, so stage order does not change the result.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::LabeledPair;
use crate::pose::Pose;
use crate::rng;
use crate::types::{filter_meta, PointCloud};
use crate::unify::Sequence;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeightSign {
    PositiveOnly,
    Symmetric,
}

/// Which beam parity survives a dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BeamParity {
    Even,
    Odd,
    RandomPerSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub height_jitter_prob: f64,
    /// Meters.
    pub height_jitter_range: [f64; 2],
    pub height_jitter_sign: HeightSign,
    pub beam_dropout_prob: f64,
    pub beam_dropout_parity: BeamParity,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            height_jitter_prob: 0.8,
            height_jitter_range: [0.5, 2.0],
            height_jitter_sign: HeightSign::PositiveOnly,
            beam_dropout_prob: 0.35,
            beam_dropout_parity: BeamParity::RandomPerSweep,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.height_jitter_prob) || !prob_ok(self.beam_dropout_prob) {
            return Err(Error::InvalidConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        let [lo, hi] = self.height_jitter_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig("height jitter range must satisfy lo <= hi".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit identity of a pair, used to derive its random streams.
pub fn pair_key(dataset_id: &str, sequence_id: &str, first_frame: u32) -> u64 {
    rng::derive_seed(rng::tag(dataset_id), &[rng::tag(sequence_id), u64::from(first_frame)])
}

/// One height-jitter draw: `None` when the augmentation is skipped.
/// Always consumes three values so the stream position is draw-independent.
pub fn draw_height_offset<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Option<f64> {
    let apply = rng.random::<f64>() < cfg.height_jitter_prob;
    let [lo, hi] = cfg.height_jitter_range;
    let magnitude = lo + (hi - lo) * rng.random::<f64>();
    let negative = rng.random::<bool>();
    let sign = match cfg.height_jitter_sign {
        HeightSign::Symmetric if negative => -1.0,
        _ => 1.0,
    };
    apply.then_some(sign * magnitude)
}

fn raise(cloud: &mut PointCloud, offset: f64) {
    for p in &mut cloud.points {
        p.position.z += offset;
    }
    let lower = Pose::from_translation(Vector3::new(0.0, 0.0, -offset));
    cloud.ego_pose = cloud.ego_pose.compose(&lower);
}

/// Raises every point of both sweeps by `offset` meters. The ego poses are
/// lowered by the same amount, so world positions, annotations and flow are
/// untouched.
pub fn apply_height_offset(lp: &LabeledPair, offset: f64) -> LabeledPair {
    let mut out = lp.clone();
    raise(&mut out.pair.first, offset);
    raise(&mut out.pair.second, offset);
    out
}

pub fn height_jitter<R: Rng + ?Sized>(lp: &LabeledPair, cfg: &AugmentConfig, rng: &mut R) -> LabeledPair {
    match draw_height_offset(cfg, rng) {
        Some(off) => apply_height_offset(lp, off),
        None => lp.clone(),
    }
}

fn keep_parity(cloud: &PointCloud, parity: u16) -> (PointCloud, Vec<bool>) {
    let mask: Vec<bool> = cloud.points.iter().map(|p| p.beam_id % 2 == parity).collect();
    let mut out = cloud.filtered(&mask);
    for p in &mut out.points {
        p.beam_id /= 2;
    }
    out.beam_count = (cloud.beam_count + 1 - parity) / 2;
    (out, mask)
}

/// Keeps only the beams of one parity in both sweeps and re-indexes them
/// densely (`beam / 2`). Flow and metadata follow the first sweep's mask.
pub fn drop_beams(lp: &LabeledPair, keep_odd: bool) -> LabeledPair {
    let parity = u16::from(keep_odd);
    let (first, mask) = keep_parity(&lp.pair.first, parity);
    let (second, _) = keep_parity(&lp.pair.second, parity);
    let mut out = lp.clone();
    out.pair.first = first;
    out.pair.second = second;
    out.gt = lp.gt.filtered(&mask);
    out.meta = filter_meta(&lp.meta, &mask);
    out
}

pub fn beam_dropout<R: Rng + ?Sized>(lp: &LabeledPair, cfg: &AugmentConfig, rng: &mut R) -> LabeledPair {
    let apply = rng.random::<f64>() < cfg.beam_dropout_prob;
    let coin = rng.random::<bool>();
    if !apply {
        return lp.clone();
    }
    let keep_odd = match cfg.beam_dropout_parity {
        BeamParity::Even => false,
        BeamParity::Odd => true,
        BeamParity::RandomPerSweep => coin,
    };
    drop_beams(lp, keep_odd)
}

/// Deterministic beam halving: even beams kept.
pub fn sparsify(lp: &LabeledPair) -> LabeledPair {
    drop_beams(lp, false)
}

pub fn sparsify_cloud(cloud: &PointCloud) -> PointCloud {
    keep_parity(cloud, 0).0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stages {
    pub height_jitter: bool,
    pub beam_dropout: bool,
    pub sparsify: bool,
}

/// Applies the enabled stages to one pair. Each stage uses its own stream of
/// `(cfg.seed, pair_key, stage)`, so enabling one stage never changes the
/// draws of another.
pub fn augment_pair(lp: &LabeledPair, cfg: &AugmentConfig, stages: Stages, pair_key: u64) -> Result<LabeledPair> {
    cfg.validate()?;
    let mut out = lp.clone();
    if stages.height_jitter {
        let mut r = rng::stream(cfg.seed, &[pair_key, rng::tag("height_jitter")]);
        out = height_jitter(&out, cfg, &mut r);
    }
    if stages.beam_dropout {
        let mut r = rng::stream(cfg.seed, &[pair_key, rng::tag("beam_dropout")]);
        out = beam_dropout(&out, cfg, &mut r);
    }
    if stages.sparsify {
        out = sparsify(&out);
    }
    Ok(out)
}

/// Downsamples by `factor` and tags the result `<dataset>-fast<factor>`.
/// Object displacement per pair grows by `factor`.
pub fn velocity_resample(sequence: &Sequence, factor: usize) -> Result<Sequence> {
    if factor < 2 {
        return Err(Error::InvalidConfig(format!("velocity factor must be at least 2, got {factor}")));
    }
    let mut out = sequence.resample(sequence.hz / factor as f64)?;
    out.relabel(&format!("{}-fast{factor}", sequence.dataset_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_scene, SensorConfig, SyntheticSequence};
    use crate::types::FramePair;
    use crate::unify::pair_annotated_frames;

    fn labeled(seed: u64, beams: u16) -> LabeledPair {
        let sensor = SensorConfig {
            beam_count: beams,
            azimuth_steps: 360,
            ..SensorConfig::default_64()
        };
        let seq = SyntheticSequence::render(&random_scene(seed, 2, 10.0), &sensor).unwrap();
        let pair = FramePair::new(
            seq.sweeps[0].cloud.clone(),
            seq.sweeps[1].cloud.clone(),
            seq.scene.annotations[0].clone(),
            seq.scene.annotations[1].clone(),
        )
        .unwrap();
        LabeledPair::from_pair(pair).unwrap()
    }

    fn world(c: &PointCloud) -> Vec<Vector3<f64>> {
        c.points.iter().map(|p| c.ego_pose.transform_point(&p.position)).collect()
    }

    #[test]
    fn zero_probability_is_identity() {
        let lp = labeled(1, 32);
        let cfg = AugmentConfig {
            height_jitter_prob: 0.0,
            beam_dropout_prob: 0.0,
            ..AugmentConfig::default()
        };
        let stages = Stages {
            height_jitter: true,
            beam_dropout: true,
            sparsify: false,
        };
        assert_eq!(augment_pair(&lp, &cfg, stages, 7).unwrap(), lp);
    }

    #[test]
    fn forced_offset_raises_points_and_keeps_flow() {
        let lp = labeled(2, 32);
        let out = apply_height_offset(&lp, 1.0);
        for (a, b) in lp.pair.first.points.iter().zip(&out.pair.first.points) {
            assert_eq!(b.position.z, a.position.z + 1.0);
        }
        assert_eq!(out.gt, lp.gt);
        let relabeled = LabeledPair::from_pair(out.pair.clone()).unwrap();
        for (a, b) in relabeled.gt.vectors.iter().zip(&lp.gt.vectors) {
            assert!((a - b).amax() < 1e-12);
        }
        for (a, b) in world(&out.pair.second).iter().zip(world(&lp.pair.second)) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn dropout_halves_beams_and_keeps_alignment() {
        let lp = labeled(3, 64);
        let out = drop_beams(&lp, true);
        assert_eq!(out.pair.first.beam_count, 32);
        assert!(out.pair.first.distinct_beams() <= 32);
        assert_eq!(out.gt.len(), out.pair.first.len());
        assert_eq!(out.meta.len(), out.pair.first.len());
        out.pair.first.validate().unwrap();
    }

    #[test]
    fn sparsify_twice_keeps_every_fourth_beam() {
        let lp = labeled(4, 32);
        let twice = sparsify(&sparsify(&lp));
        let expected: Vec<_> = lp
            .pair
            .first
            .points
            .iter()
            .filter(|p| p.beam_id % 4 == 0)
            .map(|p| (p.position, p.beam_id / 4))
            .collect();
        let got: Vec<_> = twice.pair.first.points.iter().map(|p| (p.position, p.beam_id)).collect();
        assert_eq!(got, expected);
        assert_eq!(twice.pair.first.beam_count, 8);
    }

    #[test]
    fn odd_beam_count_keeps_the_parity_class() {
        let mut c = PointCloud::new("d", 0, 0.0, 5);
        assert_eq!(keep_parity(&c, 0).0.beam_count, 3);
        assert_eq!(keep_parity(&c, 1).0.beam_count, 2);
        c.beam_count = 4;
        assert_eq!(keep_parity(&c, 0).0.beam_count, 2);
    }

    #[test]
    fn stages_commute_and_preserve_labels() {
        let lp = labeled(5, 32);
        let cfg = AugmentConfig {
            height_jitter_prob: 1.0,
            beam_dropout_prob: 1.0,
            ..AugmentConfig::default()
        };
        let key = pair_key("synth", "s0", 0);
        let mut hr = rng::stream(cfg.seed, &[key, rng::tag("height_jitter")]);
        let mut br = rng::stream(cfg.seed, &[key, rng::tag("beam_dropout")]);
        let hb = beam_dropout(&height_jitter(&lp, &cfg, &mut hr.clone()), &cfg, &mut br.clone());
        let bh = height_jitter(&beam_dropout(&lp, &cfg, &mut br), &cfg, &mut hr);
        assert_eq!(hb, bh);
        let both = Stages {
            height_jitter: true,
            beam_dropout: true,
            sparsify: false,
        };
        assert_eq!(augment_pair(&lp, &cfg, both, key).unwrap(), hb);
        for m in &hb.meta {
            assert!(lp.meta.iter().any(|o| o.class == m.class && o.instance_id == m.instance_id));
        }
    }

    #[test]
    fn velocity_resample_rejects_unit_factor() {
        let sensor = SensorConfig {
            azimuth_steps: 90,
            ..SensorConfig::default_32()
        };
        let seq = SyntheticSequence::render(&random_scene(6, 5, 10.0), &sensor).unwrap().to_sequence("s", 1);
        assert!(velocity_resample(&seq, 1).is_err());
        let fast = velocity_resample(&seq, 2).unwrap();
        assert_eq!(fast.dataset_id, "synth-fast2");
        assert_eq!(fast.frames.len(), 3);
        let pairs = pair_annotated_frames(&fast, &fast.annotated_frame_indices()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!((pairs[0].dt() - 0.2).abs() < 1e-12);
    }
}

//! Synthetic fixtures shared by the integration and acceptance suites.

use flowbench_core::baselines::{cluster_icp_flow, IcpParams};
use flowbench_core::groundseg::{remove_ground_pair, segment_ground, GroundParams};
use flowbench_core::metrics::{Accumulator, MetricConfig};
use flowbench_core::synth::{generate_scene, simulate_lidar, EgoTrajectory, GroundSpec, HitSource, ObjectSpec, SceneConfig, SensorConfig, SyntheticSequence};
use flowbench_core::unify::{pair_annotated_frames, Sequence};
use flowbench_core::LabeledPair;

pub fn object(class: &str, size: [f64; 3], position: [f64; 2], yaw: f64, speed: f64) -> ObjectSpec {
    ObjectSpec {
        raw_class: class.into(),
        size,
        position,
        yaw,
        speed,
        yaw_rate: 0.0,
        ground_clearance: 0.25,
    }
}

pub fn scene(seed: u64, frames: u32, slope_deg: f64, ego_speed: f64, objects: Vec<ObjectSpec>) -> SceneConfig {
    SceneConfig {
        seed,
        dataset_id: "synth".into(),
        duration_frames: frames,
        frame_hz: 10.0,
        ego: EgoTrajectory { speed: ego_speed, yaw_rate: 0.0 },
        objects,
        ground: GroundSpec { slope_deg },
        extent: 150.0,
    }
}

pub fn sensor(noise: f64) -> SensorConfig {
    SensorConfig {
        range_noise_sigma: noise,
        ..SensorConfig::default_64()
    }
}

/// Flat and 5-degree planes carrying boxes of several sizes.
pub fn ground_suite() -> Vec<(&'static str, SceneConfig)> {
    let boxes = || {
        vec![
            object("car", [4.5, 1.9, 1.6], [12.0, 4.0], 0.3, 0.0),
            object("truck", [8.0, 2.5, 3.2], [-20.0, -9.0], 1.2, 0.0),
            object("pedestrian", [0.7, 0.7, 1.8], [6.0, -5.0], 0.0, 0.0),
            object("bicycle", [1.8, 0.7, 1.6], [-7.0, 8.0], 2.0, 0.0),
        ]
    };
    vec![
        ("flat", scene(0, 1, 0.0, 0.0, boxes())),
        ("flat-far", scene(1, 1, 0.0, 0.0, vec![object("car", [4.5, 1.9, 1.6], [40.0, 10.0], 0.0, 0.0), object("truck", [8.0, 2.5, 3.2], [-55.0, 20.0], 0.5, 0.0)])),
        ("slope5", scene(2, 1, 5.0, 0.0, boxes())),
        ("slope5-far", scene(3, 1, 5.0, 0.0, vec![object("car", [4.5, 1.9, 1.6], [30.0, -8.0], 0.2, 0.0)])),
    ]
}

/// Ground recall and object precision of the segmentation of frame 0,
/// scored against simulator provenance.
pub fn ground_scores(cfg: &SceneConfig) -> (f64, f64) {
    let scene = generate_scene(cfg).unwrap();
    let sweep = simulate_lidar(&scene.states[0], &sensor(0.0), cfg.seed).unwrap();
    let mask = segment_ground(&sweep.cloud, &GroundParams::default()).unwrap();
    let (mut ground, mut ground_hit, mut kept, mut kept_object) = (0usize, 0usize, 0usize, 0usize);
    for (&m, src) in mask.iter().zip(&sweep.provenance) {
        let is_ground = *src == HitSource::Ground;
        ground += usize::from(is_ground);
        ground_hit += usize::from(is_ground && m);
        kept += usize::from(!m);
        kept_object += usize::from(!m && !is_ground);
    }
    let precision = if kept == 0 { 1.0 } else { kept_object as f64 / kept as f64 };
    (ground_hit as f64 / ground as f64, precision)
}

/// A 2 m cube moving at 8 m/s past a 5 m/s ego vehicle.
pub fn icp_scene() -> SceneConfig {
    scene(1, 2, 0.0, 5.0, vec![object("car", [2.0; 3], [6.0, -8.0], 1.0, 8.0)])
}

pub fn labeled_pairs(seq: &Sequence, ground: bool) -> Vec<LabeledPair> {
    pair_annotated_frames(seq, &seq.annotated_frame_indices())
        .unwrap()
        .into_iter()
        .map(|p| {
            let p = if ground { remove_ground_pair(&p, &GroundParams::default()).unwrap() } else { p };
            LabeledPair::from_pair(p).unwrap()
        })
        .collect()
}

pub fn render(cfg: &SceneConfig, sensor: &SensorConfig) -> Sequence {
    SyntheticSequence::render(cfg, sensor).unwrap().to_sequence("s", 1)
}

/// Dynamic Mean of the ICP baseline over ground-removed pairs.
pub fn icp_dynamic_mean<'a>(pairs: impl IntoIterator<Item = &'a LabeledPair>) -> Option<f64> {
    let mut acc = Accumulator::new(MetricConfig::default()).unwrap();
    for lp in pairs {
        let pred = cluster_icp_flow(&lp.pair, &IcpParams::default()).unwrap();
        acc.add_pair(&pred, &lp.gt, &lp.meta).unwrap();
    }
    acc.report().dynamic_mean
}

/// Random traffic scenes used for the frame-rate ablation.
pub fn framerate_suite() -> Vec<Sequence> {
    (0..6)
        .map(|seed| render(&flowbench_core::synth::random_scene(seed, 6, 10.0), &sensor(0.0)))
        .collect()
}

/// ICP Dynamic Mean over the whole suite after resampling to `hz`.
pub fn framerate_dynamic_mean(suite: &[Sequence], hz: f64) -> Option<f64> {
    let pairs: Vec<LabeledPair> = suite
        .iter()
        .flat_map(|s| labeled_pairs(&s.resample(hz).unwrap(), true))
        .collect();
    icp_dynamic_mean(&pairs)
}

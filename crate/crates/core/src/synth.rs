//! Deterministic synthetic scenes and a ray-casting LiDAR simulator.
//!
//! Scenes are an (optionally sloped) ground plane plus yaw-oriented boxes
//! moving with constant speed and yaw rate. The simulator casts
//! `beam_count x azimuth_steps` rays against these analytic primitives, so
//! every return has an exact provenance and an exact motion. That makes the
//! generator a source of oracles for flow, ground segmentation and metrics.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::pose::Pose;
use crate::rng;
use crate::types::{CoarseClass, FlowField, ObjectAnnotation, Point, PointCloud};
use crate::unify::{Sequence, SequenceFrame, TaxonomyMap};
use crate::{Error, Result};

/// Annotated boxes are this much larger than the simulated solid on every
/// side, so surface returns stay inside their box after f32 storage.
pub const ANNOTATION_MARGIN: f64 = 1e-4;

fn default_dataset_id() -> String {
    "synth".to_owned()
}

fn default_clearance() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoTrajectory {
    /// m/s along the vehicle heading.
    pub speed: f64,
    /// rad/s.
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub raw_class: String,
    /// Length, width, height in meters.
    pub size: [f64; 3],
    /// Initial world x, y of the box center.
    pub position: [f64; 2],
    /// Initial heading, radians.
    #[serde(default)]
    pub yaw: f64,
    /// m/s along the heading.
    #[serde(default)]
    pub speed: f64,
    /// rad/s.
    #[serde(default)]
    pub yaw_rate: f64,
    /// Gap between the ground and the bottom of the box, meters.
    #[serde(default = "default_clearance")]
    pub ground_clearance: f64,
}

/// Ground plane `z = tan(slope) * x` in the world frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    #[serde(default)]
    pub slope_deg: f64,
}

impl GroundSpec {
    pub fn height_at(&self, x: f64) -> f64 {
        self.slope_deg.to_radians().tan() * x
    }

    fn normal(&self) -> Vector3<f64> {
        let s = self.slope_deg.to_radians();
        Vector3::new(-s.sin(), 0.0, s.cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    pub duration_frames: u32,
    pub frame_hz: f64,
    #[serde(default)]
    pub ego: EgoTrajectory,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub ground: GroundSpec,
    /// Half-width of the square ground patch around the world origin, meters.
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub beam_count: u16,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_steps: u32,
    pub mount_height: f64,
    pub max_range: f64,
    #[serde(default)]
    pub range_noise_sigma: f64,
}

impl SensorConfig {
    /// A 64-beam sensor with a -25..+3 degree vertical field of view.
    pub fn default_64() -> Self {
        Self {
            beam_count: 64,
            elevation_min_deg: -25.0,
            elevation_max_deg: 3.0,
            azimuth_steps: 1800,
            mount_height: 1.8,
            max_range: 120.0,
            range_noise_sigma: 0.0,
        }
    }

    pub fn default_32() -> Self {
        Self {
            beam_count: 32,
            ..Self::default_64()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_count == 0 {
            return Err(Error::InvalidConfig("beam_count must be at least 1".into()));
        }
        if !(self.elevation_min_deg < self.elevation_max_deg) {
            return Err(Error::InvalidConfig("elevation_min must be below elevation_max".into()));
        }
        if self.azimuth_steps == 0 || !(self.max_range > 0.0) || !(self.range_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("invalid azimuth_steps, max_range or noise".into()));
        }
        Ok(())
    }

    pub fn beam_elevation_deg(&self, beam: u16) -> f64 {
        if self.beam_count == 1 {
            return self.elevation_min_deg;
        }
        let span = self.elevation_max_deg - self.elevation_min_deg;
        self.elevation_min_deg + span * f64::from(beam) / f64::from(self.beam_count - 1)
    }

    /// Offset by half a step so no ray lies on an integer sector boundary.
    pub fn azimuth_rad(&self, step: u32) -> f64 {
        TAU * (f64::from(step) + 0.5) / f64::from(self.azimuth_steps)
    }

    pub fn mount(&self) -> Pose {
        Pose::from_translation(Vector3::new(0.0, 0.0, self.mount_height))
    }
}

/// Kinematic state of one object at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub instance_id: String,
    pub raw_class: String,
    pub coarse_class: CoarseClass,
    /// Solid box size (the annotation adds [`ANNOTATION_MARGIN`]).
    pub size: Vector3<f64>,
    pub center: Vector3<f64>,
    pub yaw: f64,
    /// m/s.
    pub speed: f64,
    /// rad/s.
    pub yaw_rate: f64,
}

impl ObjectState {
    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.yaw, self.center)
    }

    pub fn annotation(&self, frame_index: u32) -> ObjectAnnotation {
        ObjectAnnotation {
            instance_id: self.instance_id.clone(),
            raw_class: self.raw_class.clone(),
            coarse_class: Some(self.coarse_class),
            box_center: self.center,
            box_size: self.size + Vector3::repeat(2.0 * ANNOTATION_MARGIN),
            box_yaw: self.yaw,
            frame_index,
        }
    }
}

/// Planar displacement after `dt` seconds of constant speed and yaw rate.
fn arc_displacement(yaw: f64, speed: f64, yaw_rate: f64, dt: f64) -> (f64, f64) {
    if yaw_rate.abs() < 1e-12 {
        (speed * dt * yaw.cos(), speed * dt * yaw.sin())
    } else {
        let r = speed / yaw_rate;
        let yaw1 = yaw + yaw_rate * dt;
        (r * (yaw1.sin() - yaw.sin()), r * (yaw.cos() - yaw1.cos()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub dataset_id: String,
    pub frame_index: u32,
    pub timestamp: f64,
    pub frame_hz: f64,
    /// Vehicle (ground-level) pose in the world.
    pub ego_pose: Pose,
    pub objects: Vec<ObjectState>,
    pub ground: GroundSpec,
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub states: Vec<WorldState>,
    pub annotations: Vec<Vec<ObjectAnnotation>>,
}

fn footprint_corners(center: [f64; 2], size: [f64; 3], yaw: f64) -> [[f64; 2]; 4] {
    let (s, c) = yaw.sin_cos();
    let (hl, hw) = (size[0] / 2.0, size[1] / 2.0);
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(dx, dy)| [center[0] + c * dx - s * dy, center[1] + s * dx + c * dy])
}

/// Separating-axis test for two yaw-oriented rectangles.
fn footprints_overlap(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> bool {
    let axes = |q: &[[f64; 2]; 4]| [[q[1][0] - q[0][0], q[1][1] - q[0][1]], [q[3][0] - q[0][0], q[3][1] - q[0][1]]];
    for axis in axes(a).into_iter().chain(axes(b)) {
        let proj = |q: &[[f64; 2]; 4]| {
            q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d = p[0] * axis[0] + p[1] * axis[1];
                (lo.min(d), hi.max(d))
            })
        };
        let (a0, a1) = proj(a);
        let (b0, b1) = proj(b);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_hz > 0.0) || !(self.extent > 0.0) || self.duration_frames == 0 {
            return Err(Error::InvalidScene("frame_hz, extent and duration_frames must be positive".into()));
        }
        if !(self.ego.speed >= 0.0) {
            return Err(Error::InvalidScene("ego speed must be non-negative".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.speed >= 0.0) || o.size.iter().any(|s| !(*s > 0.0)) || !(o.ground_clearance >= 0.0) {
                return Err(Error::InvalidScene(format!("object {i} has invalid speed, size or clearance")));
            }
            if o.position.iter().any(|p| p.abs() > self.extent) {
                return Err(Error::InvalidScene(format!("object {i} starts outside the scene extent")));
            }
        }
        let corners: Vec<_> = self
            .objects
            .iter()
            .map(|o| footprint_corners(o.position, o.size, o.yaw))
            .collect();
        for i in 0..corners.len() {
            for j in i + 1..corners.len() {
                if footprints_overlap(&corners[i], &corners[j]) {
                    return Err(Error::InvalidScene(format!("objects {i} and {j} overlap initially")));
                }
            }
        }
        Ok(())
    }
}

/// Integrates ego and object motion in closed form and emits per-frame
/// world states and box annotations.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneSequence> {
    cfg.validate()?;
    let taxonomy = TaxonomyMap::default();
    let mut initial = Vec::with_capacity(cfg.objects.len());
    for (i, o) in cfg.objects.iter().enumerate() {
        let coarse = taxonomy.map(&cfg.dataset_id, &o.raw_class)?;
        let base = footprint_corners(o.position, o.size, o.yaw)
            .iter()
            .map(|c| cfg.ground.height_at(c[0]))
            .fold(f64::NEG_INFINITY, f64::max);
        initial.push(ObjectState {
            instance_id: format!("obj{i:03}"),
            raw_class: o.raw_class.clone(),
            coarse_class: coarse,
            size: Vector3::from(o.size),
            center: Vector3::new(o.position[0], o.position[1], base + o.ground_clearance + o.size[2] / 2.0),
            yaw: o.yaw,
            speed: o.speed,
            yaw_rate: o.yaw_rate,
        });
    }

    let mut states = Vec::with_capacity(cfg.duration_frames as usize);
    let mut annotations = Vec::with_capacity(cfg.duration_frames as usize);
    for k in 0..cfg.duration_frames {
        let t = f64::from(k) / cfg.frame_hz;
        let (ex, ey) = arc_displacement(0.0, cfg.ego.speed, cfg.ego.yaw_rate, t);
        let ego_pose = Pose::from_yaw(cfg.ego.yaw_rate * t, Vector3::new(ex, ey, 0.0));
        let objects: Vec<ObjectState> = initial
            .iter()
            .map(|o| {
                let (dx, dy) = arc_displacement(o.yaw, o.speed, o.yaw_rate, t);
                ObjectState {
                    center: o.center + Vector3::new(dx, dy, 0.0),
                    yaw: o.yaw + o.yaw_rate * t,
                    ..o.clone()
                }
            })
            .collect();
        annotations.push(objects.iter().map(|o| o.annotation(k)).collect());
        states.push(WorldState {
            dataset_id: cfg.dataset_id.clone(),
            frame_index: k,
            timestamp: t,
            frame_hz: cfg.frame_hz,
            ego_pose,
            objects,
            ground: cfg.ground,
            extent: cfg.extent,
        });
    }
    Ok(SceneSequence { states, annotations })
}

/// What a simulated return hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitSource {
    Ground,
    /// Index into `WorldState::objects`.
    Object(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSweep {
    pub cloud: PointCloud,
    pub provenance: Vec<HitSource>,
    /// Noise-free hit distance of every return.
    pub true_range: Vec<f64>,
}

impl SimulatedSweep {
    pub fn ground_mask(&self) -> Vec<bool> {
        self.provenance.iter().map(|h| *h == HitSource::Ground).collect()
    }
}

/// Slab intersection of a ray given in box coordinates; returns the entry distance.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a].abs() > half[a] {
                return None;
            }
        } else {
            let inv = 1.0 / dir[a];
            let (t0, t1) = ((-half[a] - origin[a]) * inv, (half[a] - origin[a]) * inv);
            let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
    }
    (t_near > 0.0).then_some(t_near)
}

/// Casts every ray of `sensor` from the ego vehicle in `state`.
pub fn simulate_lidar(state: &WorldState, sensor: &SensorConfig, seed: u64) -> Result<SimulatedSweep> {
    sensor.validate()?;
    let sensor_pose = state.ego_pose.compose(&sensor.mount());
    let origin = *sensor_pose.translation();
    let normal = state.ground.normal();
    let boxes: Vec<(Pose, Vector3<f64>)> = state
        .objects
        .iter()
        .map(|o| (o.pose().inverse(), o.size * 0.5))
        .collect();
    let local_origins: Vec<Vector3<f64>> = boxes.iter().map(|(w2b, _)| w2b.transform_point(&origin)).collect();
    let mut noise_rng = rng::stream(seed, &[u64::from(state.frame_index), rng::tag("lidar")]);

    let elevations: Vec<(f64, f64)> = (0..sensor.beam_count)
        .map(|b| sensor.beam_elevation_deg(b).to_radians().sin_cos())
        .collect();
    let n_rays = elevations.len() * sensor.azimuth_steps as usize;
    let mut cloud = PointCloud::new(state.dataset_id.clone(), state.frame_index, state.timestamp, sensor.beam_count);
    cloud.ego_pose = sensor_pose;
    cloud.points.reserve(n_rays / 2);
    let mut provenance = Vec::with_capacity(n_rays / 2);
    let mut true_range = Vec::with_capacity(n_rays / 2);
    let period = 1.0 / state.frame_hz;

    for step in 0..sensor.azimuth_steps {
        let (sa, ca) = sensor.azimuth_rad(step).sin_cos();
        let t_offset = period * (f64::from(step) + 0.5) / f64::from(sensor.azimuth_steps);
        for (beam, &(se, ce)) in elevations.iter().enumerate() {
            let dir_sensor = Vector3::new(ce * ca, ce * sa, se);
            let dir = sensor_pose.transform_vector(&dir_sensor);
            let mut best: Option<(f64, HitSource)> = None;

            let denom = normal.dot(&dir);
            if denom < 0.0 {
                let t = -normal.dot(&origin) / denom;
                if t > 0.0 {
                    let hit = origin + dir * t;
                    if hit.x.abs() <= state.extent && hit.y.abs() <= state.extent {
                        best = Some((t, HitSource::Ground));
                    }
                }
            }
            for (i, ((w2b, half), lo)) in boxes.iter().zip(&local_origins).enumerate() {
                let ld = w2b.transform_vector(&dir);
                if let Some(t) = ray_box(lo, &ld, half) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, HitSource::Object(i)));
                    }
                }
            }
            let Some((t, src)) = best else { continue };
            if t > sensor.max_range {
                continue;
            }
            let measured = if sensor.range_noise_sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut noise_rng);
                t + sensor.range_noise_sigma * n
            } else {
                t
            };
            cloud.points.push(Point {
                position: dir_sensor * measured,
                beam_id: beam as u16,
                t_offset,
            });
            provenance.push(src);
            true_range.push(t);
        }
    }
    Ok(SimulatedSweep {
        cloud,
        provenance,
        true_range,
    })
}

/// Flow of every return computed from the simulator's own object motion
/// (speed, yaw rate, elapsed time) and hit provenance. Independent of box
/// annotations and point-in-box tests; intended for tests.
pub fn oracle_flow(state_t: &WorldState, state_t1: &WorldState, sweep: &SimulatedSweep) -> FlowField {
    let dt = state_t1.timestamp - state_t.timestamp;
    let sensor_pose = sweep.cloud.ego_pose;
    let rot_t = sensor_pose.rotation().transpose();
    let mut flow = FlowField::zeros(sweep.cloud.points.len());
    for (i, (p, src)) in sweep.cloud.points.iter().zip(&sweep.provenance).enumerate() {
        let HitSource::Object(k) = *src else { continue };
        let o = &state_t.objects[k];
        let q = sensor_pose.transform_point(&p.position);
        let (dx, dy) = arc_displacement(o.yaw, o.speed, o.yaw_rate, dt);
        let (s, c) = (o.yaw_rate * dt).sin_cos();
        let rel = q - o.center;
        let moved = o.center + Vector3::new(dx + c * rel.x - s * rel.y, dy + s * rel.x + c * rel.y, rel.z);
        flow.vectors[i] = rot_t * (moved - q);
    }
    flow
}

/// A rendered sequence with simulator provenance for every sweep.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub scene: SceneSequence,
    pub sweeps: Vec<SimulatedSweep>,
}

impl SyntheticSequence {
    pub fn render(cfg: &SceneConfig, sensor: &SensorConfig) -> Result<Self> {
        let scene = generate_scene(cfg)?;
        let sweeps = scene
            .states
            .iter()
            .map(|s| simulate_lidar(s, sensor, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scene, sweeps })
    }

    /// Every `keyframe_every`-th frame (from frame 0) is an annotated keyframe.
    pub fn to_sequence(&self, sequence_id: &str, keyframe_every: usize) -> Sequence {
        let first = &self.scene.states[0];
        let frames = self
            .sweeps
            .iter()
            .zip(&self.scene.annotations)
            .enumerate()
            .map(|(i, (sweep, anns))| SequenceFrame {
                cloud: sweep.cloud.clone(),
                annotations: anns.clone(),
                keyframe: keyframe_every > 0 && i % keyframe_every == 0,
            })
            .collect();
        Sequence {
            dataset_id: first.dataset_id.clone(),
            sequence_id: sequence_id.to_owned(),
            hz: first.frame_hz,
            frames,
        }
    }
}

/// Class, size and speed ranges used by [`random_scene`].
const RANDOM_CLASSES: [(&str, [f64; 3], f64); 5] = [
    ("car", [4.5, 1.9, 1.6], 15.0),
    ("truck", [8.0, 2.5, 3.2], 12.0),
    ("pedestrian", [0.7, 0.7, 1.8], 2.0),
    ("bicycle", [1.8, 0.7, 1.7], 6.0),
    ("motorcycle", [2.2, 0.9, 1.5], 12.0),
];

/// A randomized urban-like scene: objects on lanes parallel to the x axis
/// on both sides of the ego, so boxes stay well separated for short sequences.
pub fn random_scene(seed: u64, duration_frames: u32, frame_hz: f64) -> SceneConfig {
    let mut r = rng::stream(seed, &[rng::tag("random_scene")]);
    let lanes = [-22.0, -14.0, -7.0, 7.0, 14.0, 22.0];
    let mut objects = Vec::new();
    for &lane in &lanes {
        for slot in [(-38.0, -12.0), (12.0, 38.0)] {
            if r.random::<f64>() < 0.3 {
                continue;
            }
            let (name, size, vmax) = RANDOM_CLASSES[r.random_range(0..RANDOM_CLASSES.len())];
            let heading = if r.random::<bool>() { 0.0 } else { std::f64::consts::PI };
            let moving = r.random::<f64>() < 0.75;
            objects.push(ObjectSpec {
                raw_class: name.to_owned(),
                size,
                position: [r.random_range(slot.0..slot.1), lane + r.random_range(-1.0..1.0)],
                yaw: heading + r.random_range(-0.2..0.2),
                speed: if moving { r.random_range(0.3 * vmax..vmax) } else { 0.0 },
                yaw_rate: if moving { r.random_range(-0.2..0.2) } else { 0.0 },
                ground_clearance: r.random_range(0.05..0.3),
            });
        }
    }
    SceneConfig {
        seed,
        dataset_id: "synth".to_owned(),
        duration_frames,
        frame_hz,
        ego: EgoTrajectory {
            speed: r.random_range(0.0..10.0),
            yaw_rate: r.random_range(-0.1..0.1),
        },
        objects,
        ground: GroundSpec::default(),
        extent: 150.0,
    }
}

//! Domain types shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::pose::Pose;
use crate::{Error, Result};

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    /// Laser ring index.
    pub beam_id: u16,
    /// Seconds since the start of the sweep.
    pub t_offset: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, beam_id: u16) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            beam_id,
            t_offset: 0.0,
        }
    }

    /// Horizontal distance to the sensor origin.
    #[inline]
    pub fn range_xy(&self) -> f64 {
        self.position.x.hypot(self.position.y)
    }
}

/// One LiDAR sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Sensor to world at the sweep reference time.
    pub ego_pose: Pose,
    pub frame_index: u32,
    /// Seconds.
    pub timestamp: f64,
    pub beam_count: u16,
    pub dataset_id: String,
}

impl PointCloud {
    pub fn new(dataset_id: impl Into<String>, frame_index: u32, timestamp: f64, beam_count: u16) -> Self {
        Self {
            points: Vec::new(),
            ego_pose: Pose::identity(),
            frame_index,
            timestamp,
            beam_count,
            dataset_id: dataset_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.ego_pose.validate()?;
        for (i, p) in self.points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig(format!("point {i} has non-finite coordinates")));
            }
            if p.beam_id >= self.beam_count {
                return Err(Error::InvalidConfig(format!(
                    "point {i} has beam id {} but the sweep declares {} beams",
                    p.beam_id, self.beam_count
                )));
            }
        }
        Ok(())
    }

    /// Keeps the points where `mask` is true, preserving order.
    pub fn filtered(&self, mask: &[bool]) -> PointCloud {
        debug_assert_eq!(mask.len(), self.points.len());
        PointCloud {
            points: self
                .points
                .iter()
                .zip(mask)
                .filter_map(|(p, &keep)| keep.then_some(*p))
                .collect(),
            ego_pose: self.ego_pose,
            frame_index: self.frame_index,
            timestamp: self.timestamp,
            beam_count: self.beam_count,
            dataset_id: self.dataset_id.clone(),
        }
    }

    /// Number of distinct beam ids present in the sweep.
    pub fn distinct_beams(&self) -> usize {
        let mut seen = vec![false; usize::from(self.beam_count).max(1)];
        let mut n = 0;
        for p in &self.points {
            let b = usize::from(p.beam_id);
            if b >= seen.len() {
                seen.resize(b + 1, false);
            }
            if !seen[b] {
                seen[b] = true;
                n += 1;
            }
        }
        n
    }
}

/// The four-way coarse taxonomy shared by every dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoarseClass {
    Car,
    Other,
    Pedestrian,
    Vru,
}

impl CoarseClass {
    pub const ALL: [CoarseClass; 4] = [
        CoarseClass::Car,
        CoarseClass::Other,
        CoarseClass::Pedestrian,
        CoarseClass::Vru,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseClass::Car => "CAR",
            CoarseClass::Other => "OTHER",
            CoarseClass::Pedestrian => "PEDESTRIAN",
            CoarseClass::Vru => "VRU",
        }
    }
}

impl fmt::Display for CoarseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoarseClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CAR" => Ok(CoarseClass::Car),
            "OTHER" => Ok(CoarseClass::Other),
            "PEDESTRIAN" | "PED" => Ok(CoarseClass::Pedestrian),
            "VRU" => Ok(CoarseClass::Vru),
            _ => Err(Error::InvalidConfig(format!("unknown coarse class `{s}`"))),
        }
    }
}

/// A 3D box annotation in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    pub instance_id: String,
    pub raw_class: String,
    /// `None` when the raw class has no coarse mapping.
    pub coarse_class: Option<CoarseClass>,
    pub box_center: Vector3<f64>,
    /// Length, width, height.
    pub box_size: Vector3<f64>,
    pub box_yaw: f64,
    pub frame_index: u32,
}

impl ObjectAnnotation {
    /// Box frame to world.
    pub fn box_pose(&self) -> Pose {
        Pose::from_yaw(self.box_yaw, self.box_center)
    }

    /// Inclusive containment test for a world-frame point.
    pub fn contains_world(&self, p: &Vector3<f64>) -> bool {
        let local = self.box_pose().inverse().transform_point(p);
        let half = self.box_size * 0.5;
        local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z
    }
}

/// Two temporally adjacent sweeps with their annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub first: PointCloud,
    pub second: PointCloud,
    pub annotations_first: Vec<ObjectAnnotation>,
    pub annotations_second: Vec<ObjectAnnotation>,
}

impl FramePair {
    pub fn new(
        first: PointCloud,
        second: PointCloud,
        annotations_first: Vec<ObjectAnnotation>,
        annotations_second: Vec<ObjectAnnotation>,
    ) -> Result<Self> {
        let pair = Self {
            first,
            second,
            annotations_first,
            annotations_second,
        };
        if pair.dt() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "frame pair must move forward in time (dt = {})",
                pair.dt()
            )));
        }
        if pair.first.dataset_id != pair.second.dataset_id {
            return Err(Error::InvalidConfig(format!(
                "frame pair mixes datasets `{}` and `{}`",
                pair.first.dataset_id, pair.second.dataset_id
            )));
        }
        Ok(pair)
    }

    pub fn dt(&self) -> f64 {
        self.second.timestamp - self.first.timestamp
    }
}

/// Per-point motion of the first sweep of a pair, in meters per frame
/// interval, expressed in the ego-compensated frame of the first sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vector3::zeros(); n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn filtered(&self, mask: &[bool]) -> FlowField {
        let (vectors, valid) = self
            .vectors
            .iter()
            .zip(&self.valid)
            .zip(mask)
            .filter_map(|((v, ok), &keep)| keep.then_some((*v, *ok)))
            .unzip();
        FlowField { vectors, valid }
    }
}

/// Ground-truth metadata for one point of the first sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeta {
    pub gt_flow: Vector3<f64>,
    /// Norm of `gt_flow`, meters per frame.
    pub gt_speed: f64,
    /// `None` is background.
    pub class: Option<CoarseClass>,
    pub instance_id: Option<String>,
    pub is_ground: bool,
    /// Horizontal distance to the ego sensor, meters.
    pub range_m: f64,
}

impl PointMeta {
    pub fn background(range_m: f64) -> Self {
        Self {
            gt_flow: Vector3::zeros(),
            gt_speed: 0.0,
            class: None,
            instance_id: None,
            is_ground: false,
            range_m,
        }
    }
}

pub fn filter_meta(meta: &[PointMeta], mask: &[bool]) -> Vec<PointMeta> {
    meta.iter()
        .zip(mask)
        .filter_map(|(m, &keep)| keep.then(|| m.clone()))
        .collect()
}

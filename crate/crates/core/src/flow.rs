//! Pose application, ego-motion compensation and ground-truth flow from box tracks.

use std::collections::HashMap;

use crate::pose::Pose;
use crate::types::{FlowField, FramePair, ObjectAnnotation, PointCloud, PointMeta};
use crate::{Error, Result};

/// Maps every point through `pose`, keeping beam ids and timestamps.
pub fn apply_pose(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud> {
    pose.validate()?;
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.position = pose.transform_point(&p.position);
    }
    Ok(out)
}

/// Rigid transform taking first-sweep sensor coordinates into the second
/// sweep's sensor frame under a static world.
pub fn compensate_ego(pair: &FramePair) -> Result<Pose> {
    pair.first.ego_pose.validate()?;
    pair.second.ego_pose.validate()?;
    Ok(pair.second.ego_pose.inverse().compose(&pair.first.ego_pose))
}

fn index_by_instance<'a>(anns: &'a [ObjectAnnotation], which: &str) -> Result<HashMap<&'a str, &'a ObjectAnnotation>> {
    let mut map = HashMap::with_capacity(anns.len());
    for a in anns {
        if a.box_size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::MalformedAnnotations(format!(
                "instance `{}` in {which} frame has a non-positive box size",
                a.instance_id
            )));
        }
        if map.insert(a.instance_id.as_str(), a).is_some() {
            return Err(Error::MalformedAnnotations(format!(
                "duplicate instance id `{}` in {which} frame",
                a.instance_id
            )));
        }
    }
    Ok(map)
}

struct BoxTrack<'a> {
    ann: &'a ObjectAnnotation,
    world_to_box: Pose,
    half: nalgebra::Vector3<f64>,
    /// Rigid motion of the box over one interval, in first-sweep sensor coordinates.
    motion: Option<Pose>,
}

/// Ground-truth flow and per-point metadata for the first sweep of a pair.
///
/// Points inside a box whose instance also exists in the second frame move
/// with that box; points in boxes with no successor are masked invalid;
/// everything else is static background.
pub fn gt_flow_from_annotations(pair: &FramePair) -> Result<(FlowField, Vec<PointMeta>)> {
    pair.first.ego_pose.validate()?;
    let first_ids = index_by_instance(&pair.annotations_first, "first")?;
    let second_ids = index_by_instance(&pair.annotations_second, "second")?;
    for (id, a) in &first_ids {
        if let Some(b) = second_ids.get(id) {
            if a.coarse_class != b.coarse_class {
                return Err(Error::MalformedAnnotations(format!(
                    "instance `{id}` changes class between frames"
                )));
            }
        }
    }

    let ego = pair.first.ego_pose;
    let ego_inv = ego.inverse();
    let tracks: Vec<BoxTrack> = pair
        .annotations_first
        .iter()
        .map(|a| {
            let box_t0 = a.box_pose();
            let motion = second_ids.get(a.instance_id.as_str()).map(|b| {
                if b.box_center == a.box_center && b.box_yaw == a.box_yaw {
                    return Pose::identity();
                }
                let world_motion = b.box_pose().compose(&box_t0.inverse());
                ego_inv.compose(&world_motion).compose(&ego)
            });
            BoxTrack {
                ann: a,
                world_to_box: box_t0.inverse().compose(&ego),
                half: a.box_size * 0.5,
                motion,
            }
        })
        .collect();

    let n = pair.first.points.len();
    let mut flow = FlowField::zeros(n);
    let mut meta = Vec::with_capacity(n);
    for (i, p) in pair.first.points.iter().enumerate() {
        let mut m = PointMeta::background(p.range_xy());
        let hit = tracks.iter().find(|t| {
            let local = t.world_to_box.transform_point(&p.position);
            local.x.abs() <= t.half.x && local.y.abs() <= t.half.y && local.z.abs() <= t.half.z
        });
        if let Some(track) = hit {
            m.class = track.ann.coarse_class;
            m.instance_id = Some(track.ann.instance_id.clone());
            match &track.motion {
                Some(motion) => {
                    let v = motion.transform_point(&p.position) - p.position;
                    m.gt_flow = v;
                    m.gt_speed = v.norm();
                    flow.vectors[i] = v;
                }
                None => flow.valid[i] = false,
            }
        }
        meta.push(m);
    }
    Ok((flow, meta))
}

/// A frame pair carrying its ground-truth flow and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub pair: FramePair,
    pub gt: FlowField,
    pub meta: Vec<PointMeta>,
}

impl LabeledPair {
    pub fn from_pair(pair: FramePair) -> Result<Self> {
        let (gt, meta) = gt_flow_from_annotations(&pair)?;
        Ok(Self { pair, gt, meta })
    }

    /// Marks ground points of the first sweep in the metadata.
    pub fn set_ground_mask(&mut self, ground: &[bool]) -> Result<()> {
        if ground.len() != self.meta.len() {
            return Err(Error::shape(self.meta.len(), ground.len()));
        }
        for (m, &g) in self.meta.iter_mut().zip(ground) {
            m.is_ground = g;
        }
        Ok(())
    }
}

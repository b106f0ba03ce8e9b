//! LineFit ground segmentation.
//!
//! Points are split into azimuth sectors and radial bins. The lowest point of
//! every bin is a prototype; prototypes are consumed in range order and
//! greedily grouped into piecewise (range, z) lines. A point is ground when
//! it lies within `dist_threshold` of its sector's line.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::types::{FramePair, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundParams {
    pub n_segments: usize,
    pub n_bins: usize,
    /// Rise over run.
    pub max_slope: f64,
    /// Largest RMS residual of a line, meters.
    pub max_fit_error: f64,
    /// Height of the sensor above the ground, meters.
    pub sensor_height: f64,
    /// Largest vertical point-to-line distance for ground, meters.
    pub dist_threshold: f64,
    /// Radial extent of the bins, meters. Farther points use the last bin.
    pub max_range: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            n_segments: 360,
            n_bins: 120,
            max_slope: 0.30,
            max_fit_error: 0.05,
            sensor_height: 1.8,
            dist_threshold: 0.15,
            max_range: 120.0,
        }
    }
}

impl GroundParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 4 || self.n_bins < 2 {
            return Err(Error::InvalidConfig("need at least 4 segments and 2 bins".into()));
        }
        let positive = [self.max_slope, self.max_fit_error, self.dist_threshold, self.max_range];
        if positive.iter().any(|v| !(*v > 0.0)) || !self.sensor_height.is_finite() {
            return Err(Error::InvalidConfig("ground thresholds must be positive".into()));
        }
        Ok(())
    }

    fn sector_of(&self, x: f64, y: f64) -> usize {
        let az = y.atan2(x) + PI;
        ((az / TAU * self.n_segments as f64) as usize).min(self.n_segments - 1)
    }

    fn bin_of(&self, r: f64) -> usize {
        ((r / self.max_range * self.n_bins as f64) as usize).min(self.n_bins - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Line {
    slope: f64,
    intercept: f64,
    r_start: f64,
    r_end: f64,
}

impl Line {
    fn z_at(&self, r: f64) -> f64 {
        self.slope * r + self.intercept
    }

    fn gap(&self, r: f64) -> f64 {
        if r < self.r_start {
            self.r_start - r
        } else if r > self.r_end {
            r - self.r_end
        } else {
            0.0
        }
    }
}

/// Least-squares line through `pts` with its RMS residual.
fn fit(pts: &[(f64, f64)]) -> (Line, f64) {
    let n = pts.len() as f64;
    let (mr, mz) = pts.iter().fold((0.0, 0.0), |(a, b), (r, z)| (a + r, b + z));
    let (mr, mz) = (mr / n, mz / n);
    let (mut srr, mut srz) = (0.0, 0.0);
    for (r, z) in pts {
        srr += (r - mr) * (r - mr);
        srz += (r - mr) * (z - mz);
    }
    let slope = if srr > 1e-12 { srz / srr } else { 0.0 };
    let intercept = mz - slope * mr;
    let sse: f64 = pts.iter().map(|(r, z)| (z - slope * r - intercept).powi(2)).sum();
    let line = Line {
        slope,
        intercept,
        r_start: pts[0].0,
        r_end: pts[pts.len() - 1].0,
    };
    (line, (sse / n).sqrt())
}

fn fit_sector(prototypes: &[(f64, f64)], p: &GroundParams) -> Vec<Line> {
    let mut lines: Vec<Line> = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut current_line: Option<Line> = None;

    for &(r, z) in prototypes {
        if current.is_empty() {
            let consistent = match lines.last() {
                Some(prev) => (z - prev.z_at(r)).abs() <= p.dist_threshold,
                None => (z + p.sensor_height).abs() <= p.max_slope * r + p.dist_threshold,
            };
            if consistent {
                current.push((r, z));
            }
            continue;
        }
        if let Some(line) = &current_line {
            if (z - line.z_at(r)).abs() > p.dist_threshold {
                continue;
            }
        }
        current.push((r, z));
        let (line, rms) = fit(&current);
        if line.slope.abs() <= p.max_slope && rms <= p.max_fit_error {
            current_line = Some(line);
            continue;
        }
        current.pop();
        match current_line.take() {
            Some(done) => {
                lines.push(done);
                current.clear();
                if (z - done.z_at(r)).abs() <= p.dist_threshold {
                    current.push((r, z));
                }
            }
            // A single point that cannot be joined to this one; keep the
            // earlier point and treat this prototype as an obstacle.
            None => {}
        }
    }
    match current_line {
        Some(line) => lines.push(line),
        None if current.len() == 1 => {
            let (r, z) = current[0];
            lines.push(Line {
                slope: 0.0,
                intercept: z,
                r_start: r,
                r_end: r,
            });
        }
        None => {}
    }
    lines
}

/// Ground mask for `cloud` (true = ground). Coordinates are taken in the
/// sensor frame with z up.
pub fn segment_ground(cloud: &PointCloud, params: &GroundParams) -> Result<Vec<bool>> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyInput("ground segmentation of an empty cloud".into()));
    }
    let nb = params.n_bins;
    let mut lowest: Vec<Option<(f64, f64)>> = vec![None; params.n_segments * nb];
    let keys: Vec<(usize, f64)> = cloud
        .points
        .iter()
        .map(|pt| {
            let (x, y, z) = (pt.position.x, pt.position.y, pt.position.z);
            let r = x.hypot(y);
            let s = params.sector_of(x, y);
            let slot = &mut lowest[s * nb + params.bin_of(r)];
            if slot.is_none_or(|(_, lz)| z < lz) {
                *slot = Some((r, z));
            }
            (s, r)
        })
        .collect();

    let mut sector_lines: Vec<Vec<Line>> = lowest
        .chunks(nb)
        .map(|bins| {
            let protos: Vec<(f64, f64)> = bins.iter().flatten().copied().collect();
            fit_sector(&protos, params)
        })
        .collect();

    let prior = Line {
        slope: 0.0,
        intercept: -params.sensor_height,
        r_start: 0.0,
        r_end: f64::INFINITY,
    };
    let n = params.n_segments;
    let filled: Vec<Vec<Line>> = (0..n)
        .map(|s| {
            if !sector_lines[s].is_empty() {
                return Vec::new();
            }
            // Ties go to the preceding sector, which keeps the choice
            // equivariant under rotation.
            let nearest = (1..=n / 2)
                .flat_map(|d| [(s + n - d) % n, (s + d) % n])
                .find(|&f| !sector_lines[f].is_empty());
            match nearest {
                Some(f) => sector_lines[f].clone(),
                None => vec![prior],
            }
        })
        .collect();
    for (s, lines) in filled.into_iter().enumerate() {
        if !lines.is_empty() {
            sector_lines[s] = lines;
        }
    }

    Ok(cloud
        .points
        .iter()
        .zip(keys)
        .map(|(pt, (s, r))| {
            let line = sector_lines[s]
                .iter()
                .min_by(|a, b| a.gap(r).total_cmp(&b.gap(r)))
                .expect("every sector has a line");
            (pt.position.z - line.z_at(r)).abs() <= params.dist_threshold
        })
        .collect())
}

/// Drops ground points, preserving the order of the survivors.
pub fn remove_ground(cloud: &PointCloud, params: &GroundParams) -> Result<PointCloud> {
    let ground = segment_ground(cloud, params)?;
    let keep: Vec<bool> = ground.iter().map(|g| !g).collect();
    Ok(cloud.filtered(&keep))
}

/// Removes ground from both sweeps of a pair.
pub fn remove_ground_pair(pair: &FramePair, params: &GroundParams) -> Result<FramePair> {
    let first = if pair.first.is_empty() { pair.first.clone() } else { remove_ground(&pair.first, params)? };
    let second = if pair.second.is_empty() { pair.second.clone() } else { remove_ground(&pair.second, params)? };
    FramePair::new(first, second, pair.annotations_first.clone(), pair.annotations_second.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, simulate_lidar, EgoTrajectory, GroundSpec, HitSource, ObjectSpec, SceneConfig, SensorConfig};
    use crate::types::Point;
    use proptest::prelude::*;

    fn scene(slope_deg: f64, objects: Vec<ObjectSpec>) -> SceneConfig {
        SceneConfig {
            seed: 0,
            dataset_id: "synth".into(),
            duration_frames: 1,
            frame_hz: 10.0,
            ego: EgoTrajectory::default(),
            objects,
            ground: GroundSpec { slope_deg },
            extent: 100.0,
        }
    }

    fn sensor() -> SensorConfig {
        SensorConfig {
            azimuth_steps: 720,
            ..SensorConfig::default_64()
        }
    }

    fn tall_box(x: f64, y: f64) -> ObjectSpec {
        ObjectSpec {
            raw_class: "truck".into(),
            size: [3.0, 3.0, 2.0],
            position: [x, y],
            yaw: 0.3,
            speed: 0.0,
            yaw_rate: 0.0,
            ground_clearance: 0.25,
        }
    }

    fn scores(cfg: &SceneConfig) -> (f64, f64) {
        let s = generate_scene(cfg).unwrap();
        let sweep = simulate_lidar(&s.states[0], &sensor(), 0).unwrap();
        let mask = segment_ground(&sweep.cloud, &GroundParams::default()).unwrap();
        let (mut g, mut g_hit, mut o_kept, mut kept) = (0, 0, 0, 0);
        for (m, src) in mask.iter().zip(&sweep.provenance) {
            g += usize::from(*src == HitSource::Ground);
            g_hit += usize::from(*src == HitSource::Ground && *m);
            kept += usize::from(!*m);
            o_kept += usize::from(!*m && *src != HitSource::Ground);
        }
        (g_hit as f64 / g as f64, if kept == 0 { 1.0 } else { o_kept as f64 / kept as f64 })
    }

    #[test]
    fn flat_plane_is_all_ground() {
        let s = generate_scene(&scene(0.0, vec![])).unwrap();
        let sweep = simulate_lidar(&s.states[0], &sensor(), 0).unwrap();
        let mask = segment_ground(&sweep.cloud, &GroundParams::default()).unwrap();
        assert!(mask.iter().all(|&m| m));
        assert!(remove_ground(&sweep.cloud, &GroundParams::default()).unwrap().is_empty());
    }

    #[test]
    fn box_on_plane() {
        let (recall, precision) = scores(&scene(0.0, vec![tall_box(12.0, 4.0), tall_box(-20.0, -9.0)]));
        assert!(recall >= 0.99, "{recall}");
        assert!(precision >= 0.95, "{precision}");
    }

    #[test]
    fn sloped_plane() {
        let (recall, precision) = scores(&scene(5.0, vec![tall_box(15.0, -6.0)]));
        assert!(recall >= 0.99, "{recall}");
        assert!(precision >= 0.95, "{precision}");
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let c = PointCloud::new("d", 0, 0.0, 1);
        assert!(matches!(segment_ground(&c, &GroundParams::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn remove_partitions_input() {
        let s = generate_scene(&scene(0.0, vec![tall_box(10.0, 0.0)])).unwrap();
        let sweep = simulate_lidar(&s.states[0], &sensor(), 0).unwrap();
        let p = GroundParams::default();
        let mask = segment_ground(&sweep.cloud, &p).unwrap();
        let out = remove_ground(&sweep.cloud, &p).unwrap();
        assert_eq!(out.len() + mask.iter().filter(|m| **m).count(), sweep.cloud.len());
    }

    fn cloud_from(pts: &[(f64, f64, f64)]) -> PointCloud {
        let mut c = PointCloud::new("d", 0, 0.0, 1);
        c.points = pts.iter().map(|&(x, y, z)| Point::new(x, y, z, 0)).collect();
        c
    }

    /// Points placed at sector centers, so rotations by whole sectors never
    /// move a point across a sector boundary.
    fn sector_points() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
        prop::collection::vec((0usize..16, 2.0f64..60.0, -2.5f64..1.0), 1..200)
    }

    fn place(pts: &[(usize, f64, f64)], rot: usize, n: usize) -> Vec<(f64, f64, f64)> {
        pts.iter()
            .map(|&(s, r, z)| {
                let az = -PI + TAU * (((s + rot) % n) as f64 + 0.5) / n as f64;
                (r * az.cos(), r * az.sin(), z)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn z_translation_equivariance(pts in sector_points(), dz in -1.0f64..1.0) {
            let p = GroundParams { n_segments: 16, ..GroundParams::default() };
            let base = place(&pts, 0, 16);
            let shifted: Vec<_> = base.iter().map(|&(x, y, z)| (x, y, z + dz)).collect();
            let q = GroundParams { sensor_height: p.sensor_height - dz, ..p.clone() };
            let a = segment_ground(&cloud_from(&base), &p).unwrap();
            let b = segment_ground(&cloud_from(&shifted), &q).unwrap();
            let flips = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert!(flips == 0, "{flips} labels changed");
        }

        #[test]
        fn sector_rotation_preserves_labels(pts in sector_points(), rot in 0usize..16) {
            let p = GroundParams { n_segments: 16, ..GroundParams::default() };
            let a = segment_ground(&cloud_from(&place(&pts, 0, 16)), &p).unwrap();
            let b = segment_ground(&cloud_from(&place(&pts, rot, 16)), &p).unwrap();
            let count = |m: &[bool]| m.iter().filter(|v| **v).count();
            prop_assert_eq!(count(&a), count(&b));
        }

        #[test]
        fn deterministic(pts in sector_points()) {
            let p = GroundParams { n_segments: 16, ..GroundParams::default() };
            let c = cloud_from(&place(&pts, 0, 16));
            prop_assert_eq!(segment_ground(&c, &p).unwrap(), segment_ground(&c, &p).unwrap());
        }
    }
}

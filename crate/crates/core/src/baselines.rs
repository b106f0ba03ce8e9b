//! Reference flow estimators and ingestion of external predictions.

use std::cell::OnceCell;
use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::flow::compensate_ego;
use crate::io::read_flow;
use crate::pose::Pose;
use crate::types::{FlowField, FramePair};
use crate::{Error, Result};

/// Static-world prediction: zero flow everywhere.
pub fn ego_flow_baseline(pair: &FramePair) -> FlowField {
    FlowField::zeros(pair.first.len())
}

/// Reads a flow file predicted for `pair` and checks its length.
pub fn load_predictions(path: &Path, pair: &FramePair) -> Result<FlowField> {
    let flow = read_flow(path)?;
    if flow.len() != pair.first.len() {
        return Err(Error::shape(pair.first.len(), flow.len()));
    }
    Ok(flow)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Linkage distance for clustering, meters.
    pub cluster_voxel: f64,
    pub min_cluster_points: usize,
    pub max_icp_iters: usize,
    /// Convergence threshold on per-point displacement change, meters.
    pub icp_tol: f64,
    /// Largest correspondence distance, meters.
    pub max_corr_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            cluster_voxel: 0.5,
            min_cluster_points: 10,
            max_icp_iters: 30,
            icp_tol: 1e-4,
            max_corr_dist: 2.0,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cluster_voxel > 0.0
            && self.min_cluster_points > 0
            && self.max_icp_iters > 0
            && self.icp_tol > 0.0
            && self.max_corr_dist > 0.0;
        if !ok {
            return Err(Error::InvalidConfig("ICP parameters must be positive".into()));
        }
        Ok(())
    }
}

type Cell = [i64; 3];

fn cell_of(p: &Vector3<f64>, size: f64) -> Cell {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

fn neighbors(c: Cell) -> impl Iterator<Item = Cell> {
    (-1..=1).flat_map(move |dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| [c[0] + dx, c[1] + dy, c[2] + dz])))
}

/// Single-linkage clusters: points closer than `radius` share a cluster.
/// Cluster ids follow the first point index of each cluster.
pub fn cluster_points(points: &[Vector3<f64>], radius: f64) -> Vec<usize> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let grid = NeighborGrid::new(points, radius);
    let mut parent: Vec<usize> = (0..points.len()).collect();
    for (i, p) in points.iter().enumerate() {
        for (j, _) in grid.within(p) {
            if j > i {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut label: HashMap<usize, usize> = HashMap::new();
    (0..points.len())
        .map(|i| {
            let root = find(&mut parent, i);
            let next = label.len();
            *label.entry(root).or_insert(next)
        })
        .collect()
}

/// Uniform hash grid for fixed-radius nearest-neighbor queries.
struct NeighborGrid<'a> {
    points: &'a [Vector3<f64>],
    size: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    fn new(points: &'a [Vector3<f64>], size: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, size)).or_default().push(i);
        }
        Self { points, size, cells }
    }

    fn within(&self, q: &Vector3<f64>) -> impl Iterator<Item = (usize, f64)> + '_ {
        let q = *q;
        let r2 = self.size * self.size;
        neighbors(cell_of(&q, self.size))
            .filter_map(|c| self.cells.get(&c))
            .flatten()
            .filter_map(move |&i| {
                let d = (self.points[i] - q).norm_squared();
                (d <= r2).then_some((i, d))
            })
    }

    /// Nearest point within the grid cell size; ties go to the lower index.
    fn nearest(&self, q: &Vector3<f64>) -> Option<usize> {
        self.within(q)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }
}

/// Largest ratio of the smallest to the middle covariance eigenvalue for
/// a neighborhood to count as planar.
const PLANARITY: f64 = 0.05;
/// Smallest ratio of the middle to the largest eigenvalue. Below it the
/// neighborhood is a line and its normal is set by rounding.
const MIN_SPREAD: f64 = 1e-6;
const NORMAL_RADIUS: f64 = 0.3;
/// Smallest share of the normal scatter along a direction for the fit to
/// count as observing translation along it.
const MIN_NORMAL_SUPPORT: f64 = 0.05;

/// Second sweep with correspondence and surface-normal lookups.
struct Target<'a> {
    coarse: NeighborGrid<'a>,
    fine: NeighborGrid<'a>,
    normals: Vec<OnceCell<Option<Vector3<f64>>>>,
}

impl<'a> Target<'a> {
    fn new(points: &'a [Vector3<f64>], max_corr_dist: f64) -> Self {
        Self {
            coarse: NeighborGrid::new(points, max_corr_dist),
            fine: NeighborGrid::new(points, NORMAL_RADIUS),
            normals: (0..points.len()).map(|_| OnceCell::new()).collect(),
        }
    }

    fn points(&self) -> &[Vector3<f64>] {
        self.coarse.points
    }

    /// Unit normal of the local plane at point `j`, if the neighborhood is planar.
    fn normal(&self, j: usize) -> Option<Vector3<f64>> {
        *self.normals[j].get_or_init(|| {
            let nb: Vec<Vector3<f64>> = self.fine.within(&self.fine.points[j]).map(|(i, _)| self.fine.points[i]).collect();
            if nb.len() < 5 {
                return None;
            }
            let c = nb.iter().sum::<Vector3<f64>>() / nb.len() as f64;
            let cov = nb.iter().fold(Matrix3::zeros(), |m, p| m + (p - c) * (p - c).transpose());
            let eig = cov.symmetric_eigen();
            let mut order = [0, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let [l0, l1, l2] = order.map(|k| eig.eigenvalues[k]);
            (l1 > MIN_SPREAD * l2 && l0 <= PLANARITY * l1).then(|| eig.eigenvectors.column(order[0]).into_owned())
        })
    }
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    Pose::new(r, t).ok()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    /// Nearest-point pairs.
    PointToPoint,
    /// Nearest-point pairs with the target point projected onto its local plane.
    Planar,
}

/// Result of one ICP stage.
struct StageFit {
    pose: Pose,
    converged: bool,
    /// Cluster points with a correspondence at the final estimate.
    matched: usize,
    /// Mean of `n n^T` over the plane normals of the final iteration.
    normal_scatter: Matrix3<f64>,
}

/// Runs one ICP stage from `init` until the per-point update drops below
/// `icp_tol` or `max_icp_iters` is reached. `None` when fewer than three
/// correspondences remain.
fn icp_stage(points: &[Vector3<f64>], target: &Target, p: &IcpParams, init: Pose, stage: Stage) -> Option<StageFit> {
    let mut current = init;
    let mut src = Vec::with_capacity(points.len());
    let mut dst = Vec::with_capacity(points.len());
    let mut matched = 0;
    let mut scatter = Matrix3::zeros();
    for _ in 0..p.max_icp_iters {
        src.clear();
        dst.clear();
        scatter = Matrix3::zeros();
        let moved: Vec<Vector3<f64>> = points.iter().map(|q| current.transform_point(q)).collect();
        matched = 0;
        for (q, m) in points.iter().zip(&moved) {
            let Some(j) = target.coarse.nearest(m) else { continue };
            matched += 1;
            let t = target.points()[j];
            let goal = match stage {
                Stage::PointToPoint => t,
                Stage::Planar => {
                    let Some(n) = target.normal(j) else { continue };
                    let d = m - t;
                    let along = d.dot(&n);
                    if (d - n * along).norm() > NORMAL_RADIUS {
                        continue;
                    }
                    scatter += n * n.transpose();
                    m - n * along
                }
            };
            src.push(*q);
            dst.push(goal);
        }
        let next = kabsch(&src, &dst)?;
        if !src.is_empty() {
            scatter /= src.len() as f64;
        }
        let change = points
            .iter()
            .zip(&moved)
            .map(|(q, m)| (next.transform_point(q) - m).norm())
            .fold(0.0, f64::max);
        current = next;
        if change < p.icp_tol {
            return Some(StageFit { pose: current, converged: true, matched, normal_scatter: scatter });
        }
    }
    Some(StageFit { pose: current, converged: false, matched, normal_scatter: scatter })
}

/// Removes the translation of the cluster centroid along directions that no
/// matched surface normal constrains.
fn drop_unobserved_translation(fit: &StageFit, centroid: &Vector3<f64>) -> Pose {
    let eig = fit.normal_scatter.symmetric_eigen();
    let shift = fit.pose.transform_point(centroid) - centroid;
    let mut t = *fit.pose.translation();
    for k in 0..3 {
        if eig.eigenvalues[k] < MIN_NORMAL_SUPPORT {
            let e = eig.eigenvectors.column(k);
            t -= e * e.dot(&shift);
        }
    }
    Pose::new(*fit.pose.rotation(), t).expect("rotation is unchanged")
}

/// Point-to-point ICP from the identity, then refined against local surface
/// planes. The refined pose is used when it converges, with no motion along
/// directions its planes leave unconstrained; otherwise the point-to-point
/// pose. `None` when neither converges or the fit keeps a correspondence for
/// fewer than half of the points.
fn fit_cluster(points: &[Vector3<f64>], target: &Target, p: &IcpParams) -> Option<Pose> {
    let coarse = icp_stage(points, target, p, Pose::identity(), Stage::PointToPoint)?;
    let (pose, matched) = match icp_stage(points, target, p, coarse.pose, Stage::Planar) {
        Some(refined) if refined.converged => {
            let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
            (drop_unobserved_translation(&refined, &centroid), refined.matched)
        }
        _ if coarse.converged => (coarse.pose, coarse.matched),
        _ => return None,
    };
    (2 * matched >= points.len()).then_some(pose)
}

/// Cluster-wise rigid ICP flow. Expects ground to be removed from both
/// sweeps. Clusters that are too small or lose their correspondences get
/// zero flow.
pub fn cluster_icp_flow(pair: &FramePair, params: &IcpParams) -> Result<FlowField> {
    params.validate()?;
    if pair.first.is_empty() {
        return Err(Error::EmptyInput("ICP needs a non-empty first sweep".into()));
    }
    let to_first = compensate_ego(pair)?.inverse();
    let first: Vec<Vector3<f64>> = pair.first.points.iter().map(|p| p.position).collect();
    let second: Vec<Vector3<f64>> = pair
        .second
        .points
        .iter()
        .map(|p| to_first.transform_point(&p.position))
        .collect();
    let target = Target::new(&second, params.max_corr_dist);
    let labels = cluster_points(&first, params.cluster_voxel);
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let mut flow = FlowField::zeros(first.len());
    for idx in members.iter().filter(|m| m.len() >= params.min_cluster_points) {
        let pts: Vec<Vector3<f64>> = idx.iter().map(|&i| first[i]).collect();
        if let Some(t) = fit_cluster(&pts, &target, params) {
            for (&i, p) in idx.iter().zip(&pts) {
                flow.vectors[i] = t.transform_point(p) - p;
            }
        }
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Point, PointCloud};

    fn cube(center: Vector3<f64>, step: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i as f64 * step, j as f64 * step);
                let h = (n - 1) as f64 * step;
                for v in [
                    Vector3::new(a, b, 0.0),
                    Vector3::new(a, b, h),
                    Vector3::new(a, 0.0, b),
                    Vector3::new(a, h, b),
                    Vector3::new(0.0, a, b),
                    Vector3::new(h, a, b),
                ] {
                    out.push(center + v);
                }
            }
        }
        out
    }

    fn cloud(pts: &[Vector3<f64>], ts: f64) -> PointCloud {
        let mut c = PointCloud::new("d", 0, ts, 1);
        c.points = pts.iter().map(|p| Point::new(p.x, p.y, p.z, 0)).collect();
        c
    }

    #[test]
    fn kabsch_recovers_rigid_motion() {
        let src = cube(Vector3::new(1.0, 2.0, 0.5), 0.1);
        let truth = Pose::from_axis_angle(Vector3::new(0.06, -0.03, 0.3), Vector3::new(0.5, -0.2, 0.1));
        let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
        assert!(kabsch(&src, &dst).unwrap().max_abs_diff(&truth) < 1e-12);
    }

    /// Random samples on the faces of an axis-aligned box.
    fn box_surface(center: Vector3<f64>, size: Vector3<f64>, n: usize) -> Vec<Vector3<f64>> {
        use rand::Rng;
        let mut r = crate::rng::stream(7, &[]);
        (0..n)
            .map(|_| {
                let mut u = Vector3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
                let axis = r.random_range(0..3);
                u[axis] = if r.random::<bool>() { 1.0 } else { 0.0 };
                center + (u - Vector3::repeat(0.5)).component_mul(&size)
            })
            .collect()
    }

    #[test]
    fn moved_box_identical_sampling() {
        let a = box_surface(Vector3::new(8.0, 2.0, 0.5), Vector3::new(2.0, 1.2, 1.5), 800);
        let truth = Pose::from_axis_angle(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.3, -0.1, 0.02));
        let b: Vec<_> = a.iter().map(|p| truth.transform_point(p)).collect();
        let pair = FramePair::new(cloud(&a, 0.0), cloud(&b, 0.1), vec![], vec![]).unwrap();
        let f = cluster_icp_flow(&pair, &IcpParams::default()).unwrap();
        for (v, p) in f.vectors.iter().zip(&a) {
            assert!((v - (truth.transform_point(p) - p)).norm() < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn clusters_split_on_gaps() {
        let mut pts = cube(Vector3::zeros(), 0.1);
        pts.extend(cube(Vector3::new(5.0, 0.0, 0.0), 0.1));
        let labels = cluster_points(&pts, 0.5);
        assert_eq!(labels.iter().max(), Some(&1));
        assert_eq!(labels[0], 0);
    }

    #[test]
    fn empty_first_sweep() {
        let pair = FramePair::new(cloud(&[], 0.0), cloud(&[Vector3::zeros()], 0.1), vec![], vec![]).unwrap();
        assert!(matches!(cluster_icp_flow(&pair, &IcpParams::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ego_baseline_is_zero() {
        let pair = FramePair::new(cloud(&[Vector3::zeros(); 3], 0.0), cloud(&[], 0.1), vec![], vec![]).unwrap();
        let f = ego_flow_baseline(&pair);
        assert_eq!(f, FlowField::zeros(3));
    }
}

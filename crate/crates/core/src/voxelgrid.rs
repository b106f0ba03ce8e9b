//! Dynamic voxelization and fixed-voxel-size grid extension.
//!
//! Extending a grid keeps its voxel size and shifts every old voxel by an
//! integer offset, so grid-indexed buffers can be re-padded without
//! resampling.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::types::PointCloud;
use crate::{Error, Result};

/// Tolerance for "integer multiple of the voxel size", meters.
pub const ALIGN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub voxel_size: [f64; 3],
    /// Voxels per axis; filled in by [`GridConfig::new`] and checked by `validate`.
    #[serde(default)]
    pub dims: [usize; 3],
}

fn cells(lo: f64, hi: f64, s: f64) -> Option<usize> {
    let n = ((hi - lo) / s).round();
    (n >= 1.0 && ((hi - lo) - n * s).abs() <= ALIGN_TOLERANCE).then_some(n as usize)
}

impl GridConfig {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], z_range: [f64; 2], voxel_size: [f64; 3]) -> Result<Self> {
        let mut g = Self {
            x_range,
            y_range,
            z_range,
            voxel_size,
            dims: [0; 3],
        };
        g.dims = g.computed_dims()?;
        Ok(g)
    }

    pub fn ranges(&self) -> [[f64; 2]; 3] {
        [self.x_range, self.y_range, self.z_range]
    }

    fn computed_dims(&self) -> Result<[usize; 3]> {
        let mut dims = [0; 3];
        for (a, r) in self.ranges().iter().enumerate() {
            let s = self.voxel_size[a];
            if !(s > 0.0) || !(r[0] < r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::InvalidGrid(format!("axis {a} has an empty range or non-positive voxel size")));
            }
            dims[a] = cells(r[0], r[1], s).ok_or_else(|| {
                Error::InvalidGrid(format!("axis {a} extent {} is not a multiple of voxel size {s}", r[1] - r[0]))
            })?;
        }
        Ok(dims)
    }

    /// Fills `dims` when it was omitted from a config file.
    pub fn completed(mut self) -> Result<Self> {
        if self.dims == [0; 3] {
            self.dims = self.computed_dims()?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.computed_dims()?;
        if dims != self.dims {
            return Err(Error::InvalidGrid(format!("dims {:?} disagree with ranges ({dims:?})", self.dims)));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Voxel of `p`; `None` outside the half-open range.
    pub fn index_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut idx = [0; 3];
        for (a, r) in self.ranges().iter().enumerate() {
            let f = ((p[a] - r[0]) / self.voxel_size[a]).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Voxelization {
    /// Voxel of every input point; `None` when out of range.
    pub indices: Vec<Option<[usize; 3]>>,
    /// Occupied voxels in lexicographic order.
    pub occupied: Vec<[usize; 3]>,
    /// Point indices of each occupied voxel, ascending.
    pub point_lists: Vec<Vec<usize>>,
}

impl Voxelization {
    pub fn out_of_range(&self) -> usize {
        self.indices.iter().filter(|i| i.is_none()).count()
    }
}

/// Dynamic voxelization: only occupied voxels are materialized and no point is dropped.
pub fn voxelize_points(points: &[Vector3<f64>], grid: &GridConfig) -> Result<Voxelization> {
    grid.validate()?;
    let indices: Vec<Option<[usize; 3]>> = points.iter().map(|p| grid.index_of(p)).collect();
    let mut voxels: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (i, idx) in indices.iter().enumerate() {
        if let Some(v) = idx {
            voxels.entry(*v).or_default().push(i);
        }
    }
    let (occupied, point_lists) = voxels.into_iter().unzip();
    Ok(Voxelization {
        indices,
        occupied,
        point_lists,
    })
}

pub fn voxelize(cloud: &PointCloud, grid: &GridConfig) -> Result<Voxelization> {
    let pts: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p.position).collect();
    voxelize_points(&pts, grid)
}

/// Per-axis voxel offset of `old` inside `new`.
pub fn grid_offset(old: &GridConfig, new: &GridConfig) -> Result<[usize; 3]> {
    old.validate()?;
    new.validate()?;
    if old.voxel_size != new.voxel_size {
        return Err(Error::InvalidGrid("extension must keep the voxel size".into()));
    }
    let mut offset = [0; 3];
    for (a, (o, n)) in old.ranges().iter().zip(new.ranges()).enumerate() {
        let s = old.voxel_size[a];
        if n[0] > o[0] + ALIGN_TOLERANCE || n[1] < o[1] - ALIGN_TOLERANCE {
            return Err(Error::NotAnExtension { axis: a });
        }
        for shift in [o[0] - n[0], n[1] - o[1]] {
            let k = (shift / s).round();
            if (shift - k * s).abs() > ALIGN_TOLERANCE {
                return Err(Error::MisalignedExtension { axis: a, shift, voxel: s });
            }
        }
        offset[a] = ((o[0] - n[0]) / s).round().max(0.0) as usize;
    }
    Ok(offset)
}

/// Grows `old` to `new_ranges` with the same voxel size. Returns the new
/// grid and the offset with `new_index = old_index + offset`.
pub fn extend_grid(old: &GridConfig, new_ranges: [[f64; 2]; 3]) -> Result<(GridConfig, [usize; 3])> {
    old.validate()?;
    for (a, (o, n)) in old.ranges().iter().zip(&new_ranges).enumerate() {
        if n[0] > o[0] + ALIGN_TOLERANCE || n[1] < o[1] - ALIGN_TOLERANCE {
            return Err(Error::NotAnExtension { axis: a });
        }
        for shift in [o[0] - n[0], n[1] - o[1]] {
            let s = old.voxel_size[a];
            let k = (shift / s).round();
            if (shift - k * s).abs() > ALIGN_TOLERANCE {
                return Err(Error::MisalignedExtension { axis: a, shift, voxel: s });
            }
        }
    }
    let new = GridConfig::new(new_ranges[0], new_ranges[1], new_ranges[2], old.voxel_size)?;
    let offset = grid_offset(old, &new)?;
    Ok((new, offset))
}

/// Dense payload over a grid, row-major with z fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBuffer<T> {
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Clone> GridBuffer<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn get(&self, idx: [usize; 3]) -> &T {
        &self.data[(idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]]
    }
}

/// Copies every cell of `buffer` (laid out over `old`) to its shifted
/// position in `new`; cells not covered by `old` get `fill`.
pub fn transfer_grid_buffer<T: Clone>(buffer: &GridBuffer<T>, old: &GridConfig, new: &GridConfig, fill: T) -> Result<GridBuffer<T>> {
    let offset = grid_offset(old, new)?;
    if buffer.dims != old.dims || buffer.data.len() != old.n_cells() {
        return Err(Error::shape(old.n_cells(), buffer.data.len()));
    }
    let mut out = GridBuffer::filled(new.dims, fill);
    let [dx, dy, dz] = old.dims;
    for x in 0..dx {
        for y in 0..dy {
            let src = (x * dy + y) * dz;
            let dst = new.linear([x + offset[0], y + offset[1], offset[2]]);
            out.data[dst..dst + dz].clone_from_slice(&buffer.data[src..src + dz]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn base() -> GridConfig {
        GridConfig::new([-51.2, 51.2], [-51.2, 51.2], [-3.0, 3.0], [0.2, 0.2, 0.2]).unwrap()
    }

    #[test]
    fn documented_extension() {
        let (new, off) = extend_grid(&base(), [[-102.4, 102.4], [-51.2, 51.2], [-3.0, 3.0]]).unwrap();
        assert_eq!(off, [256, 0, 0]);
        assert_eq!(base().dims[0], 512);
        assert_eq!(new.dims[0], 1024);
        assert_eq!(new.voxel_size, base().voxel_size);
    }

    #[test]
    fn identity_extension() {
        let g = base();
        let (new, off) = extend_grid(&g, g.ranges()).unwrap();
        assert_eq!(off, [0, 0, 0]);
        let buf = GridBuffer {
            dims: g.dims,
            data: (0..g.n_cells()).map(|i| i as f32 * 0.5).collect(),
        };
        assert_eq!(transfer_grid_buffer(&buf, &g, &new, 0.0).unwrap(), buf);
    }

    #[test]
    fn extension_errors() {
        let g = base();
        assert!(matches!(
            extend_grid(&g, [[-51.1, 51.2], [-51.2, 51.2], [-3.0, 3.0]]),
            Err(Error::NotAnExtension { axis: 0 })
        ));
        assert!(matches!(
            extend_grid(&g, [[-51.2, 51.2], [-51.3, 51.2], [-3.0, 3.0]]),
            Err(Error::MisalignedExtension { axis: 1, .. })
        ));
        assert!(GridConfig::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.3, 0.5, 0.5]).is_err());
    }

    #[test]
    fn lower_corner_and_shared_cell() {
        let g = base();
        let v = voxelize_points(
            &[
                Vector3::new(-51.2, -51.2, -3.0),
                Vector3::new(0.01, 0.01, 0.01),
                Vector3::new(0.02, 0.03, 0.04),
                Vector3::new(51.2, 0.0, 0.0),
            ],
            &g,
        )
        .unwrap();
        assert_eq!(v.indices[0], Some([0, 0, 0]));
        assert_eq!(v.indices[1], v.indices[2]);
        assert_eq!(v.indices[3], None);
        assert_eq!(v.occupied.len(), 2);
    }

    #[test]
    fn ones_block_conserves_sum() {
        let old = GridConfig::new([0.0, 2.0], [0.0, 1.0], [0.0, 1.0], [0.5, 0.5, 0.5]).unwrap();
        let (new, off) = extend_grid(&old, [[-1.0, 3.0], [-0.5, 1.5], [0.0, 2.0]]).unwrap();
        assert_eq!(off, [2, 1, 0]);
        let ones = GridBuffer::filled(old.dims, 1u32);
        let out = transfer_grid_buffer(&ones, &old, &new, 0).unwrap();
        assert_eq!(out.data.iter().sum::<u32>(), old.n_cells() as u32);
        assert_eq!(*out.get([2, 1, 0]), 1);
        assert_eq!(*out.get([0, 0, 0]), 0);
        let wrong = GridBuffer::filled([1, 1, 1], 1u32);
        assert!(matches!(transfer_grid_buffer(&wrong, &old, &new, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn voxel_lists_partition_points() {
        let g = base();
        let mut r = crate::rng::stream(5, &[]);
        let pts: Vec<Vector3<f64>> = (0..20_000)
            .map(|_| Vector3::new(r.random_range(-60.0..60.0), r.random_range(-60.0..60.0), r.random_range(-4.0..4.0)))
            .collect();
        let v = voxelize_points(&pts, &g).unwrap();
        let mut seen = vec![false; pts.len()];
        for (vox, list) in v.occupied.iter().zip(&v.point_lists) {
            for &i in list {
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(v.indices[i], Some(*vox));
            }
        }
        for (i, s) in seen.iter().enumerate() {
            assert_eq!(*s, v.indices[i].is_some());
        }
    }

    proptest! {
        #[test]
        fn remap_matches_revoxelization(
            grow in prop::array::uniform6(0u32..40),
            pts in prop::collection::vec((-51.0f64..51.0, -51.0f64..51.0, -2.9f64..2.9), 1..200),
        ) {
            let g = base();
            let s = 0.2;
            let ranges = [
                [-51.2 - grow[0] as f64 * s, 51.2 + grow[1] as f64 * s],
                [-51.2 - grow[2] as f64 * s, 51.2 + grow[3] as f64 * s],
                [-3.0 - grow[4] as f64 * s, 3.0 + grow[5] as f64 * s],
            ];
            let (new, off) = extend_grid(&g, ranges).unwrap();
            for (x, y, z) in pts {
                let p = Vector3::new(x, y, z);
                let a = g.index_of(&p).unwrap();
                let b = new.index_of(&p).unwrap();
                prop_assert_eq!([a[0] + off[0], a[1] + off[1], a[2] + off[2]], b);
            }
        }
    }
}

//! `flowbench voxel`: grid extension with a fixed voxel size.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use flowbench_core::io;
use flowbench_core::voxelgrid::{extend_grid, GridConfig};

use crate::{emit, to_json};

#[derive(Debug, Subcommand)]
pub enum VoxelCommand {
    /// Grow a grid to new ranges and print the new grid and index offset.
    Extend(ExtendArgs),
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    /// Grid config JSON.
    #[arg(long)]
    pub grid: PathBuf,
    /// New x range `lo,hi` in meters; unchanged when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z_range: Option<Vec<f64>>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Extension {
    pub grid: GridConfig,
    /// `new_index = old_index + offset`, per axis.
    pub offset: [usize; 3],
}

pub fn run(c: &VoxelCommand) -> Result<()> {
    match c {
        VoxelCommand::Extend(a) => {
            let old: GridConfig = io::read_json(&a.grid)?;
            let old = old.completed()?;
            let mut ranges = old.ranges();
            for (axis, r) in [&a.x_range, &a.y_range, &a.z_range].into_iter().enumerate() {
                if let Some(r) = r {
                    let [lo, hi] = r[..] else {
                        bail!("range of axis {axis} needs exactly two values");
                    };
                    ranges[axis] = [lo, hi];
                }
            }
            let (grid, offset) = extend_grid(&old, ranges)?;
            emit(a.out.as_ref(), &to_json(&Extension { grid, offset })?)
        }
    }
}

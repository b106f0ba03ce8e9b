//! Unified scene-flow benchmarking: data model, dataset unification,
//! synthetic scenes, ground segmentation, augmentation, sampling, metrics,
//! voxel grids and reference baselines.

pub mod augment;
pub mod baselines;
pub mod error;
pub mod flow;
pub mod groundseg;
pub mod io;
pub mod metrics;
pub mod pose;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod types;
pub mod unify;
pub mod voxelgrid;

pub use error::{Error, Result};
pub use flow::LabeledPair;
pub use pose::Pose;
pub use types::{CoarseClass, FlowField, FramePair, ObjectAnnotation, Point, PointCloud, PointMeta};

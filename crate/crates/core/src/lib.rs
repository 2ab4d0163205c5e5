//! Modal panoptic segmentation and tracking of LiDAR sweeps from point-level
//! labels.

pub mod error;
pub mod inference;
pub mod io;
pub mod losses;
pub mod membership;
pub mod metrics;
pub mod nn;
pub mod registry;
pub mod synth;
pub mod targets;
pub mod types;
pub mod voxel;

pub use error::{Error, Result};

//! Weakly supervised volumetric segmentation from six extreme clicks.
//!
//! The pipeline: extreme points give a tight bounding box; geodesics
//! between opposite extreme points (optionally guided by the current
//! model's probabilities) supply foreground labels; everything outside a
//! relaxed box is background; a pairwise CRF relaxation regularises the
//! unlabeled remainder. [`trainer`] ties these together around a small
//! per-voxel logistic model.

pub mod ablation;
pub mod annotations;
pub mod crf;
pub mod error;
pub mod geodesics;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Volume, VoxelIndex};

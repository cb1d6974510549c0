//! Matrix-variate dynamic linear models for voxel-wise fMRI activation.
//!
//! Each voxel and its neighbours within a radius form the columns of one
//! observation row; the model is filtered forward, state trajectories are
//! sampled with FEST, FFBS or FSTS, and Monte Carlo activation evidence is
//! computed from the draws.

pub mod analysis;
pub mod distributions;
pub mod dlm;
pub mod error;
pub mod evidence;
pub mod geometry;
pub mod group;
pub mod linalg;
pub mod rng;
pub mod samplers;
pub mod synth;
pub mod volume_io;

pub use analysis::{evidence_map, single_voxel, AnalysisConfig, EvidenceMaps, SingleVoxelReport};
pub use dlm::{forward_filter, ClusterSeries, DesignMatrix, DlmHyper, FilterMoments, ModelSpec};
pub use error::{Error, Result};
pub use evidence::{EvidenceTest, FestTest};
pub use geometry::{BrainMask, GridDims, VoxelCoord};
pub use group::{group_map, group_single_voxel, GroupData, Subject};
pub use samplers::Algorithm;

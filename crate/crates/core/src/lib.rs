//! Volumetric topology toolkit for tubular structures.
//!
//! The crate covers the full loop around connectivity-aware segmentation of
//! vessel-like networks:
//!
//! * [`grid`]: dense 2D/3D voxel grids, connected components, exact
//!   Euclidean distance transforms and channel softmax.
//! * [`skeleton`]: morphological soft skeletons and endpoint detection.
//! * [`edm`]: endpoint-guided discontinuity mining, which turns a ground
//!   truth mask and a prediction into a mask of likely fragmentation sites.
//! * [`metrics`]: Dice, clDice, Betti numbers / Betti error and Hausdorff
//!   distance.
//! * [`heads`]: forward values of the consistency, segmentation and
//!   refinement losses, and the dual-attention refinement operator.
//! * [`synth`]: seeded synthetic tube networks with injected cuts, used as
//!   ground truth for the mining and metric code.
//! * [`volio`]: NIfTI-1 / PGM volumes and the JSON documents the CLI emits.
//! * [`bridge`]: flat-buffer entry points for foreign-language bindings.

pub mod bridge;
pub mod edm;
pub mod error;
pub mod grid;
pub mod heads;
pub mod metrics;
pub mod rng;
pub mod skeleton;
pub mod synth;
pub mod volio;

pub use error::{Error, Result};
pub use grid::{BinaryMask, Connectivity, LabelVolume, ProbVolume, Shape, Spacing, ValueKind, Voxel, VoxelGrid};

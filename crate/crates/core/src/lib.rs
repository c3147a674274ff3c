//! Multi-modal 3D detection on a small float64 autodiff core.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense tensors, a reverse-mode tape, learned layers and Adam.
//! * [`geometry`] sampling, grouping, interpolation, depth binning, calibration.
//! * [`frustum`] image encoder, frustum features and pseudo-point generation.
//! * [`fusion`] point-transformer encoder/decoder stages, cross-modal fusion and the proposal head.
//! * [`losses`] depth and proposal objectives.
//! * [`eval`] rotated IoU, NMS, proposal assignment and AP with 40 recall positions.
//! * [`kitti`] KITTI file formats and deterministic synthetic scenes.
//! * [`pipeline`] the assembled detector, its training step and inference.

pub mod error;
pub mod eval;
pub mod frustum;
pub mod fusion;
pub mod geometry;
pub mod kitti;
pub mod losses;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

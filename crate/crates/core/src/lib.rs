//! Relative pose estimation for image pairs with little or no overlap, driven
//! by generated intermediate views.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rotations, camera poses, slerp and trajectory construction.
//! - [`features`]: frames, ORB-style detection/description and Hamming matching.
//! - [`robust`]: RANSAC fundamental-matrix fitting and essential-matrix pose recovery.
//! - [`selector`]: relay-frame patterns, the feature-matching selector and the
//!   confidence baseline.
//! - [`backends`]: the interpolation / view-synthesis / pose roles, their JSON
//!   wire format, an HTTP client and a synthetic projective backend.
//! - [`pipeline`]: end-to-end orchestration for one pair or a manifest.
//! - [`eval`]: angular error metrics, recall, AUC and pair sampling.

pub mod backends;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod robust;
pub mod selector;

pub use geometry::{CameraPose, Rotation, Trajectory};

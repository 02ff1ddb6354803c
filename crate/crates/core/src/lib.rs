//! Stereo matching refined by monocular depth.
//!
//! The crate builds a census cost volume, iteratively refines a disparity
//! estimate under guidance from local depth-ordering maps, registers an
//! affine-invariant monocular depth map onto the result and fuses the two
//! with a per-pixel confidence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod global_fusion;
pub mod grid;
pub mod io;
pub mod local_fusion;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod ordering;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{ImageBuffer, ScalarField};

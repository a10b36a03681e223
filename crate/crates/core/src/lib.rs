//! Groupwise registration of image sequences with the SqN measure: the
//! integral over the domain of a Schatten-q quasinorm of the per-pixel
//! matrix of normalized gradients of all frames.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`], [`pgm`]: cell-centered grids, images, stacks, pyramids, I/O.
//! - [`transform`]: interpolation, displacement fields, warping, DFIELD I/O.
//! - [`ngf`]: finite-difference gradients and edge normalization.
//! - [`schatten`]: Schatten-q values and derivatives of small matrices.
//! - [`measures`]: SqN plus pairwise NGF, SSD and MI.
//! - [`regularizer`]: curvature energy of displacement fields.
//! - [`optimize`], [`register`]: line search, descent drivers and the
//!   global and sequential multi-level registration schemes.

pub mod eigen;
pub mod error;
pub mod grid;
pub mod measures;
pub mod ngf;
pub mod optimize;
pub mod pgm;
pub mod register;
pub mod regularizer;
pub mod schatten;
pub mod transform;

pub use error::{Error, Result};

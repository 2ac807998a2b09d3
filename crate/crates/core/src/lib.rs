//! Registration, loss and evaluation toolkit for paired optical / canopy
//! height model (CHM) rasters.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`raster`] holds the [`Grid`] container and the shared numeric kernels
//!   (Sobel, pooling, bilinear sampling, warping, downsampling).
//! * [`global_align`] estimates a rigid per-tile translation from peak masks.
//! * [`local_align`] builds a dense displacement field from tree boxes.
//! * [`losses`] contains the reference loss implementations and the
//!   curriculum schedule.
//! * [`metrics`] is the evaluation suite.
//! * [`cleaning`] trains and applies the keep/discard linear probe and zeroes
//!   building footprints.
//! * [`sampler`] plans category-balanced batches.
//! * [`pipeline`] ties the stages together over directories of tiles.
//!
//! Heights are stored in meters everywhere; the losses expect heights divided
//! by [`NormalizationConfig::height_divisor`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cleaning;
pub mod error;
pub mod formats;
pub mod global_align;
pub mod local_align;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod sampler;
pub mod synthetic;
mod stats;

pub use error::{Error, Result};
pub use raster::{BitMask, DisplacementField, Grid, NormalizationConfig};

//! Fingerprint quality classification and hybrid orientation maps.
//!
//! The crate is organised bottom-up:
//!
//! - [`imgcore`]: grayscale raster, file I/O and geometric primitives.
//! - [`features`]: the six scalar quality features of a fingerprint image.
//! - [`balance`]: eigen-direction oversampling guarded by class-distribution divergence.
//! - [`learners`]: random forest and gradient boosting built from scratch.
//! - [`ucflem`]: the dual-phase, dual-layer agreement cascade over the two learners.
//! - [`hfom`]: rotation alignment, block orientation fields and the four-quadrant hybrid map.
//! - [`synth`]: seeded synthetic ridge images for the three quality classes.
//!
//! Data-parallel loops go through [`exec::Execution`]. With the `parallel`
//! feature (on by default) they run on rayon; without it every call is sequential.

pub mod balance;
pub mod error;
pub mod exec;
pub mod features;
pub mod hfom;
pub mod imgcore;
pub mod learners;
pub mod synth;
pub mod ucflem;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use exec::Execution;
pub use features::{FeatureConfig, FeatureVector, Label, LabeledSample};
pub use imgcore::GrayImage;

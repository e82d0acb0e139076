//! Repair of imperfect 3D segmentation masks with appearance-aware implicit
//! occupancy fields.
//!
//! A convolutional decoder turns one learnable latent code per shape into a
//! pyramid of feature grids; a small MLP reads trilinearly interpolated
//! features, the query coordinates and the local image intensity and predicts
//! occupancy. Fitting the model to noisy masks and re-sampling it on the full
//! grid yields the repaired annotation.

pub mod checkpoint;
pub mod distort;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

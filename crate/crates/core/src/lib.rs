//! Multi-model rigid registration of 3D correspondences.
//!
//! Given correspondences produced by several rigidly moving objects plus
//! outliers, recover every object's motion and the point-to-object
//! assignment with a classification EM loop built on Horn's method.

pub mod baselines;
pub mod clustering;
pub mod em;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod horn;
pub mod metrics;
pub mod scene;
pub mod theory;

pub use error::{Error, Result};

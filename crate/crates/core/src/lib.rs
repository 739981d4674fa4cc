//! Layer-wise comparison of neural network representations.
//!
//! Given per-layer activation dumps of two models over the same token
//! sequence, the crate measures similarity at three levels:
//!
//! * representation: coordinate-by-coordinate agreement
//!   ([`representation::dimwise_correlation`], [`representation::procrustes_align`]),
//! * geometry: basis-invariant shape of the point cloud
//!   ([`geometry::linear_cka`], [`geometry::knn_overlap`]),
//! * function: transfer of a frozen linear readout ([`probe::cross_transfer`]).
//!
//! [`sweep`] runs these over layer grids and checkpoint series and
//! [`report`] writes the results as JSON, CSV and SVG.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod npy;
pub mod numerics;
pub mod probe;
pub mod report;
pub mod representation;
pub mod store;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use store::{load_activation_set, ActivationMatrix, ActivationSet, LabelSet};

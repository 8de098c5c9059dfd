//! Localization of structures in 3D volumes by slice-wise presence detection.
//!
//! A single small convolutional network classifies sagittal, coronal and axial
//! slices of a volume for the presence of each target structure. The per-slice
//! probabilities are thresholded and intersected into a voxel mask whose
//! largest connected component gives one bounding box per structure.
//!
//! Module map:
//!
//! * [`nn`]: tensors, layers, loss, initialization and the Nesterov optimizer.
//! * [`model`]: the BoBNet architecture, single-slice prediction, checkpoints.
//! * [`volume`]: MetaImage volumes and bounding-box text files.
//! * [`slicing`]: slice extraction, resampling, labels, augmentation, minibatches.
//! * [`fusion`]: probability profiles to 3D boxes.
//! * [`metrics`]: F1, wall and centroid distances, McNemar's test.
//! * [`phantom`]: synthetic volumes with exact ground-truth boxes.
//! * [`train`]: run configuration and the training loop.

pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod slicing;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

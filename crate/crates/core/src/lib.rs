//! Unsupervised image-set clustering on deep features.
//!
//! The pipeline extracts activations of a frozen, pretrained CNN at a chosen
//! layer ([`extract`]), clusters them with one of seven classical algorithms
//! ([`cluster`]) and scores the partition against ground truth with NMI and
//! purity ([`metrics`]). [`bench`] runs the model x layer x algorithm grid
//! and the acquisition-condition protocols over cached features.

pub mod bench;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod extract;
pub mod features;
pub mod metrics;
pub mod preprocess;

pub use error::{Error, ErrorKind, Result};
pub use features::{FeatureMatrix, Points, Provenance};

//! Semantical occupancy grid maps (SOGMs), supercell refinement and
//! hierarchical Bakis-HMM path decoding.
//!
//! The crate is organized along the processing pipeline:
//!
//! - [`grid`]: multi-layer occupancy grids and log-odds fusion
//! - [`segmentation`]: supercell extraction and the point-cloud reduction
//! - [`hmm`]: GMM-emission Bakis HMMs, Baum-Welch training and decoding
//! - [`sim`]: synthetic table-top scenes and classifier response models
//! - [`pipeline`]: trajectory sampling and end-to-end experiments
//! - [`baselines`]: reference classifiers and macro-F1 scoring

pub mod baselines;
pub mod error;
pub mod grid;
pub mod hmm;
pub mod io;
pub mod kmeans;
pub mod pipeline;
pub mod segmentation;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{
    inverse_logit, logit, update_cell, GridIndex, GridSpec, LayerObservation, LogOdds, Pose,
    Probability, SemanticGrid, EPS,
};
pub use segmentation::{PointCloudMap, Segmentation, SegmentationParams, Supercell};

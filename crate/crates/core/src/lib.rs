//! Sim-to-real domain adaptation for multi-class semantic segmentation.
//!
//! The pipeline blends a small budget of labelled real images into a simulated
//! training set, allocating them across classes by the inverse of each class's
//! validation IoU ranking, and narrows the remaining style gap by swapping the
//! low-frequency amplitude spectrum of simulated images with that of real ones.
//!
//! Modules:
//! - [`datamodel`]: classes, samples, JSON manifests and PNG masks.
//! - [`metrics`]: confusion matrix, IoU, accuracy, rankings.
//! - [`irb`]: ranking, 5:3:2 allocation, blend selection and the retraining loop.
//! - [`styletransfer`]: Fourier amplitude swapping.
//! - [`trainer`]: model contract, reference network, checkpoints, evaluation.
//! - [`synthgen`]: procedural paired sim/real datasets.
//! - [`cli`] and [`report`]: command implementations and Table-style reports.

pub mod cli;
pub mod datamodel;
pub mod error;
pub mod irb;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod styletransfer;
pub mod synthgen;
pub mod trainer;
pub mod util;

pub use datamodel::{ClassSet, DatasetManifest, Domain, SampleRecord, Split};
pub use error::{Error, Result};
pub use irb::{BlendAllocation, BlendPolicy, IrbRunState};
pub use metrics::{ConfusionMatrix, IoUReport};
pub use styletransfer::SpectralConfig;
pub use trainer::TrainerConfig;

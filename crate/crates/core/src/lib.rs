//! Scoring of tissue-microarray style texture images.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`imaging`] decodes grayscale images and quantizes them to `G` levels.
//! 2. [`texture`] turns each quantized image into a flattened spatial
//!    histogram (gray-level co-occurrence matrix).
//! 3. [`forest`] trains a random forest and reports per-class vote tallies
//!    together with the vote-margin confidence.
//! 4. [`transfer`] enlarges a small training set with auxiliary instances
//!    that the initial model already predicts correctly and confidently.
//! 5. [`evaluation`] measures accuracy, the class separation ratio and a
//!    2-D PCA projection.
//!
//! [`synthgen`] generates seeded synthetic corpora so the whole pipeline can
//! be exercised offline.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod imaging;
pub mod seed;
pub mod synthgen;
pub mod texture;
pub mod transfer;

pub use dataset::{FeatureTable, LabeledInstance, Score};
pub use error::{Error, Result};
pub use evaluation::{accuracy, pca_project, separation_ratio, Projection2D, SeparationBreakdown};
pub use forest::{confidence, Forest, ForestParams, Mtry, VoteTally};
pub use imaging::{load_grayscale, load_manifest, quantize, DatasetManifest, GrayImage, QuantizedImage};
pub use texture::{spatial_histogram, Direction, FeatureOptions, FeatureVector, SpatialHistogram};
pub use transfer::{run_experiment, tma_score, tma_transfer, ScoreReport, TransferConfig, TransferableSet};

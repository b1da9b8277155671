//! Batch selection for active learning on instance segmentation.
//!
//! Given model predictions for a pool of unlabeled images, pick the next
//! batch to annotate. The main strategy ranks detected instances by
//! uncertainty, keeps a diverse subset of them by solving a maximum k-set
//! cover over a thresholded cosine-similarity graph, and then votes images in
//! by how many of those instances they contain. Uncertainty-only,
//! diversity-only, and image-level baselines share the same interface.

pub mod config;
pub mod manifest;
pub mod maxcover;
pub mod model;
pub mod report;
pub mod sim;
pub mod simgraph;
pub mod strategies;
pub mod uncertainty;

pub use config::{CoverAlgorithm, InstanceMetric, SelectionConfig, Strategy};
pub use maxcover::{CoverProblem, CoverSolution};
pub use model::{ImagePrediction, InstancePrediction, Mask, Pool, PoolState};
pub use strategies::{select, StrategyOutput};

/// Crate version, embedded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

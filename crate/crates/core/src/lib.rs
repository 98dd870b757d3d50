//! Uncertainty-based corner-case detection for instance segmentation.
//!
//! Repeated stochastic predictions of one image are clustered per object,
//! each cluster is summarized by 26 uncertainty criteria, clusters are
//! categorized against ground truth, and a tree classifier learns to
//! predict the category from the criteria alone. Images holding predicted
//! corner cases are then selected for the next training cycle.

pub mod analysis;
pub mod clustering;
pub mod criteria;
pub mod cycle;
pub mod decision;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod matching;
pub mod pipeline;

pub use clustering::{Cluster, ClusteringConfig};
pub use criteria::{CriteriaVector, FEATURE_COUNT, FEATURE_NAMES};
pub use error::{Error, Result};
pub use geometry::{BBox, BinaryMask, RleMask};
pub use ingest::{DetectionSample, FeatureRow, GroundTruthObject, RunManifest};
pub use matching::{Category, CategoryCounts, MatchResult};
pub use pipeline::PipelineConfig;

//! Floor-texture localization from keypoint graphs.
//!
//! A downward camera sees a patch of a feature-rich floor. Each image becomes
//! a complete graph over its strongest keypoints (edges weighted by pairwise
//! pixel distance), a graph-convolutional encoder turns the graph into a
//! compact embedding, and a map database links embeddings of previously
//! recorded views to world poses. Localization is then embedding retrieval,
//! density clustering of the retrieved positions, and homography-based
//! rotation refinement — independently for every frame, so a kidnapped robot
//! relocalizes without any filtering state.
//!
//! Modules follow the pipeline:
//! - [`graph`]: keypoint graphs and the normalized adjacency.
//! - [`encoder`]: the three-layer GCN with attention-sum pooling and its
//!   analytic gradients.
//! - [`trainer`]: Siamese contrastive training with curriculum pair sampling.
//! - [`dataset`]: synthetic floor generation, trajectory sweeps, and the
//!   on-disk view format.
//! - [`mapdb`]: the map / graph databases with exact kNN retrieval.
//! - [`geometry`]: descriptor matching, normalized DLT homography, circular
//!   median, DBSCAN.
//! - [`localizer`]: the per-frame pipeline plus the structure-blind baseline.
//! - [`eval`]: error metrics, sweeps, runtime benchmarks and report files.

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod localizer;
pub mod mapdb;
pub mod svg;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::ViewId;

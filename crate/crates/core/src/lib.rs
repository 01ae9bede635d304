//! Panoptic segmentation of 3D point clouds as graph clustering.
//!
//! A point cloud is oversegmented into superpoints, each superpoint carries a
//! class distribution and a position, adjacent superpoints carry an object
//! agreement, and a single weighted-cut partition problem turns all of it into
//! instances. The crate also provides the panoptic metrics, synthetic scenes
//! with ground truth, and a matching-based baseline for scalability comparisons.

pub mod arrays;
pub mod cutpursuit;
pub mod domain;
pub mod error;
pub mod graph;
pub mod io;
mod kdtree;
pub mod matching;
pub mod metrics;
pub mod numeric;
pub mod panoptic;
pub mod scenegen;
pub mod superpoints;

pub use domain::{
    normalize_scores, validate_ground_truth, ClassEntry, ClassTable, ClusteringParams, NodeSignal, PanopticLabels,
    PointCloud, Violation, IGNORE,
};
pub use error::{Error, Result};
pub use graph::{build_knn_graph, superpoint_adjacency, AdjacencyGraph};
pub use superpoints::{compute_superpoints, SuperpointPartition};
pub use metrics::{panoptic_quality, PanopticMetrics};
pub use scenegen::{generate_scene, SceneSpec};
pub use panoptic::{run_pipeline, PipelineConfig};

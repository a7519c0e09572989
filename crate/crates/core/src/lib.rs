//! Prototype selection for correlated features with exact post-selection inference.

pub mod cluster;
pub mod dataset;
pub mod error;
pub mod gapstat;
pub mod lasso;
pub mod io;
pub mod knockoff;
pub mod linalg;
pub mod pipeline;
pub mod polyhedra;
pub mod proto;
pub mod prototest;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use cluster::{adjusted_rand_index, correlation_dissimilarity, hclust, Clustering, Dendrogram, Linkage};
pub use dataset::{generate_block_design, generate_response, BlockDesignSpec, Dataset};
pub use error::{Error, Result};
pub use gapstat::{estimate_clusters, GapCurve, GapOptions, ReferenceScheme};
pub use proto::{extract_prototypes, screening_constraints, ConstraintTag, Polyhedron, PrototypeSet};

//! Balanced k-ary identifier trees for generative retrieval.
//!
//! Items are recursively partitioned into `k` near-equal clusters; the path
//! from the root to an item's leaf is its identifier. Splits are solved
//! either exactly (capacity-constrained k-means via min-cost flow) or
//! greedily, with a size threshold switching between the two.

pub mod bench;
pub mod cli;
pub mod clustering;
pub mod decode;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mincostflow;
pub mod objectives;
pub mod treebuild;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_embeddings, validate_tree, CapacityBounds, ClusterAssignment, EmbeddingMatrix, GreedyOrder,
    IdentifierTree, Method, Node, NodeId, TokenPath, TreeBuildConfig,
};

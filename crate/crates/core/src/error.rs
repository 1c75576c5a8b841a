use thiserror::Error;

use crate::types::{EmbeddingViolation, TreeViolation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embeddings: {0}")]
    InvalidEmbeddings(EmbeddingViolation),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible capacity bounds: {0}")]
    Infeasible(String),
    #[error("cost overflow: {0}")]
    CostOverflow(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: String, expected: usize, actual: usize },
    #[error("item {item} out of range (n_items = {n_items})")]
    ItemOutOfRange { item: usize, n_items: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("tree validation failed: {0}")]
    TreeValidation(TreeViolation),
    #[error("scorer contract violated: {0}")]
    ScorerContract(String),
    #[error("no eligible triplet: {0}")]
    NoEligiblePair(String),
    #[error("empty relevant set for {0}")]
    EmptyRelevant(String),
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

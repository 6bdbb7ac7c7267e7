//! Random-forest semantic hashing.
//!
//! Trees in a random forest act as hashing functions: a point's root-to-leaf
//! path through each tree becomes a sparse `(2^d - 2)`-bit code with exactly
//! `d - 1` ones. Per-tree code blocks are aggregated into a target-length
//! hash by greedily selecting the blocks that maximize mutual information
//! with the rest of the forest (plus an optional label term), and retrieval
//! is evaluated by precision/recall at a Hamming radius.
//!
//! Modules:
//! - [`hashcore`]: tree/code geometry, bit packing, Hamming distance
//! - [`training`]: randomized forest training (stump or subspace splits) and encoding
//! - [`aggregation`]: mutual-information block selection
//! - [`retrieval`]: Hamming-radius search and precision/recall metrics
//! - [`io`]: dataset ingestion (IDX/CSV/raw) and bit-exact model/code files

pub mod aggregation;
pub mod error;
pub mod hashcore;
pub mod io;
pub mod model;
pub mod retrieval;
pub mod training;

pub use aggregation::{
    aggregate, AggregationConfig, AggregationOutcome, BlockSelection, LeafVariable, MiMatrix,
    SelectionMethod,
};
pub use error::{Error, Result};
pub use hashcore::{
    concat_codes, hamming, leaf_to_path, path_to_leaf, BitVec, HashCode, PathCode, TreeShape,
};
pub use model::Model;
pub use retrieval::{bench_encode, encode_timing, RetrievalIndex, RetrievalMetrics};
pub use training::{
    encode_dataset, encode_forest, encode_point, train_forest, CodeBlock, Dataset, Forest,
    ForestConfig, Splitter, Tree,
};

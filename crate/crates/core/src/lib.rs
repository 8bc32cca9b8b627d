//! Neighborhood-controlled contrastive learning for document embeddings.
//!
//! The pipeline trains citation-graph node embeddings, mines
//! `(query, positive, negative)` triples from rank bands of each query's exact
//! nearest neighbors, trains a document encoder with a triplet margin loss, and
//! evaluates the resulting vectors.

pub mod ann_index;
pub mod corpus_graph;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval_harness;
pub mod fixture;
pub mod graph_embed;
pub mod pipeline;
pub mod seed;
pub mod triple_miner;

pub use error::{Error, Result};

//! Taxonomy expansion driven by user click logs.
//!
//! The pipeline mines candidate hyponymy edges from query/click pairs,
//! weights them with an IF/IQF scheme, learns an edge classifier over
//! relational (text-pair) and structural (graph) representations trained on
//! a balanced self-supervised dataset, and attaches accepted edges to the
//! existing taxonomy top-down with transitive pruning.

pub mod corpus;
pub mod error;
pub mod graph;
pub mod selfsup;
pub mod nn;
pub mod rng;
pub mod taxonomy;
pub mod text;

pub use error::{Error, Result};

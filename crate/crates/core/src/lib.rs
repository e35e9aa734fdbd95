//! Heterophilous-information graph learning.
//!
//! The crate measures graph homophily, extracts per-node neighbor-label
//! distributions, rewires a graph by thresholded cosine similarity of those
//! distributions, predicts the homophily of the rewired graph in closed form
//! (with a Monte-Carlo check), and trains a two-channel graph convolutional
//! classifier that fuses the original and the rewired graph.
//!
//! Module map:
//!
//! - [`graph`]: graph, dataset and normalized adjacency types plus file IO.
//! - [`homophily`]: homophily metrics, neighbor distributions, rewiring.
//! - [`theory`]: closed-form rewired homophily and its Monte-Carlo oracle.
//! - [`synth`]: class-balanced stochastic block model datasets.
//! - [`tensor`]: dense/sparse matrices, a gradient tape and Adam.
//! - [`gnn`]: GCN layers, two-channel forward pass, training loop.
//! - [`pipeline`]: label estimation, end-to-end runs, ablations, sweeps.
//!
//! Data-parallel kernels use rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain loops otherwise. Results are
//! bit-identical either way.

pub mod error;
pub mod gnn;
pub mod graph;
pub mod homophily;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};

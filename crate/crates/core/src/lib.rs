//! Heterogeneous graph learning engine.
//!
//! The crate is organized in four layers:
//!
//! 1. **Data** — [`schema`] declares node sets, edge sets and context
//!    features; [`graph`] holds immutable graph tensors with multi-component
//!    batching and padding; [`io`] serializes them to `.gtr` record files.
//! 2. **Exchange** — [`exchange`] moves values between nodes, edges and the
//!    per-component context (broadcast, pool, per-receiver softmax).
//! 3. **Models** — [`layers`] builds trainable graph updates (vanilla MPNN,
//!    GCN, R-GCN next-state, GraphSAGE, GATv2) on the [`tensor`] autodiff
//!    tape.
//! 4. **Orchestration** — [`sampler`] extracts rooted subgraphs from a graph
//!    store; [`runner`] trains, evaluates, exports and runs batch inference.

pub mod error;
pub mod exchange;
pub mod graph;
pub mod io;
pub mod layers;
pub mod runner;
pub mod sampler;
pub mod schema;
pub mod tensor;

pub use error::{Error, Result};

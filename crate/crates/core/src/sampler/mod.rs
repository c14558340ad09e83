//! Rooted-subgraph sampling: an in-memory graph store, sampling-spec
//! construction and validation, and sharded parallel execution that emits
//! seed-first single-component graphs.

mod run;
mod spec;
mod store;
mod tables;

pub use run::{sample_edges, sample_subgraphs, SampledEdge};
pub use spec::{
    origin_node_set, result_node_set, Direction, OpHandle, SamplingOp, SamplingSpec,
    SamplingSpecBuilder, SeedOp, Strategy,
};
pub use store::{Csr, GraphStore};
pub use tables::{parse_csv, parse_ndjson, read_table, RawRow};

//! Data exchange across the graph: broadcast and pool between node sets,
//! edge sets and the per-component context, plus per-receiver softmax.
//!
//! These are pure functions over a graph's index structure; values move
//! through the autodiff tape so layers can differentiate through them. Every
//! op accepts either an explicit tape value or the name of a stored feature.

use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::tensor::{Reduce, Scalar, Tape, ValueId};

/// Which endpoint of an edge (or the graph context) an operation addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndpointTag {
    Source,
    Target,
    Context,
}

impl EndpointTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(EndpointTag::Source),
            "target" => Ok(EndpointTag::Target),
            "context" => Ok(EndpointTag::Context),
            other => Err(Error::InvalidArgument {
                op: "receiver_tag".into(),
                message: format!("unknown endpoint tag {other:?}"),
            }),
        }
    }

    /// The other edge endpoint; context has no opposite.
    pub fn opposite(self) -> Result<Self> {
        match self {
            EndpointTag::Source => Ok(EndpointTag::Target),
            EndpointTag::Target => Ok(EndpointTag::Source),
            EndpointTag::Context => Err(Error::InvalidArgument {
                op: "opposite".into(),
                message: "context has no opposite endpoint".into(),
            }),
        }
    }
}

/// A node set or an edge set, for context exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetRef<'a> {
    Nodes(&'a str),
    Edges(&'a str),
}

/// Either a stored feature (fetched from the graph by name) or an explicit
/// tape value. Explicit tensors need not be stored in the graph.
#[derive(Clone, Copy, Debug)]
pub enum FeatureInput<'a> {
    Name(&'a str),
    Value(ValueId),
}

impl From<ValueId> for FeatureInput<'static> {
    fn from(id: ValueId) -> Self {
        FeatureInput::Value(id)
    }
}

fn resolve_input<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    set: SetRef<'_>,
    input: FeatureInput<'_>,
) -> Result<ValueId> {
    match input {
        FeatureInput::Value(id) => Ok(id),
        FeatureInput::Name(name) => {
            let feature = match set {
                SetRef::Nodes(s) => graph.node_set(s)?.feature(name)?,
                SetRef::Edges(s) => graph.edge_set(s)?.feature(name)?,
            };
            Ok(tape.constant(feature.as_f32_matrix()?.cast::<T>()))
        }
    }
}

fn endpoint_indices(graph: &GraphTensor, edge_set: &str, tag: EndpointTag) -> Result<Vec<usize>> {
    let adj = graph.edge_set(edge_set)?.adjacency();
    let raw = match tag {
        EndpointTag::Source => adj.source(),
        EndpointTag::Target => adj.target(),
        EndpointTag::Context => {
            return Err(Error::InvalidArgument {
                op: "endpoint_indices".into(),
                message: "context is not an edge endpoint".into(),
            })
        }
    };
    Ok(raw.iter().map(|&i| i as usize).collect())
}

fn endpoint_set<'g>(graph: &'g GraphTensor, edge_set: &str, tag: EndpointTag) -> Result<&'g str> {
    let adj = graph.edge_set(edge_set)?.adjacency();
    match tag {
        EndpointTag::Source => Ok(adj.source_set()),
        EndpointTag::Target => Ok(adj.target_set()),
        EndpointTag::Context => Err(Error::InvalidArgument {
            op: "endpoint_set".into(),
            message: "context is not an edge endpoint".into(),
        }),
    }
}

fn check_rows<T: Scalar>(tape: &Tape<T>, id: ValueId, rows: usize, op: &str) -> Result<()> {
    let shape = tape.value(id).shape();
    if shape.len() != 2 || shape[0] != rows {
        return Err(Error::DimMismatch {
            op: op.into(),
            lhs: vec![rows],
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

/// For each edge, the value at its tagged endpoint: `out[e] = values[tag[e]]`.
pub fn broadcast_node_to_edges<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    edge_set: &str,
    tag: EndpointTag,
    values: FeatureInput<'_>,
) -> Result<ValueId> {
    let node_set = endpoint_set(graph, edge_set, tag)?.to_string();
    let values = resolve_input(tape, graph, SetRef::Nodes(&node_set), values)?;
    check_rows(
        tape,
        values,
        graph.node_set(&node_set)?.total_size(),
        "broadcast_node_to_edges",
    )?;
    let indices = endpoint_indices(graph, edge_set, tag)?;
    tape.gather_rows(values, &indices)
}

/// Per-receiver reduction of edge values onto the tagged endpoint's node
/// set. Receivers with no edges get 0.
pub fn pool_edges_to_node<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    edge_set: &str,
    tag: EndpointTag,
    reduce: Reduce,
    values: FeatureInput<'_>,
) -> Result<ValueId> {
    let values = resolve_input(tape, graph, SetRef::Edges(edge_set), values)?;
    check_rows(
        tape,
        values,
        graph.edge_set(edge_set)?.total_size(),
        "pool_edges_to_node",
    )?;
    let node_set = endpoint_set(graph, edge_set, tag)?;
    let num_nodes = graph.node_set(node_set)?.total_size();
    let indices = endpoint_indices(graph, edge_set, tag)?;
    tape.segment_reduce(values, &indices, num_nodes, reduce)
}

/// Repeat each component's context row across that component's items.
pub fn broadcast_context<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    set: SetRef<'_>,
    values: FeatureInput<'_>,
) -> Result<ValueId> {
    let values = match values {
        FeatureInput::Value(id) => id,
        FeatureInput::Name(name) => {
            let feature = graph.context_feature(name)?;
            tape.constant(feature.as_f32_matrix()?.cast::<T>())
        }
    };
    check_rows(tape, values, graph.num_components(), "broadcast_context")?;
    let component_ids = match set {
        SetRef::Nodes(s) => graph.node_component_ids(s)?,
        SetRef::Edges(s) => graph.edge_component_ids(s)?,
    };
    tape.gather_rows(values, &component_ids)
}

/// Reduce a set's items into one row per component.
pub fn pool_to_context<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    set: SetRef<'_>,
    reduce: Reduce,
    values: FeatureInput<'_>,
) -> Result<ValueId> {
    let values = resolve_input(tape, graph, set, values)?;
    let (total, component_ids) = match set {
        SetRef::Nodes(s) => (
            graph.node_set(s)?.total_size(),
            graph.node_component_ids(s)?,
        ),
        SetRef::Edges(s) => (
            graph.edge_set(s)?.total_size(),
            graph.edge_component_ids(s)?,
        ),
    };
    check_rows(tape, values, total, "pool_to_context")?;
    tape.segment_reduce(values, &component_ids, graph.num_components(), reduce)
}

/// Per-receiver softmax over edge logits. `Source`/`Target` receivers group
/// edges by that endpoint; a `Context` receiver groups them by component.
pub fn edge_softmax<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    edge_set: &str,
    receiver_tag: EndpointTag,
    logits: FeatureInput<'_>,
) -> Result<ValueId> {
    let logits = resolve_input(tape, graph, SetRef::Edges(edge_set), logits)?;
    check_rows(
        tape,
        logits,
        graph.edge_set(edge_set)?.total_size(),
        "edge_softmax",
    )?;
    let (ids, segments) = match receiver_tag {
        EndpointTag::Context => (graph.edge_component_ids(edge_set)?, graph.num_components()),
        tag => {
            let node_set = endpoint_set(graph, edge_set, tag)?;
            (
                endpoint_indices(graph, edge_set, tag)?,
                graph.node_set(node_set)?.total_size(),
            )
        }
    };
    tape.segment_softmax(logits, &ids, segments)
}

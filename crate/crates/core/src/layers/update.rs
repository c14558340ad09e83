//! Graph updates: one simultaneous round of edge-state updates, per-node-set
//! convolutions and next-state maps, and an optional context update. All
//! convolutions read pre-update states; edge-state updates run first and
//! feed the node updates of the same round (the two-step message path).

use std::collections::BTreeMap;

use super::conv::ConvLayer;
use super::{bind_glorot, bind_param, bind_zeros, GraphState, RunMode};
use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::tensor::{Activation, ParameterStore, Reduce, Scalar, Tape, ValueId};

#[derive(Clone, Debug)]
pub enum NextStateKind {
    /// Dense over `[prev_state, pooled...(, context)]` (the from-concat
    /// update used by the vanilla MPNN).
    ConcatDense {
        units: usize,
        activation: Activation,
    },
    /// `σ(Σ_j pooled_j + W_v · prev_state)` with one weight per node set;
    /// pooled inputs must already have `units` columns.
    Rgcn {
        units: usize,
        activation: Activation,
    },
    /// Pass the single pooled input through unchanged (the GCN update).
    PassThrough,
}

/// Combines a node set's previous state with its per-edge-set pooled inputs.
#[derive(Clone, Debug)]
pub struct NextStateLayer {
    pub kind: NextStateKind,
    pub dropout: f64,
    pub use_layer_norm: bool,
    pub scope: String,
}

impl NextStateLayer {
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        prev: ValueId,
        pooled: &[ValueId],
        context_input: Option<ValueId>,
        mode: RunMode,
    ) -> Result<ValueId> {
        let mut out = match &self.kind {
            NextStateKind::ConcatDense { units, activation } => {
                let mut parts = vec![prev];
                parts.extend_from_slice(pooled);
                if let Some(ctx) = context_input {
                    parts.push(ctx);
                }
                let inputs = tape.concat_last(&parts)?;
                let d_in = tape.value(inputs).shape()[1];
                let w = bind_glorot(
                    tape,
                    store,
                    &format!("{}/w", self.scope),
                    d_in,
                    *units,
                    true,
                )?;
                let b = bind_zeros(tape, store, &format!("{}/b", self.scope), vec![*units])?;
                let y = tape.linear(inputs, w, Some(b))?;
                tape.activation(y, *activation)?
            }
            NextStateKind::Rgcn { units, activation } => {
                if context_input.is_some() {
                    return Err(Error::InvalidArgument {
                        op: "next_state_rgcn".into(),
                        message: "the relational update takes no context input".into(),
                    });
                }
                let d_in = tape.value(prev).shape()[1];
                let w_self = bind_glorot(
                    tape,
                    store,
                    &format!("{}/w_self", self.scope),
                    d_in,
                    *units,
                    true,
                )?;
                let mut acc = tape.linear(prev, w_self, None)?;
                for (j, &p) in pooled.iter().enumerate() {
                    let shape = tape.value(p).shape().to_vec();
                    if shape[1] != *units {
                        return Err(Error::DimMismatch {
                            op: format!("next_state_rgcn pooled input {j}"),
                            lhs: vec![shape[0], *units],
                            rhs: shape,
                        });
                    }
                    acc = tape.add(acc, p)?;
                }
                tape.activation(acc, *activation)?
            }
            NextStateKind::PassThrough => {
                if pooled.len() != 1 || context_input.is_some() {
                    return Err(Error::InvalidArgument {
                        op: "next_state".into(),
                        message: format!(
                            "pass-through update needs exactly one pooled input, got {}",
                            pooled.len()
                        ),
                    });
                }
                pooled[0]
            }
        };
        if self.dropout > 0.0 {
            let mut stream = mode.dropout_key.label(&self.scope).stream();
            out = tape.dropout(out, self.dropout, mode.training, &mut stream)?;
        }
        if self.use_layer_norm {
            let d = tape.value(out).shape()[1];
            let gamma = bind_param(tape, store, &format!("{}/ln_gamma", self.scope), |s| {
                s.get_or_init_ones(&format!("{}/ln_gamma", self.scope), vec![d])
            })?;
            let beta = bind_zeros(tape, store, &format!("{}/ln_beta", self.scope), vec![d])?;
            out = tape.layer_norm(out, gamma, beta, 1e-5)?;
        }
        Ok(out)
    }
}

/// Per-edge message computation with optional recurrence on a stored edge
/// state: `m' = σ(W [h_src, h_tgt (, m)] + b)`.
#[derive(Clone, Debug)]
pub struct EdgeStateLayer {
    pub edge_set: String,
    pub units: usize,
    pub activation: Activation,
    /// Feed the previous edge state back in. The first round (no previous
    /// state yet) runs without the recurrent input.
    pub use_recurrence: bool,
    pub scope: String,
}

impl EdgeStateLayer {
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
    ) -> Result<ValueId> {
        let adj = graph.edge_set(&self.edge_set)?.adjacency();
        let sources: Vec<usize> = adj.source().iter().map(|&i| i as usize).collect();
        let targets: Vec<usize> = adj.target().iter().map(|&i| i as usize).collect();
        let h_src = state.node_state(adj.source_set())?;
        let h_tgt = state.node_state(adj.target_set())?;
        let src_rows = tape.gather_rows(h_src, &sources)?;
        let tgt_rows = tape.gather_rows(h_tgt, &targets)?;
        let mut parts = vec![src_rows, tgt_rows];
        if self.use_recurrence {
            if let Some(&prev) = state.edge.get(&self.edge_set) {
                parts.push(prev);
            }
        }
        let inputs = tape.concat_last(&parts)?;
        let d_in = tape.value(inputs).shape()[1];
        let w = bind_glorot(
            tape,
            store,
            &format!("{}/w", self.scope),
            d_in,
            self.units,
            true,
        )?;
        let b = bind_zeros(tape, store, &format!("{}/b", self.scope), vec![self.units])?;
        let y = tape.linear(inputs, w, Some(b))?;
        tape.activation(y, self.activation)
    }
}

/// Everything one node set receives in one round: convolutions keyed by edge
/// set, then the next-state map.
#[derive(Clone, Debug)]
pub struct NodeSetUpdate {
    pub convs: BTreeMap<String, ConvLayer>,
    pub next_state: NextStateLayer,
    /// Broadcast the context state into the next-state inputs.
    pub context_input: bool,
}

/// Minimal context update: pool configured node sets, then one dense layer.
#[derive(Clone, Debug)]
pub struct ContextUpdate {
    pub from_node_sets: Vec<String>,
    pub reduce: Reduce,
    pub units: usize,
    pub activation: Activation,
    pub scope: String,
}

/// One round of updates across the configured sets. Layer objects own their
/// parameters; applying the same object repeatedly shares weights.
#[derive(Clone, Debug, Default)]
pub struct GraphUpdateLayer {
    pub edge_sets: BTreeMap<String, EdgeStateLayer>,
    pub node_sets: BTreeMap<String, NodeSetUpdate>,
    pub context: Option<ContextUpdate>,
}

impl Default for NextStateLayer {
    fn default() -> Self {
        NextStateLayer {
            kind: NextStateKind::PassThrough,
            dropout: 0.0,
            use_layer_norm: false,
            scope: String::new(),
        }
    }
}

impl GraphUpdateLayer {
    /// Apply one round. All node-set convolutions read pre-update node
    /// states; edge-state updates run first and their outputs are visible to
    /// this round's convolutions and to the next round.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        mode: RunMode,
    ) -> Result<GraphState> {
        let mut staged = state.clone();
        for (edge_set, layer) in &self.edge_sets {
            if layer.edge_set != *edge_set {
                return Err(Error::InvalidArgument {
                    op: "graph_update".into(),
                    message: format!(
                        "edge update keyed {edge_set:?} but layer is for {:?}",
                        layer.edge_set
                    ),
                });
            }
            let new_edge_state = layer.forward(tape, store, graph, state)?;
            staged.edge.insert(edge_set.clone(), new_edge_state);
        }

        // Node updates read pre-update node states (plus this round's edge
        // states) and are staged so sets update simultaneously.
        let mut new_node_states = BTreeMap::new();
        for (node_set, update) in &self.node_sets {
            let prev = state.node_state(node_set)?;
            let mut pooled = Vec::with_capacity(update.convs.len());
            for (edge_set, conv) in &update.convs {
                let receiver = conv
                    .receiver_set(graph)?
                    .ok_or_else(|| Error::InvalidArgument {
                        op: "graph_update".into(),
                        message: format!(
                            "conv on {edge_set:?} has a context receiver; it cannot update \
                             node set {node_set:?}"
                        ),
                    })?;
                if receiver != node_set {
                    return Err(Error::InvalidArgument {
                        op: "graph_update".into(),
                        message: format!(
                            "conv on {edge_set:?} delivers to {receiver:?}, not to {node_set:?}"
                        ),
                    });
                }
                pooled.push(conv.forward(tape, store, graph, &staged, mode)?);
            }
            let context_input = if update.context_input {
                let ctx = state.context.ok_or_else(|| Error::InvalidArgument {
                    op: "graph_update".into(),
                    message: "context input requested but no context state exists".into(),
                })?;
                let ids = graph.node_component_ids(node_set)?;
                Some(tape.gather_rows(ctx, &ids)?)
            } else {
                None
            };
            let next =
                update
                    .next_state
                    .forward(tape, store, prev, &pooled, context_input, mode)?;
            new_node_states.insert(node_set.clone(), next);
        }

        if let Some(ctx_update) = &self.context {
            let mut parts = Vec::new();
            if let Some(prev) = state.context {
                parts.push(prev);
            }
            for set in &ctx_update.from_node_sets {
                let values = state.node_state(set)?;
                let ids = graph.node_component_ids(set)?;
                parts.push(tape.segment_reduce(
                    values,
                    &ids,
                    graph.num_components(),
                    ctx_update.reduce,
                )?);
            }
            if parts.is_empty() {
                return Err(Error::InvalidArgument {
                    op: "graph_update".into(),
                    message: "context update has no inputs".into(),
                });
            }
            let inputs = tape.concat_last(&parts)?;
            let d_in = tape.value(inputs).shape()[1];
            let w = bind_glorot(
                tape,
                store,
                &format!("{}/w", ctx_update.scope),
                d_in,
                ctx_update.units,
                true,
            )?;
            let b = bind_zeros(
                tape,
                store,
                &format!("{}/b", ctx_update.scope),
                vec![ctx_update.units],
            )?;
            let y = tape.linear(inputs, w, Some(b))?;
            staged.context = Some(tape.activation(y, ctx_update.activation)?);
        }

        for (set, id) in new_node_states {
            staged.node.insert(set, id);
        }
        Ok(staged)
    }
}

/// Graph-level round: read `hidden_state` features, apply the update, and
/// return a new graph with replaced features.
pub fn graph_update(
    store: &mut ParameterStore<f32>,
    graph: &GraphTensor,
    update: &GraphUpdateLayer,
    mode: RunMode,
) -> Result<GraphTensor> {
    let mut tape = Tape::<f32>::new();
    let state = GraphState::from_graph(&mut tape, graph)?;
    let new_state = update.apply(&mut tape, store, graph, &state, mode)?;
    new_state.materialize(&tape, graph)
}

/// Hidden state of local index 0 of each component's slice of `node_set`:
/// one row per component.
pub fn readout_root<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    state: &GraphState,
    node_set: &str,
) -> Result<ValueId> {
    let roots = graph.root_indices(node_set)?;
    let values = state.node_state(node_set)?;
    tape.gather_rows(values, &roots)
}

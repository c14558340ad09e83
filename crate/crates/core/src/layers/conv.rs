//! Convolution layers: the map from a receiver's state and its senders'
//! states to one pooled message per receiver.

use super::{bind_glorot, bind_param, bind_zeros, GraphState, RunMode};
use crate::error::{Error, Result};
use crate::exchange::EndpointTag;
use crate::graph::GraphTensor;
use crate::tensor::{Activation, ParameterStore, Reduce, Scalar, Tape, ValueId};

/// What a convolution runs over: an edge set (senders are the non-receiver
/// endpoint), or — for a `Context` receiver — possibly a whole node set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConvTarget {
    EdgeSet(String),
    /// Only valid with `EndpointTag::Context`: every node of the set sends
    /// to its component's context.
    NodeSet(String),
}

#[derive(Clone, Debug)]
pub struct Gatv2Config {
    pub num_heads: usize,
    pub per_head_channels: usize,
    /// Use sender node states as value input (disable for edge-only
    /// attention, case ii).
    pub sender_node_input: bool,
    /// Optional per-edge value input: `"hidden_state"` resolves to the edge
    /// state on the tape, anything else to a stored edge feature.
    pub sender_edge_feature: Option<String>,
    pub edge_dropout: f64,
    pub attention_activation: Activation,
    pub activation: Activation,
}

impl Default for Gatv2Config {
    fn default() -> Self {
        Gatv2Config {
            num_heads: 1,
            per_head_channels: 4,
            sender_node_input: true,
            sender_edge_feature: None,
            edge_dropout: 0.0,
            attention_activation: Activation::LeakyRelu(0.2),
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ConvKind {
    /// Messages are `relu(W [sender_state, receiver_state] + b)`, sum-pooled
    /// to the receiver.
    VanillaMpnn { message_dim: usize },
    /// Symmetric-normalized convolution over a homogeneous edge set with an
    /// analytic self-loop: `σ(Σ_{u∈N(v)∪{v}} W h_u / sqrt(d_u d_v))`,
    /// `d` = in-degree + 1.
    Gcn {
        units: usize,
        activation: Activation,
    },
    /// Mean over neighbors of `W h_u`; empty neighborhoods give 0.
    SageMean { units: usize },
    /// Multi-head additive attention (query from the receiver, value from
    /// sender node and/or edge inputs).
    Gatv2(Gatv2Config),
    /// Pool the current edge state to the receiver (two-step message path).
    EdgePool { reduce: Reduce },
}

/// One convolution on one target, owning its parameters under `scope`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub target: ConvTarget,
    pub receiver: EndpointTag,
    pub kind: ConvKind,
    pub scope: String,
}

impl ConvLayer {
    /// The node set whose states this conv produces (or `None` for a
    /// context receiver).
    pub fn receiver_set<'g>(&self, graph: &'g GraphTensor) -> Result<Option<&'g str>> {
        match (self.receiver, &self.target) {
            (EndpointTag::Context, _) => Ok(None),
            (tag, ConvTarget::EdgeSet(es)) => {
                let adj = graph.edge_set(es)?.adjacency();
                Ok(Some(match tag {
                    EndpointTag::Source => adj.source_set(),
                    EndpointTag::Target => adj.target_set(),
                    EndpointTag::Context => unreachable!(),
                }))
            }
            (_, ConvTarget::NodeSet(ns)) => Err(Error::InvalidArgument {
                op: "conv".into(),
                message: format!(
                    "node-set target {ns:?} requires receiver_tag=context in {:?}",
                    self.scope
                ),
            }),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        mode: RunMode,
    ) -> Result<ValueId> {
        match &self.kind {
            ConvKind::VanillaMpnn { message_dim } => {
                self.vanilla_mpnn(tape, store, graph, state, *message_dim)
            }
            ConvKind::Gcn { units, activation } => {
                self.gcn(tape, store, graph, state, *units, *activation)
            }
            ConvKind::SageMean { units } => self.sage_mean(tape, store, graph, state, *units),
            ConvKind::Gatv2(config) => self.gatv2(tape, store, graph, state, config, mode),
            ConvKind::EdgePool { reduce } => self.edge_pool(tape, graph, state, *reduce),
        }
    }

    fn edge_set_name(&self) -> Result<&str> {
        match &self.target {
            ConvTarget::EdgeSet(name) => Ok(name),
            ConvTarget::NodeSet(name) => Err(Error::InvalidArgument {
                op: "conv".into(),
                message: format!(
                    "conv {:?} needs an edge set, got node set {name:?}",
                    self.scope
                ),
            }),
        }
    }

    /// Receiver-keyed and sender-keyed index arrays plus receiver row count
    /// for an edge-set target.
    fn edge_indexing(&self, graph: &GraphTensor) -> Result<(Vec<usize>, Vec<usize>, usize)> {
        let edge_set = self.edge_set_name()?;
        let adj = graph.edge_set(edge_set)?.adjacency();
        let to_usize = |xs: &[i64]| xs.iter().map(|&i| i as usize).collect::<Vec<_>>();
        match self.receiver {
            EndpointTag::Source => Ok((
                to_usize(adj.source()),
                to_usize(adj.target()),
                graph.node_set(adj.source_set())?.total_size(),
            )),
            EndpointTag::Target => Ok((
                to_usize(adj.target()),
                to_usize(adj.source()),
                graph.node_set(adj.target_set())?.total_size(),
            )),
            EndpointTag::Context => Ok((
                graph.edge_component_ids(edge_set)?,
                to_usize(adj.source()),
                graph.num_components(),
            )),
        }
    }

    fn sender_node_set<'g>(&self, graph: &'g GraphTensor) -> Result<&'g str> {
        let edge_set = self.edge_set_name()?;
        let adj = graph.edge_set(edge_set)?.adjacency();
        Ok(match self.receiver {
            EndpointTag::Source => adj.target_set(),
            EndpointTag::Target => adj.source_set(),
            // context receiver pools every edge; by convention the source
            // node carries the sender state
            EndpointTag::Context => adj.source_set(),
        })
    }

    fn vanilla_mpnn<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        message_dim: usize,
    ) -> Result<ValueId> {
        let (receiver_ids, sender_ids, num_receivers) = self.edge_indexing(graph)?;
        let sender_state = state.node_state(self.sender_node_set(graph)?)?;
        let receiver_state = match self.receiver {
            EndpointTag::Context => state.context.ok_or_else(|| Error::InvalidArgument {
                op: "vanilla_mpnn".into(),
                message: "context receiver needs a context state".into(),
            })?,
            _ => {
                let set = self.receiver_set(graph)?.expect("edge receiver");
                state.node_state(set)?
            }
        };
        let sender_rows = tape.gather_rows(sender_state, &sender_ids)?;
        let receiver_rows = tape.gather_rows(receiver_state, &receiver_ids)?;
        let inputs = tape.concat_last(&[sender_rows, receiver_rows])?;
        let d_in = tape.value(inputs).shape()[1];
        let w = bind_glorot(
            tape,
            store,
            &format!("{}/w", self.scope),
            d_in,
            message_dim,
            true,
        )?;
        let b = bind_zeros(tape, store, &format!("{}/b", self.scope), vec![message_dim])?;
        let messages = tape.linear(inputs, w, Some(b))?;
        let messages = tape.activation(messages, Activation::Relu)?;
        tape.segment_reduce(messages, &receiver_ids, num_receivers, Reduce::Sum)
    }

    fn gcn<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        units: usize,
        activation: Activation,
    ) -> Result<ValueId> {
        let edge_set = self.edge_set_name()?;
        let adj = graph.edge_set(edge_set)?.adjacency();
        if adj.source_set() != adj.target_set() {
            return Err(Error::InvalidArgument {
                op: "gcn".into(),
                message: format!(
                    "edge set {edge_set:?} is not homogeneous ({} -> {})",
                    adj.source_set(),
                    adj.target_set()
                ),
            });
        }
        let node_set = adj.source_set().to_string();
        let n = graph.node_set(&node_set)?.total_size();
        let h = state.node_state(&node_set)?;
        let d_in = tape.value(h).shape()[1];
        let w = bind_glorot(tape, store, &format!("{}/w", self.scope), d_in, units, true)?;
        let transformed = tape.linear(h, w, None)?;

        // d_v = in-degree + 1 for the implicit self loop
        let mut degree = vec![1.0f64; n];
        for &t in adj.target() {
            degree[t as usize] += 1.0;
        }
        let self_scale: Vec<T> = degree.iter().map(|&d| T::from_f64(1.0 / d)).collect();
        let self_scale = tape.constant(crate::tensor::DenseTensor::new(vec![n, 1], self_scale)?);
        let self_term = tape.scale_rows(transformed, self_scale)?;

        let sources: Vec<usize> = adj.source().iter().map(|&i| i as usize).collect();
        let targets: Vec<usize> = adj.target().iter().map(|&i| i as usize).collect();
        let edge_scale: Vec<T> = sources
            .iter()
            .zip(&targets)
            .map(|(&u, &v)| T::from_f64(1.0 / (degree[u] * degree[v]).sqrt()))
            .collect();
        let messages = tape.gather_rows(transformed, &sources)?;
        let edge_scale = tape.constant(crate::tensor::DenseTensor::new(
            vec![sources.len(), 1],
            edge_scale,
        )?);
        let messages = tape.scale_rows(messages, edge_scale)?;
        let pooled = tape.segment_reduce(messages, &targets, n, Reduce::Sum)?;
        let combined = tape.add(pooled, self_term)?;
        tape.activation(combined, activation)
    }

    fn sage_mean<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        units: usize,
    ) -> Result<ValueId> {
        let (receiver_ids, sender_ids, num_receivers) = self.edge_indexing(graph)?;
        let sender_state = state.node_state(self.sender_node_set(graph)?)?;
        let d_in = tape.value(sender_state).shape()[1];
        let w = bind_glorot(tape, store, &format!("{}/w", self.scope), d_in, units, true)?;
        let transformed = tape.linear(sender_state, w, None)?;
        let messages = tape.gather_rows(transformed, &sender_ids)?;
        tape.segment_reduce(messages, &receiver_ids, num_receivers, Reduce::Mean)
    }

    fn edge_pool<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        graph: &GraphTensor,
        state: &GraphState,
        reduce: Reduce,
    ) -> Result<ValueId> {
        let edge_set = self.edge_set_name()?;
        let edge_state =
            state
                .edge
                .get(edge_set)
                .copied()
                .ok_or_else(|| Error::InvalidArgument {
                    op: "edge_pool".into(),
                    message: format!("edge set {edge_set:?} has no edge state to pool"),
                })?;
        let (receiver_ids, _, num_receivers) = self.edge_indexing(graph)?;
        tape.segment_reduce(edge_state, &receiver_ids, num_receivers, reduce)
    }

    fn gatv2<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        state: &GraphState,
        config: &Gatv2Config,
        mode: RunMode,
    ) -> Result<ValueId> {
        let width = config.num_heads * config.per_head_channels;
        if !config.sender_node_input && config.sender_edge_feature.is_none() {
            return Err(Error::InvalidArgument {
                op: "gatv2".into(),
                message: "at least one of sender node / sender edge inputs must be enabled".into(),
            });
        }

        // Receiver input and the per-sender-row receiver ids.
        let (receiver_input, receiver_ids, num_receivers, sender_node_rows) =
            match (&self.target, self.receiver) {
                (ConvTarget::NodeSet(ns), EndpointTag::Context) => {
                    if config.sender_edge_feature.is_some() {
                        return Err(Error::InvalidArgument {
                            op: "gatv2".into(),
                            message: format!(
                                "context attention over node set {ns:?} has no edges to take \
                             edge features from"
                            ),
                        });
                    }
                    let ctx = state.context.ok_or_else(|| Error::InvalidArgument {
                        op: "gatv2".into(),
                        message: "context receiver needs a context state".into(),
                    })?;
                    (
                        ctx,
                        graph.node_component_ids(ns)?,
                        graph.num_components(),
                        Some(state.node_state(ns)?),
                    )
                }
                (ConvTarget::NodeSet(ns), _) => {
                    return Err(Error::InvalidArgument {
                        op: "gatv2".into(),
                        message: format!("node-set target {ns:?} requires receiver_tag=context"),
                    })
                }
                (ConvTarget::EdgeSet(_), EndpointTag::Context) => {
                    let edge_set = self.edge_set_name()?;
                    let ctx = state.context.ok_or_else(|| Error::InvalidArgument {
                        op: "gatv2".into(),
                        message: "context receiver needs a context state".into(),
                    })?;
                    let rows = if config.sender_node_input {
                        let sender_state = state.node_state(self.sender_node_set(graph)?)?;
                        let (_, sender_ids, _) = self.edge_indexing(graph)?;
                        Some(tape.gather_rows(sender_state, &sender_ids)?)
                    } else {
                        None
                    };
                    (
                        ctx,
                        graph.edge_component_ids(edge_set)?,
                        graph.num_components(),
                        rows,
                    )
                }
                (ConvTarget::EdgeSet(_), _) => {
                    let (receiver_ids, sender_ids, num_receivers) = self.edge_indexing(graph)?;
                    let receiver_set = self.receiver_set(graph)?.expect("edge receiver");
                    let receiver_state = state.node_state(receiver_set)?;
                    let rows = if config.sender_node_input {
                        let sender_state = state.node_state(self.sender_node_set(graph)?)?;
                        Some(tape.gather_rows(sender_state, &sender_ids)?)
                    } else {
                        None
                    };
                    (receiver_state, receiver_ids, num_receivers, rows)
                }
            };

        // Query: W_q(receiver state), broadcast to sender rows.
        let d_receiver = tape.value(receiver_input).shape()[1];
        let w_query = bind_glorot(
            tape,
            store,
            &format!("{}/w_query", self.scope),
            d_receiver,
            width,
            true,
        )?;
        let b_query = bind_zeros(tape, store, &format!("{}/b_query", self.scope), vec![width])?;
        let query = tape.linear(receiver_input, w_query, Some(b_query))?;
        let query_rows = tape.gather_rows(query, &receiver_ids)?;

        // Value: W_n(sender node state) + optional W_e(edge feature).
        let mut value_terms: Vec<ValueId> = Vec::new();
        if let Some(rows) = sender_node_rows {
            let d = tape.value(rows).shape()[1];
            let w = bind_glorot(
                tape,
                store,
                &format!("{}/w_sender_node", self.scope),
                d,
                width,
                true,
            )?;
            let b = bind_zeros(
                tape,
                store,
                &format!("{}/b_sender_node", self.scope),
                vec![width],
            )?;
            value_terms.push(tape.linear(rows, w, Some(b))?);
        }
        if let Some(feature_name) = &config.sender_edge_feature {
            let edge_set = self.edge_set_name()?;
            let edge_input = if feature_name == super::HIDDEN_STATE {
                state
                    .edge
                    .get(edge_set)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument {
                        op: "gatv2".into(),
                        message: format!("edge set {edge_set:?} has no hidden state"),
                    })?
            } else {
                let f = graph.edge_set(edge_set)?.feature(feature_name)?;
                tape.constant(f.as_f32_matrix()?.cast::<T>())
            };
            let d = tape.value(edge_input).shape()[1];
            let w = bind_glorot(
                tape,
                store,
                &format!("{}/w_sender_edge", self.scope),
                d,
                width,
                true,
            )?;
            // one bias between the two sender transforms
            let b = if value_terms.is_empty() {
                Some(bind_zeros(
                    tape,
                    store,
                    &format!("{}/b_sender_edge", self.scope),
                    vec![width],
                )?)
            } else {
                None
            };
            value_terms.push(tape.linear(edge_input, w, b)?);
        }
        let value = match value_terms.len() {
            1 => value_terms[0],
            _ => tape.add(value_terms[0], value_terms[1])?,
        };

        let features = tape.add(query_rows, value)?;
        let features = tape.activation(features, config.attention_activation)?;
        let att_name = format!("{}/attention", self.scope);
        let att_weights = bind_param(tape, store, &att_name, |s: &mut ParameterStore<T>| {
            s.get_or_init_glorot_shaped(&att_name, vec![width], width, 1)
        })?;
        store.mark_regularized(&att_name);
        let logits = tape.attention_logits(features, att_weights, config.num_heads)?;
        let coefficients = tape.segment_softmax(logits, &receiver_ids, num_receivers)?;
        let coefficients = if config.edge_dropout > 0.0 {
            let mut stream = mode
                .dropout_key
                .label(&self.scope)
                .label("edge_dropout")
                .stream();
            tape.dropout(
                coefficients,
                config.edge_dropout,
                mode.training,
                &mut stream,
            )?
        } else {
            coefficients
        };
        let messages = tape.mul_per_head(value, coefficients, config.num_heads)?;
        let pooled = tape.segment_reduce(messages, &receiver_ids, num_receivers, Reduce::Sum)?;
        tape.activation(pooled, config.activation)
    }
}

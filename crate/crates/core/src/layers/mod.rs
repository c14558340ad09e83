//! Trainable message-passing layers: feature mapping into hidden states, the
//! graph-update decomposition (per-edge-set convolutions plus per-node-set
//! next-state maps, optional edge and context states), reference
//! architectures (vanilla MPNN, GCN, R-GCN next-state, GraphSAGE mean,
//! GATv2), and root readout.
//!
//! Layer objects own their parameters through stable names in a
//! [`ParameterStore`]; applying the same layer object twice on one tape
//! shares weights, and gradients accumulate.

mod config;
mod conv;
mod features;
mod update;

pub use config::{Model, ModelConfig};
pub use conv::{ConvKind, ConvLayer, ConvTarget, Gatv2Config};
pub use features::{map_features, map_features_graph, FeatureBranch, FeaturePipeline, FeatureStep};
pub use update::{
    graph_update, readout_root, ContextUpdate, EdgeStateLayer, GraphUpdateLayer, NextStateKind,
    NextStateLayer, NodeSetUpdate,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Feature, FeatureOverrides, GraphTensor};
use crate::tensor::rng::StreamKey;
use crate::tensor::{DenseTensor, ParameterStore, Scalar, Tape, ValueId};

/// The reserved feature name carrying the evolving representation.
pub const HIDDEN_STATE: &str = "hidden_state";

/// Hidden states currently on the tape: per node set, optionally per edge
/// set, optionally for the context.
#[derive(Clone, Debug, Default)]
pub struct GraphState {
    pub node: BTreeMap<String, ValueId>,
    pub edge: BTreeMap<String, ValueId>,
    pub context: Option<ValueId>,
}

impl GraphState {
    /// Load stored `hidden_state` features from a graph as tape constants.
    pub fn from_graph<T: Scalar>(tape: &mut Tape<T>, graph: &GraphTensor) -> Result<GraphState> {
        let mut state = GraphState::default();
        for (name, ns) in graph.node_sets() {
            if let Some(f) = ns.features().get(HIDDEN_STATE) {
                state
                    .node
                    .insert(name.clone(), tape.constant(f.as_f32_matrix()?.cast::<T>()));
            }
        }
        for (name, es) in graph.edge_sets() {
            if let Some(f) = es.features().get(HIDDEN_STATE) {
                state
                    .edge
                    .insert(name.clone(), tape.constant(f.as_f32_matrix()?.cast::<T>()));
            }
        }
        if let Some(f) = graph.context_features().get(HIDDEN_STATE) {
            state.context = Some(tape.constant(f.as_f32_matrix()?.cast::<T>()));
        }
        Ok(state)
    }

    pub fn node_state(&self, set: &str) -> Result<ValueId> {
        self.node
            .get(set)
            .copied()
            .ok_or_else(|| Error::InvalidArgument {
                op: "node_state".into(),
                message: format!("node set {set:?} has no hidden state"),
            })
    }

    /// Write the states back into a graph as `hidden_state` features
    /// (f32; evaluates the tape values).
    pub fn materialize<T: Scalar>(
        &self,
        tape: &Tape<T>,
        graph: &GraphTensor,
    ) -> Result<GraphTensor> {
        let mut overrides = FeatureOverrides::default();
        for (set, &id) in &self.node {
            overrides.node_sets.insert(
                set.clone(),
                BTreeMap::from([(
                    HIDDEN_STATE.to_string(),
                    Feature::from_matrix(&tape.value(id).cast::<f32>()),
                )]),
            );
        }
        for (set, &id) in &self.edge {
            overrides.edge_sets.insert(
                set.clone(),
                BTreeMap::from([(
                    HIDDEN_STATE.to_string(),
                    Feature::from_matrix(&tape.value(id).cast::<f32>()),
                )]),
            );
        }
        if let Some(id) = self.context {
            overrides.context.insert(
                HIDDEN_STATE.to_string(),
                Feature::from_matrix(&tape.value(id).cast::<f32>()),
            );
        }
        graph.replace_features(overrides)
    }
}

/// Per-forward context: training flag and the key all dropout sites derive
/// their streams from (typically `(seed, "dropout", step)`).
#[derive(Clone, Copy, Debug)]
pub struct RunMode {
    pub training: bool,
    pub dropout_key: StreamKey,
}

impl RunMode {
    pub fn inference() -> Self {
        RunMode {
            training: false,
            dropout_key: StreamKey::new(0),
        }
    }

    pub fn training(seed: u64, step: u64) -> Self {
        RunMode {
            training: true,
            dropout_key: StreamKey::new(seed).label("dropout").index(step),
        }
    }
}

/// Put a stored parameter on the tape, creating it in the store on first
/// use. Repeated binds of one name on the same tape return the same id, so
/// reusing a layer object shares its weights.
pub(crate) fn bind_param<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    name: &str,
    init: impl FnOnce(&mut ParameterStore<T>) -> DenseTensor<T>,
) -> Result<ValueId> {
    if let Some(id) = tape.param_id(name) {
        return Ok(id);
    }
    let value = init(store);
    tape.param(name, value)
}

pub(crate) fn bind_glorot<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    regularized: bool,
) -> Result<ValueId> {
    let id = bind_param(tape, store, name, |s| {
        s.get_or_init_glorot(name, fan_in, fan_out)
    })?;
    if regularized {
        store.mark_regularized(name);
    }
    Ok(id)
}

pub(crate) fn bind_zeros<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    name: &str,
    shape: Vec<usize>,
) -> Result<ValueId> {
    bind_param(tape, store, name, |s| s.get_or_init_zeros(name, shape))
}

//! Model configuration: the JSON document naming feature pipelines, per-round
//! updates, convolution types, dims, dropout and layer-norm flags, plus the
//! [`Model`] built from it.
//!
//! ```json
//! {
//!   "map_features": {
//!     "paper":  {"branches": [{"feature": "feat", "steps": [{"op": "dense", "units": 32}]}]},
//!     "author": {"branches": [{"steps": [{"op": "make_empty", "dim": 32}]}]}
//!   },
//!   "updates": [
//!     {"repeat": 2,
//!      "node_sets": {
//!        "paper": {
//!          "convs": {"cites": {"type": "vanilla_mpnn", "message_dim": 32, "receiver": "target"}},
//!          "next_state": {"type": "concat_dense", "units": 32, "dropout": 0.2, "layer_norm": true}
//!        }
//!      }}
//!   ]
//! }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::conv::{ConvKind, ConvLayer, ConvTarget, Gatv2Config};
use super::features::{FeatureBranch, FeaturePipeline, FeatureStep};
use super::update::{
    ContextUpdate, EdgeStateLayer, GraphUpdateLayer, NextStateKind, NextStateLayer, NodeSetUpdate,
};
use super::{map_features, GraphState, RunMode};
use crate::error::{Error, Result};
use crate::exchange::EndpointTag;
use crate::graph::GraphTensor;
use crate::schema::GraphSchema;
use crate::tensor::{Activation, ParameterStore, Reduce, Scalar, Tape};

fn default_activation() -> String {
    "relu".to_string()
}

fn default_receiver() -> String {
    "target".to_string()
}

fn default_repeat() -> usize {
    1
}

fn parse_activation(name: &str) -> Result<Activation> {
    Ok(match name {
        "relu" => Activation::Relu,
        "leaky_relu" => Activation::LeakyRelu(0.2),
        "sigmoid" => Activation::Sigmoid,
        "identity" | "linear" | "none" => Activation::Identity,
        "log1p" => Activation::Log1p,
        other => {
            return Err(Error::InvalidArgument {
                op: "model config".into(),
                message: format!("unknown activation {other:?}"),
            })
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum StepConfig {
    #[serde(rename = "hash_bucket")]
    HashBucket { buckets: u64 },
    #[serde(rename = "embed")]
    Embed { vocab: usize, dim: usize },
    #[serde(rename = "dense")]
    Dense {
        units: usize,
        #[serde(default = "default_activation")]
        activation: String,
    },
    #[serde(rename = "log1p")]
    Log1p,
    #[serde(rename = "ragged_mean_to_dense")]
    RaggedMeanToDense,
    #[serde(rename = "make_empty")]
    MakeEmpty { dim: usize },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    #[serde(default)]
    pub steps: Vec<StepConfig>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub branches: Vec<BranchConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ConvConfig {
    #[serde(rename = "vanilla_mpnn")]
    VanillaMpnn {
        message_dim: usize,
        #[serde(default = "default_receiver")]
        receiver: String,
    },
    #[serde(rename = "gcn")]
    Gcn {
        units: usize,
        #[serde(default = "default_activation")]
        activation: String,
    },
    #[serde(rename = "sage_mean")]
    SageMean {
        units: usize,
        #[serde(default = "default_receiver")]
        receiver: String,
    },
    #[serde(rename = "gatv2")]
    Gatv2 {
        num_heads: usize,
        per_head_channels: usize,
        #[serde(default = "default_receiver")]
        receiver: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sender_edge_feature: Option<String>,
        #[serde(default)]
        edge_dropout: f64,
    },
    #[serde(rename = "edge_pool")]
    EdgePool {
        reduce: String,
        #[serde(default = "default_receiver")]
        receiver: String,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum NextStateConfig {
    #[serde(rename = "concat_dense")]
    ConcatDense {
        units: usize,
        #[serde(default = "default_activation")]
        activation: String,
        #[serde(default)]
        dropout: f64,
        #[serde(default)]
        layer_norm: bool,
    },
    #[serde(rename = "rgcn")]
    Rgcn {
        units: usize,
        #[serde(default = "default_activation")]
        activation: String,
        #[serde(default)]
        dropout: f64,
        #[serde(default)]
        layer_norm: bool,
    },
    #[serde(rename = "pass_through")]
    PassThrough,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSetUpdateConfig {
    #[serde(default)]
    pub convs: BTreeMap<String, ConvConfig>,
    pub next_state: NextStateConfig,
    #[serde(default)]
    pub context_input: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeUpdateConfig {
    pub units: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default)]
    pub use_recurrence: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextUpdateConfig {
    pub from_node_sets: Vec<String>,
    #[serde(default = "default_reduce")]
    pub reduce: String,
    pub units: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_reduce() -> String {
    "mean".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    /// Reuse one layer object for every repeat (shared weights) instead of
    /// independent per-round weights.
    #[serde(default)]
    pub share_weights: bool,
    #[serde(default)]
    pub node_sets: BTreeMap<String, NodeSetUpdateConfig>,
    #[serde(default)]
    pub edge_sets: BTreeMap<String, EdgeUpdateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextUpdateConfig>,
}

/// The model configuration document.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub map_features: BTreeMap<String, PipelineConfig>,
    #[serde(default)]
    pub updates: Vec<UpdateConfig>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument {
            op: "model config".into(),
            message: e.to_string(),
        })
    }
}

/// A built model: feature pipelines plus the expanded update rounds, with
/// parameter scopes assigned.
pub struct Model {
    pub pipelines: BTreeMap<String, FeaturePipeline>,
    pub updates: Vec<GraphUpdateLayer>,
}

fn build_step(step: &StepConfig) -> Result<FeatureStep> {
    Ok(match step {
        StepConfig::HashBucket { buckets } => FeatureStep::HashBucket { buckets: *buckets },
        StepConfig::Embed { vocab, dim } => FeatureStep::Embed {
            vocab: *vocab,
            dim: *dim,
        },
        StepConfig::Dense { units, activation } => FeatureStep::Dense {
            units: *units,
            activation: parse_activation(activation)?,
        },
        StepConfig::Log1p => FeatureStep::Log1p,
        StepConfig::RaggedMeanToDense => FeatureStep::RaggedMeanToDense,
        StepConfig::MakeEmpty { dim } => FeatureStep::MakeEmpty { dim: *dim },
    })
}

fn build_conv(
    schema: &GraphSchema,
    edge_set: &str,
    config: &ConvConfig,
    scope: String,
) -> Result<ConvLayer> {
    // node-set targets (context attention, case iii) are keyed by a name
    // that is a node set rather than an edge set
    let target = if schema.edge_sets.contains_key(edge_set) {
        ConvTarget::EdgeSet(edge_set.to_string())
    } else if schema.node_sets.contains_key(edge_set) {
        ConvTarget::NodeSet(edge_set.to_string())
    } else {
        return Err(Error::InvalidArgument {
            op: "model config".into(),
            message: format!("conv references unknown set {edge_set:?}"),
        });
    };
    let (receiver, kind) = match config {
        ConvConfig::VanillaMpnn {
            message_dim,
            receiver,
        } => (
            EndpointTag::parse(receiver)?,
            ConvKind::VanillaMpnn {
                message_dim: *message_dim,
            },
        ),
        ConvConfig::Gcn { units, activation } => (
            EndpointTag::Target,
            ConvKind::Gcn {
                units: *units,
                activation: parse_activation(activation)?,
            },
        ),
        ConvConfig::SageMean { units, receiver } => (
            EndpointTag::parse(receiver)?,
            ConvKind::SageMean { units: *units },
        ),
        ConvConfig::Gatv2 {
            num_heads,
            per_head_channels,
            receiver,
            sender_edge_feature,
            edge_dropout,
        } => (
            EndpointTag::parse(receiver)?,
            ConvKind::Gatv2(Gatv2Config {
                num_heads: *num_heads,
                per_head_channels: *per_head_channels,
                sender_node_input: true,
                sender_edge_feature: sender_edge_feature.clone(),
                edge_dropout: *edge_dropout,
                ..Gatv2Config::default()
            }),
        ),
        ConvConfig::EdgePool { reduce, receiver } => (
            EndpointTag::parse(receiver)?,
            ConvKind::EdgePool {
                reduce: Reduce::parse(reduce)?,
            },
        ),
    };
    Ok(ConvLayer {
        target,
        receiver,
        kind,
        scope,
    })
}

fn build_next_state(config: &NextStateConfig, scope: String) -> Result<NextStateLayer> {
    let (kind, dropout, layer_norm) = match config {
        NextStateConfig::ConcatDense {
            units,
            activation,
            dropout,
            layer_norm,
        } => (
            NextStateKind::ConcatDense {
                units: *units,
                activation: parse_activation(activation)?,
            },
            *dropout,
            *layer_norm,
        ),
        NextStateConfig::Rgcn {
            units,
            activation,
            dropout,
            layer_norm,
        } => (
            NextStateKind::Rgcn {
                units: *units,
                activation: parse_activation(activation)?,
            },
            *dropout,
            *layer_norm,
        ),
        NextStateConfig::PassThrough => (NextStateKind::PassThrough, 0.0, false),
    };
    Ok(NextStateLayer {
        kind,
        dropout,
        use_layer_norm: layer_norm,
        scope,
    })
}

impl Model {
    /// Build the model, checking every referenced set against the schema and
    /// assigning unique parameter scopes.
    pub fn from_config(config: &ModelConfig, schema: &GraphSchema) -> Result<Model> {
        let mut pipelines = BTreeMap::new();
        for (set, pipeline) in &config.map_features {
            schema.node_set(set)?;
            let branches = pipeline
                .branches
                .iter()
                .map(|b| {
                    Ok(FeatureBranch {
                        feature: b.feature.clone(),
                        steps: b.steps.iter().map(build_step).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pipelines.insert(
                set.clone(),
                FeaturePipeline {
                    branches,
                    scope: format!("fmap/{set}"),
                },
            );
        }

        let mut updates = Vec::new();
        for (block_index, update) in config.updates.iter().enumerate() {
            if update.repeat == 0 {
                return Err(Error::InvalidArgument {
                    op: "model config".into(),
                    message: format!("update block {block_index} has repeat 0"),
                });
            }
            for rep in 0..update.repeat {
                let scope_round = if update.share_weights { 0 } else { rep };
                let prefix = format!("u{block_index}r{scope_round}");
                let mut layer = GraphUpdateLayer::default();
                for (edge_set, cfg) in &update.edge_sets {
                    schema.edge_set(edge_set)?;
                    layer.edge_sets.insert(
                        edge_set.clone(),
                        EdgeStateLayer {
                            edge_set: edge_set.clone(),
                            units: cfg.units,
                            activation: parse_activation(&cfg.activation)?,
                            use_recurrence: cfg.use_recurrence,
                            scope: format!("{prefix}/edge/{edge_set}"),
                        },
                    );
                }
                for (node_set, cfg) in &update.node_sets {
                    schema.node_set(node_set)?;
                    let mut convs = BTreeMap::new();
                    for (edge_set, conv_cfg) in &cfg.convs {
                        convs.insert(
                            edge_set.clone(),
                            build_conv(
                                schema,
                                edge_set,
                                conv_cfg,
                                format!("{prefix}/{node_set}/{edge_set}"),
                            )?,
                        );
                    }
                    layer.node_sets.insert(
                        node_set.clone(),
                        NodeSetUpdate {
                            convs,
                            next_state: build_next_state(
                                &cfg.next_state,
                                format!("{prefix}/{node_set}/next"),
                            )?,
                            context_input: cfg.context_input,
                        },
                    );
                }
                if let Some(ctx) = &update.context {
                    for set in &ctx.from_node_sets {
                        schema.node_set(set)?;
                    }
                    layer.context = Some(ContextUpdate {
                        from_node_sets: ctx.from_node_sets.clone(),
                        reduce: Reduce::parse(&ctx.reduce)?,
                        units: ctx.units,
                        activation: parse_activation(&ctx.activation)?,
                        scope: format!("{prefix}/context"),
                    });
                }
                updates.push(layer);
            }
        }
        Ok(Model { pipelines, updates })
    }

    /// Full forward pass: feature mapping, then every update round.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParameterStore<T>,
        graph: &GraphTensor,
        mode: RunMode,
    ) -> Result<GraphState> {
        let mut state = map_features(tape, store, graph, &self.pipelines, mode)?;
        for update in &self.updates {
            state = update.apply(tape, store, graph, &state, mode)?;
        }
        Ok(state)
    }
}

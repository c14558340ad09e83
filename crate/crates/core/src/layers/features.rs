//! Feature mapping: per-node-set pipelines that turn stored features into
//! one dense `hidden_state` per set.
//!
//! Each configured set runs a list of branches; a branch starts from one
//! stored feature (or from nothing, for `MakeEmpty`) and applies its steps
//! in order. Branch outputs are concatenated column-wise into the set's
//! hidden state. Unconfigured sets are left unchanged.

use std::collections::BTreeMap;

use super::{bind_glorot, bind_zeros, GraphState, RunMode};
use crate::error::{Error, Result};
use crate::graph::{Feature, FeatureData, GraphTensor};
use crate::tensor::rng::fnv1a;
use crate::tensor::{Activation, DenseTensor, ParameterStore, Scalar, Tape, ValueId};

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureStep {
    /// Deterministic hash of a string/int feature into `[0, buckets)`.
    HashBucket {
        buckets: u64,
    },
    /// Trainable embedding lookup over integer ids in `[0, vocab)`.
    Embed {
        vocab: usize,
        dim: usize,
    },
    /// Item-wise dense transform.
    Dense {
        units: usize,
        activation: Activation,
    },
    Log1p,
    /// Mean over the ragged dimension, producing a dense matrix.
    RaggedMeanToDense,
    /// Zero-width (or fixed-width) all-zero state for featureless sets.
    MakeEmpty {
        dim: usize,
    },
}

#[derive(Clone, Debug)]
pub struct FeatureBranch {
    /// Stored feature this branch starts from; `None` only for `MakeEmpty`.
    pub feature: Option<String>,
    pub steps: Vec<FeatureStep>,
}

#[derive(Clone, Debug, Default)]
pub struct FeaturePipeline {
    pub branches: Vec<FeatureBranch>,
    /// Unique parameter prefix, assigned when the model is built.
    pub scope: String,
}

/// Intermediate value while a branch runs.
enum BranchValue<'g> {
    Raw(&'g Feature),
    Ids(Vec<i64>),
    OnTape(ValueId),
}

fn hash_ids(feature: &Feature, buckets: u64) -> Result<Vec<i64>> {
    if let Ok(strings) = feature.as_str_scalars() {
        return Ok(strings
            .iter()
            .map(|s| (fnv1a(s.as_bytes()) % buckets) as i64)
            .collect());
    }
    let ints = feature.as_i64_scalars()?;
    Ok(ints
        .iter()
        .map(|&x| (fnv1a(&x.to_le_bytes()) % buckets) as i64)
        .collect())
}

fn to_tape_matrix<T: Scalar>(tape: &mut Tape<T>, value: BranchValue<'_>) -> Result<ValueId> {
    match value {
        BranchValue::OnTape(id) => Ok(id),
        BranchValue::Ids(ids) => {
            let values = ids.iter().map(|&x| T::from_f64(x as f64)).collect();
            Ok(tape.constant(DenseTensor::new(vec![ids.len(), 1], values)?))
        }
        BranchValue::Raw(feature) => {
            if feature.is_ragged() {
                return Err(Error::InvalidArgument {
                    op: "map_features".into(),
                    message: "ragged feature reaching hidden state; reduce it first \
                              (ragged_mean_to_dense or an embedding over a scalar id)"
                        .into(),
                });
            }
            let matrix = match feature.data() {
                FeatureData::F32(_) => feature.as_f32_matrix()?.cast::<T>(),
                FeatureData::I64(v) => DenseTensor::new(
                    vec![feature.items(), feature.inner_width()],
                    v.iter().map(|&x| T::from_f64(x as f64)).collect(),
                )?,
                FeatureData::Str(_) => {
                    return Err(Error::InvalidArgument {
                        op: "map_features".into(),
                        message: "string feature needs hash_bucket before numeric steps".into(),
                    })
                }
            };
            Ok(tape.constant(matrix))
        }
    }
}

fn run_branch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    graph: &GraphTensor,
    set: &str,
    branch: &FeatureBranch,
    scope: &str,
) -> Result<ValueId> {
    let node_set = graph.node_set(set)?;
    let items = node_set.total_size();
    let mut value = match &branch.feature {
        Some(name) => {
            BranchValue::Raw(node_set.feature(name).map_err(|_| Error::InvalidArgument {
                op: "map_features".into(),
                message: format!("unknown feature {set}.{name}"),
            })?)
        }
        None => match branch.steps.first() {
            Some(FeatureStep::MakeEmpty { .. }) => {
                BranchValue::OnTape(tape.constant(DenseTensor::zeros(vec![items, 0])))
            }
            _ => {
                return Err(Error::InvalidArgument {
                    op: "map_features".into(),
                    message: format!(
                        "branch on {set:?} names no feature; only make_empty branches may do that"
                    ),
                })
            }
        },
    };

    for (step_index, step) in branch.steps.iter().enumerate() {
        let step_scope = format!("{scope}/s{step_index}");
        value = match step {
            FeatureStep::HashBucket { buckets } => {
                if *buckets == 0 {
                    return Err(Error::InvalidArgument {
                        op: "hash_bucket".into(),
                        message: "buckets must be positive".into(),
                    });
                }
                match value {
                    BranchValue::Raw(f) => BranchValue::Ids(hash_ids(f, *buckets)?),
                    _ => {
                        return Err(Error::InvalidArgument {
                            op: "hash_bucket".into(),
                            message: "hash_bucket applies to a stored string/int feature".into(),
                        })
                    }
                }
            }
            FeatureStep::Embed { vocab, dim } => {
                let ids = match value {
                    BranchValue::Ids(ids) => ids,
                    BranchValue::Raw(f) => f.as_i64_scalars()?,
                    BranchValue::OnTape(_) => {
                        return Err(Error::InvalidArgument {
                            op: "embed".into(),
                            message: "embed needs integer ids, not a dense tensor".into(),
                        })
                    }
                };
                let mut indices = Vec::with_capacity(ids.len());
                for &id in &ids {
                    if id < 0 || id as usize >= *vocab {
                        return Err(Error::IndexOutOfRange {
                            context: format!("embed over {set:?}"),
                            index: id,
                            size: *vocab,
                        });
                    }
                    indices.push(id as usize);
                }
                let table = bind_glorot(
                    tape,
                    store,
                    &format!("{step_scope}/embed"),
                    *vocab,
                    *dim,
                    true,
                )?;
                BranchValue::OnTape(tape.gather_rows(table, &indices)?)
            }
            FeatureStep::Dense { units, activation } => {
                let x = to_tape_matrix(tape, value)?;
                let d_in = tape.value(x).shape()[1];
                let w = bind_glorot(tape, store, &format!("{step_scope}/w"), d_in, *units, true)?;
                let b = bind_zeros(tape, store, &format!("{step_scope}/b"), vec![*units])?;
                let y = tape.linear(x, w, Some(b))?;
                BranchValue::OnTape(tape.activation(y, *activation)?)
            }
            FeatureStep::Log1p => {
                let x = to_tape_matrix(tape, value)?;
                BranchValue::OnTape(tape.activation(x, Activation::Log1p)?)
            }
            FeatureStep::RaggedMeanToDense => match value {
                BranchValue::Raw(f) => {
                    BranchValue::OnTape(tape.constant(f.ragged_mean()?.cast::<T>()))
                }
                _ => {
                    return Err(Error::InvalidArgument {
                        op: "ragged_mean_to_dense".into(),
                        message: "applies to a stored ragged feature".into(),
                    })
                }
            },
            FeatureStep::MakeEmpty { dim } => {
                BranchValue::OnTape(tape.constant(DenseTensor::zeros(vec![items, *dim])))
            }
        };
    }
    to_tape_matrix(tape, value)
}

/// Run the configured pipelines and return per-set hidden states on the
/// tape. Sets without a pipeline get no state.
pub fn map_features<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    graph: &GraphTensor,
    pipelines: &BTreeMap<String, FeaturePipeline>,
    _mode: RunMode,
) -> Result<GraphState> {
    let mut state = GraphState::default();
    for (set, pipeline) in pipelines {
        if pipeline.branches.is_empty() {
            return Err(Error::InvalidArgument {
                op: "map_features".into(),
                message: format!("pipeline for {set:?} has no branches"),
            });
        }
        let mut outputs = Vec::with_capacity(pipeline.branches.len());
        for (i, branch) in pipeline.branches.iter().enumerate() {
            let scope = format!("{}/b{i}", pipeline.scope);
            outputs.push(run_branch(tape, store, graph, set, branch, &scope)?);
        }
        let hidden = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat_last(&outputs)?
        };
        state.node.insert(set.clone(), hidden);
    }
    Ok(state)
}

/// Graph-level wrapper: returns a new graph where each configured set gained
/// a `hidden_state` feature; unconfigured sets are unchanged.
pub fn map_features_graph(
    store: &mut ParameterStore<f32>,
    graph: &GraphTensor,
    pipelines: &BTreeMap<String, FeaturePipeline>,
    mode: RunMode,
) -> Result<GraphTensor> {
    let mut tape = Tape::<f32>::new();
    let state = map_features(&mut tape, store, graph, pipelines, mode)?;
    state.materialize(&tape, graph)
}

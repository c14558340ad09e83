//! Graph learning objectives: root-node multiclass and binary
//! classification, with label extraction and the masked loss head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Feature, GraphTensor};
use crate::layers::bind_glorot;
use crate::layers::{bind_zeros, GraphState};
use crate::tensor::{ParameterStore, Scalar, Tape, ValueId};

fn default_label_source() -> String {
    "context".to_string()
}

/// Task configuration document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// `root_multiclass` or `root_binary`.
    pub kind: String,
    /// Node set whose per-component root is read out.
    pub node_set: String,
    #[serde(default)]
    pub num_classes: usize,
    /// Feature holding the label.
    pub label_feature: String,
    /// `context` (one label per component) or `root_node` (a feature on the
    /// readout node set; the root's row is the label).
    #[serde(default = "default_label_source")]
    pub label_source: String,
}

#[derive(Clone, Debug)]
pub enum LabelSource {
    Context(String),
    RootNode(String),
}

/// A validated task.
#[derive(Clone, Debug)]
pub enum Task {
    RootMulticlass {
        node_set: String,
        num_classes: usize,
        label: LabelSource,
    },
    RootBinary {
        node_set: String,
        label: LabelSource,
    },
}

impl Task {
    pub fn from_config(config: &TaskConfig) -> Result<Task> {
        let label = match config.label_source.as_str() {
            "context" => LabelSource::Context(config.label_feature.clone()),
            "root_node" => LabelSource::RootNode(config.label_feature.clone()),
            other => {
                return Err(Error::InvalidArgument {
                    op: "task config".into(),
                    message: format!("unknown label_source {other:?}"),
                })
            }
        };
        match config.kind.as_str() {
            "root_multiclass" => {
                if config.num_classes < 2 {
                    return Err(Error::InvalidArgument {
                        op: "task config".into(),
                        message: format!(
                            "root_multiclass needs num_classes >= 2, got {}",
                            config.num_classes
                        ),
                    });
                }
                Ok(Task::RootMulticlass {
                    node_set: config.node_set.clone(),
                    num_classes: config.num_classes,
                    label,
                })
            }
            "root_binary" => Ok(Task::RootBinary {
                node_set: config.node_set.clone(),
                label,
            }),
            other => Err(Error::InvalidArgument {
                op: "task config".into(),
                message: format!("unknown task kind {other:?}"),
            }),
        }
    }

    pub fn node_set(&self) -> &str {
        match self {
            Task::RootMulticlass { node_set, .. } | Task::RootBinary { node_set, .. } => node_set,
        }
    }

    fn label_source(&self) -> &LabelSource {
        match self {
            Task::RootMulticlass { label, .. } | Task::RootBinary { label, .. } => label,
        }
    }

    /// Pull the labels out of the graph and remove the label feature from
    /// the model's inputs. One int64 label per component.
    pub fn extract_labels(&self, graph: &GraphTensor) -> Result<(GraphTensor, Vec<i64>)> {
        let per_component = |feature: &Feature| -> Result<Vec<i64>> {
            let values = feature.as_i64_scalars()?;
            if values.len() != graph.num_components() {
                return Err(Error::DimMismatch {
                    op: "extract_labels".into(),
                    lhs: vec![graph.num_components()],
                    rhs: vec![values.len()],
                });
            }
            Ok(values)
        };
        match self.label_source() {
            LabelSource::Context(name) => {
                let (stripped, feature) = graph.take_context_feature(name)?;
                Ok((stripped, per_component(&feature)?))
            }
            LabelSource::RootNode(name) => {
                let roots = graph.root_indices(self.node_set())?;
                let (stripped, feature) = graph.take_node_feature(self.node_set(), name)?;
                let all = feature.as_i64_scalars()?;
                Ok((stripped, roots.into_iter().map(|r| all[r]).collect()))
            }
        }
    }
}

/// Loss, logits and counting metrics for one batch.
pub struct TaskOutput {
    pub loss: ValueId,
    pub logits: ValueId,
    pub correct: usize,
    /// Number of mask-true components; 0 means the metrics are absent.
    pub counted: usize,
}

impl TaskOutput {
    pub fn accuracy(&self) -> Option<f64> {
        (self.counted > 0).then(|| self.correct as f64 / self.counted as f64)
    }
}

/// Linear head over the root readout plus masked cross-entropy. Padding
/// components carry weight 0 and do not contribute to loss or metrics.
pub fn compute_task_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    task: &Task,
    readout: ValueId,
    labels: &[i64],
    mask: &[bool],
) -> Result<TaskOutput> {
    let n = tape.value(readout).shape()[0];
    if labels.len() != n || mask.len() != n {
        return Err(Error::DimMismatch {
            op: "compute_task_loss".into(),
            lhs: vec![n],
            rhs: vec![labels.len()],
        });
    }
    let d = tape.value(readout).shape()[1];
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    match task {
        Task::RootMulticlass { num_classes, .. } => {
            let w = bind_glorot(tape, store, "head/w", d, *num_classes, true)?;
            let b = bind_zeros(tape, store, "head/b", vec![*num_classes])?;
            let logits = tape.linear(readout, w, Some(b))?;
            for (i, &label) in labels.iter().enumerate() {
                if mask[i] && (label < 0 || label as usize >= *num_classes) {
                    return Err(Error::IndexOutOfRange {
                        context: format!("label of component {i}"),
                        index: label,
                        size: *num_classes,
                    });
                }
            }
            let classes: Vec<usize> = labels
                .iter()
                .map(|&l| if l < 0 { 0 } else { l as usize })
                .collect();
            let loss = tape.softmax_xent(logits, &classes, &weights)?;
            let mut correct = 0;
            let mut counted = 0;
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                counted += 1;
                let row = tape.value(logits).row(i);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                if argmax == classes[i] {
                    correct += 1;
                }
            }
            Ok(TaskOutput {
                loss,
                logits,
                correct,
                counted,
            })
        }
        Task::RootBinary { .. } => {
            let w = bind_glorot(tape, store, "head/w", d, 1, true)?;
            let b = bind_zeros(tape, store, "head/b", vec![1])?;
            let logits = tape.linear(readout, w, Some(b))?;
            for (i, &label) in labels.iter().enumerate() {
                if mask[i] && !(label == 0 || label == 1) {
                    return Err(Error::IndexOutOfRange {
                        context: format!("binary label of component {i}"),
                        index: label,
                        size: 2,
                    });
                }
            }
            let targets: Vec<f64> = labels.iter().map(|&l| l.max(0) as f64).collect();
            let loss = tape.sigmoid_xent(logits, &targets, &weights)?;
            let mut correct = 0;
            let mut counted = 0;
            for i in 0..n {
                if !mask[i] {
                    continue;
                }
                counted += 1;
                let predicted = tape.value(logits).values()[i].to_f64() > 0.0;
                if predicted == (labels[i] == 1) {
                    correct += 1;
                }
            }
            Ok(TaskOutput {
                loss,
                logits,
                correct,
                counted,
            })
        }
    }
}

/// Readout for a task: the root row of each component.
pub fn task_readout<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &GraphTensor,
    state: &GraphState,
    task: &Task,
) -> Result<ValueId> {
    crate::layers::readout_root(tape, graph, state, task.node_set())
}

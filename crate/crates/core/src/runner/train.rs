//! The training loop: read and merge batches, pad, extract labels, map
//! features, run the graph updates, compute the masked loss with L2 weight
//! penalty, backpropagate, and step Adam under a cosine-decayed learning
//! rate. Fully deterministic under a fixed seed.

use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};

use super::artifact::{ArtifactMetadata, ModelArtifact};
use super::provider::DatasetProvider;
use super::task::{compute_task_loss, task_readout, Task, TaskConfig};
use crate::error::{Error, Result};
use crate::graph::{GraphTensor, PaddingTargets};
use crate::layers::{Model, ModelConfig, RunMode};
use crate::schema::schema_fingerprint;
use crate::tensor::{cosine_decay_lr, AdamState, ParameterStore, Scalar, Tape, ValueId};

/// Trainer hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; inferred from the dataset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
    pub seed: u64,
    #[serde(default)]
    pub lr_floor_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<PaddingTargets>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub examples: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub steps: Vec<StepMetrics>,
    pub validation: Vec<EpochMetrics>,
}

/// Evaluation result; `loss`/`accuracy` are absent for empty datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Add `l2 * sum of squares` of every regularized parameter bound on this
/// tape to the loss.
fn add_l2_penalty<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    loss: ValueId,
    l2: f64,
) -> Result<ValueId> {
    if l2 == 0.0 {
        return Ok(loss);
    }
    let mut total = loss;
    let names: Vec<String> = store.regularized().map(str::to_string).collect();
    for name in names {
        if let Some(id) = tape.param_id(&name) {
            let sq = tape.sum_squares(id)?;
            let scaled = tape.scale_const(sq, l2)?;
            total = tape.add(total, scaled)?;
        }
    }
    Ok(total)
}

/// One forward pass over a merged batch: padding, label extraction, feature
/// mapping, graph updates, readout, loss.
#[allow(clippy::too_many_arguments)]
pub fn forward_batch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParameterStore<T>,
    model: &Model,
    task: &Task,
    batch: &GraphTensor,
    padding: Option<&PaddingTargets>,
    mode: RunMode,
    l2: f64,
) -> Result<super::task::TaskOutput> {
    let (batch, mask) = match padding {
        Some(targets) => batch.pad_to_total_sizes(targets)?,
        None => (batch.clone(), vec![true; batch.num_components()]),
    };
    let (inputs, labels) = task.extract_labels(&batch)?;
    let state = model.forward(tape, store, &inputs, mode)?;
    let readout = task_readout(tape, &inputs, &state, task)?;
    let mut output = compute_task_loss(tape, store, task, readout, &labels, &mask)?;
    output.loss = add_l2_penalty(tape, store, output.loss, l2)?;
    Ok(output)
}

/// Run a provider's batches through a callback, reading ahead on a separate
/// thread with a bounded queue of 4 prepared batches.
fn for_each_batch(
    provider: &dyn DatasetProvider,
    epoch: usize,
    batch_size: usize,
    shuffle: bool,
    limit: Option<usize>,
    mut body: impl FnMut(GraphTensor) -> Result<()>,
) -> Result<()> {
    let batches = provider.batches(epoch, batch_size, shuffle)?;
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<GraphTensor>>(4);
        scope.spawn(move || {
            for item in batches {
                if tx.send(item).is_err() {
                    return; // consumer stopped early
                }
            }
        });
        let mut remaining = limit.unwrap_or(usize::MAX);
        for item in rx {
            if remaining == 0 {
                break;
            }
            body(item?)?;
            remaining -= 1;
        }
        Ok(())
    })
}

/// Train a model. Returns the exported-ready artifact and the per-step /
/// per-epoch metric history.
pub fn run_training(
    train: &dyn DatasetProvider,
    valid: Option<&dyn DatasetProvider>,
    model_config: &ModelConfig,
    task_config: &TaskConfig,
    trainer: &TrainerConfig,
) -> Result<(ModelArtifact, TrainingHistory)> {
    if trainer.batch_size == 0 || trainer.epochs == 0 {
        return Err(Error::InvalidArgument {
            op: "run_training".into(),
            message: "batch_size and epochs must be positive".into(),
        });
    }
    let schema = train.schema().clone();
    let model = Model::from_config(model_config, &schema)?;
    let task = Task::from_config(task_config)?;
    let mut store = ParameterStore::<f32>::new(trainer.seed);
    let mut adam = AdamState::<f32>::new();

    let steps_per_epoch = match trainer.steps_per_epoch {
        Some(s) => s,
        None => {
            let mut count = 0usize;
            for batch in train.batches(0, trainer.batch_size, false)? {
                batch?;
                count += 1;
            }
            count
        }
    };
    if steps_per_epoch == 0 {
        return Err(Error::InvalidArgument {
            op: "run_training".into(),
            message: "training dataset is empty".into(),
        });
    }
    let total_steps = (steps_per_epoch * trainer.epochs) as u64;

    let mut history = TrainingHistory::default();
    let mut step: u64 = 0;
    let mut warned_missing_grad = std::collections::BTreeSet::new();
    for epoch in 0..trainer.epochs {
        for_each_batch(
            train,
            epoch,
            trainer.batch_size,
            true,
            Some(steps_per_epoch),
            |batch| {
                let lr = cosine_decay_lr(step, total_steps, trainer.lr, trainer.lr_floor_fraction);
                let mut tape = Tape::<f32>::new();
                let mode = RunMode::training(trainer.seed, step);
                let output = match forward_batch(
                    &mut tape,
                    &mut store,
                    &model,
                    &task,
                    &batch,
                    trainer.padding.as_ref(),
                    mode,
                    trainer.l2,
                ) {
                    Err(Error::PaddingFit(reason)) => {
                        // mirror fit-or-skip: drop the batch, keep training
                        eprintln!("skipping batch at step {step}: {reason}");
                        return Ok(());
                    }
                    other => other?,
                };
                let loss = tape.value(output.loss).values()[0] as f64;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        step: step as usize,
                        message: format!("non-finite loss {loss}"),
                    });
                }
                tape.backward(output.loss)?;
                let skipped = adam.apply(&mut store, tape.gradients(), lr)?;
                for name in skipped {
                    if warned_missing_grad.insert(name.clone()) {
                        eprintln!("step {step}: no gradient for parameter {name:?}, skipped");
                    }
                }
                history.steps.push(StepMetrics {
                    step,
                    lr,
                    loss,
                    accuracy: output.accuracy(),
                });
                step += 1;
                Ok(())
            },
        )?;

        if let Some(valid) = valid {
            let metrics = evaluate_with(&mut store, &model, &task, valid, trainer.batch_size)?;
            history.validation.push(EpochMetrics {
                epoch,
                loss: metrics.loss,
                accuracy: metrics.accuracy,
                examples: metrics.examples,
            });
        }
    }

    let last = history.steps.last();
    let metadata = ArtifactMetadata {
        final_step: step,
        train_loss: last.map(|m| m.loss),
        train_accuracy: last.and_then(|m| m.accuracy),
        validation_accuracy: history.validation.last().and_then(|m| m.accuracy),
    };
    let artifact = ModelArtifact {
        fingerprint: schema_fingerprint(&schema),
        schema,
        model: model_config.clone(),
        task: task_config.clone(),
        params: store,
        metadata,
    };
    Ok((artifact, history))
}

/// Forward-only metrics over a provider; dropout disabled, parameters
/// untouched.
pub(crate) fn evaluate_with(
    store: &mut ParameterStore<f32>,
    model: &Model,
    task: &Task,
    provider: &dyn DatasetProvider,
    batch_size: usize,
) -> Result<Metrics> {
    let mut examples = 0usize;
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for_each_batch(provider, 0, batch_size, false, None, |batch| {
        let mut tape = Tape::<f32>::new();
        let output = forward_batch(
            &mut tape,
            store,
            model,
            task,
            &batch,
            None,
            RunMode::inference(),
            0.0,
        )?;
        let loss = tape.value(output.loss).values()[0] as f64;
        loss_sum += loss * output.counted as f64;
        correct += output.correct;
        examples += output.counted;
        Ok(())
    })?;
    Ok(Metrics {
        examples,
        loss: (examples > 0).then(|| loss_sum / examples as f64),
        accuracy: (examples > 0).then(|| correct as f64 / examples as f64),
    })
}

/// Evaluate a trained artifact against a dataset it is compatible with.
/// Per-example metrics do not depend on `batch_size`.
pub fn evaluate(
    artifact: &ModelArtifact,
    provider: &dyn DatasetProvider,
    batch_size: usize,
) -> Result<Metrics> {
    let expected = schema_fingerprint(provider.schema());
    if expected != artifact.fingerprint {
        return Err(Error::FingerprintMismatch {
            found: artifact.fingerprint,
            expected,
        });
    }
    let model = Model::from_config(&artifact.model, &artifact.schema)?;
    let task = Task::from_config(&artifact.task)?;
    let mut store = clone_store(&artifact.params);
    evaluate_with(&mut store, &model, &task, provider, batch_size)
}

pub(crate) fn clone_store(params: &ParameterStore<f32>) -> ParameterStore<f32> {
    let mut out = ParameterStore::<f32>::new(params.seed());
    for (name, tensor) in params.iter() {
        out.set(name, tensor.clone());
    }
    for name in params.regularized() {
        out.mark_regularized(name);
    }
    out
}

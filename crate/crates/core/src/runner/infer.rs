//! Offline batch inference: serialized records in, NDJSON predictions out.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::DatasetReader;
use crate::layers::{Model, RunMode};
use crate::runner::artifact::ModelArtifact;
use crate::runner::task::{task_readout, Task};
use crate::runner::train::clone_store;
use crate::tensor::{Scalar, Tape};

/// Run the artifact over every record and write one NDJSON row per record:
/// `{"record_index": i, "prediction": class-or-probability, "logits": [...]}`.
/// Deterministic; predictions are independent of `batch_size`.
pub fn infer(
    artifact: &ModelArtifact,
    records: &str,
    out_path: &Path,
    batch_size: usize,
) -> Result<usize> {
    let model = Model::from_config(&artifact.model, &artifact.schema)?;
    let task = Task::from_config(&artifact.task)?;
    let mut store = clone_store(&artifact.params);

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(out_path)
            .map_err(|e| Error::io(format!("create {}", out_path.display()), e))?,
    );
    let reader = DatasetReader::open(records, &artifact.schema, None, batch_size)?;
    let mut record_index = 0usize;
    for batch in reader {
        let batch = batch?;
        // Drop the label feature when present so inputs match training.
        let inputs = match task.extract_labels(&batch) {
            Ok((stripped, _)) => stripped,
            Err(_) => batch.clone(),
        };
        let mut tape = Tape::<f32>::new();
        let state = model.forward(&mut tape, &mut store, &inputs, RunMode::inference())?;
        let readout = task_readout(&mut tape, &inputs, &state, &task)?;
        let logits = head_logits(&mut tape, &mut store, &task, readout)?;
        let values = tape.value(logits);
        for c in 0..batch.num_components() {
            let row = values.row(c);
            let (prediction, logit_list): (serde_json::Value, Vec<f64>) = match &task {
                Task::RootMulticlass { .. } => {
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                        .map(|(j, _)| j)
                        .unwrap_or(0);
                    (
                        serde_json::json!(argmax),
                        row.iter().map(|&v| v.to_f64()).collect(),
                    )
                }
                Task::RootBinary { .. } => {
                    let z = row[0].to_f64();
                    let probability = 1.0 / (1.0 + (-z).exp());
                    (serde_json::json!(probability), vec![z])
                }
            };
            let line = serde_json::json!({
                "record_index": record_index,
                "prediction": prediction,
                "logits": logit_list,
            });
            writeln!(out, "{line}").map_err(|e| Error::io("write predictions", e))?;
            record_index += 1;
        }
    }
    if record_index == 0 {
        writeln!(out, "# 0 records").map_err(|e| Error::io("write predictions", e))?;
    }
    out.flush().map_err(|e| Error::io("flush predictions", e))?;
    Ok(record_index)
}

/// The task head's logits for a readout (no loss, no labels).
pub(crate) fn head_logits<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut crate::tensor::ParameterStore<T>,
    task: &Task,
    readout: crate::tensor::ValueId,
) -> Result<crate::tensor::ValueId> {
    use crate::layers::{bind_glorot, bind_zeros};
    let d = tape.value(readout).shape()[1];
    let classes = match task {
        Task::RootMulticlass { num_classes, .. } => *num_classes,
        Task::RootBinary { .. } => 1,
    };
    let w = bind_glorot(tape, store, "head/w", d, classes, true)?;
    let b = bind_zeros(tape, store, "head/b", vec![classes])?;
    tape.linear(readout, w, Some(b))
}

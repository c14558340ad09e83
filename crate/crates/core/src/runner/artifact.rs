//! Trained-model container: schema fingerprint, model and task
//! configuration, named parameter tensors and training metadata in a single
//! file. Layout: 8-byte LE header length, JSON header, raw f32 LE parameter
//! blocks in header order, 8-byte FNV-1a checksum over everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ModelConfig;
use crate::runner::task::TaskConfig;
use crate::schema::{parse_schema, schema_fingerprint, GraphSchema};
use crate::tensor::rng::fnv1a;
use crate::tensor::{DenseTensor, ParameterStore};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub final_step: u64,
    pub train_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ArtifactHeader {
    fingerprint: u64,
    schema: serde_json::Value,
    model: ModelConfig,
    task: TaskConfig,
    params: Vec<ParamMeta>,
    regularized: Vec<String>,
    metadata: ArtifactMetadata,
}

/// A trained model ready for evaluation, inference or further export.
#[derive(Debug)]
pub struct ModelArtifact {
    pub schema: GraphSchema,
    pub fingerprint: u64,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub params: ParameterStore<f32>,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    /// Write the artifact; loading it back yields bitwise-equal parameters.
    pub fn export(&self, path: &Path) -> Result<()> {
        let params: Vec<ParamMeta> = self
            .params
            .iter()
            .map(|(name, tensor)| ParamMeta {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
            })
            .collect();
        let header = ArtifactHeader {
            fingerprint: self.fingerprint,
            schema: serde_json::to_value(&self.schema)?,
            model: self.model.clone(),
            task: self.task.clone(),
            params,
            regularized: self.params.regularized().map(str::to_string).collect(),
            metadata: self.metadata.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(header_bytes.len() + 16);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, tensor) in self.params.iter() {
            for v in tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        std::fs::write(path, &out)
            .map_err(|e| Error::io(format!("write artifact {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<ModelArtifact> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("read artifact {}", path.display()), e))?;
        if bytes.len() < 16 {
            return Err(Error::Artifact("file too short".into()));
        }
        let (body, stored_checksum) = bytes.split_at(bytes.len() - 8);
        let stored_checksum = u64::from_le_bytes(stored_checksum.try_into().expect("8 bytes"));
        let computed = fnv1a(body);
        if stored_checksum != computed {
            return Err(Error::Artifact(format!(
                "checksum mismatch: stored {stored_checksum:#018x}, computed {computed:#018x}"
            )));
        }
        let header_len = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
        if 8 + header_len > body.len() {
            return Err(Error::Artifact("header length exceeds file size".into()));
        }
        let header: ArtifactHeader = serde_json::from_slice(&body[8..8 + header_len])
            .map_err(|e| Error::Artifact(format!("bad header: {e}")))?;
        let schema = parse_schema(&serde_json::Value::to_string(&header.schema))?;
        let fingerprint = schema_fingerprint(&schema);
        if fingerprint != header.fingerprint {
            return Err(Error::Artifact(format!(
                "stored schema fingerprints to {fingerprint:#018x} but header says {:#018x}",
                header.fingerprint
            )));
        }

        let mut params = ParameterStore::<f32>::new(0);
        let mut cursor = 8 + header_len;
        for meta in &header.params {
            let count = meta
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| {
                    Error::Artifact(format!("parameter {} has an absurd shape", meta.name))
                })?;
            let end = count
                .checked_mul(4)
                .and_then(|bytes| cursor.checked_add(bytes))
                .filter(|&end| end <= body.len())
                .ok_or_else(|| {
                    Error::Artifact(format!(
                        "parameter {} truncated: need {count} values, have {} bytes",
                        meta.name,
                        body.len() - cursor
                    ))
                })?;
            let values: Vec<f32> = body[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.set(&meta.name, DenseTensor::new(meta.shape.clone(), values)?);
            cursor = end;
        }
        if cursor != body.len() {
            return Err(Error::Artifact(format!(
                "{} trailing bytes after the last parameter",
                body.len() - cursor
            )));
        }
        for name in &header.regularized {
            params.mark_regularized(name);
        }
        Ok(ModelArtifact {
            schema,
            fingerprint: header.fingerprint,
            model: header.model,
            task: header.task,
            params,
            metadata: header.metadata,
        })
    }

    /// Bitwise comparison of parameter payloads (test aid).
    pub fn params_equal(&self, other: &ModelArtifact) -> bool {
        let a: BTreeMap<&String, &DenseTensor<f32>> = self.params.iter().collect();
        let b: BTreeMap<&String, &DenseTensor<f32>> = other.params.iter().collect();
        a.len() == b.len()
            && a.iter().all(|(name, tensor)| {
                b.get(*name).is_some_and(|t| {
                    t.shape() == tensor.shape()
                        && t.values()
                            .iter()
                            .zip(tensor.values())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
            })
    }
}

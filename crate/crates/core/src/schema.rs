//! Graph schema: the declarative description every graph tensor and sampling
//! spec is checked against.
//!
//! Schemas are UTF-8 JSON documents. Feature shapes are lists of integers
//! with `-1` marking a ragged (per-item variable) dimension, which must be
//! the leading feature dimension:
//!
//! ```json
//! {"node_sets": {"users": {"features": {"age": {"dtype": "int64", "shape": []}}}},
//!  "edge_sets": {"purchased": {"source": "items", "target": "users", "features": {}}},
//!  "context": {"features": {"scores": {"dtype": "float32", "shape": [4]}}}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::graph::{Feature, FeatureData, GraphTensor};
use crate::tensor::rng::fnv1a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "float32")]
    Float32,
    #[serde(rename = "int64")]
    Int64,
    #[serde(rename = "string")]
    String,
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Dtype::Float32 => "float32",
            Dtype::Int64 => "int64",
            Dtype::String => "string",
        };
        f.write_str(s)
    }
}

/// Declared name, dtype and per-item shape of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub dtype: Dtype,
    /// Per-item shape; `-1` denotes the (single, leading) ragged dimension.
    #[serde(default)]
    pub shape: Vec<i64>,
}

impl FeatureSpec {
    pub fn is_ragged(&self) -> bool {
        self.shape.first() == Some(&-1)
    }

    /// Fixed trailing extents (everything after the ragged marker, or the
    /// whole shape when dense).
    pub fn inner_shape(&self) -> Vec<usize> {
        let skip = usize::from(self.is_ragged());
        self.shape[skip..].iter().map(|&d| d as usize).collect()
    }
}

/// Informational per-set metadata; validation never reads files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filename: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSetSpec {
    #[serde(default)]
    pub features: BTreeMap<String, FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<SetMetadata>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSetSpec {
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub features: BTreeMap<String, FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<SetMetadata>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    #[serde(default)]
    pub features: BTreeMap<String, FeatureSpec>,
}

/// Declarative description of node sets, edge sets and context features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSchema {
    pub node_sets: BTreeMap<String, NodeSetSpec>,
    #[serde(default)]
    pub edge_sets: BTreeMap<String, EdgeSetSpec>,
    #[serde(default)]
    pub context: ContextSpec,
}

impl GraphSchema {
    pub fn node_set(&self, name: &str) -> Result<&NodeSetSpec> {
        self.node_sets
            .get(name)
            .ok_or_else(|| Error::SchemaInvalid(format!("unknown node set {name:?}")))
    }

    pub fn edge_set(&self, name: &str) -> Result<&EdgeSetSpec> {
        self.edge_sets
            .get(name)
            .ok_or_else(|| Error::SchemaInvalid(format!("unknown edge set {name:?}")))
    }

    fn validate(&self) -> Result<()> {
        if self.node_sets.is_empty() {
            return Err(Error::SchemaInvalid("no node sets".into()));
        }
        for (set, spec) in &self.node_sets {
            for (name, fspec) in &spec.features {
                validate_feature_spec(&format!("node_sets.{set}.{name}"), fspec)?;
            }
        }
        for (set, spec) in &self.edge_sets {
            if !self.node_sets.contains_key(&spec.source) {
                return Err(Error::SchemaInvalid(format!(
                    "edge set {set:?} references unknown source node set {:?}",
                    spec.source
                )));
            }
            if !self.node_sets.contains_key(&spec.target) {
                return Err(Error::SchemaInvalid(format!(
                    "edge set {set:?} references unknown target node set {:?}",
                    spec.target
                )));
            }
            for (name, fspec) in &spec.features {
                validate_feature_spec(&format!("edge_sets.{set}.{name}"), fspec)?;
            }
        }
        for (name, fspec) in &self.context.features {
            validate_feature_spec(&format!("context.{name}"), fspec)?;
        }
        Ok(())
    }
}

fn validate_feature_spec(location: &str, spec: &FeatureSpec) -> Result<()> {
    for (i, &dim) in spec.shape.iter().enumerate() {
        if dim == -1 && i != 0 {
            return Err(Error::SchemaInvalid(format!(
                "{location}: ragged dimension must be the leading feature dimension"
            )));
        }
        if dim < -1 {
            return Err(Error::SchemaInvalid(format!(
                "{location}: invalid extent {dim}"
            )));
        }
    }
    if spec.shape.iter().filter(|&&d| d == -1).count() > 1 {
        return Err(Error::SchemaInvalid(format!(
            "{location}: at most one ragged dimension is allowed"
        )));
    }
    if spec.dtype == Dtype::String && spec.shape.len() > 1 {
        return Err(Error::SchemaInvalid(format!(
            "{location}: string features must be scalar or rank-1 per item"
        )));
    }
    Ok(())
}

/// Parse and fully validate a schema document.
pub fn parse_schema(text: &str) -> Result<GraphSchema> {
    let schema: GraphSchema =
        serde_json::from_str(text).map_err(|e| Error::SchemaParse(e.to_string()))?;
    schema.validate()?;
    Ok(schema)
}

/// Canonical JSON form: sorted keys at every level, compact separators.
/// `parse(serialize(s)) == s` and the serialization is a fixed point.
pub fn serialize_schema(schema: &GraphSchema) -> String {
    let value = serde_json::to_value(schema).expect("schema serializes");
    value.to_string()
}

/// FNV-1a 64 over the canonical schema document. The compatibility guard
/// stored in every record and model artifact.
pub fn schema_fingerprint(schema: &GraphSchema) -> u64 {
    fnv1a(serialize_schema(schema).as_bytes())
}

/// Check one graph against a schema. Returns every violation found; an empty
/// list means the graph conforms.
pub fn validate_graph(schema: &GraphSchema, graph: &GraphTensor) -> Vec<Violation> {
    let mut out = Vec::new();
    fn violation(out: &mut Vec<Violation>, location: String, message: String) {
        out.push(Violation { location, message });
    }

    for name in graph.node_sets().keys() {
        if !schema.node_sets.contains_key(name) {
            violation(
                &mut out,
                format!("node_sets.{name}"),
                "not declared in schema".into(),
            );
        }
    }
    for name in graph.edge_sets().keys() {
        if !schema.edge_sets.contains_key(name) {
            violation(
                &mut out,
                format!("edge_sets.{name}"),
                "not declared in schema".into(),
            );
        }
    }

    for (set_name, spec) in &schema.node_sets {
        let Some(node_set) = graph.node_sets().get(set_name) else {
            violation(
                &mut out,
                format!("node_sets.{set_name}"),
                "missing node set".into(),
            );
            continue;
        };
        check_features(
            &format!("node_sets.{set_name}"),
            &spec.features,
            node_set.features(),
            &mut out,
        );
    }

    for (set_name, spec) in &schema.edge_sets {
        let Some(edge_set) = graph.edge_sets().get(set_name) else {
            violation(
                &mut out,
                format!("edge_sets.{set_name}"),
                "missing edge set".into(),
            );
            continue;
        };
        let adj = edge_set.adjacency();
        if adj.source_set() != spec.source {
            violation(
                &mut out,
                format!("edge_sets.{set_name}"),
                format!(
                    "source node set is {:?}, schema says {:?}",
                    adj.source_set(),
                    spec.source
                ),
            );
        }
        if adj.target_set() != spec.target {
            violation(
                &mut out,
                format!("edge_sets.{set_name}"),
                format!(
                    "target node set is {:?}, schema says {:?}",
                    adj.target_set(),
                    spec.target
                ),
            );
        }
        for (endpoint, indices) in [("source", adj.source()), ("target", adj.target())] {
            let referenced = if endpoint == "source" {
                &spec.source
            } else {
                &spec.target
            };
            if let Some(node_set) = graph.node_sets().get(referenced) {
                let total = node_set.total_size();
                for &ix in indices {
                    if ix < 0 || ix as usize >= total {
                        violation(
                            &mut out,
                            format!("edge_sets.{set_name}.{endpoint}"),
                            format!("index {ix} out of range for node set of size {total}"),
                        );
                        break;
                    }
                }
            }
        }
        check_features(
            &format!("edge_sets.{set_name}"),
            &spec.features,
            edge_set.features(),
            &mut out,
        );
    }

    check_features(
        "context",
        &schema.context.features,
        graph.context_features(),
        &mut out,
    );
    out
}

fn check_features(
    prefix: &str,
    specs: &BTreeMap<String, FeatureSpec>,
    features: &BTreeMap<String, Feature>,
    out: &mut Vec<Violation>,
) {
    for name in features.keys() {
        if !specs.contains_key(name) {
            out.push(Violation {
                location: format!("{prefix}.{name}"),
                message: "feature not declared in schema".into(),
            });
        }
    }
    for (name, spec) in specs {
        let location = format!("{prefix}.{name}");
        let Some(feature) = features.get(name) else {
            out.push(Violation {
                location,
                message: "missing feature".into(),
            });
            continue;
        };
        let actual_dtype = match feature.data() {
            FeatureData::F32(_) => Dtype::Float32,
            FeatureData::I64(_) => Dtype::Int64,
            FeatureData::Str(_) => Dtype::String,
        };
        if actual_dtype != spec.dtype {
            out.push(Violation {
                location: location.clone(),
                message: format!(
                    "dtype mismatch: stored {actual_dtype}, schema {}",
                    spec.dtype
                ),
            });
        }
        if feature.is_ragged() != spec.is_ragged() {
            out.push(Violation {
                location: location.clone(),
                message: if spec.is_ragged() {
                    "schema declares a ragged dimension but feature is dense".into()
                } else {
                    "feature is ragged but schema declares a dense shape".into()
                },
            });
        } else if feature.inner_shape() != spec.inner_shape().as_slice() {
            out.push(Violation {
                location,
                message: format!(
                    "shape mismatch: stored {:?}, schema {:?}",
                    feature.inner_shape(),
                    spec.inner_shape()
                ),
            });
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// The recommender-style two-node-set schema used across the test suite.
    pub(crate) fn users_items_schema() -> GraphSchema {
        parse_schema(
            r#"{
            "node_sets": {
                "items": {"features": {
                    "category": {"dtype": "string", "shape": []},
                    "price": {"dtype": "float32", "shape": [-1]}
                }},
                "users": {"features": {
                    "name": {"dtype": "string", "shape": []},
                    "age": {"dtype": "int64", "shape": []},
                    "country": {"dtype": "int64", "shape": []}
                }}
            },
            "edge_sets": {
                "purchased": {"source": "items", "target": "users", "features": {}},
                "is-friend": {"source": "users", "target": "users", "features": {}}
            },
            "context": {"features": {"scores": {"dtype": "float32", "shape": [4]}}}
        }"#,
        )
        .unwrap()
    }
}

//! Sampling specs: a DAG of sampling operations executed per seed, plus the
//! builder that generates deterministic op names.
//!
//! The JSON form mirrors the op fields `seed_op`, `sampling_ops`, `op_name`,
//! `input_op_names`, `edge_set_name`, `sample_size`, `strategy`, extended
//! with a `direction` flag so an edge set can be traversed against its
//! stored orientation (e.g. a "written" relation expressed as
//! `direction: "reverse"` over a "writes" edge set).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::GraphSchema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Direction {
    #[serde(rename = "forward")]
    #[default]
    Forward,
    #[serde(rename = "reverse")]
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Strategy {
    #[serde(rename = "RANDOM_UNIFORM")]
    #[default]
    RandomUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedOp {
    pub op_name: String,
    pub node_set_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingOp {
    pub op_name: String,
    pub input_op_names: Vec<String>,
    pub edge_set_name: String,
    pub sample_size: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub direction: Direction,
}

/// DAG of sampling operations: one seed op and an ordered list of sampling
/// ops whose inputs reference earlier ops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub seed_op: SeedOp,
    pub sampling_ops: Vec<SamplingOp>,
}

/// Node set a sampling op starts from, given the traversal direction.
pub fn origin_node_set<'s>(schema: &'s GraphSchema, op: &SamplingOp) -> Result<&'s str> {
    let spec = schema.edge_set(&op.edge_set_name)?;
    Ok(match op.direction {
        Direction::Forward => &spec.source,
        Direction::Reverse => &spec.target,
    })
}

/// Node set a sampling op produces.
pub fn result_node_set<'s>(schema: &'s GraphSchema, op: &SamplingOp) -> Result<&'s str> {
    let spec = schema.edge_set(&op.edge_set_name)?;
    Ok(match op.direction {
        Direction::Forward => &spec.target,
        Direction::Reverse => &spec.source,
    })
}

impl SamplingSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::SamplingSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Check op-name uniqueness, DAG ordering, edge-set existence and
    /// endpoint consistency against a schema.
    pub fn validate(&self, schema: &GraphSchema) -> Result<()> {
        schema.node_set(&self.seed_op.node_set_name).map_err(|_| {
            Error::SamplingSpec(format!(
                "seed op references unknown node set {:?}",
                self.seed_op.node_set_name
            ))
        })?;
        let mut produced: BTreeMap<&str, String> = BTreeMap::new();
        produced.insert(
            self.seed_op.op_name.as_str(),
            self.seed_op.node_set_name.clone(),
        );
        for op in &self.sampling_ops {
            if produced.contains_key(op.op_name.as_str()) {
                return Err(Error::SamplingSpec(format!(
                    "duplicate op name {:?}",
                    op.op_name
                )));
            }
            if op.input_op_names.is_empty() {
                return Err(Error::SamplingSpec(format!(
                    "op {:?} has no inputs",
                    op.op_name
                )));
            }
            let origin = origin_node_set(schema, op)
                .map_err(|e| Error::SamplingSpec(format!("op {:?}: {e}", op.op_name)))?;
            for input in &op.input_op_names {
                let Some(input_set) = produced.get(input.as_str()) else {
                    return Err(Error::SamplingSpec(format!(
                        "op {:?} references {input:?}, which is not an earlier op",
                        op.op_name
                    )));
                };
                if input_set != origin {
                    return Err(Error::SamplingSpec(format!(
                        "op {:?} samples {:?} from node set {origin:?} but input {input:?} \
                         produces {input_set:?}",
                        op.op_name, op.edge_set_name
                    )));
                }
            }
            let result = result_node_set(schema, op)?.to_string();
            produced.insert(op.op_name.as_str(), result);
        }
        Ok(())
    }
}

/// Handle to an op inside a [`SamplingSpecBuilder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpHandle(usize);

struct BuilderOp {
    name: String,
    result_set: String,
    depth: usize,
    op: Option<SamplingOp>, // None for the seed
}

/// Programmatic construction of sampling specs with the deterministic op
/// naming `A->B` for single-input ops and `(X|Y)->Z` for joins.
pub struct SamplingSpecBuilder<'s> {
    schema: &'s GraphSchema,
    strategy: Strategy,
    ops: Vec<BuilderOp>,
    names: BTreeSet<String>,
    seed: Option<OpHandle>,
}

impl<'s> SamplingSpecBuilder<'s> {
    pub fn new(schema: &'s GraphSchema, strategy: Strategy) -> Self {
        SamplingSpecBuilder {
            schema,
            strategy,
            ops: Vec::new(),
            names: BTreeSet::new(),
            seed: None,
        }
    }

    fn unique_name(&mut self, base: String) -> String {
        if self.names.insert(base.clone()) {
            return base;
        }
        for k in 2.. {
            let candidate = format!("{base}#{k}");
            if self.names.insert(candidate.clone()) {
                return candidate;
            }
        }
        unreachable!()
    }

    /// Declare the seed node set; named `SEED-><node_set>`.
    pub fn seed(&mut self, node_set: &str) -> Result<OpHandle> {
        if self.seed.is_some() {
            return Err(Error::SamplingSpec("a spec has exactly one seed op".into()));
        }
        self.schema.node_set(node_set).map_err(|_| {
            Error::SamplingSpec(format!("seed references unknown node set {node_set:?}"))
        })?;
        let name = self.unique_name(format!("SEED->{node_set}"));
        self.ops.push(BuilderOp {
            name,
            result_set: node_set.to_string(),
            depth: 0,
            op: None,
        });
        let handle = OpHandle(self.ops.len() - 1);
        self.seed = Some(handle);
        Ok(handle)
    }

    /// Sample up to `sample_size` edges of `edge_set` from the union of the
    /// input ops' nodes. Joins list all inputs; their node sets must agree.
    pub fn sample(
        &mut self,
        inputs: &[OpHandle],
        sample_size: usize,
        edge_set: &str,
        direction: Direction,
    ) -> Result<OpHandle> {
        if inputs.is_empty() {
            return Err(Error::SamplingSpec(
                "sample needs at least one input".into(),
            ));
        }
        let edge_spec = self
            .schema
            .edge_set(edge_set)
            .map_err(|_| Error::SamplingSpec(format!("unknown edge set {edge_set:?}")))?;
        let (origin, result) = match direction {
            Direction::Forward => (edge_spec.source.clone(), edge_spec.target.clone()),
            Direction::Reverse => (edge_spec.target.clone(), edge_spec.source.clone()),
        };
        for &input in inputs {
            let produced = &self.ops[input.0].result_set;
            if produced != &origin {
                return Err(Error::SamplingSpec(format!(
                    "cannot sample {edge_set:?} from {produced:?} nodes (expects {origin:?})"
                )));
            }
        }
        let base = if inputs.len() == 1 {
            format!("{}->{result}", self.ops[inputs[0].0].result_set)
        } else {
            let joined: Vec<&str> = inputs.iter().map(|h| self.ops[h.0].name.as_str()).collect();
            format!("({})->{result}", joined.join("|"))
        };
        let name = self.unique_name(base);
        let depth = 1 + inputs
            .iter()
            .map(|h| self.ops[h.0].depth)
            .max()
            .expect("nonempty inputs");
        let op = SamplingOp {
            op_name: name.clone(),
            input_op_names: inputs.iter().map(|h| self.ops[h.0].name.clone()).collect(),
            edge_set_name: edge_set.to_string(),
            sample_size,
            strategy: self.strategy,
            direction,
        };
        self.ops.push(BuilderOp {
            name,
            result_set: result,
            depth,
            op: Some(op),
        });
        Ok(OpHandle(self.ops.len() - 1))
    }

    /// Emit the spec. Sampling ops are ordered by DAG depth, ties broken by
    /// op name, which keeps inputs ahead of their consumers.
    pub fn build(self) -> Result<SamplingSpec> {
        let seed = self
            .seed
            .ok_or_else(|| Error::SamplingSpec("call seed() before building the spec".into()))?;
        let seed_op = SeedOp {
            op_name: self.ops[seed.0].name.clone(),
            node_set_name: self.ops[seed.0].result_set.clone(),
        };
        let mut ops: Vec<(usize, String, SamplingOp)> = self
            .ops
            .into_iter()
            .filter_map(|b| b.op.map(|op| (b.depth, b.name, op)))
            .collect();
        ops.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let spec = SamplingSpec {
            seed_op,
            sampling_ops: ops.into_iter().map(|(_, _, op)| op).collect(),
        };
        Ok(spec)
    }
}

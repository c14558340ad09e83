//! In-memory graph store: per node set a feature table plus an id→index map,
//! per edge set forward and reverse CSR adjacency with edge-feature rows.
//! Immutable after build and shared read-only across sampling shards.

use std::collections::{BTreeMap, HashMap};

use serde_json::Value;

use super::tables::{value_as_id, RawRow};
use crate::error::{Error, Result};
use crate::graph::{Feature, FeatureData};
use crate::schema::{Dtype, FeatureSpec, GraphSchema};

/// One stored feature column with precomputed ragged row offsets.
#[derive(Debug)]
pub(crate) struct StoreColumn {
    pub feature: Feature,
    /// Prefix sums of row lengths (ragged features only).
    pub offsets: Option<Vec<usize>>,
}

impl StoreColumn {
    fn new(feature: Feature) -> Self {
        let offsets = feature.row_lengths().map(|lens| {
            let mut out = Vec::with_capacity(lens.len() + 1);
            let mut acc = 0;
            out.push(0);
            for &l in lens {
                acc += l;
                out.push(acc);
            }
            out
        });
        StoreColumn { feature, offsets }
    }

    /// Append item `i` of this column onto a per-sample builder.
    pub(crate) fn extract_into(&self, i: usize, out: &mut FeatureBuilder) {
        let width = self.feature.inner_width();
        let (start, end) = match &self.offsets {
            None => (i * width, (i + 1) * width),
            Some(offsets) => (offsets[i] * width, offsets[i + 1] * width),
        };
        if let Some(lens) = self.feature.row_lengths() {
            out.row_lengths
                .as_mut()
                .expect("ragged builder")
                .push(lens[i]);
        }
        match (self.feature.data(), &mut out.data) {
            (FeatureData::F32(v), FeatureData::F32(acc)) => acc.extend_from_slice(&v[start..end]),
            (FeatureData::I64(v), FeatureData::I64(acc)) => acc.extend_from_slice(&v[start..end]),
            (FeatureData::Str(v), FeatureData::Str(acc)) => {
                acc.extend(v[start..end].iter().cloned())
            }
            _ => unreachable!("builder allocated from the same column"),
        }
    }

    pub(crate) fn make_builder(&self) -> FeatureBuilder {
        FeatureBuilder {
            data: match self.feature.data() {
                FeatureData::F32(_) => FeatureData::F32(Vec::new()),
                FeatureData::I64(_) => FeatureData::I64(Vec::new()),
                FeatureData::Str(_) => FeatureData::Str(Vec::new()),
            },
            row_lengths: self.feature.row_lengths().map(|_| Vec::new()),
            inner_shape: self.feature.inner_shape().to_vec(),
        }
    }
}

/// Accumulates extracted rows into a per-sample [`Feature`].
pub(crate) struct FeatureBuilder {
    data: FeatureData,
    row_lengths: Option<Vec<usize>>,
    inner_shape: Vec<usize>,
}

impl FeatureBuilder {
    pub(crate) fn finish(self, items: usize) -> Result<Feature> {
        match self.row_lengths {
            Some(lens) => Feature::ragged(lens, self.inner_shape, self.data),
            None => Feature::dense(items, self.inner_shape, self.data),
        }
    }
}

/// Compressed sparse row adjacency: `offsets` is monotone with `N + 1`
/// entries; `neighbors[offsets[u]..offsets[u+1]]` are `u`'s incident nodes
/// and `edge_rows` the matching rows in the edge feature table.
#[derive(Debug)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub edge_rows: Vec<usize>,
}

impl Csr {
    fn build(num_nodes: usize, pairs: &[(usize, usize)]) -> Csr {
        let mut counts = vec![0usize; num_nodes];
        for &(from, _) in pairs {
            counts[from] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut acc = 0;
        offsets.push(0);
        for &c in &counts {
            acc += c;
            offsets.push(acc);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut neighbors = vec![0usize; pairs.len()];
        let mut edge_rows = vec![0usize; pairs.len()];
        for (row, &(from, to)) in pairs.iter().enumerate() {
            let slot = cursor[from];
            cursor[from] += 1;
            neighbors[slot] = to;
            edge_rows[slot] = row;
        }
        Csr {
            offsets,
            neighbors,
            edge_rows,
        }
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Incident `(neighbor, edge_row)` pairs of one node.
    pub fn incident(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.offsets[node]..self.offsets[node + 1];
        self.neighbors[range.clone()]
            .iter()
            .copied()
            .zip(self.edge_rows[range].iter().copied())
    }
}

#[derive(Debug)]
pub(crate) struct StoreNodeSet {
    pub ids: Vec<String>,
    pub index: HashMap<String, usize>,
    pub features: BTreeMap<String, StoreColumn>,
}

#[derive(Debug)]
pub(crate) struct StoreEdgeSet {
    pub source_set: String,
    pub target_set: String,
    pub forward: Csr,
    pub reverse: Csr,
    pub features: BTreeMap<String, StoreColumn>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

/// All graph nodes, edges and features loaded for processing at once.
/// Index assignment is deterministic: input order.
#[derive(Debug)]
pub struct GraphStore {
    schema: GraphSchema,
    pub(crate) node_sets: BTreeMap<String, StoreNodeSet>,
    pub(crate) edge_sets: BTreeMap<String, StoreEdgeSet>,
}

fn convert_value(
    spec: &FeatureSpec,
    value: Option<&Value>,
    location: &str,
) -> Result<(Vec<Value>, usize)> {
    // Flatten into scalar leaves; returns (leaves, ragged_row_length).
    let value = value.ok_or_else(|| Error::GraphStore(format!("{location}: missing value")))?;
    let inner: usize = spec.inner_shape().iter().product();
    if spec.is_ragged() {
        let Value::Array(items) = value else {
            return Err(Error::GraphStore(format!(
                "{location}: ragged feature needs a JSON array"
            )));
        };
        let mut leaves = Vec::new();
        for item in items {
            flatten_leaves(item, &mut leaves);
        }
        if inner > 0 && leaves.len() % inner != 0 {
            return Err(Error::GraphStore(format!(
                "{location}: {} values do not divide into inner width {inner}",
                leaves.len()
            )));
        }
        let rows = leaves.len().checked_div(inner).unwrap_or(0);
        Ok((leaves, rows))
    } else {
        let mut leaves = Vec::new();
        flatten_leaves(value, &mut leaves);
        let expected: usize = spec.shape.iter().map(|&d| d as usize).product();
        if leaves.len() != expected {
            return Err(Error::GraphStore(format!(
                "{location}: expected {expected} values for shape {:?}, got {}",
                spec.shape,
                leaves.len()
            )));
        }
        Ok((leaves, 0))
    }
}

fn flatten_leaves(value: &Value, out: &mut Vec<Value>) {
    match value {
        Value::Array(items) => {
            for item in items {
                flatten_leaves(item, out);
            }
        }
        other => out.push(other.clone()),
    }
}

fn leaf_to_f32(value: &Value, location: &str) -> Result<f32> {
    match value {
        Value::Number(n) => Ok(n.as_f64().unwrap_or(f64::NAN) as f32),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::GraphStore(format!("{location}: cannot parse {s:?} as float32"))),
        other => Err(Error::GraphStore(format!(
            "{location}: expected float32, got {other}"
        ))),
    }
}

fn leaf_to_i64(value: &Value, location: &str) -> Result<i64> {
    match value {
        Value::Number(n) => n
            .as_i64()
            .ok_or_else(|| Error::GraphStore(format!("{location}: {n} is not an int64"))),
        Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::GraphStore(format!("{location}: cannot parse {s:?} as int64"))),
        other => Err(Error::GraphStore(format!(
            "{location}: expected int64, got {other}"
        ))),
    }
}

fn leaf_to_string(value: &Value, location: &str) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        other => Err(Error::GraphStore(format!(
            "{location}: expected string, got {other}"
        ))),
    }
}

fn build_column(
    name: &str,
    spec: &FeatureSpec,
    rows: &[RawRow],
    location: &str,
) -> Result<StoreColumn> {
    let mut row_lengths = spec.is_ragged().then(Vec::new);
    let mut f32s = Vec::new();
    let mut i64s = Vec::new();
    let mut strs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let cell_location = format!("{location}[{i}].{name}");
        let (leaves, ragged_rows) = convert_value(spec, row.get(name), &cell_location)?;
        if let Some(lens) = &mut row_lengths {
            lens.push(ragged_rows);
        }
        for leaf in &leaves {
            match spec.dtype {
                Dtype::Float32 => f32s.push(leaf_to_f32(leaf, &cell_location)?),
                Dtype::Int64 => i64s.push(leaf_to_i64(leaf, &cell_location)?),
                Dtype::String => strs.push(leaf_to_string(leaf, &cell_location)?),
            }
        }
    }
    let data = match spec.dtype {
        Dtype::Float32 => FeatureData::F32(f32s),
        Dtype::Int64 => FeatureData::I64(i64s),
        Dtype::String => FeatureData::Str(strs),
    };
    let feature = match row_lengths {
        Some(lens) => Feature::ragged(lens, spec.inner_shape(), data)?,
        None => Feature::dense(rows.len(), spec.inner_shape(), data)?,
    };
    Ok(StoreColumn::new(feature))
}

impl GraphStore {
    /// Build forward and reverse CSR plus feature tables from raw rows.
    pub fn build(
        schema: &GraphSchema,
        node_tables: &BTreeMap<String, Vec<RawRow>>,
        edge_tables: &BTreeMap<String, Vec<RawRow>>,
    ) -> Result<GraphStore> {
        let mut node_sets = BTreeMap::new();
        for (set, spec) in &schema.node_sets {
            let rows = node_tables
                .get(set)
                .ok_or_else(|| Error::GraphStore(format!("no node table for set {set:?}")))?;
            let mut ids = Vec::with_capacity(rows.len());
            let mut index = HashMap::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let id = value_as_id(
                    row.get("#id").ok_or_else(|| {
                        Error::GraphStore(format!("node table {set:?} row {i}: missing #id"))
                    })?,
                    "#id",
                )?;
                if index.insert(id.clone(), i).is_some() {
                    return Err(Error::GraphStore(format!(
                        "node table {set:?}: duplicate node id {id:?}"
                    )));
                }
                ids.push(id);
            }
            let mut features = BTreeMap::new();
            for (fname, fspec) in &spec.features {
                let column = if fname == "#id" {
                    StoreColumn::new(Feature::str_scalars(ids.clone()))
                } else {
                    build_column(fname, fspec, rows, &format!("node table {set:?}"))?
                };
                features.insert(fname.clone(), column);
            }
            node_sets.insert(
                set.clone(),
                StoreNodeSet {
                    ids,
                    index,
                    features,
                },
            );
        }

        let mut edge_sets = BTreeMap::new();
        for (set, spec) in &schema.edge_sets {
            let rows = edge_tables
                .get(set)
                .ok_or_else(|| Error::GraphStore(format!("no edge table for set {set:?}")))?;
            let source_index = &node_sets[&spec.source].index;
            let target_index = &node_sets[&spec.target].index;
            let mut sources = Vec::with_capacity(rows.len());
            let mut targets = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let resolve = |column: &str, index: &HashMap<String, usize>| -> Result<usize> {
                    let id = value_as_id(
                        row.get(column).ok_or_else(|| {
                            Error::GraphStore(format!(
                                "edge table {set:?} row {i}: missing {column}"
                            ))
                        })?,
                        column,
                    )?;
                    index.get(&id).copied().ok_or_else(|| {
                        Error::GraphStore(format!(
                            "edge table {set:?} row {i}: unknown {column} {id:?}"
                        ))
                    })
                };
                sources.push(resolve("source_id", source_index)?);
                targets.push(resolve("target_id", target_index)?);
            }
            let forward_pairs: Vec<(usize, usize)> = sources
                .iter()
                .copied()
                .zip(targets.iter().copied())
                .collect();
            let reverse_pairs: Vec<(usize, usize)> = targets
                .iter()
                .copied()
                .zip(sources.iter().copied())
                .collect();
            let forward = Csr::build(node_sets[&spec.source].ids.len(), &forward_pairs);
            let reverse = Csr::build(node_sets[&spec.target].ids.len(), &reverse_pairs);
            let mut features = BTreeMap::new();
            for (fname, fspec) in &spec.features {
                features.insert(
                    fname.clone(),
                    build_column(fname, fspec, rows, &format!("edge table {set:?}"))?,
                );
            }
            edge_sets.insert(
                set.clone(),
                StoreEdgeSet {
                    source_set: spec.source.clone(),
                    target_set: spec.target.clone(),
                    forward,
                    reverse,
                    features,
                    sources,
                    targets,
                },
            );
        }

        Ok(GraphStore {
            schema: schema.clone(),
            node_sets,
            edge_sets,
        })
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn num_nodes(&self, set: &str) -> Result<usize> {
        Ok(self
            .node_sets
            .get(set)
            .ok_or_else(|| Error::GraphStore(format!("unknown node set {set:?}")))?
            .ids
            .len())
    }

    pub fn node_index(&self, set: &str, id: &str) -> Result<usize> {
        self.node_sets
            .get(set)
            .ok_or_else(|| Error::GraphStore(format!("unknown node set {set:?}")))?
            .index
            .get(id)
            .copied()
            .ok_or_else(|| Error::GraphStore(format!("unknown seed id {id:?} in set {set:?}")))
    }

    /// All `(source, target)` pairs of an edge set in input order, for
    /// inspection and reference checks.
    pub fn edges(&self, set: &str) -> Result<Vec<(usize, usize)>> {
        let es = self.edge_set(set)?;
        Ok(es
            .sources
            .iter()
            .copied()
            .zip(es.targets.iter().copied())
            .collect())
    }

    pub(crate) fn edge_set(&self, set: &str) -> Result<&StoreEdgeSet> {
        self.edge_sets
            .get(set)
            .ok_or_else(|| Error::GraphStore(format!("unknown edge set {set:?}")))
    }
}

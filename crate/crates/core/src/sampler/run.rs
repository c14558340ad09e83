//! Rooted-subgraph sampling: execute a sampling spec per seed against the
//! graph store and emit one single-component graph per seed, seed-first.
//!
//! Seeds are partitioned round-robin over shards that run in parallel on the
//! shared read-only store. Every random choice draws from a stream keyed by
//! `(global_seed, sample_id, op_name, node_index)`, so the output is
//! byte-identical for any shard count and any thread schedule.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::spec::{Direction, SamplingSpec, Strategy};
use super::store::GraphStore;
use crate::error::{Error, Result};
use crate::graph::{Adjacency, EdgeSet, Feature, FeatureData, GraphTensor, NodeSet};
use crate::schema::{Dtype, FeatureSpec};
use crate::tensor::rng::StreamKey;

/// One sampled edge in storage orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampledEdge {
    pub source: usize,
    pub target: usize,
    pub edge_row: usize,
}

/// Sample up to `sample_size` incident edges per frontier node, uniformly
/// without replacement (partial Fisher-Yates). Nodes with degree at most
/// `sample_size` contribute every incident edge; zero-degree nodes
/// contribute nothing. The per-node stream is `op_key.index(node)`.
pub fn sample_edges(
    store: &GraphStore,
    frontier: impl IntoIterator<Item = usize>,
    edge_set: &str,
    direction: Direction,
    sample_size: usize,
    strategy: Strategy,
    op_key: StreamKey,
) -> Result<Vec<SampledEdge>> {
    let Strategy::RandomUniform = strategy;
    let es = store.edge_set(edge_set)?;
    let csr = match direction {
        Direction::Forward => &es.forward,
        Direction::Reverse => &es.reverse,
    };
    let mut out = Vec::new();
    for node in frontier {
        let degree = csr.degree(node);
        if degree == 0 {
            continue;
        }
        let orient = |neighbor: usize, edge_row: usize| match direction {
            Direction::Forward => SampledEdge {
                source: node,
                target: neighbor,
                edge_row,
            },
            Direction::Reverse => SampledEdge {
                source: neighbor,
                target: node,
                edge_row,
            },
        };
        if degree <= sample_size {
            for (neighbor, edge_row) in csr.incident(node) {
                out.push(orient(neighbor, edge_row));
            }
        } else {
            let incident: Vec<(usize, usize)> = csr.incident(node).collect();
            let mut positions: Vec<usize> = (0..degree).collect();
            let mut stream = op_key.index(node as u64).stream();
            for k in 0..sample_size {
                let j = k + stream.below((degree - k) as u64) as usize;
                positions.swap(k, j);
                let (neighbor, edge_row) = incident[positions[k]];
                out.push(orient(neighbor, edge_row));
            }
        }
    }
    Ok(out)
}

fn zero_feature(spec: &FeatureSpec, items: usize) -> Result<Feature> {
    let width: usize = spec.inner_shape().iter().product();
    if spec.is_ragged() {
        let data = match spec.dtype {
            Dtype::Float32 => FeatureData::F32(Vec::new()),
            Dtype::Int64 => FeatureData::I64(Vec::new()),
            Dtype::String => FeatureData::Str(Vec::new()),
        };
        Feature::ragged(vec![0; items], spec.inner_shape(), data)
    } else {
        let n = items * width;
        let data = match spec.dtype {
            Dtype::Float32 => FeatureData::F32(vec![0.0; n]),
            Dtype::Int64 => FeatureData::I64(vec![0; n]),
            Dtype::String => FeatureData::Str(vec![String::new(); n]),
        };
        Feature::dense(items, spec.inner_shape(), data)
    }
}

fn sample_one(
    store: &GraphStore,
    spec: &SamplingSpec,
    seed_index: usize,
    sample_id: usize,
    global_seed: u64,
) -> Result<GraphTensor> {
    let schema = store.schema();
    let sample_key = StreamKey::new(global_seed)
        .label("sample")
        .index(sample_id as u64);

    // Run the op DAG, accumulating sampled edges and per-op node outputs.
    let mut outputs: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    outputs.insert(&spec.seed_op.op_name, BTreeSet::from([seed_index]));
    // (edge set, source, target) -> smallest feature row among parallel edges
    let mut edges: BTreeMap<(&str, usize, usize), usize> = BTreeMap::new();
    for op in &spec.sampling_ops {
        let mut frontier = BTreeSet::new();
        for input in &op.input_op_names {
            frontier.extend(outputs.get(input.as_str()).into_iter().flatten().copied());
        }
        let sampled = sample_edges(
            store,
            frontier,
            &op.edge_set_name,
            op.direction,
            op.sample_size,
            op.strategy,
            sample_key.label(&op.op_name),
        )?;
        let mut reached = BTreeSet::new();
        for edge in sampled {
            let key = (op.edge_set_name.as_str(), edge.source, edge.target);
            match edges.get_mut(&key) {
                Some(row) => *row = (*row).min(edge.edge_row),
                None => {
                    edges.insert(key, edge.edge_row);
                }
            }
            reached.insert(match op.direction {
                Direction::Forward => edge.target,
                Direction::Reverse => edge.source,
            });
        }
        outputs.insert(&op.op_name, reached);
    }

    // Nodes: every edge endpoint plus the seed, deduplicated per node set.
    let mut nodes: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    nodes
        .entry(spec.seed_op.node_set_name.as_str())
        .or_default()
        .insert(seed_index);
    for &(edge_set, source, target) in edges.keys() {
        let es = store.edge_set(edge_set)?;
        nodes
            .entry(es.source_set.as_str())
            .or_default()
            .insert(source);
        nodes
            .entry(es.target_set.as_str())
            .or_default()
            .insert(target);
    }

    // Local numbering: the seed takes index 0 of its node set, everything
    // else follows in ascending store order.
    let mut local: BTreeMap<&str, HashMap<usize, usize>> = BTreeMap::new();
    let mut ordered: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (&set, members) in &nodes {
        let mut order = Vec::with_capacity(members.len());
        if set == spec.seed_op.node_set_name {
            order.push(seed_index);
            order.extend(members.iter().copied().filter(|&n| n != seed_index));
        } else {
            order.extend(members.iter().copied());
        }
        let map: HashMap<usize, usize> = order.iter().enumerate().map(|(l, &s)| (s, l)).collect();
        local.insert(set, map);
        ordered.insert(set, order);
    }

    let mut node_sets = BTreeMap::new();
    for (set_name, set_spec) in &schema.node_sets {
        let order = ordered.get(set_name.as_str()).cloned().unwrap_or_default();
        let store_set = &store.node_sets[set_name];
        let mut features = BTreeMap::new();
        for fname in set_spec.features.keys() {
            let column = &store_set.features[fname];
            let mut builder = column.make_builder();
            for &node in &order {
                column.extract_into(node, &mut builder);
            }
            features.insert(fname.clone(), builder.finish(order.len())?);
        }
        node_sets.insert(set_name.clone(), NodeSet::new(vec![order.len()], features)?);
    }

    let mut edge_sets = BTreeMap::new();
    for (set_name, edge_spec) in &schema.edge_sets {
        let store_set = store.edge_set(set_name)?;
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut rows = Vec::new();
        for (&(edge_set, source, target), &row) in &edges {
            if edge_set != set_name {
                continue;
            }
            sources.push(local[store_set.source_set.as_str()][&source] as i64);
            targets.push(local[store_set.target_set.as_str()][&target] as i64);
            rows.push(row);
        }
        let mut features = BTreeMap::new();
        for fname in edge_spec.features.keys() {
            let column = &store_set.features[fname];
            let mut builder = column.make_builder();
            for &row in &rows {
                column.extract_into(row, &mut builder);
            }
            features.insert(fname.clone(), builder.finish(rows.len())?);
        }
        edge_sets.insert(
            set_name.clone(),
            EdgeSet::new(
                vec![sources.len()],
                Adjacency::new(
                    store_set.source_set.clone(),
                    store_set.target_set.clone(),
                    sources,
                    targets,
                )?,
                features,
            )?,
        );
    }

    // Context features exist in the schema but have no per-sample data in
    // the store; emit zero-filled rows so every sample validates.
    let mut context = BTreeMap::new();
    for (fname, fspec) in &schema.context.features {
        context.insert(fname.clone(), zero_feature(fspec, 1)?);
    }

    GraphTensor::new(context, node_sets, edge_sets)
}

/// Execute the spec for every seed. Seeds are `(node_set, id)` pairs and
/// must name the spec's seed node set. Output order equals seed order and
/// is identical for any `num_shards >= 1`.
pub fn sample_subgraphs(
    store: &GraphStore,
    spec: &SamplingSpec,
    seeds: &[(String, String)],
    global_seed: u64,
    num_shards: usize,
) -> Result<Vec<GraphTensor>> {
    if num_shards == 0 {
        return Err(Error::InvalidArgument {
            op: "sample_subgraphs".into(),
            message: "num_shards must be at least 1".into(),
        });
    }
    spec.validate(store.schema())?;
    let mut seed_indices = Vec::with_capacity(seeds.len());
    for (node_set, id) in seeds {
        if node_set != &spec.seed_op.node_set_name {
            return Err(Error::GraphStore(format!(
                "seed {id:?} names node set {node_set:?} but the spec seeds {:?}",
                spec.seed_op.node_set_name
            )));
        }
        seed_indices.push(store.node_index(node_set, id)?);
    }

    let mut results: Vec<Option<Result<GraphTensor>>> = Vec::new();
    results.resize_with(seeds.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for shard in 0..num_shards {
            let seed_indices = &seed_indices;
            handles.push(scope.spawn(move || {
                let mut shard_results = Vec::new();
                for (sample_id, &seed_index) in seed_indices
                    .iter()
                    .enumerate()
                    .skip(shard)
                    .step_by(num_shards)
                {
                    shard_results.push((
                        sample_id,
                        sample_one(store, spec, seed_index, sample_id, global_seed),
                    ));
                }
                shard_results
            }));
        }
        for handle in handles {
            for (sample_id, result) in handle.join().expect("sampler shard panicked") {
                results[sample_id] = Some(result);
            }
        }
    });

    results
        .into_iter()
        .map(|r| r.expect("every seed assigned to exactly one shard"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::spec::{SamplingSpecBuilder, Strategy};
    use super::super::tables::RawRow;
    use super::*;
    use crate::schema::parse_schema;
    use serde_json::Value;

    fn chain_store() -> GraphStore {
        let schema = parse_schema(
            r##"{"node_sets": {"n": {"features": {"#id": {"dtype": "string"}}}},
                 "edge_sets": {"e": {"source": "n", "target": "n", "features": {}}}}"##,
        )
        .unwrap();
        let row = |pairs: &[(&str, &str)]| -> RawRow {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
                .collect()
        };
        let nodes = BTreeMap::from([(
            "n".to_string(),
            vec![
                row(&[("#id", "a")]),
                row(&[("#id", "b")]),
                row(&[("#id", "c")]),
            ],
        )]);
        let edges = BTreeMap::from([(
            "e".to_string(),
            vec![
                row(&[("source_id", "a"), ("target_id", "b")]),
                row(&[("source_id", "b"), ("target_id", "c")]),
            ],
        )]);
        GraphStore::build(&schema, &nodes, &edges).unwrap()
    }

    fn one_hop_spec(store: &GraphStore) -> SamplingSpec {
        let mut b = SamplingSpecBuilder::new(store.schema(), Strategy::RandomUniform);
        let seed = b.seed("n").unwrap();
        b.sample(&[seed], 32, "e", Direction::Forward).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn chain_one_hop_from_a() {
        let store = chain_store();
        let spec = one_hop_spec(&store);
        let graphs =
            sample_subgraphs(&store, &spec, &[("n".to_string(), "a".to_string())], 7, 1).unwrap();
        assert_eq!(graphs.len(), 1);
        let g = &graphs[0];
        assert_eq!(g.num_components(), 1);
        let ids = g
            .node_set("n")
            .unwrap()
            .feature("#id")
            .unwrap()
            .as_str_scalars()
            .unwrap();
        assert_eq!(ids, vec!["a", "b"]); // seed first
        let adj = g.edge_set("e").unwrap().adjacency();
        assert_eq!(adj.source(), &[0]);
        assert_eq!(adj.target(), &[1]);
    }

    #[test]
    fn zero_degree_seed_is_a_single_node_graph() {
        let store = chain_store();
        let spec = one_hop_spec(&store);
        let graphs =
            sample_subgraphs(&store, &spec, &[("n".to_string(), "c".to_string())], 7, 1).unwrap();
        assert_eq!(graphs[0].node_set("n").unwrap().total_size(), 1);
        assert_eq!(graphs[0].edge_set("e").unwrap().total_size(), 0);
    }

    #[test]
    fn unknown_seed_id_errors() {
        let store = chain_store();
        let spec = one_hop_spec(&store);
        let err = sample_subgraphs(&store, &spec, &[("n".to_string(), "zz".to_string())], 7, 1)
            .unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
    }

    #[test]
    fn shard_count_does_not_change_output() {
        let store = chain_store();
        let spec = one_hop_spec(&store);
        let seeds: Vec<(String, String)> = ["a", "b", "c", "a", "b"]
            .iter()
            .map(|id| ("n".to_string(), id.to_string()))
            .collect();
        let one = sample_subgraphs(&store, &spec, &seeds, 13, 1).unwrap();
        let four = sample_subgraphs(&store, &spec, &seeds, 13, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn take_all_rule_is_deterministic() {
        let store = chain_store();
        let key = StreamKey::new(1).label("sample").index(0).label("op");
        let edges = sample_edges(
            &store,
            [0usize, 1],
            "e",
            Direction::Forward,
            32,
            Strategy::RandomUniform,
            key,
        )
        .unwrap();
        assert_eq!(
            edges,
            vec![
                SampledEdge {
                    source: 0,
                    target: 1,
                    edge_row: 0
                },
                SampledEdge {
                    source: 1,
                    target: 2,
                    edge_row: 1
                },
            ]
        );
    }
}

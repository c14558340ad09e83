//! The immutable heterogeneous graph container: node sets, edge sets with
//! adjacency, per-component context, batching by merge, feature replacement,
//! and padding.
//!
//! A graph tensor holds one or more *components*. Each component is one
//! original input graph; merging a batch concatenates components and no edge
//! ever crosses a component boundary. All structures here are immutable
//! after construction and safe to share across threads.

mod feature;
mod pad;

pub use feature::{Feature, FeatureData};
pub use pad::PaddingTargets;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-item features over one node set, with per-component item counts.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    sizes: Vec<usize>,
    features: BTreeMap<String, Feature>,
}

impl NodeSet {
    pub fn new(sizes: Vec<usize>, features: BTreeMap<String, Feature>) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        for (name, f) in &features {
            if f.items() != total {
                return Err(Error::GraphBuild(format!(
                    "feature {name:?} has {} items but the set totals {total}",
                    f.items()
                )));
            }
        }
        Ok(NodeSet { sizes, features })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn features(&self) -> &BTreeMap<String, Feature> {
        &self.features
    }

    pub fn feature(&self, name: &str) -> Result<&Feature> {
        self.features
            .get(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "feature".into(),
                message: format!("unknown feature {name:?}"),
            })
    }
}

/// Source and target node indices of one edge set, as 64-bit index arrays of
/// equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    source_set: String,
    target_set: String,
    source: Vec<i64>,
    target: Vec<i64>,
}

impl Adjacency {
    pub fn new(
        source_set: impl Into<String>,
        target_set: impl Into<String>,
        source: Vec<i64>,
        target: Vec<i64>,
    ) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::GraphBuild(format!(
                "adjacency index arrays differ in length: {} vs {}",
                source.len(),
                target.len()
            )));
        }
        Ok(Adjacency {
            source_set: source_set.into(),
            target_set: target_set.into(),
            source,
            target,
        })
    }

    pub fn source_set(&self) -> &str {
        &self.source_set
    }

    pub fn target_set(&self) -> &str {
        &self.target_set
    }

    pub fn source(&self) -> &[i64] {
        &self.source
    }

    pub fn target(&self) -> &[i64] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    sizes: Vec<usize>,
    adjacency: Adjacency,
    features: BTreeMap<String, Feature>,
}

impl EdgeSet {
    pub fn new(
        sizes: Vec<usize>,
        adjacency: Adjacency,
        features: BTreeMap<String, Feature>,
    ) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if adjacency.len() != total {
            return Err(Error::GraphBuild(format!(
                "adjacency arrays have length {} but edge sizes total {total}",
                adjacency.len()
            )));
        }
        for (name, f) in &features {
            if f.items() != total {
                return Err(Error::GraphBuild(format!(
                    "feature {name:?} has {} items but the set totals {total}",
                    f.items()
                )));
            }
        }
        Ok(EdgeSet {
            sizes,
            adjacency,
            features,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &BTreeMap<String, Feature> {
        &self.features
    }

    pub fn feature(&self, name: &str) -> Result<&Feature> {
        self.features
            .get(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "feature".into(),
                message: format!("unknown feature {name:?}"),
            })
    }
}

/// Immutable container of components, node/edge sets, adjacency index arrays
/// and feature tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphTensor {
    num_components: usize,
    context: BTreeMap<String, Feature>,
    node_sets: BTreeMap<String, NodeSet>,
    edge_sets: BTreeMap<String, EdgeSet>,
}

/// Feature overrides for [`GraphTensor::replace_features`]; named features
/// are replaced or added per set, everything else is shared structurally.
#[derive(Clone, Debug, Default)]
pub struct FeatureOverrides {
    pub context: BTreeMap<String, Feature>,
    pub node_sets: BTreeMap<String, BTreeMap<String, Feature>>,
    pub edge_sets: BTreeMap<String, BTreeMap<String, Feature>>,
}

impl GraphTensor {
    /// Build and validate a graph tensor from its pieces.
    pub fn new(
        context: BTreeMap<String, Feature>,
        node_sets: BTreeMap<String, NodeSet>,
        edge_sets: BTreeMap<String, EdgeSet>,
    ) -> Result<Self> {
        let mut num_components: Option<usize> = None;
        let mut note = |n: usize, what: &str| -> Result<()> {
            match num_components {
                None => {
                    num_components = Some(n);
                    Ok(())
                }
                Some(prev) if prev == n => Ok(()),
                Some(prev) => Err(Error::GraphBuild(format!(
                    "{what} implies {n} components but earlier pieces have {prev}"
                ))),
            }
        };
        for (name, ns) in &node_sets {
            note(ns.sizes().len(), &format!("node set {name:?}"))?;
        }
        for (name, es) in &edge_sets {
            note(es.sizes().len(), &format!("edge set {name:?}"))?;
        }
        for (name, f) in &context {
            note(f.items(), &format!("context feature {name:?}"))?;
        }
        let num_components =
            num_components.ok_or_else(|| Error::GraphBuild("graph has no pieces".into()))?;
        if num_components == 0 {
            return Err(Error::GraphBuild(
                "graph needs at least one component".into(),
            ));
        }

        let graph = GraphTensor {
            num_components,
            context,
            node_sets,
            edge_sets,
        };
        graph.check_adjacency()?;
        Ok(graph)
    }

    fn check_adjacency(&self) -> Result<()> {
        for (name, es) in &self.edge_sets {
            let adj = es.adjacency();
            for (set_name, indices) in [
                (adj.source_set(), adj.source()),
                (adj.target_set(), adj.target()),
            ] {
                let node_set = self.node_sets.get(set_name).ok_or_else(|| {
                    Error::GraphBuild(format!(
                        "edge set {name:?} references unknown node set {set_name:?}"
                    ))
                })?;
                let total = node_set.total_size();
                for &ix in indices {
                    if ix < 0 || ix as usize >= total {
                        return Err(Error::IndexOutOfRange {
                            context: format!("edge set {name:?} into {set_name:?}"),
                            index: ix,
                            size: total,
                        });
                    }
                }
                // Endpoints must stay inside the edge's own component.
                let node_offsets = prefix_sums(node_set.sizes());
                let mut edge_component = 0usize;
                let mut edges_left = es.sizes().to_vec();
                for &ix in indices {
                    while edges_left[edge_component] == 0 {
                        edge_component += 1;
                    }
                    edges_left[edge_component] -= 1;
                    let lo = node_offsets[edge_component];
                    let hi = node_offsets[edge_component + 1];
                    let ix = ix as usize;
                    if ix < lo || ix >= hi {
                        return Err(Error::GraphBuild(format!(
                            "edge set {name:?}: index {ix} crosses out of component {edge_component} \
                             (node range {lo}..{hi} of {set_name:?})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn context_features(&self) -> &BTreeMap<String, Feature> {
        &self.context
    }

    pub fn context_feature(&self, name: &str) -> Result<&Feature> {
        self.context
            .get(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "context_feature".into(),
                message: format!("unknown context feature {name:?}"),
            })
    }

    pub fn node_sets(&self) -> &BTreeMap<String, NodeSet> {
        &self.node_sets
    }

    pub fn edge_sets(&self) -> &BTreeMap<String, EdgeSet> {
        &self.edge_sets
    }

    pub fn node_set(&self, name: &str) -> Result<&NodeSet> {
        self.node_sets
            .get(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "node_set".into(),
                message: format!("unknown node set {name:?}"),
            })
    }

    pub fn edge_set(&self, name: &str) -> Result<&EdgeSet> {
        self.edge_sets
            .get(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "edge_set".into(),
                message: format!("unknown edge set {name:?}"),
            })
    }

    /// Component membership of each node in a set, in index order.
    pub fn node_component_ids(&self, set: &str) -> Result<Vec<usize>> {
        Ok(component_ids(self.node_set(set)?.sizes()))
    }

    /// Component membership of each edge in a set, in index order.
    pub fn edge_component_ids(&self, set: &str) -> Result<Vec<usize>> {
        Ok(component_ids(self.edge_set(set)?.sizes()))
    }

    /// Global index of the first node of each component in `set`. Errors if
    /// any component has no nodes in the set.
    pub fn root_indices(&self, set: &str) -> Result<Vec<usize>> {
        let node_set = self.node_set(set)?;
        let offsets = prefix_sums(node_set.sizes());
        let mut roots = Vec::with_capacity(self.num_components);
        for (c, &size) in node_set.sizes().iter().enumerate() {
            if size == 0 {
                return Err(Error::InvalidArgument {
                    op: "root_indices".into(),
                    message: format!("node set {set:?} is empty in component {c}"),
                });
            }
            roots.push(offsets[c]);
        }
        Ok(roots)
    }

    /// New graph sharing this structure with named features replaced or
    /// added. The input graph is untouched.
    pub fn replace_features(&self, overrides: FeatureOverrides) -> Result<GraphTensor> {
        let mut graph = self.clone();
        for (name, feature) in overrides.context {
            if feature.items() != graph.num_components {
                return Err(Error::DimMismatch {
                    op: format!("replace_features context.{name}"),
                    lhs: vec![graph.num_components],
                    rhs: vec![feature.items()],
                });
            }
            graph.context.insert(name, feature);
        }
        for (set_name, features) in overrides.node_sets {
            let set = graph
                .node_sets
                .get_mut(&set_name)
                .ok_or_else(|| Error::InvalidArgument {
                    op: "replace_features".into(),
                    message: format!("unknown node set {set_name:?}"),
                })?;
            let total = set.total_size();
            for (name, feature) in features {
                if feature.items() != total {
                    return Err(Error::DimMismatch {
                        op: format!("replace_features {set_name}.{name}"),
                        lhs: vec![total],
                        rhs: vec![feature.items()],
                    });
                }
                set.features.insert(name, feature);
            }
        }
        for (set_name, features) in overrides.edge_sets {
            let set = graph
                .edge_sets
                .get_mut(&set_name)
                .ok_or_else(|| Error::InvalidArgument {
                    op: "replace_features".into(),
                    message: format!("unknown edge set {set_name:?}"),
                })?;
            let total = set.total_size();
            for (name, feature) in features {
                if feature.items() != total {
                    return Err(Error::DimMismatch {
                        op: format!("replace_features {set_name}.{name}"),
                        lhs: vec![total],
                        rhs: vec![feature.items()],
                    });
                }
                set.features.insert(name, feature);
            }
        }
        Ok(graph)
    }

    /// Remove a context feature, returning it (used for label extraction).
    pub fn take_context_feature(&self, name: &str) -> Result<(GraphTensor, Feature)> {
        let mut graph = self.clone();
        let feature = graph
            .context
            .remove(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "take_context_feature".into(),
                message: format!("unknown context feature {name:?}"),
            })?;
        Ok((graph, feature))
    }

    /// Remove a node-set feature, returning it (label-on-root datasets).
    pub fn take_node_feature(&self, set: &str, name: &str) -> Result<(GraphTensor, Feature)> {
        let mut graph = self.clone();
        let node_set = graph
            .node_sets
            .get_mut(set)
            .ok_or_else(|| Error::InvalidArgument {
                op: "take_node_feature".into(),
                message: format!("unknown node set {set:?}"),
            })?;
        let feature = node_set
            .features
            .remove(name)
            .ok_or_else(|| Error::InvalidArgument {
                op: "take_node_feature".into(),
                message: format!("unknown feature {set}.{name}"),
            })?;
        Ok((graph, feature))
    }

    /// Components concatenated in order: each input graph's components become
    /// components of the result, features are concatenated along the leading
    /// dimension, and adjacency indices are offset by the node totals of
    /// earlier graphs.
    pub fn merge_batch(graphs: &[GraphTensor]) -> Result<GraphTensor> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::GraphBuild("cannot merge an empty batch".into()))?;
        for g in graphs {
            if g.node_sets.keys().ne(first.node_sets.keys())
                || g.edge_sets.keys().ne(first.edge_sets.keys())
                || g.context.keys().ne(first.context.keys())
            {
                return Err(Error::GraphBuild(
                    "graphs in a batch must share set and feature names".into(),
                ));
            }
        }

        let mut context = BTreeMap::new();
        for name in first.context.keys() {
            let parts: Vec<&Feature> = graphs.iter().map(|g| &g.context[name]).collect();
            context.insert(name.clone(), Feature::concat(&parts)?);
        }

        let mut node_sets = BTreeMap::new();
        for name in first.node_sets.keys() {
            let mut sizes = Vec::new();
            for g in graphs {
                sizes.extend_from_slice(g.node_sets[name].sizes());
            }
            let mut features = BTreeMap::new();
            for fname in first.node_sets[name].features.keys() {
                let parts: Vec<&Feature> = graphs
                    .iter()
                    .map(|g| {
                        g.node_sets[name].features.get(fname).ok_or_else(|| {
                            Error::GraphBuild(format!(
                                "graphs in a batch must share feature {name}.{fname}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                features.insert(fname.clone(), Feature::concat(&parts)?);
            }
            node_sets.insert(name.clone(), NodeSet::new(sizes, features)?);
        }

        let mut edge_sets = BTreeMap::new();
        for name in first.edge_sets.keys() {
            let source_set = first.edge_sets[name].adjacency().source_set().to_string();
            let target_set = first.edge_sets[name].adjacency().target_set().to_string();
            let mut sizes = Vec::new();
            let mut source = Vec::new();
            let mut target = Vec::new();
            let mut source_offset = 0i64;
            let mut target_offset = 0i64;
            for g in graphs {
                let es = &g.edge_sets[name];
                sizes.extend_from_slice(es.sizes());
                source.extend(es.adjacency().source().iter().map(|&i| i + source_offset));
                target.extend(es.adjacency().target().iter().map(|&i| i + target_offset));
                source_offset += g.node_sets[&source_set].total_size() as i64;
                target_offset += g.node_sets[&target_set].total_size() as i64;
            }
            let mut features = BTreeMap::new();
            for fname in first.edge_sets[name].features.keys() {
                let parts: Vec<&Feature> = graphs
                    .iter()
                    .map(|g| {
                        g.edge_sets[name].features.get(fname).ok_or_else(|| {
                            Error::GraphBuild(format!(
                                "graphs in a batch must share feature {name}.{fname}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                features.insert(fname.clone(), Feature::concat(&parts)?);
            }
            edge_sets.insert(
                name.clone(),
                EdgeSet::new(
                    sizes,
                    Adjacency::new(source_set, target_set, source, target)?,
                    features,
                )?,
            );
        }

        GraphTensor::new(context, node_sets, edge_sets)
    }

    /// Slice one component back out of a merged graph (test/inspection aid;
    /// the inverse of [`GraphTensor::merge_batch`] per component).
    pub fn component(&self, c: usize) -> Result<GraphTensor> {
        if c >= self.num_components {
            return Err(Error::IndexOutOfRange {
                context: "component".into(),
                index: c as i64,
                size: self.num_components,
            });
        }
        let mut context = BTreeMap::new();
        for (name, f) in &self.context {
            context.insert(name.clone(), f.slice_items(c..c + 1));
        }
        let mut node_sets = BTreeMap::new();
        for (name, ns) in &self.node_sets {
            let offsets = prefix_sums(ns.sizes());
            let range = offsets[c]..offsets[c + 1];
            let features = ns
                .features
                .iter()
                .map(|(n, f)| (n.clone(), f.slice_items(range.clone())))
                .collect();
            node_sets.insert(name.clone(), NodeSet::new(vec![ns.sizes()[c]], features)?);
        }
        let mut edge_sets = BTreeMap::new();
        for (name, es) in &self.edge_sets {
            let offsets = prefix_sums(es.sizes());
            let range = offsets[c]..offsets[c + 1];
            let src_base =
                prefix_sums(self.node_sets[es.adjacency().source_set()].sizes())[c] as i64;
            let tgt_base =
                prefix_sums(self.node_sets[es.adjacency().target_set()].sizes())[c] as i64;
            let source = es.adjacency().source()[range.clone()]
                .iter()
                .map(|&i| i - src_base)
                .collect();
            let target = es.adjacency().target()[range.clone()]
                .iter()
                .map(|&i| i - tgt_base)
                .collect();
            let features = es
                .features
                .iter()
                .map(|(n, f)| (n.clone(), f.slice_items(range.clone())))
                .collect();
            edge_sets.insert(
                name.clone(),
                EdgeSet::new(
                    vec![es.sizes()[c]],
                    Adjacency::new(
                        es.adjacency().source_set(),
                        es.adjacency().target_set(),
                        source,
                        target,
                    )?,
                    features,
                )?,
            );
        }
        GraphTensor::new(context, node_sets, edge_sets)
    }
}

pub(crate) fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

pub(crate) fn component_ids(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (c, &s) in sizes.iter().enumerate() {
        out.extend(std::iter::repeat_n(c, s));
    }
    out
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// The Appendix-style recommender graph: 6 items, 4 users, 7 "purchased"
    /// edges, 3 "is-friend" edges, one 4-wide context score row.
    pub fn users_items_graph() -> GraphTensor {
        let mut items_features = BTreeMap::new();
        items_features.insert(
            "category".to_string(),
            Feature::str_scalars(
                [
                    "food",
                    "show ticket",
                    "shoes",
                    "book",
                    "flight",
                    "groceries",
                ]
                .map(String::from)
                .to_vec(),
            ),
        );
        items_features.insert(
            "price".to_string(),
            Feature::ragged(
                vec![3, 2, 1, 2, 1, 3],
                vec![],
                FeatureData::F32(vec![
                    22.34, 23.42, 12.99, 27.99, 34.50, 89.99, 24.99, 45.00, 350.00, 45.13, 79.80,
                    12.35,
                ]),
            )
            .unwrap(),
        );
        let mut users_features = BTreeMap::new();
        users_features.insert(
            "name".to_string(),
            Feature::str_scalars(
                ["Shawn", "Jeorg", "Yumiko", "Sophie"]
                    .map(String::from)
                    .to_vec(),
            ),
        );
        users_features.insert(
            "age".to_string(),
            Feature::i64_scalars(vec![24, 32, 27, 38]),
        );
        users_features.insert(
            "country".to_string(),
            Feature::i64_scalars(vec![3, 2, 1, 0]),
        );

        let mut node_sets = BTreeMap::new();
        node_sets.insert(
            "items".to_string(),
            NodeSet::new(vec![6], items_features).unwrap(),
        );
        node_sets.insert(
            "users".to_string(),
            NodeSet::new(vec![4], users_features).unwrap(),
        );

        let mut edge_sets = BTreeMap::new();
        edge_sets.insert(
            "purchased".to_string(),
            EdgeSet::new(
                vec![7],
                Adjacency::new(
                    "items",
                    "users",
                    vec![0, 1, 2, 3, 4, 5, 5],
                    vec![1, 1, 0, 0, 2, 3, 0],
                )
                .unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );
        edge_sets.insert(
            "is-friend".to_string(),
            EdgeSet::new(
                vec![3],
                Adjacency::new("users", "users", vec![1, 2, 3], vec![0, 0, 0]).unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );

        let mut context = BTreeMap::new();
        context.insert(
            "scores".to_string(),
            Feature::dense(1, vec![4], FeatureData::F32(vec![0.45, 0.98, 0.10, 0.25])).unwrap(),
        );

        GraphTensor::new(context, node_sets, edge_sets).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::users_items_graph;
    use super::*;

    #[test]
    fn recommender_graph_builds() {
        let g = users_items_graph();
        assert_eq!(g.num_components(), 1);
        assert_eq!(g.node_set("items").unwrap().total_size(), 6);
        assert_eq!(g.edge_set("purchased").unwrap().total_size(), 7);
        assert_eq!(
            g.node_set("users")
                .unwrap()
                .feature("age")
                .unwrap()
                .as_i64_scalars()
                .unwrap(),
            vec![24, 32, 27, 38]
        );
    }

    #[test]
    fn empty_edge_set_is_valid() {
        let mut node_sets = BTreeMap::new();
        node_sets.insert(
            "n".to_string(),
            NodeSet::new(vec![2], BTreeMap::new()).unwrap(),
        );
        let mut edge_sets = BTreeMap::new();
        edge_sets.insert(
            "e".to_string(),
            EdgeSet::new(
                vec![0],
                Adjacency::new("n", "n", vec![], vec![]).unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );
        assert!(GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).is_ok());
    }

    #[test]
    fn out_of_range_edge_index_is_rejected() {
        let mut node_sets = BTreeMap::new();
        node_sets.insert(
            "users".to_string(),
            NodeSet::new(vec![4], BTreeMap::new()).unwrap(),
        );
        node_sets.insert(
            "items".to_string(),
            NodeSet::new(vec![6], BTreeMap::new()).unwrap(),
        );
        let mut edge_sets = BTreeMap::new();
        edge_sets.insert(
            "purchased".to_string(),
            EdgeSet::new(
                vec![7],
                Adjacency::new(
                    "items",
                    "users",
                    vec![0, 1, 2, 3, 4, 5, 5],
                    vec![1, 1, 0, 0, 2, 3, 9],
                )
                .unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );
        let err = GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }), "{err}");
    }

    #[test]
    fn cross_component_edge_is_rejected() {
        let mut node_sets = BTreeMap::new();
        node_sets.insert(
            "n".to_string(),
            NodeSet::new(vec![1, 1], BTreeMap::new()).unwrap(),
        );
        let mut edge_sets = BTreeMap::new();
        edge_sets.insert(
            "e".to_string(),
            EdgeSet::new(
                vec![1, 0],
                Adjacency::new("n", "n", vec![0], vec![1]).unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );
        let err = GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap_err();
        assert!(err.to_string().contains("crosses"), "{err}");
    }

    fn self_loop_graph() -> GraphTensor {
        let mut node_sets = BTreeMap::new();
        let mut features = BTreeMap::new();
        features.insert("x".to_string(), Feature::f32_scalars(vec![1.0]));
        node_sets.insert("n".to_string(), NodeSet::new(vec![1], features).unwrap());
        let mut edge_sets = BTreeMap::new();
        edge_sets.insert(
            "e".to_string(),
            EdgeSet::new(
                vec![1],
                Adjacency::new("n", "n", vec![0], vec![0]).unwrap(),
                BTreeMap::new(),
            )
            .unwrap(),
        );
        GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap()
    }

    #[test]
    fn merge_offsets_self_loops() {
        let g = self_loop_graph();
        let merged = GraphTensor::merge_batch(&[g.clone(), g]).unwrap();
        assert_eq!(merged.num_components(), 2);
        let es = merged.edge_set("e").unwrap();
        assert_eq!(es.sizes(), &[1, 1]);
        assert_eq!(es.adjacency().source(), &[0, 1]);
        assert_eq!(es.adjacency().target(), &[0, 1]);
    }

    #[test]
    fn merge_single_graph_is_identity() {
        let g = users_items_graph();
        assert_eq!(
            GraphTensor::merge_batch(std::slice::from_ref(&g)).unwrap(),
            g
        );
    }

    #[test]
    fn merge_offset_arithmetic() {
        // 3-node and 2-node graphs; second graph edge 1 -> 0 becomes 4 -> 3.
        let make = |n: usize, src: Vec<i64>, tgt: Vec<i64>| {
            let mut node_sets = BTreeMap::new();
            node_sets.insert(
                "n".to_string(),
                NodeSet::new(vec![n], BTreeMap::new()).unwrap(),
            );
            let mut edge_sets = BTreeMap::new();
            edge_sets.insert(
                "e".to_string(),
                EdgeSet::new(
                    vec![src.len()],
                    Adjacency::new("n", "n", src, tgt).unwrap(),
                    BTreeMap::new(),
                )
                .unwrap(),
            );
            GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap()
        };
        let a = make(3, vec![], vec![]);
        let b = make(2, vec![1], vec![0]);
        let merged = GraphTensor::merge_batch(&[a, b]).unwrap();
        let adj = merged.edge_set("e").unwrap().adjacency();
        assert_eq!(adj.source(), &[4]);
        assert_eq!(adj.target(), &[3]);
    }

    #[test]
    fn merge_is_associative() {
        let g = users_items_graph();
        let h = users_items_graph();
        let left = GraphTensor::merge_batch(&[
            GraphTensor::merge_batch(&[g.clone(), h.clone()]).unwrap(),
            g.clone(),
        ])
        .unwrap();
        let right = GraphTensor::merge_batch(&[g.clone(), h, g]).unwrap();
        assert_eq!(left, right);
    }

    #[test]
    fn component_slices_reproduce_inputs() {
        let g = users_items_graph();
        let h = users_items_graph();
        let merged = GraphTensor::merge_batch(&[g.clone(), h.clone()]).unwrap();
        assert_eq!(merged.component(0).unwrap(), g);
        assert_eq!(merged.component(1).unwrap(), h);
    }

    #[test]
    fn replace_features_latest_price() {
        let g = users_items_graph();
        let latest: Vec<f32> = {
            let price = g.node_set("items").unwrap().feature("price").unwrap();
            let FeatureData::F32(flat) = price.data() else {
                panic!()
            };
            let mut out = Vec::new();
            let mut offset = 0;
            for &len in price.row_lengths().unwrap() {
                out.push(flat[offset]);
                offset += len;
            }
            out
        };
        assert_eq!(latest, vec![22.34, 27.99, 89.99, 24.99, 350.00, 45.13]);

        let mut overrides = FeatureOverrides::default();
        overrides.node_sets.insert(
            "items".to_string(),
            BTreeMap::from([(
                "latest_price".to_string(),
                Feature::dense(6, vec![1], FeatureData::F32(latest)).unwrap(),
            )]),
        );
        let replaced = g.replace_features(overrides).unwrap();
        assert!(replaced
            .node_set("items")
            .unwrap()
            .features()
            .contains_key("latest_price"));
        // replacing with an identical tensor leaves the graph equal to input
        let same = g.replace_features(FeatureOverrides::default()).unwrap();
        assert_eq!(same, g);

        let mut bad = FeatureOverrides::default();
        bad.node_sets.insert(
            "items".to_string(),
            BTreeMap::from([(
                "latest_price".to_string(),
                Feature::f32_scalars(vec![0.0; 5]),
            )]),
        );
        assert!(g.replace_features(bad).is_err());
    }

    #[test]
    fn root_indices_per_component() {
        let g = users_items_graph();
        let merged = GraphTensor::merge_batch(&[g.clone(), g]).unwrap();
        assert_eq!(merged.root_indices("users").unwrap(), vec![0, 4]);
        assert_eq!(merged.root_indices("items").unwrap(), vec![0, 6]);
    }
}

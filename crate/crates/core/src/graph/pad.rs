//! Padding to fixed total sizes.
//!
//! Appends padding components with zero-valued features so every batch has
//! identical totals. Padding edges are self-referential, pointing at padding
//! nodes inside their own padding component, so no padding item ever
//! influences a real component.

use std::collections::BTreeMap;

use super::{Adjacency, EdgeSet, GraphTensor, NodeSet};
use crate::error::{Error, Result};

/// Target totals for [`GraphTensor::pad_to_total_sizes`]. Sets without an
/// entry keep their current totals (no padding items for them).
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct PaddingTargets {
    pub total_components: usize,
    #[serde(default)]
    pub node_sets: BTreeMap<String, usize>,
    #[serde(default)]
    pub edge_sets: BTreeMap<String, usize>,
}

impl GraphTensor {
    /// Pad to the given totals. Returns the padded graph and a component
    /// mask: `true` for real components, `false` for padding (downstream
    /// loss weight 0).
    ///
    /// Errors with [`Error::PaddingFit`] when the graph exceeds a target, so
    /// callers may skip the batch instead of aborting.
    pub fn pad_to_total_sizes(&self, targets: &PaddingTargets) -> Result<(GraphTensor, Vec<bool>)> {
        let current = self.num_components();
        if targets.total_components < current {
            return Err(Error::PaddingFit(format!(
                "graph has {current} components, target is {}",
                targets.total_components
            )));
        }
        let mut node_padding: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, &target) in &targets.node_sets {
            let have = self.node_set(name)?.total_size();
            if have > target {
                return Err(Error::PaddingFit(format!(
                    "node set {name:?} has {have} nodes, target is {target}"
                )));
            }
            node_padding.insert(name, target - have);
        }
        let mut edge_padding: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, &target) in &targets.edge_sets {
            let have = self.edge_set(name)?.total_size();
            if have > target {
                return Err(Error::PaddingFit(format!(
                    "edge set {name:?} has {have} edges, target is {target}"
                )));
            }
            edge_padding.insert(name, target - have);
        }

        let any_items =
            node_padding.values().any(|&n| n > 0) || edge_padding.values().any(|&n| n > 0);
        let pad_components = targets.total_components - current;
        if pad_components == 0 {
            if any_items {
                return Err(Error::PaddingFit(
                    "padding items are needed but no padding component is budgeted".into(),
                ));
            }
            return Ok((self.clone(), vec![true; current]));
        }

        // Spread each set's padding items over the padding components; the
        // first components take the remainder.
        let spread = |total: usize| -> Vec<usize> {
            (0..pad_components)
                .map(|k| total / pad_components + usize::from(k < total % pad_components))
                .collect()
        };

        let mut node_sets = BTreeMap::new();
        let mut node_spread: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (name, ns) in self.node_sets() {
            let pad = node_padding.get(name.as_str()).copied().unwrap_or(0);
            let per_component = spread(pad);
            let mut sizes = ns.sizes().to_vec();
            sizes.extend(per_component.iter().copied());
            let mut features = ns.features().clone();
            for f in features.values_mut() {
                f.append_padding(pad);
            }
            node_spread.insert(name.clone(), per_component);
            node_sets.insert(name.clone(), NodeSet::new(sizes, features)?);
        }

        // Global index of the first padding node of `set` inside padding
        // component `k`, if that component received any.
        let first_pad_node = |set: &str, k: usize| -> Option<usize> {
            let per_component = &node_spread[set];
            if per_component[k] == 0 {
                return None;
            }
            let real_total = self.node_set(set).expect("checked above").total_size();
            let before: usize = per_component[..k].iter().sum();
            Some(real_total + before)
        };

        let mut edge_sets = BTreeMap::new();
        for (name, es) in self.edge_sets() {
            let pad = edge_padding.get(name.as_str()).copied().unwrap_or(0);
            let adj = es.adjacency();
            let mut sizes = es.sizes().to_vec();
            let mut source = adj.source().to_vec();
            let mut target = adj.target().to_vec();
            let mut per_component = vec![0usize; pad_components];
            if pad > 0 {
                let host = (0..pad_components)
                    .find(|&k| {
                        first_pad_node(adj.source_set(), k).is_some()
                            && first_pad_node(adj.target_set(), k).is_some()
                    })
                    .ok_or_else(|| {
                        Error::PaddingFit(format!(
                            "edge set {name:?} needs {pad} padding edges but no padding \
                             component has padding nodes for both endpoints"
                        ))
                    })?;
                let src = first_pad_node(adj.source_set(), host).unwrap() as i64;
                let tgt = first_pad_node(adj.target_set(), host).unwrap() as i64;
                source.extend(std::iter::repeat_n(src, pad));
                target.extend(std::iter::repeat_n(tgt, pad));
                per_component[host] = pad;
            }
            sizes.extend(per_component);
            let mut features = es.features().clone();
            for f in features.values_mut() {
                f.append_padding(pad);
            }
            edge_sets.insert(
                name.clone(),
                EdgeSet::new(
                    sizes,
                    Adjacency::new(adj.source_set(), adj.target_set(), source, target)?,
                    features,
                )?,
            );
        }

        let mut context = self.context_features().clone();
        for f in context.values_mut() {
            f.append_padding(pad_components);
        }

        let padded = GraphTensor::new(context, node_sets, edge_sets)?;
        let mut mask = vec![true; current];
        mask.extend(std::iter::repeat_n(false, pad_components));
        Ok((padded, mask))
    }
}

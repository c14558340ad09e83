//! Seeded synthetic dataset: a two-community membership task used by the
//! end-to-end tests and as a runnable demo.
//!
//! Each example is a rooted graph around one "member" whose class is its
//! community. The root is joined by `members_per_block` members of each
//! community; a member follows the root with probability 0.9 inside the
//! root's community and 0.1 across, and every member joins its community's
//! forum with probability 0.9. Non-root members carry their community id as
//! a `tag` feature; the root's tag is the neutral 0.5. The label lives in
//! the `label` context feature.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::graph::{Adjacency, EdgeSet, Feature, FeatureData, GraphTensor, NodeSet};
use crate::schema::{parse_schema, GraphSchema};
use crate::tensor::rng::StreamKey;

pub fn two_community_schema() -> GraphSchema {
    parse_schema(
        r##"{
        "node_sets": {
            "member": {"features": {"tag": {"dtype": "float32", "shape": [1]}}},
            "forum": {"features": {"#id": {"dtype": "int64", "shape": []}}}
        },
        "edge_sets": {
            "follows": {"source": "member", "target": "member", "features": {}},
            "joins": {"source": "member", "target": "forum", "features": {}}
        },
        "context": {"features": {"label": {"dtype": "int64", "shape": [1]}}}
    }"##,
    )
    .expect("static schema parses")
}

/// Generate `examples` rooted graphs, classes balanced by construction.
pub fn two_community_dataset(
    seed: u64,
    examples: usize,
    members_per_block: usize,
) -> Result<Vec<GraphTensor>> {
    let key = StreamKey::new(seed).label("two-community");
    (0..examples)
        .map(|i| {
            let root_block = (i % 2) as i64;
            one_example(key.index(i as u64), root_block, members_per_block)
        })
        .collect()
}

fn one_example(key: StreamKey, root_block: i64, per_block: usize) -> Result<GraphTensor> {
    let mut stream = key.stream();
    let num_members = 1 + 2 * per_block;
    // member 0 is the root; the rest alternate blocks deterministically
    let block_of = |member: usize| -> i64 {
        if member == 0 {
            root_block
        } else {
            ((member - 1) % 2) as i64
        }
    };

    let mut tags = vec![0.5f32];
    tags.extend((1..num_members).map(|m| block_of(m) as f32));

    let mut follow_src = Vec::new();
    let mut follow_tgt = Vec::new();
    for m in 1..num_members {
        let p = if block_of(m) == root_block { 0.9 } else { 0.1 };
        if stream.next_f64() < p {
            follow_src.push(m as i64);
            follow_tgt.push(0i64);
        }
    }

    let mut join_src = Vec::new();
    let mut join_tgt = Vec::new();
    for m in 0..num_members {
        let own = block_of(m);
        let forum = if stream.next_f64() < 0.9 {
            own
        } else {
            1 - own
        };
        join_src.push(m as i64);
        join_tgt.push(forum);
    }

    let mut member_features = BTreeMap::new();
    member_features.insert(
        "tag".to_string(),
        Feature::dense(num_members, vec![1], FeatureData::F32(tags))?,
    );
    let mut forum_features = BTreeMap::new();
    forum_features.insert("#id".to_string(), Feature::i64_scalars(vec![0, 1]));

    let mut node_sets = BTreeMap::new();
    node_sets.insert(
        "member".to_string(),
        NodeSet::new(vec![num_members], member_features)?,
    );
    node_sets.insert("forum".to_string(), NodeSet::new(vec![2], forum_features)?);

    let mut edge_sets = BTreeMap::new();
    edge_sets.insert(
        "follows".to_string(),
        EdgeSet::new(
            vec![follow_src.len()],
            Adjacency::new("member", "member", follow_src, follow_tgt)?,
            BTreeMap::new(),
        )?,
    );
    edge_sets.insert(
        "joins".to_string(),
        EdgeSet::new(
            vec![join_src.len()],
            Adjacency::new("member", "forum", join_src, join_tgt)?,
            BTreeMap::new(),
        )?,
    );

    let mut context = BTreeMap::new();
    context.insert(
        "label".to_string(),
        Feature::dense(1, vec![1], FeatureData::I64(vec![root_block]))?,
    );

    GraphTensor::new(context, node_sets, edge_sets)
}

/// The model configuration the demo and end-to-end tests train: a two-round
/// vanilla MPNN with 32-wide messages.
pub fn two_community_model_config() -> crate::layers::ModelConfig {
    crate::layers::ModelConfig::from_json(
        r##"{
        "map_features": {
            "member": {"branches": [{"feature": "tag", "steps": [{"op": "dense", "units": 8}]}]},
            "forum": {"branches": [{"feature": "#id", "steps": [{"op": "embed", "vocab": 2, "dim": 8}]}]}
        },
        "updates": [
            {"repeat": 2,
             "node_sets": {
                "member": {
                    "convs": {
                        "follows": {"type": "vanilla_mpnn", "message_dim": 32, "receiver": "target"},
                        "joins": {"type": "vanilla_mpnn", "message_dim": 32, "receiver": "source"}
                    },
                    "next_state": {"type": "concat_dense", "units": 32}
                },
                "forum": {
                    "convs": {
                        "joins": {"type": "vanilla_mpnn", "message_dim": 32, "receiver": "target"}
                    },
                    "next_state": {"type": "concat_dense", "units": 32}
                }
             }}
        ]
    }"##,
    )
    .expect("static config parses")
}

pub fn two_community_task_config() -> crate::runner::TaskConfig {
    crate::runner::TaskConfig {
        kind: "root_multiclass".into(),
        node_set: "member".into(),
        num_classes: 2,
        label_feature: "label".into(),
        label_source: "context".into(),
    }
}

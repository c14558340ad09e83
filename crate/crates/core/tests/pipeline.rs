//! Integration coverage: layer semantics against loop-based oracles,
//! structural invariants (equivariance, component isolation, attention
//! normalization, head slicing), and the full sample -> serialize -> train
//! -> evaluate -> infer pipeline.
#![allow(clippy::needless_range_loop)] // index loops keep the oracles explicit

use std::collections::BTreeMap;

use hedra::exchange::EndpointTag;
use hedra::graph::{
    Adjacency, EdgeSet, Feature, FeatureData, FeatureOverrides, GraphTensor, NodeSet,
};
use hedra::layers::{
    ConvKind, ConvLayer, ConvTarget, Gatv2Config, GraphState, GraphUpdateLayer, Model,
    NextStateKind, NextStateLayer, NodeSetUpdate, RunMode, HIDDEN_STATE,
};
use hedra::runner::synthetic::{
    two_community_dataset, two_community_model_config, two_community_schema,
    two_community_task_config,
};
use hedra::runner::{
    evaluate, infer, run_training, DatasetProvider, InMemoryProvider, ModelArtifact, TrainerConfig,
};
use hedra::schema::parse_schema;
use hedra::tensor::rng::StreamKey;
use hedra::tensor::{Activation, DenseTensor, ParameterStore, Tape};

fn homogeneous(n: usize, edges: &[(i64, i64)]) -> GraphTensor {
    let mut node_sets = BTreeMap::new();
    node_sets.insert(
        "n".to_string(),
        NodeSet::new(vec![n], BTreeMap::new()).unwrap(),
    );
    let mut edge_sets = BTreeMap::new();
    edge_sets.insert(
        "e".to_string(),
        EdgeSet::new(
            vec![edges.len()],
            Adjacency::new(
                "n",
                "n",
                edges.iter().map(|e| e.0).collect(),
                edges.iter().map(|e| e.1).collect(),
            )
            .unwrap(),
            BTreeMap::new(),
        )
        .unwrap(),
    );
    GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap()
}

fn random_state<T: hedra::tensor::Scalar>(
    tape: &mut Tape<T>,
    set: &str,
    n: usize,
    d: usize,
    key: StreamKey,
) -> GraphState {
    let mut stream = key.stream();
    let values = (0..n * d)
        .map(|_| T::from_f64(stream.uniform(-1.0, 1.0)))
        .collect();
    let mut state = GraphState::default();
    state.node.insert(
        set.to_string(),
        tape.constant(DenseTensor::new(vec![n, d], values).unwrap()),
    );
    state
}

// ---------------------------------------------------------------------------
// loop-based oracles for the conv/next-state layers

#[test]
fn vanilla_mpnn_matches_loop_oracle() {
    let edges = [(0i64, 1i64), (2, 1), (1, 3), (3, 0), (2, 2), (0, 1)];
    let graph = homogeneous(4, &edges);
    let d = 3;
    let message_dim = 4;
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(5);
    let state = random_state(&mut tape, "n", 4, d, StreamKey::new(1).label("mpnn"));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::VanillaMpnn { message_dim },
        scope: "c".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();

    // explicit per-edge computation
    let h = tape.value(state.node_state("n").unwrap()).clone();
    let w = store.get("c/w").unwrap().clone();
    let b = store.get("c/b").unwrap().clone();
    let mut want = vec![0.0f64; 4 * message_dim];
    for &(u, v) in &edges {
        let (u, v) = (u as usize, v as usize);
        for j in 0..message_dim {
            let mut acc = b.values()[j] as f64;
            for k in 0..d {
                acc += h.values()[u * d + k] as f64 * w.values()[k * message_dim + j] as f64;
                acc += h.values()[v * d + k] as f64 * w.values()[(d + k) * message_dim + j] as f64;
            }
            want[v * message_dim + j] += acc.max(0.0);
        }
    }
    for (a, b) in tape.value(out).values().iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn sage_mean_matches_loop_oracle() {
    let edges = [(0i64, 1i64), (2, 1), (3, 1), (1, 0)];
    let graph = homogeneous(4, &edges);
    let (d, units) = (2, 3);
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(6);
    let state = random_state(&mut tape, "n", 4, d, StreamKey::new(2).label("sage"));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::SageMean { units },
        scope: "c".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();

    let h = tape.value(state.node_state("n").unwrap()).clone();
    let w = store.get("c/w").unwrap().clone();
    let mut sums = vec![0.0f64; 4 * units];
    let mut counts = [0usize; 4];
    for &(u, v) in &edges {
        let (u, v) = (u as usize, v as usize);
        counts[v] += 1;
        for j in 0..units {
            for k in 0..d {
                sums[v * units + j] +=
                    h.values()[u * d + k] as f64 * w.values()[k * units + j] as f64;
            }
        }
    }
    for v in 0..4 {
        for j in 0..units {
            let want = if counts[v] == 0 {
                0.0
            } else {
                sums[v * units + j] / counts[v] as f64
            };
            let got = tape.value(out).values()[v * units + j] as f64;
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn rgcn_next_state_matches_loop_oracle_and_degenerate_cases() {
    let graph = homogeneous(4, &[(0, 1), (2, 1), (1, 3)]);
    let (d, units) = (3, 4);
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(7);
    let state = random_state(&mut tape, "n", 4, d, StreamKey::new(3).label("rgcn"));
    let prev = state.node_state("n").unwrap();

    // k = 0 edge sets: pure self-transform through the activation
    let next0 = NextStateLayer {
        kind: NextStateKind::Rgcn {
            units,
            activation: Activation::Identity,
        },
        dropout: 0.0,
        use_layer_norm: false,
        scope: "ns0".into(),
    };
    let out0 = next0
        .forward(&mut tape, &mut store, prev, &[], None, RunMode::inference())
        .unwrap();
    let h = tape.value(prev).clone();
    let w_self = store.get("ns0/w_self").unwrap().clone();
    for i in 0..4 {
        for j in 0..units {
            let want: f64 = (0..d)
                .map(|k| h.values()[i * d + k] as f64 * w_self.values()[k * units + j] as f64)
                .sum();
            let got = tape.value(out0).values()[i * units + j] as f64;
            assert!((got - want).abs() < 1e-6);
        }
    }

    // k = 2: sum of pooled inputs plus the self transform (the k = 1 case is
    // the GraphSAGE update)
    let sage = |scope: &str, receiver| ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver,
        kind: ConvKind::SageMean { units },
        scope: scope.into(),
    };
    let p0 = sage("p0", EndpointTag::Target)
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    let p1 = sage("p1", EndpointTag::Source)
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    let next2 = NextStateLayer {
        kind: NextStateKind::Rgcn {
            units,
            activation: Activation::Sigmoid,
        },
        dropout: 0.0,
        use_layer_norm: false,
        scope: "ns2".into(),
    };
    let out2 = next2
        .forward(
            &mut tape,
            &mut store,
            prev,
            &[p0, p1],
            None,
            RunMode::inference(),
        )
        .unwrap();
    let w_self2 = store.get("ns2/w_self").unwrap().clone();
    for i in 0..4 {
        for j in 0..units {
            let self_term: f64 = (0..d)
                .map(|k| h.values()[i * d + k] as f64 * w_self2.values()[k * units + j] as f64)
                .sum();
            let z = self_term
                + tape.value(p0).values()[i * units + j] as f64
                + tape.value(p1).values()[i * units + j] as f64;
            let want = 1.0 / (1.0 + (-z).exp());
            let got = tape.value(out2).values()[i * units + j] as f64;
            assert!((got - want).abs() < 1e-6);
        }
    }
}

// ---------------------------------------------------------------------------
// GATv2 structure: coefficient normalization, symmetry, head slicing

#[test]
fn gatv2_two_identical_senders_split_evenly() {
    // two senders with identical states attending to one receiver
    let graph = homogeneous(3, &[(0, 2), (1, 2)]);
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(9);
    let mut state = GraphState::default();
    let h = DenseTensor::from_rows(&[
        vec![0.3f32, -0.7],
        vec![0.3, -0.7], // same as sender 0
        vec![1.0, 0.5],
    ]);
    state.node.insert("n".to_string(), tape.constant(h));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: 2,
            per_head_channels: 3,
            ..Gatv2Config::default()
        }),
        scope: "g".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    assert_eq!(tape.value(out).shape(), &[3, 6]);

    // identical senders mean coefficients are exactly [0.5, 0.5]; the pooled
    // output therefore equals relu(value) of either sender
    let mut tape2 = Tape::<f32>::new();
    let mut state2 = GraphState::default();
    let h2 = DenseTensor::from_rows(&[vec![0.3f32, -0.7], vec![0.3, -0.7], vec![1.0, 0.5]]);
    state2.node.insert("n".to_string(), tape2.constant(h2));
    let single = homogeneous(3, &[(0, 2)]);
    let out_single = conv
        .forward(
            &mut tape2,
            &mut store,
            &single,
            &state2,
            RunMode::inference(),
        )
        .unwrap();
    let got = tape.value(out).row(2);
    let want = tape2.value(out_single).row(2);
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn gatv2_single_sender_output_is_relu_of_value() {
    // one edge u -> v: the coefficient is exactly 1, so the receiver's
    // output equals relu(W_n h_u + b_n)
    let graph = homogeneous(2, &[(0, 1)]);
    let d = 3;
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(33);
    let state = random_state(&mut tape, "n", 2, d, StreamKey::new(8).label("single"));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: 2,
            per_head_channels: 2,
            ..Gatv2Config::default()
        }),
        scope: "s".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();

    let h = tape.value(state.node_state("n").unwrap()).clone();
    let w = store.get("s/w_sender_node").unwrap().clone();
    let b = store.get("s/b_sender_node").unwrap().clone();
    for j in 0..4 {
        let mut value = b.values()[j] as f64;
        for k in 0..d {
            value += h.values()[k] as f64 * w.values()[k * 4 + j] as f64;
        }
        let want = value.max(0.0);
        let got = tape.value(out).row(1)[j] as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn gatv2_multi_head_equals_sliced_single_heads() {
    let graph = homogeneous(5, &[(0, 1), (2, 1), (3, 1), (4, 3), (1, 3)]);
    let (d, heads, channels) = (3, 2, 2);
    let width = heads * channels;
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(11);
    let state = random_state(&mut tape, "n", 5, d, StreamKey::new(4).label("heads"));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: heads,
            per_head_channels: channels,
            ..Gatv2Config::default()
        }),
        scope: "g".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();

    // independent single-head runs sharing sliced weights
    let slice_cols = |t: &DenseTensor<f32>, head: usize| -> DenseTensor<f32> {
        let rows = t.shape()[0];
        let mut values = Vec::with_capacity(rows * channels);
        for i in 0..rows {
            let row = t.row(i);
            values.extend_from_slice(&row[head * channels..(head + 1) * channels]);
        }
        DenseTensor::new(vec![rows, channels], values).unwrap()
    };
    let slice_vec = |t: &DenseTensor<f32>, head: usize| -> DenseTensor<f32> {
        DenseTensor::new(
            vec![channels],
            t.values()[head * channels..(head + 1) * channels].to_vec(),
        )
        .unwrap()
    };
    let mut per_head_rows: Vec<Vec<f32>> = vec![Vec::new(); 5];
    for head in 0..heads {
        let mut head_store = ParameterStore::<f32>::new(0);
        head_store.set(
            "g/w_query",
            slice_cols(store.get("g/w_query").unwrap(), head),
        );
        head_store.set(
            "g/b_query",
            slice_vec(store.get("g/b_query").unwrap(), head),
        );
        head_store.set(
            "g/w_sender_node",
            slice_cols(store.get("g/w_sender_node").unwrap(), head),
        );
        head_store.set(
            "g/b_sender_node",
            slice_vec(store.get("g/b_sender_node").unwrap(), head),
        );
        head_store.set(
            "g/attention",
            slice_vec(store.get("g/attention").unwrap(), head),
        );
        let single = ConvLayer {
            target: ConvTarget::EdgeSet("e".into()),
            receiver: EndpointTag::Target,
            kind: ConvKind::Gatv2(Gatv2Config {
                num_heads: 1,
                per_head_channels: channels,
                ..Gatv2Config::default()
            }),
            scope: "g".into(),
        };
        let mut head_tape = Tape::<f32>::new();
        let head_state = {
            let h = tape.value(state.node_state("n").unwrap()).clone();
            let mut s = GraphState::default();
            s.node.insert("n".to_string(), head_tape.constant(h));
            s
        };
        let head_out = single
            .forward(
                &mut head_tape,
                &mut head_store,
                &graph,
                &head_state,
                RunMode::inference(),
            )
            .unwrap();
        for i in 0..5 {
            per_head_rows[i].extend_from_slice(head_tape.value(head_out).row(i));
        }
    }
    for i in 0..5 {
        let got = tape.value(out).row(i);
        assert_eq!(got.len(), width);
        for (a, b) in got.iter().zip(&per_head_rows[i]) {
            assert!((a - b).abs() < 1e-6, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn gatv2_coefficients_normalize_on_random_graphs() {
    for trial in 0..8u64 {
        let key = StreamKey::new(0xC0EF).label("norm").index(trial);
        let mut stream = key.stream();
        let n = 2 + stream.below(7) as usize;
        let m = 1 + stream.below(12) as usize;
        let edges: Vec<(i64, i64)> = (0..m)
            .map(|_| (stream.below(n as u64) as i64, stream.below(n as u64) as i64))
            .collect();
        let graph = homogeneous(n, &edges);
        // drive the attention machinery directly: logits -> edge_softmax
        let mut tape = Tape::<f32>::new();
        let logits_values: Vec<f32> = (0..m * 2)
            .map(|_| stream.uniform(-3.0, 3.0) as f32)
            .collect();
        let logits = tape.constant(DenseTensor::new(vec![m, 2], logits_values).unwrap());
        let coef = hedra::exchange::edge_softmax(
            &mut tape,
            &graph,
            "e",
            EndpointTag::Target,
            logits.into(),
        )
        .unwrap();
        let values = tape.value(coef);
        let mut sums = vec![[0.0f64; 2]; n];
        for (e, &(_, v)) in edges.iter().enumerate() {
            for h in 0..2 {
                let c = values.values()[e * 2 + h];
                assert!(c >= 0.0);
                sums[v as usize][h] += c as f64;
            }
        }
        for (v, row) in sums.iter().enumerate() {
            for &s in row {
                let has_edges = edges.iter().any(|&(_, t)| t as usize == v);
                if has_edges {
                    assert!((s - 1.0).abs() < 1e-5, "receiver {v} sums to {s}");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// structural invariants

#[test]
fn hetero_machinery_reduces_to_plain_conv_for_one_edge_set() {
    // a graph update with one conv and a pass-through next state must equal
    // calling the conv directly
    let graph = {
        let g = homogeneous(5, &[(0, 1), (2, 1), (3, 4), (1, 4)]);
        let mut overrides = FeatureOverrides::default();
        let values: Vec<f32> = (0..5 * 3).map(|i| (i as f32 * 0.13).cos()).collect();
        overrides.node_sets.insert(
            "n".to_string(),
            BTreeMap::from([(
                HIDDEN_STATE.to_string(),
                Feature::from_matrix(&DenseTensor::new(vec![5, 3], values).unwrap()),
            )]),
        );
        g.replace_features(overrides).unwrap()
    };
    let conv = || ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: 2,
            per_head_channels: 2,
            ..Gatv2Config::default()
        }),
        scope: "shared".into(),
    };
    let update = GraphUpdateLayer {
        edge_sets: BTreeMap::new(),
        node_sets: BTreeMap::from([(
            "n".to_string(),
            NodeSetUpdate {
                convs: BTreeMap::from([("e".to_string(), conv())]),
                next_state: NextStateLayer {
                    kind: NextStateKind::PassThrough,
                    dropout: 0.0,
                    use_layer_norm: false,
                    scope: "pt".into(),
                },
                context_input: false,
            },
        )]),
        context: None,
    };

    let mut store = ParameterStore::<f32>::new(21);
    let mut tape = Tape::<f32>::new();
    let state = GraphState::from_graph(&mut tape, &graph).unwrap();
    let updated = update
        .apply(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    let direct = conv()
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    assert_eq!(
        tape.value(updated.node_state("n").unwrap()).values(),
        tape.value(direct).values()
    );
}

#[test]
fn node_permutation_equivariance() {
    let key = StreamKey::new(0xE9).label("equivariance");
    let mut stream = key.stream();
    let n = 6;
    let edges: Vec<(i64, i64)> = (0..10)
        .map(|_| (stream.below(n as u64) as i64, stream.below(n as u64) as i64))
        .collect();
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = stream.below((i + 1) as u64) as usize;
            p.swap(i, j);
        }
        p
    };
    let values: Vec<f32> = (0..n * 3)
        .map(|_| stream.uniform(-1.0, 1.0) as f32)
        .collect();

    let permuted_edges: Vec<(i64, i64)> = edges
        .iter()
        .map(|&(u, v)| (perm[u as usize] as i64, perm[v as usize] as i64))
        .collect();
    let mut permuted_values = vec![0.0f32; n * 3];
    for i in 0..n {
        for k in 0..3 {
            permuted_values[perm[i] * 3 + k] = values[i * 3 + k];
        }
    }

    let forward = |edges: &[(i64, i64)], values: Vec<f32>| -> Vec<f32> {
        let graph = homogeneous(n, edges);
        let mut tape = Tape::<f32>::new();
        let mut store = ParameterStore::<f32>::new(77);
        let mut state = GraphState::default();
        state.node.insert(
            "n".to_string(),
            tape.constant(DenseTensor::new(vec![n, 3], values).unwrap()),
        );
        let conv = ConvLayer {
            target: ConvTarget::EdgeSet("e".into()),
            receiver: EndpointTag::Target,
            kind: ConvKind::Gatv2(Gatv2Config {
                num_heads: 2,
                per_head_channels: 2,
                ..Gatv2Config::default()
            }),
            scope: "eq".into(),
        };
        let pooled = conv
            .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
            .unwrap();
        let next = NextStateLayer {
            kind: NextStateKind::Rgcn {
                units: 4,
                activation: Activation::Sigmoid,
            },
            dropout: 0.0,
            use_layer_norm: true,
            scope: "eqn".into(),
        };
        let prev = state.node_state("n").unwrap();
        let out = next
            .forward(
                &mut tape,
                &mut store,
                prev,
                &[pooled],
                None,
                RunMode::inference(),
            )
            .unwrap();
        tape.value(out).values().to_vec()
    };

    let base = forward(&edges, values);
    let permuted = forward(&permuted_edges, permuted_values);
    for i in 0..n {
        for k in 0..4 {
            let a = base[i * 4 + k];
            let b = permuted[perm[i] * 4 + k];
            assert!((a - b).abs() < 1e-5, "node {i} channel {k}: {a} vs {b}");
        }
    }
}

#[test]
fn component_isolation_is_bitwise() {
    let graphs = two_community_dataset(31, 2, 4).unwrap();
    let merged = GraphTensor::merge_batch(&graphs).unwrap();

    // randomize component 1's member tags, keep component 0 intact
    let mut tag = merged
        .node_set("member")
        .unwrap()
        .feature("tag")
        .unwrap()
        .clone();
    let sizes = merged.node_set("member").unwrap().sizes().to_vec();
    let FeatureData::F32(values) = tag.data().clone() else {
        panic!()
    };
    let mut mutated = values.clone();
    for v in mutated.iter_mut().skip(sizes[0]) {
        *v += 5.0;
    }
    tag = Feature::dense(tag.items(), vec![1], FeatureData::F32(mutated)).unwrap();
    let mut overrides = FeatureOverrides::default();
    overrides.node_sets.insert(
        "member".to_string(),
        BTreeMap::from([("tag".to_string(), tag)]),
    );
    let perturbed = merged.replace_features(overrides).unwrap();

    let model = Model::from_config(&two_community_model_config(), &two_community_schema()).unwrap();
    let run = |graph: &GraphTensor| -> Vec<u32> {
        let mut store = ParameterStore::<f32>::new(55);
        let mut tape = Tape::<f32>::new();
        let state = model
            .forward(&mut tape, &mut store, graph, RunMode::inference())
            .unwrap();
        let member = state.node_state("member").unwrap();
        tape.value(member).values()[..sizes[0] * 32]
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(run(&merged), run(&perturbed));
}

// ---------------------------------------------------------------------------
// the case-study-shaped model: four rounds over four node sets

#[test]
fn four_round_mpnn_on_citation_shaped_schema() {
    let schema = parse_schema(
        r##"{
        "node_sets": {
            "paper": {"features": {"feat": {"dtype": "float32", "shape": [4]}}},
            "author": {"features": {"#id": {"dtype": "string"}}},
            "institution": {"features": {"#id": {"dtype": "string"}}},
            "field_of_study": {"features": {"#id": {"dtype": "string"}}}
        },
        "edge_sets": {
            "cites": {"source": "paper", "target": "paper", "features": {}},
            "writes": {"source": "author", "target": "paper", "features": {}},
            "affiliated_with": {"source": "author", "target": "institution", "features": {}},
            "has_topic": {"source": "paper", "target": "field_of_study", "features": {}}
        }
    }"##,
    )
    .unwrap();

    // paper pulls from cites (receiver source), "written" (reverse writes:
    // receiver target) and has_topic (receiver source); author pulls from
    // writes and affiliated_with (receiver source). institutions and fields
    // keep their embedding-table states.
    let config = hedra::layers::ModelConfig::from_json(
        r##"{
        "map_features": {
            "paper": {"branches": [{"feature": "feat", "steps": [{"op": "dense", "units": 8}]}]},
            "author": {"branches": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 64}, {"op": "embed", "vocab": 64, "dim": 8}]}]},
            "institution": {"branches": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 16}, {"op": "embed", "vocab": 16, "dim": 8}]}]},
            "field_of_study": {"branches": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 16}, {"op": "embed", "vocab": 16, "dim": 8}]}]}
        },
        "updates": [
            {"repeat": 4,
             "node_sets": {
                "paper": {
                    "convs": {
                        "cites": {"type": "vanilla_mpnn", "message_dim": 8, "receiver": "source"},
                        "writes": {"type": "vanilla_mpnn", "message_dim": 8, "receiver": "target"},
                        "has_topic": {"type": "vanilla_mpnn", "message_dim": 8, "receiver": "source"}
                    },
                    "next_state": {"type": "concat_dense", "units": 8}
                },
                "author": {
                    "convs": {
                        "writes": {"type": "vanilla_mpnn", "message_dim": 8, "receiver": "source"},
                        "affiliated_with": {"type": "vanilla_mpnn", "message_dim": 8, "receiver": "source"}
                    },
                    "next_state": {"type": "concat_dense", "units": 8}
                }
             }}
        ]
    }"##,
    )
    .unwrap();
    let model = Model::from_config(&config, &schema).unwrap();
    assert_eq!(model.updates.len(), 4);

    // a small instance with every set populated
    let mut node_sets = BTreeMap::new();
    let mut paper_features = BTreeMap::new();
    paper_features.insert(
        "feat".to_string(),
        Feature::dense(
            3,
            vec![4],
            FeatureData::F32((0..12).map(|i| i as f32 / 10.0).collect()),
        )
        .unwrap(),
    );
    node_sets.insert(
        "paper".to_string(),
        NodeSet::new(vec![3], paper_features).unwrap(),
    );
    for (set, n) in [
        ("author", 2usize),
        ("institution", 2),
        ("field_of_study", 2),
    ] {
        let mut features = BTreeMap::new();
        features.insert(
            "#id".to_string(),
            Feature::str_scalars((0..n).map(|i| format!("{set}{i}")).collect()),
        );
        node_sets.insert(set.to_string(), NodeSet::new(vec![n], features).unwrap());
    }
    let mut edge_sets = BTreeMap::new();
    let edge = |src: &str, tgt: &str, s: Vec<i64>, t: Vec<i64>| {
        EdgeSet::new(
            vec![s.len()],
            Adjacency::new(src, tgt, s, t).unwrap(),
            BTreeMap::new(),
        )
        .unwrap()
    };
    edge_sets.insert(
        "cites".to_string(),
        edge("paper", "paper", vec![0, 1], vec![1, 2]),
    );
    edge_sets.insert(
        "writes".to_string(),
        edge("author", "paper", vec![0, 1], vec![0, 2]),
    );
    edge_sets.insert(
        "affiliated_with".to_string(),
        edge("author", "institution", vec![0, 1], vec![1, 0]),
    );
    edge_sets.insert(
        "has_topic".to_string(),
        edge("paper", "field_of_study", vec![0, 2], vec![0, 1]),
    );
    let graph = GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap();

    let mut store = ParameterStore::<f32>::new(13);
    let mut tape = Tape::<f32>::new();
    let initial = hedra::layers::map_features(
        &mut tape,
        &mut store,
        &graph,
        &model.pipelines,
        RunMode::inference(),
    )
    .unwrap();
    let final_state = model
        .forward(&mut tape, &mut store, &graph, RunMode::inference())
        .unwrap();

    // paper and author states moved; institution and field states are the
    // untouched embedding-table outputs
    assert_eq!(
        tape.value(final_state.node_state("paper").unwrap()).shape(),
        &[3, 8]
    );
    for set in ["institution", "field_of_study"] {
        assert_eq!(
            tape.value(initial.node_state(set).unwrap()).values(),
            tape.value(final_state.node_state(set).unwrap()).values(),
            "{set} must be untouched"
        );
    }
    assert_ne!(
        tape.value(initial.node_state("paper").unwrap()).values(),
        tape.value(final_state.node_state("paper").unwrap())
            .values()
    );

    // determinism across repeated forwards with the same seed
    let mut store2 = ParameterStore::<f32>::new(13);
    let mut tape2 = Tape::<f32>::new();
    let state2 = model
        .forward(&mut tape2, &mut store2, &graph, RunMode::inference())
        .unwrap();
    assert_eq!(
        tape.value(final_state.node_state("paper").unwrap())
            .values(),
        tape2.value(state2.node_state("paper").unwrap()).values()
    );
}

// ---------------------------------------------------------------------------
// runner behaviors

#[test]
fn zero_learning_rate_changes_nothing() {
    let schema = two_community_schema();
    let graphs = two_community_dataset(41, 8, 4).unwrap();
    let train = InMemoryProvider::new(graphs, schema, 41);
    let trainer = TrainerConfig {
        batch_size: 8,
        epochs: 3,
        steps_per_epoch: Some(1),
        lr: 0.0,
        l2: 0.0,
        seed: 41,
        lr_floor_fraction: 0.0,
        padding: None,
    };
    let (artifact, history) = run_training(
        &train,
        None,
        &{
            // dropout-free variant so every step sees the same loss
            two_community_model_config()
        },
        &two_community_task_config(),
        &trainer,
    )
    .unwrap();
    let losses: Vec<f64> = history.steps.iter().map(|s| s.loss).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");

    // a shorter run reaches the same parameters: nothing ever moved
    let (artifact2, _) = run_training(
        &InMemoryProvider::new(
            two_community_dataset(41, 8, 4).unwrap(),
            two_community_schema(),
            41,
        ),
        None,
        &two_community_model_config(),
        &two_community_task_config(),
        &TrainerConfig {
            epochs: 1,
            steps_per_epoch: Some(1),
            ..trainer
        },
    )
    .unwrap();
    assert!(
        artifact.params_equal(&artifact2),
        "lr=0 must not move parameters"
    );
}

#[test]
fn training_is_label_blind_after_extraction() {
    // two datasets identical except for the label values produce identical
    // logits under a fixed parameter store: the label feature is removed
    // before feature mapping
    let schema = two_community_schema();
    let graphs = two_community_dataset(51, 4, 4).unwrap();
    let flipped: Vec<GraphTensor> = graphs
        .iter()
        .map(|g| {
            let mut overrides = FeatureOverrides::default();
            overrides.context.insert(
                "label".to_string(),
                Feature::dense(1, vec![1], FeatureData::I64(vec![1])).unwrap(),
            );
            g.replace_features(overrides).unwrap()
        })
        .collect();

    let model = Model::from_config(&two_community_model_config(), &schema).unwrap();
    let task = hedra::runner::Task::from_config(&two_community_task_config()).unwrap();
    let mut store = ParameterStore::<f32>::new(3);
    let logits = |graphs: &[GraphTensor], store: &mut ParameterStore<f32>| -> Vec<f32> {
        let merged = GraphTensor::merge_batch(graphs).unwrap();
        let mut tape = Tape::<f32>::new();
        let output = hedra::runner::forward_batch(
            &mut tape,
            store,
            &model,
            &task,
            &merged,
            None,
            RunMode::inference(),
            0.0,
        )
        .unwrap();
        tape.value(output.logits).values().to_vec()
    };
    assert_eq!(logits(&graphs, &mut store), logits(&flipped, &mut store));
}

#[test]
fn evaluate_replays_training_accuracy_and_is_stable() {
    let schema = two_community_schema();
    let graphs = two_community_dataset(61, 64, 5).unwrap();
    let train = InMemoryProvider::new(graphs.clone(), schema.clone(), 61);
    let trainer = TrainerConfig {
        batch_size: 8,
        epochs: 8,
        steps_per_epoch: Some(8),
        lr: 0.01,
        l2: 0.0,
        seed: 61,
        lr_floor_fraction: 0.0,
        padding: None,
    };
    let (artifact, _history) = run_training(
        &train,
        None,
        &two_community_model_config(),
        &two_community_task_config(),
        &trainer,
    )
    .unwrap();
    let metrics = evaluate(&artifact, &train, 8).unwrap();
    assert_eq!(metrics.examples, 64);
    assert_eq!(metrics.accuracy, artifact.metadata.train_accuracy);

    // evaluation has no side effects: a second pass is identical
    let again = evaluate(&artifact, &train, 8).unwrap();
    assert_eq!(metrics, again);

    // empty dataset reports zero examples and absent metrics
    let empty = InMemoryProvider::new(Vec::new(), schema, 0);
    let metrics = evaluate(&artifact, &empty, 8).unwrap();
    assert_eq!(metrics.examples, 0);
    assert_eq!(metrics.loss, None);
    assert_eq!(metrics.accuracy, None);
}

#[test]
fn fingerprint_mismatch_is_rejected_on_evaluate() {
    let schema = two_community_schema();
    let graphs = two_community_dataset(71, 8, 4).unwrap();
    let train = InMemoryProvider::new(graphs, schema, 71);
    let trainer = TrainerConfig {
        batch_size: 4,
        epochs: 1,
        steps_per_epoch: Some(2),
        lr: 0.01,
        l2: 0.0,
        seed: 71,
        lr_floor_fraction: 0.0,
        padding: None,
    };
    let (artifact, _) = run_training(
        &train,
        None,
        &two_community_model_config(),
        &two_community_task_config(),
        &trainer,
    )
    .unwrap();
    let other_schema = parse_schema(r#"{"node_sets": {"x": {"features": {}}}}"#).unwrap();
    let other = InMemoryProvider::new(Vec::new(), other_schema, 0);
    let err = evaluate(&artifact, &other, 8).unwrap_err();
    assert!(
        matches!(err, hedra::Error::FingerprintMismatch { .. }),
        "{err}"
    );
}

#[test]
fn full_pipeline_sample_train_evaluate_infer() {
    use hedra::io::{encode_graph, RecordFileWriter};
    use hedra::schema::schema_fingerprint;

    let dir = tempfile::tempdir().unwrap();
    let schema = two_community_schema();
    let fingerprint = schema_fingerprint(&schema);
    let graphs = two_community_dataset(81, 60, 5).unwrap();

    // write records through the serialization layer
    let train_path = dir.path().join("train.gtr");
    let mut writer = RecordFileWriter::create(&train_path).unwrap();
    for g in &graphs[..48] {
        writer
            .write_record(&encode_graph(g, fingerprint).unwrap())
            .unwrap();
    }
    writer.finish().unwrap();
    let valid_path = dir.path().join("valid.gtr");
    let mut writer = RecordFileWriter::create(&valid_path).unwrap();
    for g in &graphs[48..] {
        writer
            .write_record(&encode_graph(g, fingerprint).unwrap())
            .unwrap();
    }
    writer.finish().unwrap();

    let train = hedra::runner::FileDatasetProvider::new(
        train_path.display().to_string(),
        schema.clone(),
        81,
    );
    let valid = hedra::runner::FileDatasetProvider::new(
        valid_path.display().to_string(),
        schema.clone(),
        81,
    );
    let trainer = TrainerConfig {
        batch_size: 8,
        epochs: 6,
        steps_per_epoch: None, // inferred from the dataset
        lr: 0.01,
        l2: 1e-5,
        seed: 81,
        lr_floor_fraction: 0.0,
        padding: None,
    };
    let (artifact, history) = run_training(
        &train,
        Some(&valid as &dyn DatasetProvider),
        &two_community_model_config(),
        &two_community_task_config(),
        &trainer,
    )
    .unwrap();
    assert_eq!(history.steps.len(), 6 * 6); // 48 records / batch 8 = 6 steps per epoch
    assert!(artifact.metadata.validation_accuracy.unwrap() >= 0.9);

    // export -> load -> evaluate must match the pre-export evaluation
    let model_path = dir.path().join("model.hgm");
    artifact.export(&model_path).unwrap();
    let loaded = ModelArtifact::load(&model_path).unwrap();
    let before = evaluate(&artifact, &valid, 8).unwrap();
    let after = evaluate(&loaded, &valid, 8).unwrap();
    assert_eq!(before, after);

    // inference: one row per record, invariant to batch size
    let out1 = dir.path().join("pred1.ndjson");
    let out8 = dir.path().join("pred8.ndjson");
    let n1 = infer(&loaded, &valid_path.display().to_string(), &out1, 1).unwrap();
    let n8 = infer(&loaded, &valid_path.display().to_string(), &out8, 8).unwrap();
    assert_eq!(n1, 12);
    assert_eq!(n8, 12);
    let parse = |path: &std::path::Path| -> Vec<(usize, Vec<f64>)> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|line| {
                let v: serde_json::Value = serde_json::from_str(line).unwrap();
                (
                    v["record_index"].as_u64().unwrap() as usize,
                    v["logits"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|x| x.as_f64().unwrap())
                        .collect(),
                )
            })
            .collect()
    };
    let p1 = parse(&out1);
    let p8 = parse(&out8);
    assert_eq!(p1.len(), p8.len());
    for ((i1, l1), (i8, l8)) in p1.iter().zip(&p8) {
        assert_eq!(i1, i8);
        for (a, b) in l1.iter().zip(l8) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    // empty input produces a comment-only file
    let empty_records = dir.path().join("empty.gtr");
    RecordFileWriter::create(&empty_records)
        .unwrap()
        .finish()
        .unwrap();
    let empty_out = dir.path().join("empty.ndjson");
    let n = infer(&loaded, &empty_records.display().to_string(), &empty_out, 4).unwrap();
    assert_eq!(n, 0);
    let text = std::fs::read_to_string(&empty_out).unwrap();
    assert!(text.starts_with('#'), "{text:?}");
}

// ---------------------------------------------------------------------------
// the two-step message path: edge states plus edge pooling (and attention
// over edges)

#[test]
fn edge_state_update_then_edge_pool() {
    use hedra::layers::EdgeStateLayer;

    let edges = [(0i64, 1i64), (2, 1), (1, 0)];
    let graph = homogeneous(3, &edges);
    let d = 2;
    let units = 3;
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(19);
    let state = random_state(&mut tape, "n", 3, d, StreamKey::new(5).label("edge"));

    let edge_layer = EdgeStateLayer {
        edge_set: "e".into(),
        units,
        activation: Activation::Relu,
        use_recurrence: false,
        scope: "es".into(),
    };
    let update = GraphUpdateLayer {
        edge_sets: BTreeMap::from([("e".to_string(), edge_layer.clone())]),
        node_sets: BTreeMap::from([(
            "n".to_string(),
            NodeSetUpdate {
                convs: BTreeMap::from([(
                    "e".to_string(),
                    ConvLayer {
                        target: ConvTarget::EdgeSet("e".into()),
                        receiver: EndpointTag::Target,
                        kind: ConvKind::EdgePool {
                            reduce: hedra::tensor::Reduce::Sum,
                        },
                        scope: "ep".into(),
                    },
                )]),
                next_state: NextStateLayer {
                    kind: NextStateKind::PassThrough,
                    dropout: 0.0,
                    use_layer_norm: false,
                    scope: "pt".into(),
                },
                context_input: false,
            },
        )]),
        context: None,
    };
    let out = update
        .apply(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();

    // oracle: messages = relu(W [h_src, h_tgt] + b), sum-pooled at targets
    let h = tape.value(state.node_state("n").unwrap()).clone();
    let w = store.get("es/w").unwrap().clone();
    let b = store.get("es/b").unwrap().clone();
    let mut want = vec![0.0f64; 3 * units];
    for &(u, v) in &edges {
        let (u, v) = (u as usize, v as usize);
        for j in 0..units {
            let mut acc = b.values()[j] as f64;
            for k in 0..d {
                acc += h.values()[u * d + k] as f64 * w.values()[k * units + j] as f64;
                acc += h.values()[v * d + k] as f64 * w.values()[(d + k) * units + j] as f64;
            }
            want[v * units + j] += acc.max(0.0);
        }
    }
    let got = tape.value(out.node_state("n").unwrap());
    for (a, b) in got.values().iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
    // the new edge state is stored for downstream rounds
    assert!(out.edge.contains_key("e"));

    // a second round with recurrence consumes the stored edge state: the
    // edge transform concatenates both endpoint states (now `units` wide
    // after the pass-through update) with the previous edge state
    let recurrent = EdgeStateLayer {
        edge_set: "e".into(),
        units,
        activation: Activation::Relu,
        use_recurrence: true,
        scope: "es2".into(),
    };
    recurrent
        .forward(&mut tape, &mut store, &graph, &out)
        .unwrap();
    assert_eq!(store.get("es2/w").unwrap().shape(), &[3 * units, units]);
}

#[test]
fn gatv2_edge_only_and_context_over_edges() {
    // case ii: attention from edge features only (sender nodes disabled)
    let edges = [(0i64, 1i64), (2, 1)];
    let graph = {
        let g = homogeneous(3, &edges);
        let mut overrides = FeatureOverrides::default();
        overrides.edge_sets.insert(
            "e".to_string(),
            BTreeMap::from([(
                "weight".to_string(),
                Feature::dense(2, vec![2], FeatureData::F32(vec![0.1, 0.9, -0.4, 0.2])).unwrap(),
            )]),
        );
        g.replace_features(overrides).unwrap()
    };
    let mut tape = Tape::<f32>::new();
    let mut store = ParameterStore::<f32>::new(23);
    let state = random_state(&mut tape, "n", 3, 2, StreamKey::new(6).label("gat2"));
    let conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Target,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: 2,
            per_head_channels: 2,
            sender_node_input: false,
            sender_edge_feature: Some("weight".into()),
            ..Gatv2Config::default()
        }),
        scope: "g2".into(),
    };
    let out = conv
        .forward(&mut tape, &mut store, &graph, &state, RunMode::inference())
        .unwrap();
    assert_eq!(tape.value(out).shape(), &[3, 4]);
    // the edge-only transform carries the bias
    assert!(store.get("g2/b_sender_edge").is_some());
    assert!(store.get("g2/w_sender_node").is_none());

    // case iv: context receiver pooling all edges per component
    let merged = GraphTensor::merge_batch(&[graph.clone(), graph]).unwrap();
    let mut state = random_state(&mut tape, "n", 6, 2, StreamKey::new(7).label("gat4"));
    state.context = Some(tape.constant(DenseTensor::from_rows(&[
        vec![0.2f32, -0.1],
        vec![0.4, 0.3],
    ])));
    let ctx_conv = ConvLayer {
        target: ConvTarget::EdgeSet("e".into()),
        receiver: EndpointTag::Context,
        kind: ConvKind::Gatv2(Gatv2Config {
            num_heads: 1,
            per_head_channels: 3,
            sender_node_input: true,
            sender_edge_feature: Some("weight".into()),
            ..Gatv2Config::default()
        }),
        scope: "g4".into(),
    };
    let pooled = ctx_conv
        .forward(&mut tape, &mut store, &merged, &state, RunMode::inference())
        .unwrap();
    assert_eq!(tape.value(pooled).shape(), &[2, 3]);
}

#[test]
fn shared_weights_reduce_parameter_count() {
    let schema = two_community_schema();
    let graphs = two_community_dataset(91, 4, 4).unwrap();
    let merged = GraphTensor::merge_batch(&graphs).unwrap();

    let count_params = |share: bool| -> usize {
        let config = hedra::layers::ModelConfig::from_json(&format!(
            r##"{{
            "map_features": {{
                "member": {{"branches": [{{"feature": "tag", "steps": [{{"op": "dense", "units": 4}}]}}]}},
                "forum": {{"branches": [{{"feature": "#id", "steps": [{{"op": "embed", "vocab": 2, "dim": 4}}]}}]}}
            }},
            "updates": [
                {{"repeat": 3, "share_weights": {share},
                 "node_sets": {{
                    "member": {{
                        "convs": {{"follows": {{"type": "sage_mean", "units": 4}}}},
                        "next_state": {{"type": "rgcn", "units": 4}}
                    }}
                 }}}}
            ]}}"##
        ))
        .unwrap();
        let model = Model::from_config(&config, &schema).unwrap();
        let mut store = ParameterStore::<f32>::new(1);
        let mut tape = Tape::<f32>::new();
        model
            .forward(&mut tape, &mut store, &merged, RunMode::inference())
            .unwrap();
        store.len()
    };
    let shared = count_params(true);
    let unshared = count_params(false);
    assert!(shared < unshared, "shared {shared} vs unshared {unshared}");
}

#[test]
fn training_runs_every_architecture_end_to_end() {
    // one optimizer step per architecture family is enough to catch
    // parameter/gradient shape drift anywhere in the stack
    let schema = two_community_schema();
    let graphs = two_community_dataset(17, 16, 4).unwrap();
    let train = InMemoryProvider::new(graphs, schema, 17);
    let model_jsons = [
        // attention + mean aggregation + relational update, normalized
        r##"{
            "map_features": {
                "member": {"branches": [{"feature": "tag", "steps": [{"op": "dense", "units": 8}]}]},
                "forum": {"branches": [{"feature": "#id", "steps": [{"op": "embed", "vocab": 2, "dim": 8}]}]}
            },
            "updates": [{"repeat": 2, "node_sets": {
                "member": {
                    "convs": {
                        "follows": {"type": "gatv2", "num_heads": 2, "per_head_channels": 4, "receiver": "target", "edge_dropout": 0.1},
                        "joins": {"type": "sage_mean", "units": 8, "receiver": "source"}
                    },
                    "next_state": {"type": "rgcn", "units": 8, "dropout": 0.2, "layer_norm": true}
                }
            }}]
        }"##,
        // homogeneous GCN over follows with a pass-through update
        r##"{
            "map_features": {
                "member": {"branches": [{"feature": "tag", "steps": [{"op": "dense", "units": 8}]}]}
            },
            "updates": [{"node_sets": {
                "member": {
                    "convs": {"follows": {"type": "gcn", "units": 8}},
                    "next_state": {"type": "pass_through"}
                }
            }}]
        }"##,
        // two-step edge-state path with edge pooling
        r##"{
            "map_features": {
                "member": {"branches": [{"feature": "tag", "steps": [{"op": "dense", "units": 8}]}]}
            },
            "updates": [{
                "edge_sets": {"follows": {"units": 8, "use_recurrence": true}},
                "node_sets": {
                    "member": {
                        "convs": {"follows": {"type": "edge_pool", "reduce": "max", "receiver": "target"}},
                        "next_state": {"type": "concat_dense", "units": 8}
                    }
                }
            }]
        }"##,
    ];
    for (i, model_json) in model_jsons.iter().enumerate() {
        let model = hedra::layers::ModelConfig::from_json(model_json).unwrap();
        let trainer = TrainerConfig {
            batch_size: 8,
            epochs: 2,
            steps_per_epoch: Some(2),
            lr: 0.01,
            l2: 1e-5,
            seed: 17,
            lr_floor_fraction: 0.0,
            padding: None,
        };
        let (artifact, history) =
            run_training(&train, None, &model, &two_community_task_config(), &trainer)
                .unwrap_or_else(|e| panic!("model {i} failed to train: {e}"));
        assert_eq!(history.steps.len(), 4);
        assert!(history.steps.iter().all(|s| s.loss.is_finite()));
        // every reachable parameter keeps a well-formed shape through Adam
        assert!(!artifact.params.is_empty());
    }
}

#[test]
fn non_finite_loss_aborts_with_step_index() {
    let schema = two_community_schema();
    let graphs = two_community_dataset(99, 16, 4).unwrap();
    let train = InMemoryProvider::new(graphs, schema, 99);
    let trainer = TrainerConfig {
        batch_size: 8,
        epochs: 50,
        steps_per_epoch: Some(2),
        lr: 1e30, // drives the parameters to overflow
        l2: 0.0,
        seed: 99,
        lr_floor_fraction: 1.0, // keep the huge rate for every step
        padding: None,
    };
    let err = run_training(
        &train,
        None,
        &two_community_model_config(),
        &two_community_task_config(),
        &trainer,
    )
    .unwrap_err();
    match err {
        hedra::Error::Training { step, message } => {
            assert!(message.contains("non-finite"), "{message}");
            assert!(step > 0);
        }
        other => panic!("expected a training abort, got {other}"),
    }
}

#[test]
fn sampler_dedup_idempotence() {
    use hedra::sampler::{sample_subgraphs, Direction, GraphStore, SamplingSpecBuilder, Strategy};
    use serde_json::Value;

    let schema = parse_schema(
        r##"{"node_sets": {"n": {"features": {"#id": {"dtype": "string"}}}},
             "edge_sets": {"e": {"source": "n", "target": "n", "features": {}}}}"##,
    )
    .unwrap();
    let row = |pairs: &[(&str, &str)]| -> hedra::sampler::RawRow {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
            .collect()
    };
    // parallel edges a->b recorded three times
    let nodes = BTreeMap::from([(
        "n".to_string(),
        vec![row(&[("#id", "a")]), row(&[("#id", "b")])],
    )]);
    let edges = BTreeMap::from([(
        "e".to_string(),
        vec![
            row(&[("source_id", "a"), ("target_id", "b")]),
            row(&[("source_id", "a"), ("target_id", "b")]),
            row(&[("source_id", "a"), ("target_id", "b")]),
        ],
    )]);
    let store = GraphStore::build(&schema, &nodes, &edges).unwrap();

    // two identical sampling ops over the same input
    let mut builder = SamplingSpecBuilder::new(&schema, Strategy::RandomUniform);
    let seed = builder.seed("n").unwrap();
    builder
        .sample(&[seed], 10, "e", Direction::Forward)
        .unwrap();
    builder
        .sample(&[seed], 10, "e", Direction::Forward)
        .unwrap();
    let spec = builder.build().unwrap();

    let graphs =
        sample_subgraphs(&store, &spec, &[("n".to_string(), "a".to_string())], 1, 1).unwrap();
    let g = &graphs[0];
    // parallel edges collapse and the repeated op adds nothing
    assert_eq!(g.node_set("n").unwrap().total_size(), 2);
    assert_eq!(g.edge_set("e").unwrap().total_size(), 1);
}

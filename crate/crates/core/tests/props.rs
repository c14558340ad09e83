//! Property tests for the spec'd invariants: permutation invariance of
//! segment sums, softmax normalization, incidence-matrix equivalence, the
//! broadcast/pool adjoint identity, merge associativity, and serialization
//! round trips.
#![allow(clippy::needless_range_loop)] // index loops keep the oracles explicit

use std::collections::BTreeMap;

use proptest::prelude::*;

use hedra::exchange::{broadcast_node_to_edges, pool_edges_to_node, EndpointTag, FeatureInput};
use hedra::graph::{Adjacency, EdgeSet, Feature, FeatureData, GraphTensor, NodeSet};
use hedra::io::{decode_graph, encode_graph};
use hedra::schema::{parse_schema, schema_fingerprint, validate_graph};
use hedra::tensor::{DenseTensor, Reduce, Tape};

/// Values on a dyadic lattice: sums of a few hundred of them are exact in
/// the f64 accumulator, so reduction invariants hold bitwise.
fn dyadic() -> impl Strategy<Value = f32> {
    (-512i32..=512).prop_map(|v| v as f32 / 16.0)
}

fn segment_input(
    max_rows: usize,
    max_segments: usize,
) -> impl Strategy<Value = (Vec<f32>, Vec<usize>, usize, usize)> {
    (1..=max_segments, 0..=max_rows, 1usize..=3).prop_flat_map(|(segments, rows, d)| {
        (
            proptest::collection::vec(dyadic(), rows * d),
            proptest::collection::vec(0..segments, rows),
            Just(segments),
            Just(d),
        )
    })
}

proptest! {
    #[test]
    fn segment_sum_is_permutation_invariant(
        (values, ids, segments, d) in segment_input(40, 6),
        permutation_seed in 0u64..1000,
    ) {
        let rows = ids.len();
        let mut order: Vec<usize> = (0..rows).collect();
        let mut stream = hedra::tensor::rng::StreamKey::new(permutation_seed).stream();
        for i in (1..order.len()).rev() {
            let j = stream.below((i + 1) as u64) as usize;
            order.swap(i, j);
        }
        let permuted_values: Vec<f32> = order
            .iter()
            .flat_map(|&i| values[i * d..(i + 1) * d].to_vec())
            .collect();
        let permuted_ids: Vec<usize> = order.iter().map(|&i| ids[i]).collect();

        let run = |vals: Vec<f32>, ids: &[usize]| -> Vec<f32> {
            let mut tape = Tape::<f32>::new();
            let v = tape.constant(DenseTensor::new(vec![rows, d], vals).unwrap());
            let out = tape.segment_reduce(v, ids, segments, Reduce::Sum).unwrap();
            tape.value(out).values().to_vec()
        };
        prop_assert_eq!(run(values, &ids), run(permuted_values, &permuted_ids));
    }

    #[test]
    fn segment_softmax_rows_normalize(
        (values, ids, segments, d) in segment_input(30, 5),
    ) {
        let rows = ids.len();
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(DenseTensor::new(vec![rows, d], values).unwrap());
        let out = tape.segment_softmax(v, &ids, segments, ).unwrap();
        let result = tape.value(out);
        for &x in result.values() {
            prop_assert!(x >= 0.0);
        }
        let mut sums = vec![vec![0.0f64; d]; segments];
        let mut counts = vec![0usize; segments];
        for (i, &s) in ids.iter().enumerate() {
            counts[s] += 1;
            for j in 0..d {
                sums[s][j] += result.values()[i * d + j] as f64;
            }
        }
        for (s, row) in sums.iter().enumerate() {
            if counts[s] == 0 {
                continue;
            }
            for &total in row {
                prop_assert!((total - 1.0).abs() < 1e-6, "segment sums to {total}");
            }
        }
    }

    #[test]
    fn gather_then_segment_sum_is_incidence_product(
        (values, ids, segments, d) in segment_input(16, 6),
    ) {
        // gather with an index array then sum-reduce with the same array
        // equals multiplication by the implied 0/1 incidence matrix applied
        // twice: out = B^T B x where B[e, ids[e]] = 1.
        prop_assume!(segments <= 16);
        let n = segments;
        let x = values;
        // dense oracle over [n, d] input
        let input: Vec<f32> = x.iter().copied().take(n * d).chain(std::iter::repeat(0.0)).take(n * d).collect();
        let mut want = vec![0.0f64; n * d];
        for &i in &ids {
            for j in 0..d {
                want[i * d + j] += input[i * d + j] as f64;
            }
        }
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(DenseTensor::new(vec![n, d], input).unwrap());
        let gathered = tape.gather_rows(v, &ids).unwrap();
        let pooled = tape.segment_reduce(gathered, &ids, n, Reduce::Sum).unwrap();
        let got = tape.value(pooled).values();
        for (a, b) in got.iter().zip(&want) {
            prop_assert_eq!(*a as f64, *b as f32 as f64);
        }
    }
}

fn graph_strategy() -> impl Strategy<Value = GraphTensor> {
    (1usize..=8, 1usize..=8, 0usize..=12).prop_flat_map(|(n_items, n_users, m)| {
        (
            proptest::collection::vec(0..n_items as i64, m),
            proptest::collection::vec(0..n_users as i64, m),
            proptest::collection::vec(dyadic(), n_items),
            Just(n_items),
            Just(n_users),
        )
            .prop_map(|(source, target, price, n_items, n_users)| {
                let mut item_features = BTreeMap::new();
                item_features.insert(
                    "price".to_string(),
                    Feature::dense(n_items, vec![1], FeatureData::F32(price)).unwrap(),
                );
                let mut node_sets = BTreeMap::new();
                node_sets.insert(
                    "items".to_string(),
                    NodeSet::new(vec![n_items], item_features).unwrap(),
                );
                node_sets.insert(
                    "users".to_string(),
                    NodeSet::new(vec![n_users], BTreeMap::new()).unwrap(),
                );
                let mut edge_sets = BTreeMap::new();
                edge_sets.insert(
                    "purchased".to_string(),
                    EdgeSet::new(
                        vec![source.len()],
                        Adjacency::new("items", "users", source, target).unwrap(),
                        BTreeMap::new(),
                    )
                    .unwrap(),
                );
                GraphTensor::new(BTreeMap::new(), node_sets, edge_sets).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_is_associative_and_sliceable(
        a in graph_strategy(),
        b in graph_strategy(),
        c in graph_strategy(),
    ) {
        let left = GraphTensor::merge_batch(&[
            GraphTensor::merge_batch(&[a.clone(), b.clone()]).unwrap(),
            c.clone(),
        ])
        .unwrap();
        let flat = GraphTensor::merge_batch(&[a.clone(), b.clone(), c.clone()]).unwrap();
        prop_assert_eq!(&left, &flat);
        // per-component slices reproduce the originals exactly
        prop_assert_eq!(flat.component(0).unwrap(), a.clone());
        prop_assert_eq!(flat.component(1).unwrap(), b.clone());
        prop_assert_eq!(flat.component(2).unwrap(), c.clone());
        // inputs are untouched by merging
        let a2 = a.clone();
        let _ = GraphTensor::merge_batch(&[a.clone(), b, c]).unwrap();
        prop_assert_eq!(a, a2);
    }

    #[test]
    fn broadcast_pool_adjoint_identity(
        g in graph_strategy(),
        seed in 0u64..500,
    ) {
        // dot(broadcast(x), y) == dot(x, pool_sum(y))
        let n = g.node_set("items").unwrap().total_size();
        let m = g.edge_set("purchased").unwrap().total_size();
        let mut stream = hedra::tensor::rng::StreamKey::new(seed).stream();
        let d = 2;
        let x_vals: Vec<f32> = (0..n * d).map(|_| (stream.below(1024) as f32 - 512.0) / 16.0).collect();
        let y_vals: Vec<f32> = (0..m * d).map(|_| (stream.below(1024) as f32 - 512.0) / 16.0).collect();

        let mut tape = Tape::<f32>::new();
        let x = tape.constant(DenseTensor::new(vec![n, d], x_vals.clone()).unwrap());
        let y = tape.constant(DenseTensor::new(vec![m, d], y_vals.clone()).unwrap());
        let bx = broadcast_node_to_edges(&mut tape, &g, "purchased", EndpointTag::Source, x.into()).unwrap();
        let py = pool_edges_to_node(&mut tape, &g, "purchased", EndpointTag::Source, Reduce::Sum, y.into()).unwrap();

        let dot = |a: &[f32], b: &[f32]| -> f64 {
            a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum()
        };
        let lhs = dot(tape.value(bx).values(), &y_vals);
        let rhs = dot(&x_vals, tape.value(py).values());
        prop_assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn pool_sum_is_linear(
        g in graph_strategy(),
        seed in 0u64..500,
    ) {
        // pool(a + b) == pool(a) + pool(b), elementwise
        let m = g.edge_set("purchased").unwrap().total_size();
        let mut stream = hedra::tensor::rng::StreamKey::new(seed).label("lin").stream();
        let d = 2;
        let a_vals: Vec<f32> = (0..m * d).map(|_| (stream.below(1024) as f32 - 512.0) / 16.0).collect();
        let b_vals: Vec<f32> = (0..m * d).map(|_| (stream.below(1024) as f32 - 512.0) / 16.0).collect();
        let sum_vals: Vec<f32> = a_vals.iter().zip(&b_vals).map(|(x, y)| x + y).collect();

        let mut tape = Tape::<f32>::new();
        let a = tape.constant(DenseTensor::new(vec![m, d], a_vals).unwrap());
        let b = tape.constant(DenseTensor::new(vec![m, d], b_vals).unwrap());
        let ab = tape.constant(DenseTensor::new(vec![m, d], sum_vals).unwrap());
        let pool = |tape: &mut Tape<f32>, v| {
            pool_edges_to_node(tape, &g, "purchased", EndpointTag::Target, Reduce::Sum, FeatureInput::Value(v)).unwrap()
        };
        let pa = pool(&mut tape, a);
        let pb = pool(&mut tape, b);
        let pab = pool(&mut tape, ab);
        for i in 0..tape.value(pab).len() {
            let lhs = tape.value(pab).values()[i] as f64;
            let rhs = tape.value(pa).values()[i] as f64 + tape.value(pb).values()[i] as f64;
            prop_assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn exchange_respects_component_boundaries(
        a in graph_strategy(),
        b in graph_strategy(),
        seed in 0u64..500,
    ) {
        // randomizing the second component leaves the first component's
        // pooled outputs bitwise unchanged
        let merged = GraphTensor::merge_batch(&[a.clone(), b.clone()]).unwrap();
        let n_users_a = a.node_set("users").unwrap().total_size();
        let m_a = a.edge_set("purchased").unwrap().total_size();
        let m = merged.edge_set("purchased").unwrap().total_size();

        let mut stream = hedra::tensor::rng::StreamKey::new(seed).label("iso").stream();
        let base: Vec<f32> = (0..m).map(|_| stream.uniform(-1.0, 1.0) as f32).collect();
        let mut perturbed = base.clone();
        for v in perturbed.iter_mut().skip(m_a) {
            *v += stream.uniform(1.0, 2.0) as f32;
        }

        let pooled_bits = |values: Vec<f32>| -> Vec<u32> {
            let mut tape = Tape::<f32>::new();
            let v = tape.constant(DenseTensor::new(vec![m, 1], values).unwrap());
            let p = pool_edges_to_node(
                &mut tape,
                &merged,
                "purchased",
                EndpointTag::Target,
                Reduce::Sum,
                FeatureInput::Value(v),
            )
            .unwrap();
            tape.value(p).values()[..n_users_a].iter().map(|x| x.to_bits()).collect()
        };
        prop_assert_eq!(pooled_bits(base), pooled_bits(perturbed));
    }

    #[test]
    fn encode_decode_round_trip(g in graph_strategy()) {
        let schema = parse_schema(
            r#"{
            "node_sets": {
                "items": {"features": {"price": {"dtype": "float32", "shape": [1]}}},
                "users": {"features": {}}
            },
            "edge_sets": {
                "purchased": {"source": "items", "target": "users", "features": {}}
            }}"#,
        )
        .unwrap();
        prop_assert!(validate_graph(&schema, &g).is_empty());
        let fp = schema_fingerprint(&schema);
        let bytes = encode_graph(&g, fp).unwrap();
        let decoded = decode_graph(&bytes, &schema).unwrap();
        prop_assert_eq!(&decoded, &g);
        prop_assert_eq!(encode_graph(&decoded, fp).unwrap(), bytes);
    }
}

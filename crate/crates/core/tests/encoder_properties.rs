mod common;

use flowplan_core::gat::{DualEncoder, GatConfig};
use flowplan_core::geodata::{Edge, LatLon, Tract, TractGraph};
use flowplan_core::numeric::ParamStore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(layers: usize) -> GatConfig {
    GatConfig {
        layers,
        hidden_dim: 8,
        embedding_dim: 4,
        attention_heads: 1,
        distance_scale_km: 2.0,
    }
}

fn encoder(dim: usize, gat: GatConfig, seed: u64) -> (ParamStore, DualEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    let enc = DualEncoder::init(&mut store, dim, gat, &mut rng).unwrap();
    (store, enc)
}

#[test]
fn permutation_equivariance_is_exact() {
    for seed in 0..5 {
        let graph = common::random_graph(25, 3, 4, seed);
        let schema = common::fitted(&graph, &common::schema(&["a", "b", "c"]));
        let (store, enc) = encoder(3, config(2), seed);
        let base = enc.encode(&store, &graph, &schema).unwrap();

        let mut perm: Vec<usize> = (0..25).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 100));
        let permuted = graph.permuted(&perm);
        let out = enc.encode(&store, &permuted, &schema).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(out.origin.row(new), base.origin.row(old));
            assert_eq!(out.destination.row(new), base.destination.row(old));
        }
    }
}

#[test]
fn locality_on_path_graph() {
    for layers in 1..=3 {
        let graph = common::path_graph(9, 2, 7);
        let schema = common::fitted(&graph, &common::schema(&["a", "b"]));
        let (store, enc) = encoder(2, config(layers), 11);
        let base = enc.encode(&store, &graph, &schema).unwrap();
        let t = 4;
        let mut features: Vec<Vec<f64>> = graph.tracts.iter().map(|x| x.features.clone()).collect();
        features[t][0] += 3.0;
        let edited = graph.with_features(features);
        let out = enc.encode(&store, &edited, &schema).unwrap();
        for i in 0..9 {
            let far = (i as isize - t as isize).unsigned_abs() > layers;
            let same = out.origin.row(i) == base.origin.row(i) && out.destination.row(i) == base.destination.row(i);
            if far {
                assert!(same, "layers {layers}: node {i} changed");
            } else {
                assert!(!same, "layers {layers}: node {i} should change");
            }
        }
    }
}

#[test]
fn twin_nodes_share_embeddings() {
    // star: hub c with leaves a, b (twins) and d; a and b have identical
    // features, the same single neighbor and the same edge length
    let step = common::km_step();
    let tracts = vec![
        Tract::new("a", LatLon::new(0.0, -step), vec![1.0, 2.0]),
        Tract::new("b", LatLon::new(0.0, step), vec![1.0, 2.0]),
        Tract::new("c", LatLon::new(0.0, 0.0), vec![3.0, 0.5]),
        Tract::new("d", LatLon::new(step, 0.0), vec![0.0, 4.0]),
    ];
    let edges = [(0, 2), (1, 2), (2, 3)]
        .iter()
        .map(|&(a, b)| Edge {
            a,
            b,
            km: 1.0,
            minutes: None,
        })
        .collect();
    let graph = TractGraph::from_parts(tracts, edges, Default::default(), Default::default()).unwrap();
    let schema = common::fitted(&graph, &common::schema(&["x", "y"]));
    let (store, enc) = encoder(2, config(2), 5);
    let emb = enc.encode(&store, &graph, &schema).unwrap();
    assert_eq!(emb.origin.row(0), emb.origin.row(1));
    assert_eq!(emb.destination.row(0), emb.destination.row(1));
    assert_ne!(emb.origin.row(0), emb.origin.row(3));
}

#[test]
fn attention_rows_are_probability_vectors() {
    let graph = common::random_graph(30, 3, 5, 3);
    let schema = common::fitted(&graph, &common::schema(&["a", "b", "c"]));
    let gat = GatConfig {
        attention_heads: 2,
        ..config(2)
    };
    let (store, enc) = encoder(3, gat, 3);
    for role in [false, true] {
        for layer in 0..2 {
            for node in 0..30 {
                let heads = enc.attention_coefficients(&store, &graph, &schema, role, layer, node).unwrap();
                assert_eq!(heads.len(), 2);
                for weights in heads {
                    assert_eq!(weights.len(), graph.neighbors(node).len() + 1);
                    assert!(weights.iter().any(|&(j, _)| j == node));
                    assert!(weights.iter().all(|&(_, w)| w >= 0.0));
                    let total: f64 = weights.iter().map(|w| w.1).sum();
                    assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn encoding_shapes_and_determinism() {
    let graph = common::random_graph(12, 3, 3, 8);
    let schema = common::fitted(&graph, &common::schema(&["a", "b", "c"]));
    let (store, enc) = encoder(3, config(2), 8);
    let a = enc.encode(&store, &graph, &schema).unwrap();
    let b = enc.encode(&store, &graph, &schema).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.origin.shape(), (12, 4));
    assert_eq!(a.destination.shape(), (12, 4));
    assert!(a.origin.is_finite() && a.destination.is_finite());
    assert_ne!(a.origin, a.destination);
}

#![allow(dead_code)]

//! Finite-difference checks of every tape primitive and of the full
//! encoder-plus-heads loss. Each case panics on failure.

use std::sync::Arc;

use super::common;

use flowplan_core::gat::{feature_matrix, AttentionStructure, DualEncoder, GatConfig};
use flowplan_core::geodata::{IndexedFlow, Split};
use flowplan_core::numeric::{check_gradients, Matrix, ParamStore, Segments, Tape, Var, LEAKY_SLOPE};
use flowplan_core::trainer::{distance_feature, record_loss, Heads, LossInputs, NodeTotals, PairBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Checks `op` by wrapping it in an MSE against a random target.
fn check<F>(name: &str, shapes: &[(usize, usize)], out_shape: (usize, usize), op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| store.insert(format!("p{k}"), random(&mut rng, r, c)))
            .collect();
        let target = Arc::new(random(&mut rng, out_shape.0, out_shape.1));
        let report = check_gradients(&mut store, H, REL, FLOOR, |tape, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            let out = op(tape, &vars);
            tape.mse(out, target.clone())
        });
        assert!(report.passed(), "{name} seed {seed}: {:?}", report.failures);
        assert!(report.checked > 0);
    }
}

pub fn matmul() {
    check("matmul", &[(3, 4), (4, 2)], (3, 2), |t, v| t.matmul(v[0], v[1]));
}

pub fn add() {
    check("add", &[(3, 2), (3, 2)], (3, 2), |t, v| t.add(v[0], v[1]));
}

pub fn add_row_bias() {
    check("add_row_bias", &[(4, 3), (1, 3)], (4, 3), |t, v| t.add_row_bias(v[0], v[1]));
}

pub fn scale() {
    check("scale", &[(2, 3)], (2, 3), |t, v| t.scale(v[0], -1.7));
}

pub fn leaky_relu() {
    check("leaky_relu", &[(5, 3)], (5, 3), |t, v| t.leaky_relu(v[0], LEAKY_SLOPE));
}

pub fn concat_cols() {
    check("concat_cols", &[(3, 2), (3, 1), (3, 3)], (3, 6), |t, v| t.concat_cols(v));
}

pub fn gather_rows() {
    let idx = Arc::new(vec![2, 0, 2, 1]);
    check("gather_rows", &[(3, 2)], (4, 2), move |t, v| t.gather_rows(v[0], idx.clone()));
}

pub fn scale_rows() {
    check("scale_rows", &[(4, 3), (4, 1)], (4, 3), |t, v| t.scale_rows(v[0], v[1]));
}

pub fn segment_softmax() {
    let segs = Arc::new(Segments::from_lengths([3, 1, 2]));
    // softmax outputs are compared against a target so every logit matters
    check("segment_softmax", &[(6, 1)], (6, 1), move |t, v| t.segment_softmax(v[0], segs.clone()));
}

pub fn segment_sum() {
    let segs = Arc::new(Segments::from_lengths([2, 3]));
    check("segment_sum", &[(5, 2)], (2, 2), move |t, v| t.segment_sum(v[0], segs.clone()));
}

pub fn mse() {
    check("mse", &[(4, 2)], (4, 2), |_, v| v[0]);
}

pub fn three_layer_composition() {
    check(
        "three_layer",
        &[(5, 3), (3, 4), (1, 4), (4, 4), (1, 4), (4, 2)],
        (5, 2),
        |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row_bias(h, v[2]);
            let h = t.leaky_relu(h, LEAKY_SLOPE);
            let h = t.matmul(h, v[3]);
            let h = t.add_row_bias(h, v[4]);
            let h = t.leaky_relu(h, LEAKY_SLOPE);
            t.matmul(h, v[5])
        },
    );
}

pub fn encoders_and_heads() {
    for seed in SEEDS {
        let graph = common::random_graph(7, 3, 2, seed);
        let schema = common::fitted(&graph, &common::schema(&["a", "b", "c"]));
        let gat = GatConfig {
            layers: 2,
            hidden_dim: 4,
            embedding_dim: 3,
            attention_heads: 1,
            distance_scale_km: 1.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let encoder = DualEncoder::init(&mut store, 3, gat, &mut rng).unwrap();
        let heads = Heads::init(&mut store, 3, &mut rng);
        // non-zero biases so their gradients are exercised off the initial point
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.value_mut(id).data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let flows: Vec<IndexedFlow> = (0..7)
            .flat_map(|i| (0..7).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| IndexedFlow {
                origin: i,
                destination: j,
                commuters: ((i * 3 + j) % 5) as f64,
                split: Split::Train,
            })
            .collect();
        let totals = NodeTotals::from_flows(7, &flows);
        let features = feature_matrix(&graph, &schema).unwrap();
        let structure = AttentionStructure::new(&graph, gat.distance_scale_km);
        let inputs = LossInputs {
            encoder: &encoder,
            heads,
            features: &features,
            structure: &structure,
            outflow: Arc::new(Matrix::column(totals.outflow.clone())),
            inflow: Arc::new(Matrix::column(totals.inflow.clone())),
            aux_weight_out: 0.5,
            aux_weight_in: 0.5,
        };
        let pairs: Vec<_> = flows.iter().take(12).map(|f| (f.origin, f.destination, f.commuters)).collect();
        let batch = PairBatch::new(&pairs, |i, j| distance_feature(graph.pair_km(i, j), 1.5));
        let report = check_gradients(&mut store, H, REL, FLOOR, |tape, s| record_loss(tape, s, &inputs, &batch).0);
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
    }
}

pub fn multi_head_encoder() {
    for seed in SEEDS {
        let graph = common::random_graph(6, 2, 2, seed + 10);
        let schema = common::fitted(&graph, &common::schema(&["a", "b"]));
        let gat = GatConfig {
            layers: 2,
            hidden_dim: 4,
            embedding_dim: 4,
            attention_heads: 2,
            distance_scale_km: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let encoder = DualEncoder::init(&mut store, 2, gat, &mut rng).unwrap();
        let features = feature_matrix(&graph, &schema).unwrap();
        let structure = AttentionStructure::new(&graph, 1.0);
        let target = Arc::new(random(&mut rng, 6, 4));
        let report = check_gradients(&mut store, H, REL, FLOOR, |tape, s| {
            let (o, d) = encoder.forward(tape, s, &features, &structure);
            let sum = tape.add(o.output, d.output);
            tape.mse(sum, target.clone())
        });
        assert!(report.passed(), "seed {seed}: {:?}", report.failures);
    }
}

/// Every case with its name.
pub const CASES: &[(&str, fn())] = &[
    ("matmul", matmul),
    ("add", add),
    ("add_row_bias", add_row_bias),
    ("scale", scale),
    ("leaky_relu", leaky_relu),
    ("concat_cols", concat_cols),
    ("gather_rows", gather_rows),
    ("scale_rows", scale_rows),
    ("segment_softmax", segment_softmax),
    ("segment_sum", segment_sum),
    ("mse", mse),
    ("three_layer_composition", three_layer_composition),
    ("encoders_and_heads", encoders_and_heads),
    ("multi_head_encoder", multi_head_encoder),
];

use flowplan_core::gbrt::{fit, BoostConfig, TreeNode};
use flowplan_core::numeric::Matrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| (rng.random_range(0.0..10.0f64) * 4.0).round() / 4.0).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r[0] * r[1 % dim] + if r[dim - 1] > 5.0 { 3.0 } else { 0.0 } + rng.random_range(0.0..1.0))
        .collect();
    (rows, y)
}

#[test]
fn refit_after_permutation_is_identical() {
    for seed in 0..4 {
        let (rows, y) = dataset(300, 4, seed);
        let config = BoostConfig {
            rounds: 40,
            ..BoostConfig::default()
        };
        let (a, log_a) = fit(&Matrix::from_rows(&rows), &y, None, &config).unwrap();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 50));
        let prow: Vec<Vec<f64>> = order.iter().map(|&k| rows[k].clone()).collect();
        let py: Vec<f64> = order.iter().map(|&k| y[k]).collect();
        let (b, log_b) = fit(&Matrix::from_rows(&prow), &py, None, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
    }
}

#[test]
fn deep_fit_memorizes_small_set() {
    let (rows, y) = dataset(50, 3, 9);
    let config = BoostConfig {
        rounds: 500,
        max_depth: 10,
        min_samples_leaf: 1,
        learning_rate: 0.1,
        ..BoostConfig::default()
    };
    let x = Matrix::from_rows(&rows);
    let (ens, log) = fit(&x, &y, None, &config).unwrap();
    assert!(*log.train_mse.last().unwrap() < 1e-6, "{}", log.train_mse.last().unwrap());
    for (r, t) in rows.iter().zip(&y) {
        assert!((ens.predict(r).unwrap() - t).abs() < 1e-6);
    }
}

#[test]
fn training_mse_never_increases() {
    let (rows, y) = dataset(400, 5, 3);
    let (_, log) = fit(&Matrix::from_rows(&rows), &y, None, &BoostConfig::default()).unwrap();
    assert!(log.train_mse.len() > 10);
    for w in log.train_mse.windows(2) {
        assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
    }
}

#[test]
fn leaves_partition_and_features_in_range() {
    let (rows, y) = dataset(200, 4, 5);
    let (ens, _) = fit(&Matrix::from_rows(&rows), &y, None, &BoostConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for tree in &ens.trees {
        assert!(tree.max_feature().is_none_or(|f| f < ens.feature_dim));
        let leaves: Vec<usize> = tree.leaves().collect();
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..15.0)).collect();
            // exactly one leaf is reached; count leaves whose root path admits x
            let reached = tree.leaf_index(&x);
            assert!(leaves.contains(&reached));
            assert!(matches!(tree.nodes[reached], TreeNode::Leaf { .. }));
            let admitted = leaves.iter().filter(|&&l| admits(tree, l, &x)).count();
            assert_eq!(admitted, 1);
        }
    }
}

/// Whether `x` satisfies every split condition on the path from the root to `leaf`.
fn admits(tree: &flowplan_core::gbrt::Tree, leaf: usize, x: &[f64]) -> bool {
    fn walk(tree: &flowplan_core::gbrt::Tree, node: usize, leaf: usize, x: &[f64]) -> Option<bool> {
        if node == leaf {
            return Some(true);
        }
        match &tree.nodes[node] {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, threshold, left, right } => {
                if let Some(ok) = walk(tree, *left, leaf, x) {
                    return Some(ok && x[*feature] <= *threshold);
                }
                walk(tree, *right, leaf, x).map(|ok| ok && x[*feature] > *threshold)
            }
        }
    }
    walk(tree, 0, leaf, x).unwrap_or(false)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn predictions_are_nonnegative(seed in 0u64..1000) {
        let (rows, mut y) = dataset(60, 2, seed);
        for v in y.iter_mut() {
            *v -= 20.0;
        }
        let (ens, _) = fit(&Matrix::from_rows(&rows), &y, None, &BoostConfig { rounds: 20, ..BoostConfig::default() }).unwrap();
        for r in &rows {
            prop_assert!(ens.predict(r).unwrap() >= 0.0);
            prop_assert!(ens.predict(r).unwrap() == ens.predict_raw(r).unwrap().max(0.0));
        }
    }
}

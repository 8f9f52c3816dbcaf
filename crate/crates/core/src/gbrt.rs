//! Gradient-boosted regression trees with squared-error loss.
//!
//! Each round fits a depth-limited tree to the current residuals. Splits are
//! exact: every boundary between distinct sorted feature values is scored by
//! variance reduction, `sL^2/nL + sR^2/nR - s^2/n`.
//!
//! Determinism: training rows are first put into a canonical order
//! (lexicographic on features, then target), so any permutation of the input
//! rows yields the same ensemble bit for bit. Among equal gains the smallest
//! feature index wins, then the smallest threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Matrix;

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoostError {
    #[error("need at least {needed} training rows, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("feature dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("travel distance must be positive and finite, found {0}")]
    InvalidDistance(f64),
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("invalid boosting config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Stop after this many rounds without validation improvement and keep the
    /// best round. 0 keeps every round; validation MSE is still logged.
    pub early_stopping_rounds: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rounds: 300,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_leaf: 5,
            early_stopping_rounds: 25,
        }
    }
}

impl BoostConfig {
    fn validate(&self) -> Result<(), BoostError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(BoostError::InvalidConfig("learning_rate must be in (0, 1]".into()));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(BoostError::InvalidConfig(
                "max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `[origin embedding | destination embedding | distance_km]`.
pub fn make_features(origin: &[f64], destination: &[f64], km: f64) -> Result<Vec<f64>, BoostError> {
    if origin.len() != destination.len() {
        return Err(BoostError::DimensionMismatch {
            expected: origin.len(),
            found: destination.len(),
        });
    }
    if !(km.is_finite() && km > 0.0) {
        return Err(BoostError::InvalidDistance(km));
    }
    let mut v = Vec::with_capacity(2 * origin.len() + 1);
    v.extend_from_slice(origin);
    v.extend_from_slice(destination);
    v.push(km);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Binary regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { .. } => return k,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, TreeNode::Leaf { .. }))
            .map(|(k, _)| k)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }
}

/// Fitted ensemble: `base_score + learning_rate * sum(tree leaf values)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub feature_dim: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    /// Clamp predictions at 0 (commuter counts cannot be negative).
    pub clamp_nonnegative: bool,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, BoostError> {
        if x.len() != self.feature_dim {
            return Err(BoostError::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.value(x)).sum();
        Ok(self.base_score + self.learning_rate * sum)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, BoostError> {
        let raw = self.predict_raw(x)?;
        Ok(if self.clamp_nonnegative { raw.max(0.0) } else { raw })
    }

    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<f64>, BoostError> {
        (0..x.rows()).map(|r| self.predict(x.row(r))).collect()
    }
}

/// Per-round training history; index 0 is the base score alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Number of trees kept.
    pub best_round: usize,
    pub stopped_early: bool,
}

/// Fits a boosted ensemble on `features` (one row per sample).
///
/// With a validation set, boosting stops once validation MSE has not improved
/// for `early_stopping_rounds` rounds and the ensemble is cut back to the best round.
pub fn fit(
    features: &Matrix,
    targets: &[f64],
    validation: Option<(&Matrix, &[f64])>,
    config: &BoostConfig,
) -> Result<(TreeEnsemble, FitLog), BoostError> {
    config.validate()?;
    let n = features.rows();
    assert_eq!(n, targets.len(), "feature/target row mismatch");
    let needed = 2 * config.min_samples_leaf;
    if n < needed {
        return Err(BoostError::InsufficientData { needed, found: n });
    }
    if !features.is_finite() || targets.iter().any(|t| !t.is_finite()) {
        return Err(BoostError::NonFinite);
    }
    let dim = features.cols();
    if let Some((vx, vy)) = validation {
        if vx.cols() != dim {
            return Err(BoostError::DimensionMismatch {
                expected: dim,
                found: vx.cols(),
            });
        }
        assert_eq!(vx.rows(), vy.len(), "validation row mismatch");
    }

    let order = canonical_order(features, targets);
    let x = features.select_rows(&order);
    let y: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
    let sorted = presort(&x);

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut ensemble = TreeEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        feature_dim: dim,
        base_score,
        learning_rate: config.learning_rate,
        clamp_nonnegative: true,
        trees: Vec::new(),
    };
    let mut pred = vec![base_score; n];
    let mut val_pred: Option<Vec<f64>> = validation.map(|(vx, _)| vec![base_score; vx.rows()]);
    let mut log = FitLog {
        train_mse: vec![mse(&pred, &y)],
        val_mse: Vec::new(),
        best_round: 0,
        stopped_early: false,
    };
    if let (Some((_, vy)), Some(vp)) = (validation, &val_pred) {
        log.val_mse.push(mse(vp, vy));
    }
    let mut best_val = log.val_mse.first().copied().unwrap_or(f64::INFINITY);
    let mut since_best = 0;

    for _ in 0..config.rounds {
        let residuals: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let Some(tree) = grow_tree(&x, &residuals, &sorted, config) else {
            break;
        };
        for (r, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.value(x.row(r));
        }
        log.train_mse.push(mse(&pred, &y));
        if let (Some((vx, vy)), Some(vp)) = (validation, val_pred.as_mut()) {
            for (r, p) in vp.iter_mut().enumerate() {
                *p += config.learning_rate * tree.value(vx.row(r));
            }
            let v = mse(vp, vy);
            log.val_mse.push(v);
            ensemble.trees.push(tree);
            if config.early_stopping_rounds == 0 {
                log.best_round = ensemble.trees.len();
            } else if v < best_val {
                best_val = v;
                since_best = 0;
                log.best_round = ensemble.trees.len();
            } else {
                since_best += 1;
                if since_best >= config.early_stopping_rounds {
                    log.stopped_early = true;
                    break;
                }
            }
        } else {
            ensemble.trees.push(tree);
            log.best_round = ensemble.trees.len();
        }
    }

    ensemble.trees.truncate(log.best_round);
    log.train_mse.truncate(log.best_round + 1);
    Ok((ensemble, log))
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn canonical_order(x: &Matrix, y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| lexicographic(x.row(a), x.row(b)).then_with(|| y[a].total_cmp(&y[b])));
    order
}

/// Row indices sorted by each feature (ties by row index).
fn presort(x: &Matrix) -> Vec<Vec<u32>> {
    (0..x.cols())
        .map(|f| {
            let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
            idx.sort_by(|&a, &b| {
                x.get(a as usize, f)
                    .total_cmp(&x.get(b as usize, f))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node scan state while sweeping one feature.
#[derive(Clone, Copy, Default)]
struct Sweep {
    count: usize,
    sum: f64,
    last: f64,
}

const UNASSIGNED: usize = usize::MAX;
/// Gains below this fraction of the node's sum of squared residuals are noise.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

/// Grows one tree level by level; `None` when the root admits no useful split.
fn grow_tree(x: &Matrix, residuals: &[f64], sorted: &[Vec<u32>], config: &BoostConfig) -> Option<Tree> {
    let n = x.rows();
    let min_leaf = config.min_samples_leaf;
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];

    for _depth in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        let node_count = nodes.len();
        let mut count = vec![0usize; node_count];
        let mut total = vec![0.0f64; node_count];
        let mut squares = vec![0.0f64; node_count];
        let mut active = vec![false; node_count];
        for &k in &frontier {
            active[k] = true;
        }
        for r in 0..n {
            let k = node_of[r];
            if k != UNASSIGNED && active[k] {
                count[k] += 1;
                total[k] += residuals[r];
                squares[k] += residuals[r] * residuals[r];
            }
        }
        for &k in &frontier {
            if count[k] < 2 * min_leaf {
                active[k] = false;
            }
        }

        let mut best: Vec<Option<Candidate>> = vec![None; node_count];
        let mut sweep = vec![Sweep::default(); node_count];
        for (f, order) in sorted.iter().enumerate() {
            for &k in &frontier {
                sweep[k] = Sweep::default();
            }
            for &r in order {
                let r = r as usize;
                let k = node_of[r];
                if k == UNASSIGNED || !active[k] {
                    continue;
                }
                let v = x.get(r, f);
                let s = &mut sweep[k];
                if s.count >= min_leaf && v > s.last && count[k] - s.count >= min_leaf {
                    let nl = s.count as f64;
                    let nr = (count[k] - s.count) as f64;
                    let sr = total[k] - s.sum;
                    let gain = s.sum * s.sum / nl + sr * sr / nr - total[k] * total[k] / count[k] as f64;
                    if best[k].is_none_or(|b| gain > b.gain) {
                        let mut threshold = 0.5 * (s.last + v);
                        if threshold >= v {
                            threshold = s.last;
                        }
                        best[k] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                s.count += 1;
                s.sum += residuals[r];
                s.last = v;
            }
        }

        let mut next = Vec::new();
        let mut split_into: Vec<Option<(usize, usize, usize, f64)>> = vec![None; node_count];
        for &k in &frontier {
            if !active[k] {
                continue;
            }
            let Some(c) = best[k] else { continue };
            if !(c.gain > MIN_RELATIVE_GAIN * squares[k]) || c.gain <= 0.0 {
                continue;
            }
            let left = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[k] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
            };
            split_into[k] = Some((left, left + 1, c.feature, c.threshold));
            next.push(left);
            next.push(left + 1);
        }
        if nodes.len() == 1 {
            return None;
        }
        for (r, k) in node_of.iter_mut().enumerate() {
            if *k == UNASSIGNED {
                continue;
            }
            if let Some((l, rt, f, t)) = split_into[*k] {
                *k = if x.get(r, f) <= t { l } else { rt };
            }
        }
        frontier = next;
    }
    if nodes.len() == 1 {
        return None;
    }

    let mut sums = vec![0.0; nodes.len()];
    let mut counts = vec![0usize; nodes.len()];
    for r in 0..n {
        let k = node_of[r];
        sums[k] += residuals[r];
        counts[k] += 1;
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            *value = if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
        }
    }
    Some(Tree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feature_layout() {
        assert_eq!(
            make_features(&[1.0, 2.0], &[3.0, 4.0], 5.0).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0]
        );
        assert_eq!(make_features(&[0.0; 3], &[0.0; 3], 2.5).unwrap()[6], 2.5);
        assert_eq!(
            make_features(&[1.0], &[2.0], 0.0).unwrap_err(),
            BoostError::InvalidDistance(0.0)
        );
        assert!(matches!(
            make_features(&[1.0], &[2.0, 3.0], 1.0),
            Err(BoostError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_targets_need_no_trees() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let y = vec![3.3; 20];
        let (ens, log) = fit(&x, &y, None, &BoostConfig::default()).unwrap();
        assert!(ens.trees.is_empty());
        assert!(log.train_mse[0] < 1e-20);
        assert_eq!(ens.predict(&[100.0]).unwrap(), ens.base_score);
    }

    #[test]
    fn step_function_depth_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.5 { 1.0 } else { 0.0 }).collect();
        let x = Matrix::from_rows(&rows);
        let config = BoostConfig {
            rounds: 50,
            max_depth: 1,
            ..BoostConfig::default()
        };
        let (ens, log) = fit(&x, &y, None, &config).unwrap();
        assert!(*log.train_mse.last().unwrap() < 1e-3);
        // every stump splits on feature 0 between the two classes
        for t in &ens.trees {
            assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, .. }));
        }
    }

    #[test]
    fn insufficient_rows() {
        let x = Matrix::zeros(9, 1);
        assert_eq!(
            fit(&x, &[0.0; 9], None, &BoostConfig::default()).unwrap_err(),
            BoostError::InsufficientData { needed: 10, found: 9 }
        );
    }

    #[test]
    fn empty_ensemble_predicts_base_and_clamps() {
        let ens = TreeEnsemble {
            format_version: ENSEMBLE_FORMAT_VERSION,
            feature_dim: 2,
            base_score: -0.3,
            learning_rate: 0.1,
            clamp_nonnegative: true,
            trees: vec![],
        };
        assert_eq!(ens.predict_raw(&[1.0, 2.0]).unwrap(), -0.3);
        assert_eq!(ens.predict(&[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(ens.predict(&[1.0]), Err(BoostError::DimensionMismatch { .. })));
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // two identical columns: the split must use feature 0
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 5.0 }).collect();
        let config = BoostConfig {
            rounds: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            ..BoostConfig::default()
        };
        let (ens, _) = fit(&Matrix::from_rows(&rows), &y, None, &config).unwrap();
        assert_eq!(
            ens.trees[0].nodes[0],
            TreeNode::Split {
                feature: 0,
                threshold: 9.5,
                left: 1,
                right: 2
            }
        );
    }

    #[test]
    fn early_stopping_cuts_back_to_best_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>()]).collect();
        // pure noise: validation stops improving quickly
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let vrows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>()]).collect();
        let vy: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let config = BoostConfig {
            rounds: 500,
            early_stopping_rounds: 5,
            ..BoostConfig::default()
        };
        let vx = Matrix::from_rows(&vrows);
        let (ens, log) = fit(&Matrix::from_rows(&rows), &y, Some((&vx, &vy)), &config).unwrap();
        assert!(log.stopped_early);
        assert_eq!(ens.trees.len(), log.best_round);
        let best = log.val_mse.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(log.val_mse[log.best_round], best);
    }

    #[test]
    fn zero_patience_keeps_every_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let vy: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let vx = Matrix::from_rows(&(0..50).map(|_| vec![rng.random::<f64>()]).collect::<Vec<_>>());
        let config = BoostConfig {
            rounds: 40,
            early_stopping_rounds: 0,
            ..BoostConfig::default()
        };
        let (ens, log) = fit(&Matrix::from_rows(&rows), &y, Some((&vx, &vy)), &config).unwrap();
        assert_eq!(ens.trees.len(), 40);
        assert_eq!(log.best_round, 40);
        assert_eq!(log.val_mse.len(), 41);
        assert!(!log.stopped_early);
    }
}

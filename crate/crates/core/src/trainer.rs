//! End-to-end training of the dual encoders with a flow head plus auxiliary
//! outflow/inflow heads.
//!
//! Loss per step: `MSE_flow + w_out * MSE_outflow + w_in * MSE_inflow`. The flow
//! MSE covers the mini-batch of observed train pairs; the auxiliary MSEs cover
//! every tract against its train-split totals.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gat::{feature_matrix, AttentionStructure, DualEncoder, EmbeddingSet, GatConfig, GatError};
use crate::geodata::{FeatureSchema, IndexedFlow, Split, TractGraph};
use crate::numeric::{dot, Matrix, NumericError, Optimizer, ParamId, ParamStore, Tape, Var};

pub const FLOW_HEAD: &str = "flow_head";
pub const OUTFLOW_HEAD: &str = "outflow_head";
pub const INFLOW_HEAD: &str = "inflow_head";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss not finite twice in a row")]
    Diverged { epoch: usize },
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// OD pairs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub aux_weight_in: f64,
    pub aux_weight_out: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    /// Train on `ln(1 + count)` instead of raw counts.
    pub log1p_targets: bool,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 0.01,
            aux_weight_in: 0.5,
            aux_weight_out: 0.5,
            patience: 10,
            seed: 0,
            optimizer: Optimizer::default(),
            weight_decay: 0.0,
            log1p_targets: false,
            clip_grad_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch_size and patience must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.aux_weight_in >= 0.0 && self.aux_weight_out >= 0.0) {
            return bad("auxiliary weights must be non-negative");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_grad_norm must be positive");
        }
        Ok(())
    }

    fn target(&self, commuters: f64) -> f64 {
        if self.log1p_targets {
            commuters.ln_1p()
        } else {
            commuters
        }
    }
}

/// Per-tract commuter totals over the train split.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTotals {
    pub outflow: Vec<f64>,
    pub inflow: Vec<f64>,
}

impl NodeTotals {
    pub fn from_flows(n_tracts: usize, flows: &[IndexedFlow]) -> Self {
        let mut outflow = vec![0.0; n_tracts];
        let mut inflow = vec![0.0; n_tracts];
        for f in flows.iter().filter(|f| f.split == Split::Train) {
            outflow[f.origin] += f.commuters;
            inflow[f.destination] += f.commuters;
        }
        Self { outflow, inflow }
    }
}

/// Distance input of the flow head.
pub fn distance_feature(km: f64, scale_km: f64) -> f64 {
    (-km / scale_km).exp()
}

/// Affine training-time head over `[e_o | e_d | exp(-d / scale)]`.
pub fn training_flow_head(weight: &[f64], bias: f64, origin: &[f64], destination: &[f64], decay: f64) -> f64 {
    let m = origin.len();
    assert_eq!(weight.len(), 2 * m + 1, "flow head weight length");
    bias + dot(&weight[..m], origin) + dot(&weight[m..2 * m], destination) + weight[2 * m] * decay
}

/// Weighted multitask objective from precomputed predictions.
pub fn multitask_loss(
    flow: (&[f64], &[f64]),
    outflow: (&[f64], &[f64]),
    inflow: (&[f64], &[f64]),
    aux_weight_out: f64,
    aux_weight_in: f64,
) -> Result<f64, NumericError> {
    let mse = |(p, t): (&[f64], &[f64])| {
        assert_eq!(p.len(), t.len());
        if p.is_empty() {
            return 0.0;
        }
        p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
    };
    let loss = mse(flow) + aux_weight_out * mse(outflow) + aux_weight_in * mse(inflow);
    if !loss.is_finite() {
        return Err(NumericError::NonFiniteLoss(loss));
    }
    Ok(loss)
}

/// Parameter handles for the three heads.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub flow_weight: ParamId,
    pub flow_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub in_weight: ParamId,
    pub in_bias: ParamId,
}

impl Heads {
    pub fn init<R: rand::Rng>(store: &mut ParamStore, embedding_dim: usize, rng: &mut R) -> Self {
        let m = embedding_dim;
        Self {
            flow_weight: store.insert_glorot(format!("{FLOW_HEAD}.weight"), 2 * m + 1, 1, rng),
            flow_bias: store.insert(format!("{FLOW_HEAD}.bias"), Matrix::zeros(1, 1)),
            out_weight: store.insert_glorot(format!("{OUTFLOW_HEAD}.weight"), m, 1, rng),
            out_bias: store.insert(format!("{OUTFLOW_HEAD}.bias"), Matrix::zeros(1, 1)),
            in_weight: store.insert_glorot(format!("{INFLOW_HEAD}.weight"), m, 1, rng),
            in_bias: store.insert(format!("{INFLOW_HEAD}.bias"), Matrix::zeros(1, 1)),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self, NumericError> {
        let get = |name: String| store.id(&name).ok_or(NumericError::MissingParam(name));
        Ok(Self {
            flow_weight: get(format!("{FLOW_HEAD}.weight"))?,
            flow_bias: get(format!("{FLOW_HEAD}.bias"))?,
            out_weight: get(format!("{OUTFLOW_HEAD}.weight"))?,
            out_bias: get(format!("{OUTFLOW_HEAD}.bias"))?,
            in_weight: get(format!("{INFLOW_HEAD}.weight"))?,
            in_bias: get(format!("{INFLOW_HEAD}.bias"))?,
        })
    }

    /// Flow head on frozen embeddings.
    pub fn predict_flow(&self, store: &ParamStore, emb: &EmbeddingSet, i: usize, j: usize, decay: f64) -> f64 {
        training_flow_head(
            store.value(self.flow_weight).data(),
            store.value(self.flow_bias).get(0, 0),
            emb.origin.row(i),
            emb.destination.row(j),
            decay,
        )
    }
}

/// Pairs and targets of one loss evaluation.
pub struct PairBatch {
    pub origins: Arc<Vec<usize>>,
    pub destinations: Arc<Vec<usize>>,
    /// Distance-decay feature per pair, one row each.
    pub decay: Matrix,
    pub targets: Arc<Matrix>,
}

impl PairBatch {
    pub fn new(pairs: &[(usize, usize, f64)], decay_of: impl Fn(usize, usize) -> f64) -> Self {
        Self {
            origins: Arc::new(pairs.iter().map(|p| p.0).collect()),
            destinations: Arc::new(pairs.iter().map(|p| p.1).collect()),
            decay: Matrix::column(pairs.iter().map(|p| decay_of(p.0, p.1)).collect()),
            targets: Arc::new(Matrix::column(pairs.iter().map(|p| p.2).collect())),
        }
    }
}

/// Everything a loss evaluation needs besides parameters.
pub struct LossInputs<'a> {
    pub encoder: &'a DualEncoder,
    pub heads: Heads,
    pub features: &'a Matrix,
    pub structure: &'a AttentionStructure,
    pub outflow: Arc<Matrix>,
    pub inflow: Arc<Matrix>,
    pub aux_weight_out: f64,
    pub aux_weight_in: f64,
}

/// Records the multitask loss; returns `(total, flow_mse)` nodes.
pub fn record_loss(tape: &mut Tape, store: &ParamStore, inputs: &LossInputs, batch: &PairBatch) -> (Var, Var) {
    let (o, d) = inputs
        .encoder
        .forward(tape, store, inputs.features, inputs.structure);
    let h = inputs.heads;
    let eo = tape.gather_rows(o.output, batch.origins.clone());
    let ed = tape.gather_rows(d.output, batch.destinations.clone());
    let decay = tape.input(batch.decay.clone());
    let x = tape.concat_cols(&[eo, ed, decay]);
    let w = tape.param(store, h.flow_weight);
    let b = tape.param(store, h.flow_bias);
    let pred = tape.matmul(x, w);
    let pred = tape.add_row_bias(pred, b);
    let flow = tape.mse(pred, batch.targets.clone());

    let aux = |tape: &mut Tape, emb: Var, weight: ParamId, bias: ParamId, target: Arc<Matrix>| {
        let w = tape.param(store, weight);
        let b = tape.param(store, bias);
        let p = tape.matmul(emb, w);
        let p = tape.add_row_bias(p, b);
        tape.mse(p, target)
    };
    let out = aux(tape, o.output, h.out_weight, h.out_bias, inputs.outflow.clone());
    let inn = aux(tape, d.output, h.in_weight, h.in_bias, inputs.inflow.clone());
    let out = tape.scale(out, inputs.aux_weight_out);
    let inn = tape.scale(inn, inputs.aux_weight_in);
    let total = tape.add(flow, out);
    let total = tape.add(total, inn);
    (total, flow)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    /// `epoch,train_loss,val_loss,lr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        out
    }
}

/// Trained encoder state.
#[derive(Clone, Debug)]
pub struct TrainedEncoders {
    pub store: ParamStore,
    pub encoder: DualEncoder,
    pub heads: Heads,
    pub log: TrainLog,
}

impl TrainedEncoders {
    pub fn encode(&self, graph: &TractGraph, schema: &FeatureSchema) -> Result<EmbeddingSet, GatError> {
        self.encoder.encode(&self.store, graph, schema)
    }
}

/// Trains both encoders and the heads. `schema` must already carry the
/// normalization statistics. Returns the parameters of the epoch with the lowest
/// validation flow MSE (train flow MSE when the validation split is empty).
pub fn train(
    graph: &TractGraph,
    schema: &FeatureSchema,
    flows: &[IndexedFlow],
    gat: GatConfig,
    config: &TrainConfig,
) -> Result<TrainedEncoders, TrainError> {
    config.validate()?;
    gat.validate()?;
    let n = graph.len();
    let pairs_of = |split: Split| -> Vec<(usize, usize, f64)> {
        flows
            .iter()
            .filter(|f| f.split == split)
            .map(|f| (f.origin, f.destination, config.target(f.commuters)))
            .collect()
    };
    let train_pairs = pairs_of(Split::Train);
    if train_pairs.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let val_pairs = pairs_of(Split::Val);

    let totals = NodeTotals::from_flows(n, flows);
    let outflow = Arc::new(Matrix::column(totals.outflow.iter().map(|&t| config.target(t)).collect()));
    let inflow = Arc::new(Matrix::column(totals.inflow.iter().map(|&t| config.target(t)).collect()));

    let features = feature_matrix(graph, schema)?;
    let structure = AttentionStructure::new(graph, gat.distance_scale_km);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new(config.seed);
    let encoder = DualEncoder::init(&mut store, schema.len(), gat, &mut rng)?;
    let heads = Heads::init(&mut store, gat.embedding_dim, &mut rng);

    let inputs = LossInputs {
        encoder: &encoder,
        heads,
        features: &features,
        structure: &structure,
        outflow,
        inflow,
        aux_weight_out: config.aux_weight_out,
        aux_weight_in: config.aux_weight_in,
    };
    let decay = |i: usize, j: usize| distance_feature(graph.pair_km(i, j), gat.distance_scale_km);
    let full_train = PairBatch::new(&train_pairs, decay);
    let selection = if val_pairs.is_empty() {
        PairBatch::new(&train_pairs, decay)
    } else {
        PairBatch::new(&val_pairs, decay)
    };

    let evaluate = |store: &ParamStore| -> (f64, f64) {
        let mut tape = Tape::new();
        let (total, _) = record_loss(&mut tape, store, &inputs, &full_train);
        let train_loss = tape.value(total).get(0, 0);
        let mut tape = Tape::new();
        let (_, flow) = record_loss(&mut tape, store, &inputs, &selection);
        (train_loss, tape.value(flow).get(0, 0))
    };

    let mut lr = config.lr;
    let (train0, val0) = evaluate(&store);
    let mut log = TrainLog {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss: train0,
            val_loss: val0,
            lr,
        }],
        best_epoch: 0,
    };
    let mut best_store = store.clone();
    let mut best_val = if val0.is_finite() { val0 } else { f64::INFINITY };
    let mut since_best = 0;
    let mut consecutive_bad = 0;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch_pairs: Vec<(usize, usize, f64)> = chunk.iter().map(|&k| train_pairs[k]).collect();
            let batch = PairBatch::new(&batch_pairs, decay);
            let result = crate::numeric::forward_backward(&mut store, |tape, s| {
                record_loss(tape, s, &inputs, &batch).0
            });
            match result {
                Ok(loss) if store.grads_finite() => {
                    consecutive_bad = 0;
                    if let Some(max_norm) = config.clip_grad_norm {
                        let norm = store.grad_norm();
                        if norm > max_norm {
                            store.scale_grads(max_norm / norm);
                        }
                    }
                    config.optimizer.step(&mut store, lr, config.weight_decay);
                    loss_sum += loss;
                    steps += 1;
                }
                _ => {
                    store.zero_grads();
                    consecutive_bad += 1;
                    if consecutive_bad >= 2 {
                        return Err(TrainError::Diverged { epoch });
                    }
                    lr *= 0.5;
                }
            }
        }
        let (_, val_loss) = evaluate(&store);
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let train_loss = if steps > 0 { loss_sum / steps as f64 } else { f64::NAN };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_store.copy_values_from(&store);
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let mut store = best_store;
    store.zero_grads();
    Ok(TrainedEncoders {
        store,
        encoder,
        heads,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_graph, AdjacencyPolicy, Category, DistanceSource, LatLon, Tract};
    use approx::assert_abs_diff_eq;

    fn line_graph(n: usize) -> (TractGraph, FeatureSchema) {
        let tracts = (0..n)
            .map(|i| {
                Tract::new(
                    format!("t{i:02}"),
                    LatLon::new(0.0, i as f64 * 0.01),
                    vec![i as f64, (i % 3) as f64],
                )
            })
            .collect();
        let graph = build_graph(tracts, AdjacencyPolicy::KNearest { k: 2 }, DistanceSource::GreatCircle).unwrap();
        let mut schema = FeatureSchema::from_names(&["a", "b"], Category::LandUse).unwrap();
        let rows: Vec<&[f64]> = graph.tracts.iter().map(|t| t.features.as_slice()).collect();
        schema.fit_normalization(&rows);
        (graph, schema)
    }

    fn small_gat() -> GatConfig {
        GatConfig {
            layers: 2,
            hidden_dim: 8,
            embedding_dim: 4,
            attention_heads: 1,
            distance_scale_km: 5.0,
        }
    }

    fn flows(n: usize, value: impl Fn(usize, usize) -> f64) -> Vec<IndexedFlow> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let split = match (i + j) % 5 {
                        0 => Split::Val,
                        1 => Split::Test,
                        _ => Split::Train,
                    };
                    out.push(IndexedFlow {
                        origin: i,
                        destination: j,
                        commuters: value(i, j),
                        split,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn head_zero_weights_give_bias() {
        assert_eq!(training_flow_head(&[0.0; 5], 1.25, &[3.0, 4.0], &[5.0, 6.0], 0.3), 1.25);
    }

    #[test]
    fn head_dead_distance_input() {
        let w = [0.5, -1.0, 2.0, 0.25, 0.0];
        let a = training_flow_head(&w, 0.1, &[1.0, 2.0], &[3.0, 4.0], 0.4);
        let b = training_flow_head(&w, 0.1, &[1.0, 2.0], &[3.0, 4.0], 0.8);
        assert_eq!(a, b);
    }

    #[test]
    fn head_by_hand() {
        // 0.1 + 0.01*1 + 0.02*2 + 0.03*3 + 0.04*4 + 0.05*exp(-1)
        let w = [0.01, 0.02, 0.03, 0.04, 0.05];
        let decay = distance_feature(5.0, 5.0);
        let expected = 0.1 + 0.01 + 0.04 + 0.09 + 0.16 + 0.05 * (-1.0f64).exp();
        assert_abs_diff_eq!(training_flow_head(&w, 0.1, &[1.0, 2.0], &[3.0, 4.0], decay), expected, epsilon = 1e-15);
    }

    #[test]
    fn loss_arithmetic() {
        assert_eq!(
            multitask_loss((&[1.0, 2.0], &[1.0, 2.0]), (&[3.0], &[3.0]), (&[4.0], &[4.0]), 0.5, 0.5).unwrap(),
            0.0
        );
        let flow = multitask_loss((&[1.0, 4.0], &[2.0, 2.0]), (&[0.0], &[9.0]), (&[0.0], &[9.0]), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(flow, 2.5, epsilon = 1e-15);
        // flow (1 + 4)/2 = 2.5; out (4 + 0)/2 = 2; in 9
        let loss = multitask_loss(
            (&[1.0, 4.0], &[2.0, 2.0]),
            (&[1.0, 5.0], &[3.0, 5.0]),
            (&[3.0], &[0.0]),
            0.5,
            0.25,
        )
        .unwrap();
        assert_abs_diff_eq!(loss, 2.5 + 0.5 * 2.0 + 0.25 * 9.0, epsilon = 1e-15);
        assert!(multitask_loss((&[f64::NAN], &[0.0]), (&[], &[]), (&[], &[]), 0.5, 0.5).is_err());
    }

    #[test]
    fn totals_use_train_split_only() {
        let f = flows(4, |i, j| (i * 4 + j) as f64);
        let totals = NodeTotals::from_flows(4, &f);
        let mut out = [0.0; 4];
        let mut inn = [0.0; 4];
        for x in f.iter().filter(|x| x.split == Split::Train) {
            out[x.origin] += x.commuters;
            inn[x.destination] += x.commuters;
        }
        assert_eq!(totals.outflow, out);
        assert_eq!(totals.inflow, inn);
        assert_eq!(totals.outflow.iter().sum::<f64>(), totals.inflow.iter().sum::<f64>());
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let (graph, schema) = line_graph(5);
        let f = flows(5, |i, j| (i + 2 * j) as f64);
        let gat = small_gat();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new(3);
        let encoder = DualEncoder::init(&mut store, 2, gat, &mut rng).unwrap();
        let heads = Heads::init(&mut store, gat.embedding_dim, &mut rng);
        let totals = NodeTotals::from_flows(5, &f);
        let features = feature_matrix(&graph, &schema).unwrap();
        let structure = AttentionStructure::new(&graph, 5.0);
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
        let pairs: Vec<_> = f.iter().take(6).map(|x| (x.origin, x.destination, x.commuters)).collect();
        let decay = |i, j| distance_feature(graph.pair_km(i, j), 5.0);
        let batch = PairBatch::new(&pairs, decay);
        let mut tape = Tape::new();
        let (total, _) = record_loss(&mut tape, &store, &inputs, &batch);

        let emb = encoder.encode(&store, &graph, &schema).unwrap();
        let pred: Vec<f64> = pairs
            .iter()
            .map(|&(i, j, _)| heads.predict_flow(&store, &emb, i, j, decay(i, j)))
            .collect();
        let target: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let lin = |w: ParamId, b: ParamId, e: &Matrix| -> Vec<f64> {
            (0..e.rows())
                .map(|r| dot(store.value(w).data(), e.row(r)) + store.value(b).get(0, 0))
                .collect()
        };
        let out = lin(heads.out_weight, heads.out_bias, &emb.origin);
        let inn = lin(heads.in_weight, heads.in_bias, &emb.destination);
        let plain = multitask_loss(
            (&pred, &target),
            (&out, &totals.outflow),
            (&inn, &totals.inflow),
            0.5,
            0.5,
        )
        .unwrap();
        assert_abs_diff_eq!(tape.value(total).get(0, 0), plain, epsilon = 1e-9 * plain.max(1.0));
    }

    #[test]
    fn zero_aux_weights_give_zero_aux_gradients() {
        let (graph, schema) = line_graph(5);
        let f = flows(5, |i, j| (i + j) as f64);
        let config = TrainConfig {
            epochs: 1,
            aux_weight_in: 0.0,
            aux_weight_out: 0.0,
            seed: 2,
            ..TrainConfig::default()
        };
        let trained = train(&graph, &schema, &f, small_gat(), &config).unwrap();
        // aux heads never receive a gradient, so they keep their initial values
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut fresh = ParamStore::new(2);
        DualEncoder::init(&mut fresh, 2, small_gat(), &mut rng).unwrap();
        Heads::init(&mut fresh, 4, &mut rng);
        let h = trained.heads;
        for id in [h.out_weight, h.out_bias, h.in_weight, h.in_bias] {
            let name = trained.store.name(id);
            assert_eq!(trained.store.value(id), fresh.value(fresh.id(name).unwrap()), "{name}");
        }
    }

    #[test]
    fn zero_targets_are_learned() {
        let (graph, schema) = line_graph(6);
        let f = flows(6, |_, _| 0.0);
        let config = TrainConfig {
            epochs: 50,
            batch_size: 4,
            lr: 0.02,
            optimizer: Optimizer::Sgd { momentum: Some(0.9) },
            seed: 1,
            ..TrainConfig::default()
        };
        let trained = train(&graph, &schema, &f, small_gat(), &config).unwrap();
        assert!(trained.log.best_val_loss() < 1e-3, "{}", trained.log.to_csv());
    }

    #[test]
    fn training_is_deterministic_and_selects_best_epoch() {
        let (graph, schema) = line_graph(6);
        let f = flows(6, |i, j| 1.0 + (i * j) as f64 * 0.5);
        let config = TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 0.02,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&graph, &schema, &f, small_gat(), &config).unwrap();
        let b = train(&graph, &schema, &f, small_gat(), &config).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.store.to_segment(), b.store.to_segment());
        let min = a.log.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.log.best_val_loss(), min);
        assert!(a.log.epochs.iter().all(|r| r.train_loss >= 0.0 && r.val_loss >= 0.0));
    }

    #[test]
    fn empty_train_split_rejected() {
        let (graph, schema) = line_graph(3);
        let f: Vec<IndexedFlow> = flows(3, |_, _| 1.0)
            .into_iter()
            .map(|mut x| {
                x.split = Split::Test;
                x
            })
            .collect();
        assert!(matches!(
            train(&graph, &schema, &f, small_gat(), &TrainConfig::default()),
            Err(TrainError::EmptyTrainSplit)
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (graph, schema) = line_graph(6);
        let f = flows(6, |i, j| 1e6 * (i + j) as f64);
        let config = TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr: 1e12,
            clip_grad_norm: None,
            seed: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&graph, &schema, &f, small_gat(), &config),
            Err(TrainError::Diverged { .. })
        ));
    }
}

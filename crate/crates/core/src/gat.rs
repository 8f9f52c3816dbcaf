//! Dual graph-attention encoders producing origin and destination embeddings.
//!
//! Each layer transforms node features per head (`z = h W`), scores every
//! edge of the self-augmented neighborhood with
//! `leaky_relu(a_dst . z_i + a_src . z_j) - d_ij / distance_scale_km`,
//! normalizes the scores with a softmax per node, and aggregates `sum_j alpha_ij z_j`.
//! Subtracting `d / scale` from the logit multiplies the unnormalized attention
//! weight by `exp(-d / scale)`. Heads are concatenated, a bias is added, and
//! hidden layers apply a leaky-ReLU.
//!
//! Every node's neighborhood (itself included) is visited in tract-id order,
//! so each node's arithmetic is independent of how tracts are indexed.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{FeatureSchema, TractGraph};
use crate::numeric::{Matrix, ParamId, ParamStore, Segments, Tape, Var, LEAKY_SLOPE};

pub const ORIGIN_PREFIX: &str = "origin_encoder";
pub const DESTINATION_PREFIX: &str = "destination_encoder";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatError {
    #[error("feature length {found} does not match training schema length {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub attention_heads: usize,
    pub distance_scale_km: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 64,
            embedding_dim: 64,
            attention_heads: 1,
            distance_scale_km: 5.0,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<(), GatError> {
        let bad = |m: &str| Err(GatError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 || self.attention_heads == 0 {
            return bad("layers, dimensions and heads must be positive");
        }
        if !(self.distance_scale_km.is_finite() && self.distance_scale_km > 0.0) {
            return bad("distance_scale_km must be positive");
        }
        for dim in self.output_dims() {
            if dim % self.attention_heads != 0 {
                return bad("layer widths must be divisible by attention_heads");
            }
        }
        Ok(())
    }

    fn output_dims(&self) -> Vec<usize> {
        (0..self.layers)
            .map(|l| {
                if l + 1 == self.layers {
                    self.embedding_dim
                } else {
                    self.hidden_dim
                }
            })
            .collect()
    }
}

/// Origin- and destination-role embeddings, one row per tract.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub origin: Matrix,
    pub destination: Matrix,
}

/// Edge lists of the self-augmented neighborhoods, grouped per node.
#[derive(Clone, Debug)]
pub struct AttentionStructure {
    /// Segment `i` covers the edges scored for node `i`.
    pub segments: Arc<Segments>,
    /// Receiving node of each edge.
    pub centers: Arc<Vec<usize>>,
    /// Sending node of each edge (the center itself for the self edge).
    pub sources: Arc<Vec<usize>>,
    /// `-d_ij / distance_scale_km` per edge; 0 on self edges.
    pub distance_bias: Matrix,
}

impl AttentionStructure {
    pub fn new(graph: &TractGraph, distance_scale_km: f64) -> Self {
        let n = graph.len();
        let mut centers = Vec::new();
        let mut sources = Vec::new();
        let mut bias = Vec::new();
        let mut lengths = Vec::with_capacity(n);
        for i in 0..n {
            let mut hood: Vec<(usize, f64)> = graph.neighbors(i).to_vec();
            hood.push((i, 0.0));
            hood.sort_by(|a, b| graph.tracts[a.0].id.cmp(&graph.tracts[b.0].id));
            lengths.push(hood.len());
            for (j, km) in hood {
                centers.push(i);
                sources.push(j);
                bias.push(-km / distance_scale_km);
            }
        }
        Self {
            segments: Arc::new(Segments::from_lengths(lengths)),
            centers: Arc::new(centers),
            sources: Arc::new(sources),
            distance_bias: Matrix::column(bias),
        }
    }

    /// Edge positions belonging to node `i`.
    pub fn edges_of(&self, i: usize) -> std::ops::Range<usize> {
        self.segments.range(i)
    }
}

#[derive(Clone, Debug)]
struct HeadParams {
    weight: ParamId,
    attn_src: ParamId,
    attn_dst: ParamId,
}

#[derive(Clone, Debug)]
struct LayerParams {
    heads: Vec<HeadParams>,
    bias: ParamId,
    activate: bool,
}

/// One graph-attention encoder bound to named parameters in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<LayerParams>,
}

/// Values recorded during one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub output: Var,
    /// `attention[layer][head]`: per-edge coefficients in [`AttentionStructure`] order.
    pub attention: Vec<Vec<Var>>,
}

fn head_names(prefix: &str, layer: usize, head: usize) -> [String; 3] {
    let base = format!("{prefix}.layer{layer}.head{head}");
    [
        format!("{base}.weight"),
        format!("{base}.attn_src"),
        format!("{base}.attn_dst"),
    ]
}

impl Encoder {
    /// Registers fresh Glorot-initialized parameters under `prefix`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        config: &GatConfig,
        rng: &mut R,
    ) -> Result<Self, GatError> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut in_dim = input_dim;
        let dims = config.output_dims();
        for (l, &out_dim) in dims.iter().enumerate() {
            let head_dim = out_dim / config.attention_heads;
            let heads = (0..config.attention_heads)
                .map(|h| {
                    let [w, s, d] = head_names(prefix, l, h);
                    HeadParams {
                        weight: store.insert_glorot(w, in_dim, head_dim, rng),
                        attn_src: store.insert_glorot(s, head_dim, 1, rng),
                        attn_dst: store.insert_glorot(d, head_dim, 1, rng),
                    }
                })
                .collect();
            let bias = store.insert(format!("{prefix}.layer{l}.bias"), Matrix::zeros(1, out_dim));
            layers.push(LayerParams {
                heads,
                bias,
                activate: l + 1 < dims.len(),
            });
            in_dim = out_dim;
        }
        Ok(Self { layers })
    }

    /// Looks up existing parameters under `prefix` and checks their shapes.
    pub fn bind(
        store: &ParamStore,
        prefix: &str,
        input_dim: usize,
        config: &GatConfig,
    ) -> Result<Self, GatError> {
        config.validate()?;
        let lookup = |name: String, shape: (usize, usize)| -> Result<ParamId, GatError> {
            let id = store.id(&name).ok_or_else(|| GatError::MissingParam(name.clone()))?;
            if store.value(id).shape() != shape {
                return Err(GatError::InvalidConfig(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let mut layers = Vec::new();
        let mut in_dim = input_dim;
        let dims = config.output_dims();
        for (l, &out_dim) in dims.iter().enumerate() {
            let head_dim = out_dim / config.attention_heads;
            let mut heads = Vec::new();
            for h in 0..config.attention_heads {
                let [w, s, d] = head_names(prefix, l, h);
                heads.push(HeadParams {
                    weight: lookup(w, (in_dim, head_dim))?,
                    attn_src: lookup(s, (head_dim, 1))?,
                    attn_dst: lookup(d, (head_dim, 1))?,
                });
            }
            let bias = lookup(format!("{prefix}.layer{l}.bias"), (1, out_dim))?;
            layers.push(LayerParams {
                heads,
                bias,
                activate: l + 1 < dims.len(),
            });
            in_dim = out_dim;
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        structure: &AttentionStructure,
    ) -> EncoderTrace {
        let distance = tape.input(structure.distance_bias.clone());
        let mut h = input;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut head_outputs = Vec::with_capacity(layer.heads.len());
            let mut head_attention = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let w = tape.param(store, head.weight);
                let z = tape.matmul(h, w);
                let a_dst = tape.param(store, head.attn_dst);
                let a_src = tape.param(store, head.attn_src);
                let score_dst = tape.matmul(z, a_dst);
                let score_src = tape.matmul(z, a_src);
                let per_center = tape.gather_rows(score_dst, structure.centers.clone());
                let per_source = tape.gather_rows(score_src, structure.sources.clone());
                let raw = tape.add(per_center, per_source);
                let raw = tape.leaky_relu(raw, LEAKY_SLOPE);
                let logits = tape.add(raw, distance);
                let alpha = tape.segment_softmax(logits, structure.segments.clone());
                let messages = tape.gather_rows(z, structure.sources.clone());
                let weighted = tape.scale_rows(messages, alpha);
                head_outputs.push(tape.segment_sum(weighted, structure.segments.clone()));
                head_attention.push(alpha);
            }
            let joined = if head_outputs.len() == 1 {
                head_outputs[0]
            } else {
                tape.concat_cols(&head_outputs)
            };
            let bias = tape.param(store, layer.bias);
            let mut out = tape.add_row_bias(joined, bias);
            if layer.activate {
                out = tape.leaky_relu(out, LEAKY_SLOPE);
            }
            attention.push(head_attention);
            h = out;
        }
        EncoderTrace {
            output: h,
            attention,
        }
    }
}

/// The origin-role and destination-role encoders; they never share parameters.
#[derive(Clone, Debug)]
pub struct DualEncoder {
    pub origin: Encoder,
    pub destination: Encoder,
    pub config: GatConfig,
}

impl DualEncoder {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        input_dim: usize,
        config: GatConfig,
        rng: &mut R,
    ) -> Result<Self, GatError> {
        Ok(Self {
            origin: Encoder::init(store, ORIGIN_PREFIX, input_dim, &config, rng)?,
            destination: Encoder::init(store, DESTINATION_PREFIX, input_dim, &config, rng)?,
            config,
        })
    }

    pub fn bind(store: &ParamStore, input_dim: usize, config: GatConfig) -> Result<Self, GatError> {
        Ok(Self {
            origin: Encoder::bind(store, ORIGIN_PREFIX, input_dim, &config)?,
            destination: Encoder::bind(store, DESTINATION_PREFIX, input_dim, &config)?,
            config,
        })
    }

    /// Records both encoders on `tape`; returns `(origin, destination)` nodes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &Matrix,
        structure: &AttentionStructure,
    ) -> (EncoderTrace, EncoderTrace) {
        let x = tape.input(features.clone());
        let o = self.origin.forward(tape, store, x, structure);
        let d = self.destination.forward(tape, store, x, structure);
        (o, d)
    }

    /// Frozen-parameter inference.
    pub fn encode(
        &self,
        store: &ParamStore,
        graph: &TractGraph,
        schema: &FeatureSchema,
    ) -> Result<EmbeddingSet, GatError> {
        let features = feature_matrix(graph, schema)?;
        let structure = AttentionStructure::new(graph, self.config.distance_scale_km);
        let mut tape = Tape::new();
        let (o, d) = self.forward(&mut tape, store, &features, &structure);
        Ok(EmbeddingSet {
            origin: tape.value(o.output).clone(),
            destination: tape.value(d.output).clone(),
        })
    }

    /// Attention weights of `node` in `layer` for each head of the chosen
    /// encoder, as `(neighbor index, weight)` in tract-id order.
    pub fn attention_coefficients(
        &self,
        store: &ParamStore,
        graph: &TractGraph,
        schema: &FeatureSchema,
        destination_role: bool,
        layer: usize,
        node: usize,
    ) -> Result<Vec<Vec<(usize, f64)>>, GatError> {
        let features = feature_matrix(graph, schema)?;
        let structure = AttentionStructure::new(graph, self.config.distance_scale_km);
        let mut tape = Tape::new();
        let (o, d) = self.forward(&mut tape, store, &features, &structure);
        let trace = if destination_role { d } else { o };
        let range = structure.edges_of(node);
        Ok(trace.attention[layer]
            .iter()
            .map(|&alpha| {
                let values = tape.value(alpha);
                range
                    .clone()
                    .map(|e| (structure.sources[e], values.get(e, 0)))
                    .collect()
            })
            .collect())
    }
}

/// Normalized indicator matrix, one row per tract.
pub fn feature_matrix(graph: &TractGraph, schema: &FeatureSchema) -> Result<Matrix, GatError> {
    let dim = schema.len();
    let mut data = Vec::with_capacity(graph.len() * dim);
    for t in &graph.tracts {
        if t.features.len() != dim {
            return Err(GatError::SchemaMismatch {
                expected: dim,
                found: t.features.len(),
            });
        }
        data.extend(schema.normalize(&t.features));
    }
    Ok(Matrix::from_vec(graph.len(), dim, data))
}

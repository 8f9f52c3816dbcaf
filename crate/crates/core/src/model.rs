//! Full training pipeline and the versioned model checkpoint.
//!
//! A checkpoint holds everything needed to predict and to run scenarios without
//! the original input files: the feature schema with its normalization stats,
//! all configs, encoder and head parameters, the boosted ensemble, the base
//! graph and the observed OD pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gat::{DualEncoder, EmbeddingSet, GatConfig, GatError};
use crate::gbrt::{self, make_features, BoostConfig, BoostError, FitLog, TreeEnsemble};
use crate::geodata::{FeatureSchema, FlowTable, GeoError, IndexedFlow, Split, TractGraph};
use crate::metrics::{align_predictions, EvalReport, FlowMap, MetricError};
use crate::numeric::{Matrix, NumericError, ParamSegment, ParamStore};
use crate::trainer::{self, TrainConfig, TrainError, TrainLog};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Gat(#[from] GatError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("{path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("no {0} pairs to evaluate")]
    EmptySplit(&'static str),
}

/// Configuration of the whole pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub gat: GatConfig,
    pub train: TrainConfig,
    pub boost: BoostConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    /// Schema with fitted normalization stats.
    pub schema: FeatureSchema,
    pub config: ModelConfig,
    pub params: ParamSegment,
    pub ensemble: TreeEnsemble,
    /// Base graph with raw (unnormalized) indicators.
    pub graph: TractGraph,
    /// Observed OD pairs of every split, as graph indices, sorted.
    pub observed_pairs: Vec<(usize, usize)>,
    pub train_log: TrainLog,
    pub boost_log: FitLog,
}

/// Normalization stats over every tract's raw indicators.
pub fn fit_schema(graph: &TractGraph, schema: &FeatureSchema) -> FeatureSchema {
    let mut fitted = schema.clone();
    let rows: Vec<&[f64]> = graph.tracts.iter().map(|t| t.features.as_slice()).collect();
    fitted.fit_normalization(&rows);
    fitted
}

/// GBRT design matrix for `pairs` over the given embeddings.
pub fn pair_features(
    graph: &TractGraph,
    emb: &EmbeddingSet,
    pairs: &[(usize, usize)],
) -> Result<Matrix, BoostError> {
    let m = emb.origin.cols();
    let mut data = Vec::with_capacity(pairs.len() * (2 * m + 1));
    for &(i, j) in pairs {
        data.extend(make_features(
            emb.origin.row(i),
            emb.destination.row(j),
            graph.pair_km(i, j),
        )?);
    }
    Ok(Matrix::from_vec(pairs.len(), 2 * m + 1, data))
}

fn split_rows(flows: &[IndexedFlow], split: Split) -> (Vec<(usize, usize)>, Vec<f64>) {
    flows
        .iter()
        .filter(|f| f.split == split)
        .map(|f| ((f.origin, f.destination), f.commuters))
        .unzip()
}

/// Trains encoders, then fits the boosted predictor on the trained embeddings.
///
/// `schema` carries indicator names only; normalization is fitted here.
pub fn fit_model(
    graph: &TractGraph,
    schema: &FeatureSchema,
    flows: &FlowTable,
    config: &ModelConfig,
) -> Result<TrainedModel, ModelError> {
    let schema = fit_schema(graph, schema);
    let indexed = flows.resolve(graph)?;
    let trained = trainer::train(graph, &schema, &indexed, config.gat, &config.train)?;
    let emb = trained.encode(graph, &schema)?;

    let (train_pairs, train_y) = split_rows(&indexed, Split::Train);
    let (val_pairs, val_y) = split_rows(&indexed, Split::Val);
    let train_x = pair_features(graph, &emb, &train_pairs)?;
    let val_x = pair_features(graph, &emb, &val_pairs)?;
    let validation = (!val_pairs.is_empty()).then_some((&val_x, val_y.as_slice()));
    let (ensemble, boost_log) = gbrt::fit(&train_x, &train_y, validation, &config.boost)?;

    let mut observed_pairs: Vec<(usize, usize)> = indexed.iter().map(|f| (f.origin, f.destination)).collect();
    observed_pairs.sort_unstable();
    Ok(TrainedModel {
        format_version: CHECKPOINT_FORMAT_VERSION,
        schema,
        config: config.clone(),
        params: trained.store.to_segment(),
        ensemble,
        graph: graph.clone(),
        observed_pairs,
        train_log: trained.log,
        boost_log,
    })
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let err = |e: serde_json::Error| ModelError::Checkpoint {
            path: origin.to_string(),
            message: e.to_string(),
        };
        let v: Version = serde_json::from_str(text).map_err(err)?;
        if v.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(v.format_version));
        }
        let model: TrainedModel = serde_json::from_str(text).map_err(err)?;
        model.predictor()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ModelError::Geo(GeoError::MissingInput(path.display().to_string()))
            } else {
                ModelError::Checkpoint {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }
            }
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Binds the parameter segment for inference.
    pub fn predictor(&self) -> Result<Predictor<'_>, ModelError> {
        let store = ParamStore::from_segment(&self.params)?;
        let encoder = DualEncoder::bind(&store, self.schema.len(), self.config.gat)?;
        if self.ensemble.feature_dim != 2 * self.config.gat.embedding_dim + 1 {
            return Err(ModelError::Boost(BoostError::DimensionMismatch {
                expected: 2 * self.config.gat.embedding_dim + 1,
                found: self.ensemble.feature_dim,
            }));
        }
        Ok(Predictor {
            model: self,
            store,
            encoder,
        })
    }

    /// Encoder message-passing depth in hops.
    pub fn depth(&self) -> usize {
        self.config.gat.layers
    }
}

/// Frozen model ready for inference; cheap to share across threads.
#[derive(Clone, Debug)]
pub struct Predictor<'a> {
    pub model: &'a TrainedModel,
    store: ParamStore,
    encoder: DualEncoder,
}

impl Predictor<'_> {
    pub fn embed(&self, graph: &TractGraph) -> Result<EmbeddingSet, ModelError> {
        Ok(self.encoder.encode(&self.store, graph, &self.model.schema)?)
    }

    /// Predicted flows for `pairs` on `graph` (clamped at 0).
    pub fn predict_pairs(
        &self,
        graph: &TractGraph,
        emb: &EmbeddingSet,
        pairs: &[(usize, usize)],
    ) -> Result<Vec<f64>, ModelError> {
        let x = pair_features(graph, emb, pairs)?;
        Ok(self.model.ensemble.predict_rows(&x)?)
    }

    /// Predictions for the records of `split` keyed by tract ids.
    pub fn predict_split(&self, flows: &FlowTable, split: Split) -> Result<(FlowMap, FlowMap), ModelError> {
        let graph = &self.model.graph;
        let index = graph.id_index();
        let mut truth = FlowMap::new();
        let mut pairs = Vec::new();
        let mut keys = Vec::new();
        for r in flows.of_split(split) {
            truth.insert((r.origin.clone(), r.destination.clone()), r.commuters as f64);
            let (Some(&i), Some(&j)) = (index.get(r.origin.as_str()), index.get(r.destination.as_str())) else {
                continue;
            };
            if i != j {
                pairs.push((i, j));
                keys.push((r.origin.clone(), r.destination.clone()));
            }
        }
        let emb = self.embed(graph)?;
        let values = self.predict_pairs(graph, &emb, &pairs)?;
        Ok((keys.into_iter().zip(values).collect(), truth))
    }

    /// Metrics of the deployed predictor on one split.
    pub fn evaluate(
        &self,
        label: &str,
        flows: &FlowTable,
        split: Split,
        assume_zero: bool,
    ) -> Result<EvalReport, ModelError> {
        let (pred, truth) = self.predict_split(flows, split)?;
        if truth.is_empty() {
            return Err(ModelError::EmptySplit(split.as_str()));
        }
        let pred = if assume_zero {
            align_predictions(&pred, &truth, true)
        } else {
            pred
        };
        Ok(EvalReport::compute(label, split.as_str(), &pred, &truth)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_graph, split_flows, AdjacencyPolicy, DistanceSource, SplitRatios};
    use crate::synth::{gravity_world, GravityConfig};

    fn tiny() -> (TractGraph, FeatureSchema, FlowTable, ModelConfig) {
        let world = gravity_world(&GravityConfig {
            n_tracts: 20,
            scale: 4.0,
            ..GravityConfig::default()
        });
        let graph = build_graph(world.tracts, AdjacencyPolicy::KNearest { k: 4 }, DistanceSource::GreatCircle).unwrap();
        let flows = split_flows(world.flows, SplitRatios::default(), 3).unwrap();
        let config = ModelConfig {
            gat: GatConfig {
                layers: 2,
                hidden_dim: 8,
                embedding_dim: 4,
                attention_heads: 1,
                distance_scale_km: 2.0,
            },
            train: TrainConfig {
                epochs: 5,
                batch_size: 32,
                seed: 5,
                ..TrainConfig::default()
            },
            boost: BoostConfig {
                rounds: 20,
                ..BoostConfig::default()
            },
        };
        (graph, world.schema, flows, config)
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (graph, schema, flows, config) = tiny();
        let model = fit_model(&graph, &schema, &flows, &config).unwrap();
        let text = model.to_json();
        let back = TrainedModel::from_json(&text, "mem").unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), text);
        let a = model.predictor().unwrap().evaluate("x", &flows, Split::Test, false).unwrap();
        let b = back.predictor().unwrap().evaluate("x", &flows, Split::Test, false).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.cpc));
    }

    #[test]
    fn version_is_checked() {
        let (graph, schema, flows, config) = tiny();
        let model = fit_model(&graph, &schema, &flows, &config).unwrap();
        let text = model.to_json().replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(matches!(
            TrainedModel::from_json(&text, "mem"),
            Err(ModelError::UnsupportedVersion(99))
        ));
    }
}

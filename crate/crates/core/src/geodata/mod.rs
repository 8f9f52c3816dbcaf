//! Tracts, indicator schemas, the geo-adjacency network and OD flow tables.

mod distance;
mod flows;
mod graph;
mod schema;
mod tract;

use std::path::Path;

use thiserror::Error;

pub use distance::{
    great_circle_km, DistanceProvider, DistanceSource, DistanceTable, GreatCircle, EARTH_RADIUS_KM,
};
pub use flows::{
    load_flows, split_flows, FlowRecord, FlowTable, IndexedFlow, LoadedFlows, RawFlow, Split,
    SplitRatios,
};
pub use graph::{build_graph, AdjacencyPolicy, Edge, TractGraph};
pub use schema::{Category, FeatureSchema, Indicator, Normalization};
pub use tract::{load_tracts, validate_tracts, LatLon, Tract};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("row {row}: missing value for {column}")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: non-finite or unparsable value for {column}")]
    NonFiniteValue { row: usize, column: String },
    #[error("row {row}: {column} value {value} out of range")]
    OutOfRange { row: usize, column: String, value: f64 },
    #[error("row {row}: {column} must be non-negative, found {value}")]
    NegativeValue { row: usize, column: String, value: f64 },
    #[error("duplicate tract id {0}")]
    DuplicateId(String),
    #[error("duplicate indicator {0}")]
    DuplicateIndicator(String),
    #[error("feature length {found} does not match schema length {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("tracts {a} and {b} share a centroid")]
    DegenerateGeometry { a: String, b: String },
    #[error("need at least 2 tracts, found {0}")]
    TooFewTracts(usize),
    #[error("invalid adjacency policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("no flow records")]
    EmptyInput,
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("duplicate OD pair {0} -> {1}")]
    DuplicatePair(String, String),
    #[error("unknown tract {0}")]
    UnknownTract(String),
    #[error("self pair at tract {0}")]
    SelfPair(String),
    #[error("unknown split {0}")]
    UnknownSplit(String),
    #[error("missing input {0}")]
    MissingInput(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl GeoError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            return GeoError::MissingInput(path.display().to_string());
        }
        GeoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => GeoError::io(path, io),
            other => GeoError::Parse {
                path: path.display().to_string(),
                message: format!("{other:?}"),
            },
        }
    }
}

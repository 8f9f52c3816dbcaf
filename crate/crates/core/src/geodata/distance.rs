use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tract::{LatLon, Tract};
use super::GeoError;

/// Mean Earth radius (IUGG) in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Haversine distance in kilometres.
pub fn great_circle_km(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Source of travel distances between tracts.
pub trait DistanceProvider {
    fn km(&self, a: &Tract, b: &Tract) -> f64;
}

/// Great-circle distance between centroids.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreatCircle;

impl DistanceProvider for GreatCircle {
    fn km(&self, a: &Tract, b: &Tract) -> f64 {
        great_circle_km(a.centroid, b.centroid)
    }
}

/// Precomputed travel distances (e.g. exported from a routing engine), keyed by
/// unordered tract-id pair. Pairs missing from the table fall back to great-circle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    entries: BTreeMap<String, BTreeMap<String, f64>>,
}

impl DistanceTable {
    fn key<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn insert(&mut self, a: &str, b: &str, km: f64) {
        let (lo, hi) = Self::key(a, b);
        self.entries
            .entry(lo.to_string())
            .or_default()
            .insert(hi.to_string(), km);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (lo, hi) = Self::key(a, b);
        self.entries.get(lo).and_then(|m| m.get(hi)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads `origin_id,dest_id,km` rows.
    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| GeoError::csv(path, e))?;
        let mut table = DistanceTable::default();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| GeoError::csv(path, e))?;
            if rec.len() < 3 {
                return Err(GeoError::MissingColumn("km".into()));
            }
            let km: f64 = rec[2].parse().map_err(|_| GeoError::NonFiniteValue {
                row,
                column: "km".into(),
            })?;
            if !km.is_finite() || km < 0.0 {
                return Err(GeoError::NonFiniteValue {
                    row,
                    column: "km".into(),
                });
            }
            table.insert(&rec[0], &rec[1], km);
        }
        Ok(table)
    }
}

impl DistanceProvider for DistanceTable {
    fn km(&self, a: &Tract, b: &Tract) -> f64 {
        self.get(&a.id, &b.id)
            .unwrap_or_else(|| great_circle_km(a.centroid, b.centroid))
    }
}

/// Serializable choice of distance provider, stored alongside a graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceSource {
    #[default]
    GreatCircle,
    Table { table: DistanceTable },
}

impl DistanceProvider for DistanceSource {
    fn km(&self, a: &Tract, b: &Tract) -> f64 {
        match self {
            DistanceSource::GreatCircle => GreatCircle.km(a, b),
            DistanceSource::Table { table } => table.km(a, b),
        }
    }
}

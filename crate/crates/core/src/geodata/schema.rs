use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GeoError;

/// Indicator family, following the grouping used for the urban indicator tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Infrastructure,
    LandUse,
    Speciality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub category: Category,
    /// Counts, areas and perimeters may not go negative.
    #[serde(default = "default_true")]
    pub nonnegative: bool,
}

fn default_true() -> bool {
    true
}

/// Per-indicator z-score statistics captured at training time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Constant columns are passed through unscaled.
    pub constant: Vec<bool>,
}

/// Ordered indicator names with categories and (once fitted) normalization stats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub indicators: Vec<Indicator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

#[derive(Deserialize)]
struct SchemaFile {
    indicators: Vec<Indicator>,
}

impl FeatureSchema {
    pub fn new(indicators: Vec<Indicator>) -> Result<Self, GeoError> {
        let mut seen = BTreeSet::new();
        for ind in &indicators {
            if !seen.insert(ind.name.as_str()) {
                return Err(GeoError::DuplicateIndicator(ind.name.clone()));
            }
        }
        Ok(Self {
            indicators,
            normalization: None,
        })
    }

    /// Builds a schema from bare names, all in one category and non-negative.
    pub fn from_names<S: AsRef<str>>(names: &[S], category: Category) -> Result<Self, GeoError> {
        Self::new(
            names
                .iter()
                .map(|n| Indicator {
                    name: n.as_ref().to_string(),
                    category,
                    nonnegative: true,
                })
                .collect(),
        )
    }

    /// Reads a TOML document with an `[[indicators]]` array.
    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
        let file: SchemaFile = toml::from_str(&text).map_err(|e| GeoError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(file.indicators)
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.indicators.iter().map(|i| i.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.indicators.iter().position(|i| i.name == name)
    }

    /// Same indicator names, order and flags; normalization is ignored.
    pub fn same_layout(&self, other: &FeatureSchema) -> bool {
        self.indicators == other.indicators
    }

    /// Captures mean and population std per column of `rows`.
    pub fn fit_normalization(&mut self, rows: &[&[f64]]) {
        let dim = self.len();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut constant = Vec::with_capacity(dim);
        for (k, s) in var.into_iter().enumerate() {
            let sd = (s / n).sqrt();
            // relative to the column magnitude so large constant columns are caught too
            let is_constant = !(sd > 1e-12 * mean[k].abs().max(1.0));
            constant.push(is_constant);
            std.push(if is_constant { 1.0 } else { sd });
        }
        for (k, c) in constant.iter().enumerate() {
            if *c {
                mean[k] = 0.0;
            }
        }
        self.normalization = Some(Normalization {
            mean,
            std,
            constant,
        });
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        match &self.normalization {
            None => raw.to_vec(),
            Some(n) => raw
                .iter()
                .zip(n.mean.iter().zip(&n.std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        }
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        match &self.normalization {
            None => z.to_vec(),
            Some(n) => z
                .iter()
                .zip(n.mean.iter().zip(&n.std))
                .map(|(v, (m, s))| v * s + m)
                .collect(),
        }
    }

    pub fn constant_columns(&self) -> Vec<&str> {
        match &self.normalization {
            None => Vec::new(),
            Some(n) => self
                .indicators
                .iter()
                .zip(&n.constant)
                .filter(|(_, c)| **c)
                .map(|(i, _)| i.name.as_str())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let err = FeatureSchema::from_names(&["a", "b", "a"], Category::LandUse).unwrap_err();
        assert!(matches!(err, GeoError::DuplicateIndicator(n) if n == "a"));
    }

    #[test]
    fn constant_column_passes_through() {
        let mut schema = FeatureSchema::from_names(&["c", "v"], Category::Infrastructure).unwrap();
        let rows = [vec![4.0, 1.0], vec![4.0, 3.0]];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        schema.fit_normalization(&refs);
        assert_eq!(schema.constant_columns(), vec!["c"]);
        assert_eq!(schema.normalize(&[4.0, 2.0]), vec![4.0, 0.0]);
    }

    #[test]
    fn parses_toml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(
            &p,
            "[[indicators]]\nname = \"bike_lane_km\"\ncategory = \"infrastructure\"\n\n\
             [[indicators]]\nname = \"far\"\ncategory = \"land_use\"\nnonnegative = false\n",
        )
        .unwrap();
        let s = FeatureSchema::load(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.indicators[0].nonnegative);
        assert!(!s.indicators[1].nonnegative);
    }

    proptest! {
        #[test]
        fn normalize_then_invert(rows in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 3), 2..20)) {
            let mut schema = FeatureSchema::from_names(&["a", "b", "c"], Category::LandUse).unwrap();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            schema.fit_normalization(&refs);
            for row in &rows {
                let back = schema.denormalize(&schema.normalize(row));
                for (a, b) in back.iter().zip(row) {
                    prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }
}

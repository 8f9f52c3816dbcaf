//! What-if scenarios: indicator edits, re-embedding with the frozen model,
//! per-pair flow differences and their summaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geodata::{great_circle_km, FeatureSchema, TractGraph};
use crate::model::{ModelError, Predictor};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown tract {0}")]
    UnknownTract(String),
    #[error("unknown indicator {0}")]
    UnknownIndicator(String),
    #[error("tract {tract}: {indicator} would become {value}, but it must stay non-negative")]
    NegativeForbidden {
        tract: String,
        indicator: String,
        value: f64,
    },
    #[error("tract {tract}: {indicator} edit value is not finite")]
    NonFiniteValue { tract: String, indicator: String },
    #[error("scenario name must not be empty")]
    EmptyName,
    #[error("feature length {found} does not match model schema length {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("no pairs with a defined relative change in the filter")]
    NoDefinedPairs,
    #[error("radius must be positive and finite, found {0}")]
    InvalidRadius(f64),
    #[error("histogram needs at least one bin")]
    InvalidBins,
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Set,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub tract_id: String,
    pub indicator: String,
    pub op: EditOp,
    pub value: f64,
}

/// Named set of indicator edits, applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default)]
    pub edits: Vec<Edit>,
}

impl Scenario {
    pub fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            note: None,
            edits: Vec::new(),
        }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Hex digest of the canonical JSON encoding; identical content, identical id.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Distinct edited tracts, in first-edit order.
    pub fn edited_tracts(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.edits
            .iter()
            .filter(|e| seen.insert(e.tract_id.as_str()))
            .map(|e| e.tract_id.as_str())
            .collect()
    }
}

/// Returns a copy of `graph` with the scenario's edits applied to raw indicators.
/// Topology and distances are untouched.
pub fn apply_scenario(
    graph: &TractGraph,
    schema: &FeatureSchema,
    scenario: &Scenario,
) -> Result<TractGraph, ScenarioError> {
    if scenario.name.trim().is_empty() {
        return Err(ScenarioError::EmptyName);
    }
    let mut features: Vec<Vec<f64>> = graph.tracts.iter().map(|t| t.features.clone()).collect();
    for edit in &scenario.edits {
        let i = graph
            .index_of(&edit.tract_id)
            .ok_or_else(|| ScenarioError::UnknownTract(edit.tract_id.clone()))?;
        let k = schema
            .index_of(&edit.indicator)
            .ok_or_else(|| ScenarioError::UnknownIndicator(edit.indicator.clone()))?;
        if !edit.value.is_finite() {
            return Err(ScenarioError::NonFiniteValue {
                tract: edit.tract_id.clone(),
                indicator: edit.indicator.clone(),
            });
        }
        if features[i].len() != schema.len() {
            return Err(ScenarioError::SchemaMismatch {
                expected: schema.len(),
                found: features[i].len(),
            });
        }
        let value = match edit.op {
            EditOp::Set => edit.value,
            EditOp::Add => features[i][k] + edit.value,
        };
        if schema.indicators[k].nonnegative && value < 0.0 {
            return Err(ScenarioError::NegativeForbidden {
                tract: edit.tract_id.clone(),
                indicator: edit.indicator.clone(),
                value,
            });
        }
        features[i][k] = value;
    }
    Ok(graph.with_features(features))
}

/// Which pairs a scenario evaluation predicts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Pairs near an edit farther apart than this are left out.
    pub distance_cutoff_km: f64,
    pub bins: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            distance_cutoff_km: 30.0,
            bins: 40,
        }
    }
}

/// Baseline-observed pairs plus every pair with an endpoint within `depth` hops
/// of an edited tract and travel distance at most `cutoff_km`. Sorted.
pub fn pair_universe(
    graph: &TractGraph,
    observed: &[(usize, usize)],
    edited: &[usize],
    depth: usize,
    cutoff_km: f64,
) -> Vec<(usize, usize)> {
    let mut pairs: BTreeSet<(usize, usize)> = observed.iter().copied().collect();
    if !edited.is_empty() {
        let near = graph.within_hops(edited, depth);
        for i in 0..graph.len() {
            for j in 0..graph.len() {
                if i != j && (near[i] || near[j]) && !pairs.contains(&(i, j)) && graph.pair_km(i, j) <= cutoff_km {
                    pairs.insert((i, j));
                }
            }
        }
    }
    pairs.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairChange {
    pub origin: String,
    pub destination: String,
    pub baseline: f64,
    pub scenario: f64,
    /// `(scenario - baseline) / baseline`; absent when the baseline is 0.
    pub relative_change: Option<f64>,
}

/// Per-pair baseline vs. scenario predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDiff {
    pub scenario: String,
    /// Edited tract ids, sorted.
    pub modified: Vec<String>,
    /// Pairs with a positive baseline.
    pub pairs: Vec<PairChange>,
    /// Zero-baseline pairs; absolute values only.
    pub zero_baseline: Vec<PairChange>,
}

impl FlowDiff {
    /// Keeps only pairs whose `(origin, destination)` ids are in `filter`.
    pub fn restrict(&self, filter: &BTreeSet<(String, String)>) -> FlowDiff {
        let keep = |p: &&PairChange| filter.contains(&(p.origin.clone(), p.destination.clone()));
        FlowDiff {
            scenario: self.scenario.clone(),
            modified: self.modified.clone(),
            pairs: self.pairs.iter().filter(keep).cloned().collect(),
            zero_baseline: self.zero_baseline.iter().filter(keep).cloned().collect(),
        }
    }

    /// Sum of predicted flows into `destination` over the diff's pairs.
    pub fn inflow(&self, destination: &str) -> (f64, f64) {
        self.pairs
            .iter()
            .chain(&self.zero_baseline)
            .filter(|p| p.destination == destination)
            .fold((0.0, 0.0), |(b, s), p| (b + p.baseline, s + p.scenario))
    }
}

/// Predicts baseline and scenario flows over the pair universe.
pub fn predict_scenario(
    predictor: &Predictor<'_>,
    scenario: &Scenario,
    options: &ScenarioOptions,
) -> Result<FlowDiff, ScenarioError> {
    let model = predictor.model;
    let base = &model.graph;
    if let Some(t) = base.tracts.iter().find(|t| t.features.len() != model.schema.len()) {
        return Err(ScenarioError::SchemaMismatch {
            expected: model.schema.len(),
            found: t.features.len(),
        });
    }
    let modified = apply_scenario(base, &model.schema, scenario)?;
    let edited: Vec<usize> = scenario
        .edited_tracts()
        .iter()
        .map(|id| base.index_of(id).expect("validated by apply_scenario"))
        .collect();
    let pairs = pair_universe(base, &model.observed_pairs, &edited, model.depth(), options.distance_cutoff_km);

    let base_emb = predictor.embed(base)?;
    let baseline = predictor.predict_pairs(base, &base_emb, &pairs)?;
    let scen_emb = predictor.embed(&modified)?;
    let predicted = predictor.predict_pairs(&modified, &scen_emb, &pairs)?;

    let mut modified_ids: Vec<String> = scenario.edited_tracts().into_iter().map(String::from).collect();
    modified_ids.sort();
    let mut diff = FlowDiff {
        scenario: scenario.name.clone(),
        modified: modified_ids,
        pairs: Vec::new(),
        zero_baseline: Vec::new(),
    };
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (b, s) = (baseline[k], predicted[k]);
        let change = PairChange {
            origin: base.tracts[i].id.clone(),
            destination: base.tracts[j].id.clone(),
            baseline: b,
            scenario: s,
            relative_change: (b > 0.0).then(|| (s - b) / b),
        };
        if b > 0.0 {
            diff.pairs.push(change);
        } else {
            diff.zero_baseline.push(change);
        }
    }
    Ok(diff)
}

/// Ordered pairs `(i, j)`, `i != j`, whose centroids both lie within `radius_km`
/// of some modified tract's centroid (great-circle).
pub fn neighborhood_pairs(
    graph: &TractGraph,
    modified: &[usize],
    radius_km: f64,
) -> Result<BTreeSet<(usize, usize)>, ScenarioError> {
    if !(radius_km.is_finite() && radius_km > 0.0) {
        return Err(ScenarioError::InvalidRadius(radius_km));
    }
    let limit = radius_km * (1.0 + 1e-9);
    let near: Vec<usize> = (0..graph.len())
        .filter(|&k| {
            modified
                .iter()
                .any(|&m| great_circle_km(graph.tracts[k].centroid, graph.tracts[m].centroid) <= limit)
        })
        .collect();
    let mut out = BTreeSet::new();
    for &i in &near {
        for &j in &near {
            if i != j {
                out.insert((i, j));
            }
        }
    }
    Ok(out)
}

/// Id-keyed form of [`neighborhood_pairs`] for the modified tract ids.
pub fn neighborhood_ids(
    graph: &TractGraph,
    modified: &[String],
    radius_km: f64,
) -> Result<BTreeSet<(String, String)>, ScenarioError> {
    let idx: Vec<usize> = modified
        .iter()
        .map(|id| graph.index_of(id).ok_or_else(|| ScenarioError::UnknownTract(id.clone())))
        .collect::<Result<_, _>>()?;
    Ok(neighborhood_pairs(graph, &idx, radius_km)?
        .into_iter()
        .map(|(i, j)| (graph.tracts[i].id.clone(), graph.tracts[j].id.clone()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDescriptor {
    /// `all` or `radius`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_km: Option<f64>,
    pub label: String,
}

impl FilterDescriptor {
    pub fn all() -> Self {
        Self {
            kind: "all".into(),
            radius_km: None,
            label: "all pairs".into(),
        }
    }

    pub fn radius(km: f64) -> Self {
        Self {
            kind: "radius".into(),
            radius_km: Some(km),
            label: format!("{km} km"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; bin `k` is `[edges[k], edges[k+1])`, the last one closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub filter: FilterDescriptor,
    /// Pairs with a defined relative change.
    pub n_pairs: usize,
    pub n_zero_baseline: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub histogram: Histogram,
}

/// Equal-width histogram over `[min, max]` of `values`. A zero-width range is
/// widened to `[v - 0.5, v + 0.5]`.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    assert!(bins > 0 && !values.is_empty());
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    edges[bins] = hi;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Mean, population std and histogram of the relative changes in `diff`.
pub fn summarize(diff: &FlowDiff, filter: FilterDescriptor, bins: usize) -> Result<DiffSummary, ScenarioError> {
    if bins == 0 {
        return Err(ScenarioError::InvalidBins);
    }
    let values: Vec<f64> = diff.pairs.iter().filter_map(|p| p.relative_change).collect();
    if values.is_empty() {
        return Err(ScenarioError::NoDefinedPairs);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(DiffSummary {
        filter,
        n_pairs: values.len(),
        n_zero_baseline: diff.zero_baseline.len(),
        mean,
        std,
        histogram: histogram(&values, bins),
    })
}

/// A scenario evaluation as served and exported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub id: String,
    pub name: String,
    pub summary: DiffSummary,
    pub diff: FlowDiff,
}

/// Restricts `diff` to the radius neighborhood of its modified tracts (when
/// given) and summarizes it.
pub fn outcome(
    graph: &TractGraph,
    scenario: &Scenario,
    diff: &FlowDiff,
    radius_km: Option<f64>,
    bins: usize,
) -> Result<ScenarioOutcome, ScenarioError> {
    let (diff, filter) = match radius_km {
        Some(r) => (
            diff.restrict(&neighborhood_ids(graph, &diff.modified, r)?),
            FilterDescriptor::radius(r),
        ),
        None => (diff.clone(), FilterDescriptor::all()),
    };
    let summary = summarize(&diff, filter, bins)?;
    Ok(ScenarioOutcome {
        id: scenario.content_hash(),
        name: scenario.name.clone(),
        summary,
        diff,
    })
}

/// `origin_id,dest_id,baseline,scenario,relative_change` rows; the last column
/// is empty for zero-baseline pairs.
pub fn diff_csv(diff: &FlowDiff) -> String {
    let mut rows: Vec<&PairChange> = diff.pairs.iter().chain(&diff.zero_baseline).collect();
    rows.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));
    let mut out = String::from("origin_id,dest_id,baseline,scenario,relative_change\n");
    for p in rows {
        let rel = p.relative_change.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", p.origin, p.destination, p.baseline, p.scenario, rel));
    }
    out
}

/// `bin_lo,bin_hi,count` rows.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", h.edges[k], h.edges[k + 1], c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_graph, AdjacencyPolicy, Category, DistanceSource, LatLon, Tract};
    use approx::assert_abs_diff_eq;

    fn collinear(n: usize) -> (TractGraph, FeatureSchema) {
        // 1 km east-west spacing on the equator
        let step = (1.0 / crate::geodata::EARTH_RADIUS_KM).to_degrees();
        let tracts = (0..n)
            .map(|i| Tract::new(format!("t{i}"), LatLon::new(0.0, i as f64 * step), vec![1.0, 2.0]))
            .collect();
        let g = build_graph(tracts, AdjacencyPolicy::KNearest { k: 1 }, DistanceSource::GreatCircle).unwrap();
        let schema = FeatureSchema::from_names(&["bike_lane_km", "floor_area"], Category::Infrastructure).unwrap();
        (g, schema)
    }

    fn change(rel: Option<f64>) -> PairChange {
        PairChange {
            origin: "a".into(),
            destination: "b".into(),
            baseline: if rel.is_some() { 1.0 } else { 0.0 },
            scenario: 1.0 + rel.unwrap_or(0.0),
            relative_change: rel,
        }
    }

    fn diff_of(rels: &[f64]) -> FlowDiff {
        FlowDiff {
            scenario: "s".into(),
            modified: vec![],
            pairs: rels.iter().map(|&r| change(Some(r))).collect(),
            zero_baseline: vec![],
        }
    }

    #[test]
    fn empty_edit_list_is_identity() {
        let (g, s) = collinear(3);
        let out = apply_scenario(&g, &s, &Scenario::empty("noop")).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn bike_lanes_touch_only_edited_entries() {
        let (g, s) = collinear(6);
        let edits = (1..5)
            .map(|i| Edit {
                tract_id: format!("t{i}"),
                indicator: "bike_lane_km".into(),
                op: EditOp::Add,
                value: 6.0,
            })
            .collect();
        let sc = Scenario {
            name: "cycle paths".into(),
            note: None,
            edits,
        };
        let before = g.clone();
        let out = apply_scenario(&g, &s, &sc).unwrap();
        assert_eq!(g, before);
        let mut changed = 0;
        for (a, b) in g.tracts.iter().zip(&out.tracts) {
            for (k, (x, y)) in a.features.iter().zip(&b.features).enumerate() {
                if x != y {
                    changed += 1;
                    assert_eq!(k, 0);
                    assert_eq!(*y, 7.0);
                }
            }
        }
        assert_eq!(changed, 4);
        assert_eq!(out.edges, g.edges);
    }

    #[test]
    fn edit_errors() {
        let (g, s) = collinear(3);
        let edit = |tract: &str, ind: &str, op, value| Scenario {
            name: "x".into(),
            note: None,
            edits: vec![Edit {
                tract_id: tract.into(),
                indicator: ind.into(),
                op,
                value,
            }],
        };
        assert!(matches!(
            apply_scenario(&g, &s, &edit("t0", "bus_lane_km", EditOp::Set, 1.0)),
            Err(ScenarioError::UnknownIndicator(_))
        ));
        assert!(matches!(
            apply_scenario(&g, &s, &edit("zz", "floor_area", EditOp::Set, 1.0)),
            Err(ScenarioError::UnknownTract(_))
        ));
        assert!(matches!(
            apply_scenario(&g, &s, &edit("t0", "floor_area", EditOp::Add, -5.0)),
            Err(ScenarioError::NegativeForbidden { .. })
        ));
    }

    #[test]
    fn content_hash_tracks_content() {
        let a = Scenario::empty("a");
        assert_eq!(a.content_hash(), Scenario::empty("a").content_hash());
        assert_ne!(a.content_hash(), Scenario::empty("b").content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn neighborhood_small_radius_keeps_modified_only() {
        let (g, _) = collinear(5);
        let set = neighborhood_pairs(&g, &[1, 3], 0.5).unwrap();
        assert_eq!(set, BTreeSet::from([(1, 3), (3, 1)]));
        assert!(neighborhood_pairs(&g, &[1], 0.5).unwrap().is_empty());
    }

    #[test]
    fn neighborhood_collinear_middle() {
        let (g, _) = collinear(3);
        let set = neighborhood_pairs(&g, &[1], 1.0).unwrap();
        assert_eq!(set.len(), 6);
        assert!(matches!(neighborhood_pairs(&g, &[1], 0.0), Err(ScenarioError::InvalidRadius(_))));
    }

    #[test]
    fn summary_by_hand() {
        let s = summarize(&diff_of(&[0.13, 0.13, 0.13]), FilterDescriptor::all(), 40).unwrap();
        assert_abs_diff_eq!(s.mean, 0.13, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 0.0, epsilon = 1e-15);
        let s = summarize(&diff_of(&[0.1, 0.3]), FilterDescriptor::all(), 40).unwrap();
        assert_abs_diff_eq!(s.mean, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 0.1, epsilon = 1e-15);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 2);
        assert_eq!(s.histogram.counts[0], 1);
        assert_eq!(s.histogram.counts[39], 1);
    }

    #[test]
    fn summary_single_pair_and_errors() {
        let s = summarize(&diff_of(&[0.5]), FilterDescriptor::radius(2.0), 40).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(s.histogram.edges.len(), 41);
        assert_eq!(s.filter.label, "2 km");
        let only_zero = FlowDiff {
            zero_baseline: vec![change(None)],
            ..diff_of(&[])
        };
        assert!(matches!(
            summarize(&only_zero, FilterDescriptor::all(), 40),
            Err(ScenarioError::NoDefinedPairs)
        ));
    }

    #[test]
    fn scenario_json_round_trip() {
        let text = r#"{"name":"cycle","edits":[{"tract_id":"t1","indicator":"bike_lane_km","op":"add","value":6.0}]}"#;
        let s = Scenario::from_json(text, "mem").unwrap();
        assert_eq!(s.edits[0].op, EditOp::Add);
        let back = Scenario::from_json(&serde_json::to_string(&s).unwrap(), "mem").unwrap();
        assert_eq!(back, s);
    }
}

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::TractGraph;
use super::GeoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, GeoError> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(GeoError::UnknownSplit(other.to_string())),
        }
    }
}

/// One observed origin-destination commuter count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFlow {
    pub origin: String,
    pub destination: String,
    pub commuters: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: String,
    pub destination: String,
    pub commuters: u64,
    pub split: Split,
}

/// Sparse OD commuter counts with split labels, sorted by (origin, destination).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTable {
    pub records: Vec<FlowRecord>,
}

/// A flow with endpoints resolved to graph indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexedFlow {
    pub origin: usize,
    pub destination: usize,
    pub commuters: f64,
    pub split: Split,
}

/// Split proportions for train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    /// Per-class counts: train and val rounded half-away-from-zero, test takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = (((n as f64) * self.train).round() as usize).min(n);
        let val = (((n as f64) * self.val).round() as usize).min(n - train);
        (train, val, n - train - val)
    }

    fn validate(&self) -> Result<(), GeoError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0)
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(GeoError::InvalidRatios(parts));
        }
        Ok(())
    }
}

/// Assigns every OD pair to exactly one split, deterministically for a seed.
///
/// Records are first sorted by (origin, destination) so the result does not
/// depend on input order.
pub fn split_flows(records: Vec<RawFlow>, ratios: SplitRatios, seed: u64) -> Result<FlowTable, GeoError> {
    if records.is_empty() {
        return Err(GeoError::EmptyInput);
    }
    ratios.validate()?;
    let mut records = records;
    records.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));
    if let Some(w) = records
        .windows(2)
        .find(|w| w[0].origin == w[1].origin && w[0].destination == w[1].destination)
    {
        return Err(GeoError::DuplicatePair(w[0].origin.clone(), w[0].destination.clone()));
    }

    let n = records.len();
    let (n_train, n_val, _) = ratios.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(FlowTable {
        records: records
            .into_iter()
            .zip(splits)
            .map(|(r, split)| FlowRecord {
                origin: r.origin,
                destination: r.destination,
                commuters: r.commuters,
                split,
            })
            .collect(),
    })
}

impl FlowTable {
    /// Builds a table from already-labelled records, checking pair uniqueness.
    pub fn from_records(mut records: Vec<FlowRecord>) -> Result<Self, GeoError> {
        records.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].origin == w[1].origin && w[0].destination == w[1].destination)
        {
            return Err(GeoError::DuplicatePair(w[0].origin.clone(), w[0].destination.clone()));
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &FlowRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Resolves ids against `graph`; self-pairs are rejected.
    pub fn resolve(&self, graph: &TractGraph) -> Result<Vec<IndexedFlow>, GeoError> {
        let index = graph.id_index();
        self.records
            .iter()
            .map(|r| {
                let o = *index
                    .get(r.origin.as_str())
                    .ok_or_else(|| GeoError::UnknownTract(r.origin.clone()))?;
                let d = *index
                    .get(r.destination.as_str())
                    .ok_or_else(|| GeoError::UnknownTract(r.destination.clone()))?;
                if o == d {
                    return Err(GeoError::SelfPair(r.origin.clone()));
                }
                Ok(IndexedFlow {
                    origin: o,
                    destination: d,
                    commuters: r.commuters as f64,
                    split: r.split,
                })
            })
            .collect()
    }

    /// Writes `origin_id,dest_id,commuters,split`.
    pub fn write_csv(&self, path: &Path) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| GeoError::csv(path, e))?;
        w.write_record(["origin_id", "dest_id", "commuters", "split"])
            .map_err(|e| GeoError::csv(path, e))?;
        for r in &self.records {
            w.write_record([
                r.origin.as_str(),
                r.destination.as_str(),
                &r.commuters.to_string(),
                r.split.as_str(),
            ])
            .map_err(|e| GeoError::csv(path, e))?;
        }
        w.flush().map_err(|e| GeoError::io(path, e))
    }
}

/// Contents of a flow file: either raw triples or records already carrying a split.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedFlows {
    Raw(Vec<RawFlow>),
    Split(FlowTable),
}

/// Reads `origin_id,dest_id,commuters[,split]`. Self-pairs (`origin == dest`)
/// are dropped and counted, since intra-tract commutes are not modeled.
pub fn load_flows(path: &Path) -> Result<(LoadedFlows, usize), GeoError> {
    if !path.exists() {
        return Err(GeoError::MissingInput(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GeoError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| GeoError::csv(path, e))?.clone();
    if headers.len() < 3 {
        return Err(GeoError::MissingColumn("commuters".into()));
    }
    let has_split = headers.len() >= 4 && headers[3].eq_ignore_ascii_case("split");

    let mut raw = Vec::new();
    let mut labelled = Vec::new();
    let mut dropped = 0;
    let mut seen = BTreeSet::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| GeoError::csv(path, e))?;
        let origin = rec.get(0).unwrap_or("").to_string();
        let destination = rec.get(1).unwrap_or("").to_string();
        if origin.is_empty() || destination.is_empty() {
            return Err(GeoError::MissingValue {
                row,
                column: if origin.is_empty() { "origin_id" } else { "dest_id" }.into(),
            });
        }
        let commuters: u64 = rec
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| GeoError::NonFiniteValue {
                row,
                column: "commuters".into(),
            })?;
        if origin == destination {
            dropped += 1;
            continue;
        }
        if !seen.insert((origin.clone(), destination.clone())) {
            return Err(GeoError::DuplicatePair(origin, destination));
        }
        if has_split {
            let split: Split = rec.get(3).unwrap_or("").parse()?;
            labelled.push(FlowRecord {
                origin,
                destination,
                commuters,
                split,
            });
        } else {
            raw.push(RawFlow {
                origin,
                destination,
                commuters,
            });
        }
    }
    let flows = if has_split {
        LoadedFlows::Split(FlowTable::from_records(labelled)?)
    } else {
        LoadedFlows::Raw(raw)
    };
    Ok((flows, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(n: usize) -> Vec<RawFlow> {
        (0..n)
            .map(|i| RawFlow {
                origin: format!("o{}", i / 7),
                destination: format!("d{}", i % 7 + i),
                commuters: (i % 5 + 1) as u64,
            })
            .collect()
    }

    #[test]
    fn ten_pairs_six_two_two() {
        let t = split_flows(pairs(10), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            (t.count(Split::Train), t.count(Split::Val), t.count(Split::Test)),
            (6, 2, 2)
        );
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = split_flows(pairs(50), SplitRatios::default(), 7).unwrap();
        let mut shuffled = pairs(50);
        shuffled.reverse();
        let b = split_flows(shuffled, SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = split_flows(pairs(50), SplitRatios::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn survey_sized_counts() {
        // pair total of the larger survey city's train/val/test split
        assert_eq!(SplitRatios::default().counts(15_945), (9_567, 3_189, 3_189));
        let t = split_flows(pairs(15_945), SplitRatios::default(), 1).unwrap();
        assert_eq!(t.count(Split::Train), 9_567);
        assert_eq!(t.count(Split::Val), 3_189);
        assert_eq!(t.count(Split::Test), 3_189);
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(
            split_flows(vec![], SplitRatios::default(), 0).unwrap_err(),
            GeoError::EmptyInput
        );
    }

    #[test]
    fn duplicate_pair_rejected() {
        let mut p = pairs(3);
        p.push(p[0].clone());
        assert!(matches!(
            split_flows(p, SplitRatios::default(), 0),
            Err(GeoError::DuplicatePair(..))
        ));
    }

    #[test]
    fn loads_split_column_and_drops_self_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "origin_id,dest_id,commuters,split\na,b,3,train\nb,a,1,test\na,a,9,val\n").unwrap();
        let (flows, dropped) = load_flows(&p).unwrap();
        assert_eq!(dropped, 1);
        match flows {
            LoadedFlows::Split(t) => {
                assert_eq!(t.len(), 2);
                assert_eq!(t.records[1].split, Split::Test);
            }
            LoadedFlows::Raw(_) => panic!("expected labelled flows"),
        }
    }

    #[test]
    fn missing_flow_file() {
        assert!(matches!(
            load_flows(Path::new("/nonexistent/flows.csv")),
            Err(GeoError::MissingInput(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..400, seed in any::<u64>()) {
            let t = split_flows(pairs(n), SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(t.len(), n);
            let total = Split::ALL.iter().map(|s| t.count(*s)).sum::<usize>();
            prop_assert_eq!(total, n);
            let expect = [0.6, 0.2, 0.2];
            for (s, r) in Split::ALL.iter().zip(expect) {
                let diff = t.count(*s) as f64 - r * n as f64;
                prop_assert!(diff.abs() <= 1.0, "{s}: {diff}");
            }
        }
    }
}

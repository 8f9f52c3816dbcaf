use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::NumericError;

/// Format tag written into every parameter checkpoint segment.
pub const PARAM_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    value: Matrix,
    grad: Matrix,
    /// Optimizer slots (momentum velocity, or Adam first/second moments).
    slots: Vec<Matrix>,
}

/// Named parameter matrices with matching gradient accumulators and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
    /// Seed used for initialization; carried into checkpoints.
    pub init_seed: u64,
    /// Number of optimizer steps taken (Adam bias correction).
    pub(crate) steps: u64,
}

impl ParamStore {
    pub fn new(init_seed: u64) -> Self {
        Self {
            init_seed,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        let (r, c) = value.shape();
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            grad: Matrix::zeros(r, c),
            slots: Vec::new(),
        });
        self.by_name.insert(name, id);
        id
    }

    /// Uniform Glorot initialization: U(-b, b), b = sqrt(6 / (fan_in + fan_out)).
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix) {
        self.entries[id.0].grad.add_assign(g);
    }

    pub(crate) fn slots_mut(&mut self, id: ParamId, count: usize) -> (&mut Matrix, &mut Matrix, &mut Vec<Matrix>) {
        let entry = &mut self.entries[id.0];
        while entry.slots.len() < count {
            let (r, c) = entry.value.shape();
            entry.slots.push(Matrix::zeros(r, c));
        }
        (&mut entry.value, &mut entry.grad, &mut entry.slots)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.iter().all(|e| e.grad.is_finite())
    }

    /// Parameters only; optimizer state and gradients are not persisted.
    pub fn to_segment(&self) -> ParamSegment {
        ParamSegment {
            format_version: PARAM_FORMAT_VERSION,
            init_seed: self.init_seed,
            params: self
                .entries
                .iter()
                .map(|e| ParamBlob {
                    name: e.name.clone(),
                    rows: e.value.rows(),
                    cols: e.value.cols(),
                    values: e.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_segment(segment: &ParamSegment) -> Result<Self, NumericError> {
        if segment.format_version != PARAM_FORMAT_VERSION {
            return Err(NumericError::UnsupportedVersion(segment.format_version));
        }
        let mut store = ParamStore::new(segment.init_seed);
        for blob in &segment.params {
            if blob.values.len() != blob.rows * blob.cols {
                return Err(NumericError::ShapeMismatch {
                    name: blob.name.clone(),
                    expected: (blob.rows, blob.cols),
                    found: blob.values.len(),
                });
            }
            if store.by_name.contains_key(&blob.name) {
                return Err(NumericError::DuplicateParam(blob.name.clone()));
            }
            store.insert(
                blob.name.clone(),
                Matrix::from_vec(blob.rows, blob.cols, blob.values.clone()),
            );
        }
        Ok(store)
    }

    /// Overwrites every parameter value from `other`, matched by name.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for e in &mut self.entries {
            let id = other.by_name[&e.name];
            e.value = other.entries[id.0].value.clone();
        }
    }
}

/// Serialized parameters: named blobs with shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub format_version: u32,
    pub init_seed: u64,
    pub params: Vec<ParamBlob>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

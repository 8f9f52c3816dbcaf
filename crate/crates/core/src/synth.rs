//! Synthetic gravity-model city used for end-to-end checks and demos.
//!
//! Tracts are scattered over a disk with a minimum spacing. Each tract has a
//! mass-like indicator `m` and a few indicators that carry no signal. Expected
//! flow between two tracts is `c * m_i * m_j / d_ij^2`; observed counts are
//! Poisson draws around it, and only positive counts are recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::gat::GatConfig;
use crate::gbrt::BoostConfig;
use crate::geodata::{great_circle_km, Category, FeatureSchema, Indicator, LatLon, RawFlow, Tract};
use crate::model::ModelConfig;
use crate::numeric::Optimizer;
use crate::trainer::TrainConfig;

pub const MASS: &str = "population_k";
pub const BIKE_LANE: &str = "bike_lane_km";
pub const BUS_LANE: &str = "bus_lane_km";
pub const LANDMARKS: &str = "landmarks";

const KM_PER_DEGREE: f64 = 111.195;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GravityConfig {
    pub n_tracts: usize,
    pub seed: u64,
    pub center: LatLon,
    pub radius_km: f64,
    pub min_spacing_km: f64,
    /// Gravity constant `c`.
    pub scale: f64,
    /// Masses are log-uniform on `[mass_min, mass_max)`.
    pub mass_min: f64,
    pub mass_max: f64,
}

impl Default for GravityConfig {
    fn default() -> Self {
        Self {
            n_tracts: 200,
            seed: 42,
            center: LatLon::new(-8.05, -34.9),
            radius_km: 6.0,
            min_spacing_km: 0.45,
            scale: 1.0,
            mass_min: 1.0,
            mass_max: 6.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GravityWorld {
    pub tracts: Vec<Tract>,
    pub schema: FeatureSchema,
    /// Observed (positive) counts.
    pub flows: Vec<RawFlow>,
    pub config: GravityConfig,
}

impl GravityWorld {
    pub fn mass_index(&self) -> usize {
        self.schema.index_of(MASS).expect("mass indicator present")
    }

    /// Noise-free gravity expectation between two tracts.
    pub fn expected(&self, i: usize, j: usize) -> f64 {
        let m = self.mass_index();
        let d = great_circle_km(self.tracts[i].centroid, self.tracts[j].centroid);
        self.config.scale * self.tracts[i].features[m] * self.tracts[j].features[m] / (d * d)
    }
}

/// Pipeline settings used for the synthetic benchmark.
///
/// Training runs on `ln(1 + count)`: the affine flow head is additive in the
/// embeddings, and gravity flows are additive only in log space.
pub fn benchmark_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        gat: GatConfig {
            layers: 2,
            hidden_dim: 32,
            embedding_dim: 16,
            attention_heads: 1,
            distance_scale_km: 0.5,
        },
        train: TrainConfig {
            epochs: 150,
            batch_size: 128,
            lr: 0.01,
            patience: 15,
            seed,
            optimizer: Optimizer::adam(),
            log1p_targets: true,
            ..TrainConfig::default()
        },
        boost: BoostConfig::default(),
    }
}

pub fn gravity_schema() -> FeatureSchema {
    let ind = |name: &str, category| Indicator {
        name: name.to_string(),
        category,
        nonnegative: true,
    };
    FeatureSchema::new(vec![
        ind(MASS, Category::LandUse),
        ind(BIKE_LANE, Category::Infrastructure),
        ind(BUS_LANE, Category::Infrastructure),
        ind(LANDMARKS, Category::Speciality),
    ])
    .expect("distinct names")
}

fn offset(center: LatLon, east_km: f64, north_km: f64) -> LatLon {
    let lat = center.lat + north_km / KM_PER_DEGREE;
    let lon = center.lon + east_km / (KM_PER_DEGREE * center.lat.to_radians().cos());
    LatLon::new(lat, lon)
}

pub fn gravity_world(config: &GravityConfig) -> GravityWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(config.n_tracts);
    let min2 = config.min_spacing_km * config.min_spacing_km;
    let mut attempts = 0usize;
    while points.len() < config.n_tracts {
        attempts += 1;
        assert!(attempts < 1_000_000, "cannot place tracts with the requested spacing");
        let x = rng.random_range(-config.radius_km..config.radius_km);
        let y = rng.random_range(-config.radius_km..config.radius_km);
        if x * x + y * y > config.radius_km * config.radius_km {
            continue;
        }
        if points.iter().all(|&(px, py)| (px - x).powi(2) + (py - y).powi(2) >= min2) {
            points.push((x, y));
        }
    }

    let schema = gravity_schema();
    let tracts: Vec<Tract> = points
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let mass = rng.random_range(config.mass_min.ln()..config.mass_max.ln()).exp();
            let bike = (rng.random::<f64>() * 3.0 * 100.0).round() / 100.0;
            let bus = (rng.random::<f64>() * 2.0 * 100.0).round() / 100.0;
            let landmarks = rng.random_range(0..4) as f64;
            Tract::new(
                format!("T{k:04}"),
                offset(config.center, x, y),
                vec![mass, bike, bus, landmarks],
            )
        })
        .collect();

    let mut world = GravityWorld {
        tracts,
        schema,
        flows: Vec::new(),
        config: config.clone(),
    };
    let n = world.tracts.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let lambda = world.expected(i, j);
            let count = Poisson::new(lambda).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
            if count > 0 {
                world.flows.push(RawFlow {
                    origin: world.tracts[i].id.clone(),
                    destination: world.tracts[j].id.clone(),
                    commuters: count,
                });
            }
        }
    }
    world
}

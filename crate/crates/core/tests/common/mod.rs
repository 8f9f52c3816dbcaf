#![allow(dead_code)]

use flowplan_core::geodata::{
    build_graph, AdjacencyPolicy, Category, DistanceSource, Edge, FeatureSchema, LatLon, Tract, TractGraph,
    EARTH_RADIUS_KM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Degrees of longitude per km on the equator.
pub fn km_step() -> f64 {
    (1.0 / EARTH_RADIUS_KM).to_degrees()
}

pub fn schema(names: &[&str]) -> FeatureSchema {
    FeatureSchema::from_names(names, Category::LandUse).unwrap()
}

pub fn fitted(graph: &TractGraph, schema: &FeatureSchema) -> FeatureSchema {
    flowplan_core::model::fit_schema(graph, schema)
}

/// Path graph t0 - t1 - ... on the equator with 1 km spacing and random features.
pub fn path_graph(n: usize, dim: usize, seed: u64) -> TractGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracts: Vec<Tract> = (0..n)
        .map(|i| {
            let f = (0..dim).map(|_| rng.random_range(0.0..5.0)).collect();
            Tract::new(format!("t{i:02}"), LatLon::new(0.0, i as f64 * km_step()), f)
        })
        .collect();
    let edges = (0..n - 1)
        .map(|i| Edge {
            a: i,
            b: i + 1,
            km: 1.0,
            minutes: None,
        })
        .collect();
    TractGraph::from_parts(tracts, edges, AdjacencyPolicy::KNearest { k: 1 }, DistanceSource::GreatCircle).unwrap()
}

/// Random scatter of tracts with a k-nearest graph.
pub fn random_graph(n: usize, dim: usize, k: usize, seed: u64) -> TractGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracts: Vec<Tract> = (0..n)
        .map(|i| {
            let f = (0..dim).map(|_| rng.random_range(0.0..5.0)).collect();
            Tract::new(
                format!("r{i:03}"),
                LatLon::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
                f,
            )
        })
        .collect();
    build_graph(tracts, AdjacencyPolicy::KNearest { k }, DistanceSource::GreatCircle).unwrap()
}

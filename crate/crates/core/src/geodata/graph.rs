use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::distance::{DistanceProvider, DistanceSource};
use super::tract::Tract;
use super::GeoError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdjacencyPolicy {
    /// Each tract links to its `k` nearest tracts; the union is symmetrized.
    KNearest { k: usize },
    /// Every pair within `km` is linked.
    Radius { km: f64 },
}

impl Default for AdjacencyPolicy {
    fn default() -> Self {
        AdjacencyPolicy::KNearest { k: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub km: f64,
    /// Trip duration, housed for completeness; not consumed by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minutes: Option<f64>,
}

/// Undirected weighted geo-adjacency network over tracts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphParts")]
pub struct TractGraph {
    pub tracts: Vec<Tract>,
    /// Stored with `a < b`, sorted.
    pub edges: Vec<Edge>,
    pub policy: AdjacencyPolicy,
    pub distance: DistanceSource,
    /// Per node: `(neighbor index, km)` sorted by neighbor tract id.
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Deserialize)]
struct GraphParts {
    tracts: Vec<Tract>,
    edges: Vec<Edge>,
    policy: AdjacencyPolicy,
    distance: DistanceSource,
}

impl TryFrom<GraphParts> for TractGraph {
    type Error = GeoError;

    fn try_from(p: GraphParts) -> Result<Self, GeoError> {
        TractGraph::from_parts(p.tracts, p.edges, p.policy, p.distance)
    }
}

impl TractGraph {
    /// Assembles a graph from parts, checking the structural invariants.
    pub fn from_parts(
        tracts: Vec<Tract>,
        edges: Vec<Edge>,
        policy: AdjacencyPolicy,
        distance: DistanceSource,
    ) -> Result<Self, GeoError> {
        let mut graph = TractGraph {
            tracts,
            edges,
            policy,
            distance,
            adjacency: Vec::new(),
        };
        graph.canonicalize_edges()?;
        graph.rebuild_adjacency();
        Ok(graph)
    }

    fn canonicalize_edges(&mut self) -> Result<(), GeoError> {
        let n = self.tracts.len();
        for e in &mut self.edges {
            if e.a >= n || e.b >= n {
                return Err(GeoError::InvalidEdge(format!("{}-{} out of range", e.a, e.b)));
            }
            if e.a == e.b {
                return Err(GeoError::InvalidEdge(format!("self-loop at {}", e.a)));
            }
            if !(e.km.is_finite() && e.km > 0.0) {
                return Err(GeoError::InvalidEdge(format!(
                    "{}-{} has distance {}",
                    e.a, e.b, e.km
                )));
            }
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
        }
        self.edges.sort_by_key(|e| (e.a, e.b));
        self.edges.dedup_by(|x, y| (x.a, x.b) == (y.a, y.b));
        Ok(())
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.tracts.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.km));
            adj[e.b].push((e.a, e.km));
        }
        for list in &mut adj {
            list.sort_by(|x, y| self.tracts[x.0].id.cmp(&self.tracts[y.0].id));
        }
        self.adjacency = adj;
    }

    pub fn len(&self) -> usize {
        self.tracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracts.is_empty()
    }

    /// Neighbors of `i` (excluding `i`), sorted by tract id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tracts.iter().position(|t| t.id == id)
    }

    pub fn id_index(&self) -> std::collections::HashMap<&str, usize> {
        self.tracts
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect()
    }

    /// Edge weight between `a` and `b`, if adjacent.
    pub fn edge_km(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .iter()
            .find(|(j, _)| *j == b)
            .map(|(_, km)| *km)
    }

    /// Travel distance between any two tracts from the graph's distance source.
    pub fn pair_km(&self, a: usize, b: usize) -> f64 {
        self.distance.km(&self.tracts[a], &self.tracts[b])
    }

    pub fn is_connected(&self) -> bool {
        if self.tracts.is_empty() {
            return true;
        }
        self.hop_distances(&[0]).iter().all(Option::is_some)
    }

    /// BFS hop counts from the nearest of `sources`.
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.tracts.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes within `hops` of any source (sources included).
    pub fn within_hops(&self, sources: &[usize], hops: usize) -> Vec<bool> {
        self.hop_distances(sources)
            .into_iter()
            .map(|d| d.is_some_and(|d| d <= hops))
            .collect()
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> TractGraph {
        assert_eq!(perm.len(), self.tracts.len());
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let tracts = perm.iter().map(|&old| self.tracts[old].clone()).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                a: inverse[e.a],
                b: inverse[e.b],
                km: e.km,
                minutes: e.minutes,
            })
            .collect();
        TractGraph::from_parts(tracts, edges, self.policy, self.distance.clone())
            .expect("permutation preserves graph invariants")
    }

    /// Copy of the graph with replaced tract features; topology untouched.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> TractGraph {
        assert_eq!(features.len(), self.tracts.len());
        let mut g = self.clone();
        for (t, f) in g.tracts.iter_mut().zip(features) {
            t.features = f;
        }
        g
    }
}

/// Builds the geo-adjacency network.
///
/// With `KNearest`, ties in distance are broken by tract id. Components left
/// disconnected by the policy are joined through their shortest cross edge.
pub fn build_graph(
    tracts: Vec<Tract>,
    policy: AdjacencyPolicy,
    distance: DistanceSource,
) -> Result<TractGraph, GeoError> {
    let n = tracts.len();
    if n < 2 {
        return Err(GeoError::TooFewTracts(n));
    }
    match policy {
        AdjacencyPolicy::KNearest { k: 0 } => {
            return Err(GeoError::InvalidPolicy("k must be at least 1".into()))
        }
        AdjacencyPolicy::Radius { km } if !(km.is_finite() && km > 0.0) => {
            return Err(GeoError::InvalidPolicy("radius must be positive".into()))
        }
        _ => {}
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance.km(&tracts[i], &tracts[j]);
            if !(d.is_finite() && d > 0.0) {
                return Err(GeoError::DegenerateGeometry {
                    a: tracts[i].id.clone(),
                    b: tracts[j].id.clone(),
                });
            }
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut edges = Vec::new();
    match policy {
        AdjacencyPolicy::KNearest { k } => {
            for i in 0..n {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&x, &y| {
                    dist[i * n + x]
                        .total_cmp(&dist[i * n + y])
                        .then_with(|| tracts[x].id.cmp(&tracts[y].id))
                });
                for &j in others.iter().take(k) {
                    edges.push(Edge {
                        a: i.min(j),
                        b: i.max(j),
                        km: dist[i * n + j],
                        minutes: None,
                    });
                }
            }
        }
        AdjacencyPolicy::Radius { km } => {
            for i in 0..n {
                for j in (i + 1)..n {
                    if dist[i * n + j] <= km {
                        edges.push(Edge {
                            a: i,
                            b: j,
                            km: dist[i * n + j],
                            minutes: None,
                        });
                    }
                }
            }
        }
    }

    let mut graph = TractGraph::from_parts(tracts, edges, policy, distance)?;
    connect_components(&mut graph, &dist);
    Ok(graph)
}

fn connect_components(graph: &mut TractGraph, dist: &[f64]) {
    let n = graph.len();
    loop {
        let reach = graph.hop_distances(&[0]);
        if reach.iter().all(Option::is_some) {
            return;
        }
        // shortest edge from the component of node 0 to anything outside it
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| reach[i].is_some()) {
            for j in (0..n).filter(|&j| reach[j].is_none()) {
                let d = dist[i * n + j];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (km, i, j) = best.expect("unreached node exists");
        graph.edges.push(Edge {
            a: i.min(j),
            b: i.max(j),
            km,
            minutes: None,
        });
        graph
            .canonicalize_edges()
            .expect("joining edge is valid");
        graph.rebuild_adjacency();
    }
}

//! The matching graph: model and dataset vertices joined by performance
//! edges (model–dataset, weighted by the post-fine-tuning score) and
//! similarity edges (dataset–dataset, weighted by the distance between
//! their embedding summaries). Model–model edges never exist.
//!
//! Both weights are distances. Random walks need attraction weights, so each
//! edge also carries `affinity = exp(-distance / tau)` where `tau` is the
//! median edge distance of the graph at build time. `tau` is frozen
//! afterwards: inserting a query dataset or dropping edges reuses it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frechet::{DatasetDistance, Frechet};
use crate::fsutil;
use crate::perf::PerfTable;
use crate::seed;
use crate::stats::EmbeddingStats;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Model,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    pub kind: VertexKind,
    pub name: String,
}

impl VertexId {
    pub fn model(name: impl Into<String>) -> Self {
        Self {
            kind: VertexKind::Model,
            name: name.into(),
        }
    }

    pub fn dataset(name: impl Into<String>) -> Self {
        Self {
            kind: VertexKind::Dataset,
            name: name.into(),
        }
    }
}

impl std::fmt::Display for VertexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let prefix = match self.kind {
            VertexKind::Model => "model",
            VertexKind::Dataset => "dataset",
        };
        write!(f, "{prefix}:{}", self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Performance,
    Similarity,
}

/// Undirected edge between vertex indices `a` and `b`. Performance edges
/// store the model in `a`; similarity edges store `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    pub distance: f64,
    pub affinity: f64,
}

pub fn affinity(distance: f64, tau: f64) -> f64 {
    (-distance / tau).exp().max(f64::MIN_POSITIVE)
}

/// Median of `values`; mean of the two middle values for even counts.
fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// `tau` for a set of edge distances: their median, falling back to the
/// mean positive distance (or 1) when the median is zero.
pub fn temperature(distances: &[f64]) -> f64 {
    match median(distances) {
        Some(m) if m > 0.0 => m,
        _ => {
            let positive: Vec<f64> = distances.iter().copied().filter(|&d| d > 0.0).collect();
            if positive.is_empty() {
                1.0
            } else {
                positive.iter().sum::<f64>() / positive.len() as f64
            }
        }
    }
}

/// Pairwise distances between dataset summaries, computed once and reused
/// across graph builds.
#[derive(Debug, Clone)]
pub struct SimilarityTable {
    pub dataset_ids: Vec<String>,
    pub probe_id: String,
    pub dim: usize,
    /// Upper triangle, row-major.
    distances: Vec<f64>,
}

impl SimilarityTable {
    pub fn compute(dataset_stats: &BTreeMap<String, EmbeddingStats>, distance: &dyn DatasetDistance) -> Result<Self> {
        let mut iter = dataset_stats.values();
        let first = iter
            .next()
            .ok_or_else(|| Error::Input("no dataset statistics given".into()))?;
        for s in iter {
            if s.probe_id != first.probe_id {
                return Err(Error::ProbeMismatch {
                    left: first.probe_id.clone(),
                    right: s.probe_id.clone(),
                });
            }
            if s.dim() != first.dim() {
                return Err(Error::DimMismatch {
                    expected: first.dim(),
                    got: s.dim(),
                });
            }
        }
        let refs: Vec<&EmbeddingStats> = dataset_stats.values().collect();
        let distances = distance.pairwise(&refs)?;
        Ok(Self {
            dataset_ids: dataset_stats.keys().cloned().collect(),
            probe_id: first.probe_id.clone(),
            dim: first.dim(),
            distances,
        })
    }

    /// Distance between the `i`-th and `j`-th dataset (`i != j`).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let n = self.dataset_ids.len();
        self.distances[i * n - i * (i + 1) / 2 + (j - i - 1)]
    }
}

#[derive(Debug, Clone)]
pub struct MatchingGraph {
    vertices: Vec<VertexId>,
    edges: Vec<Edge>,
    tau: f64,
    probe_id: String,
    index: HashMap<VertexId, usize>,
}

impl PartialEq for MatchingGraph {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.edges == other.edges
            && self.tau == other.tau
            && self.probe_id == other.probe_id
    }
}

/// Build the graph with Fréchet similarity edges.
pub fn build_graph(
    perf: &PerfTable,
    dataset_stats: &BTreeMap<String, EmbeddingStats>,
    model_ids: &[String],
) -> Result<MatchingGraph> {
    build_graph_with(perf, dataset_stats, model_ids, &Frechet)
}

pub fn build_graph_with(
    perf: &PerfTable,
    dataset_stats: &BTreeMap<String, EmbeddingStats>,
    model_ids: &[String],
    distance: &dyn DatasetDistance,
) -> Result<MatchingGraph> {
    let sims = SimilarityTable::compute(dataset_stats, distance)?;
    MatchingGraph::from_similarities(perf, &sims, model_ids)
}

impl MatchingGraph {
    /// Assemble a graph from precomputed similarities. Every dataset of
    /// `sims` becomes a vertex, whether or not it has performance entries.
    pub fn from_similarities(perf: &PerfTable, sims: &SimilarityTable, model_ids: &[String]) -> Result<Self> {
        if perf.is_empty() {
            return Err(Error::Input("performance table is empty".into()));
        }
        let mut vertices: Vec<VertexId> = model_ids.iter().map(VertexId::model).collect();
        vertices.extend(sims.dataset_ids.iter().map(VertexId::dataset));
        let index = build_index(&vertices)?;

        let n_models = model_ids.len();
        let n_datasets = sims.dataset_ids.len();
        let mut edges = Vec::with_capacity(n_datasets * n_datasets / 2 + perf.len());
        for i in 0..n_datasets {
            for j in (i + 1)..n_datasets {
                edges.push(Edge {
                    a: n_models + i,
                    b: n_models + j,
                    kind: EdgeKind::Similarity,
                    distance: sims.get(i, j),
                    affinity: 0.0,
                });
            }
        }
        for ((m, d), &score) in &perf.entries {
            let a = *index
                .get(&VertexId::model(m))
                .ok_or_else(|| Error::UnknownId(format!("model {m}")))?;
            let b = *index
                .get(&VertexId::dataset(d))
                .ok_or_else(|| Error::UnknownId(format!("dataset {d}")))?;
            if !score.is_finite() || score < 0.0 {
                return Err(Error::Input(format!(
                    "score for ({m}, {d}) must be finite and non-negative"
                )));
            }
            edges.push(Edge {
                a,
                b,
                kind: EdgeKind::Performance,
                distance: score,
                affinity: 0.0,
            });
        }

        let distances: Vec<f64> = edges.iter().map(|e| e.distance).collect();
        let tau = temperature(&distances);
        for e in &mut edges {
            e.affinity = affinity(e.distance, tau);
        }
        let graph = Self {
            vertices,
            edges,
            tau,
            probe_id: sims.probe_id.clone(),
            index,
        };
        graph.check_invariants()?;
        Ok(graph)
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn probe_id(&self) -> &str {
        &self.probe_id
    }

    pub fn vertex_index(&self, id: &VertexId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn performance_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Performance)
    }

    pub fn similarity_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Similarity)
    }

    pub fn dataset_names(&self) -> impl Iterator<Item = &str> {
        self.vertices
            .iter()
            .filter(|v| v.kind == VertexKind::Dataset)
            .map(|v| v.name.as_str())
    }

    pub fn model_names(&self) -> impl Iterator<Item = &str> {
        self.vertices
            .iter()
            .filter(|v| v.kind == VertexKind::Model)
            .map(|v| v.name.as_str())
    }

    /// `(model, dataset)` names of every performance edge.
    pub fn performance_pairs(&self) -> Vec<(String, String)> {
        self.performance_edges()
            .map(|e| (self.vertices[e.a].name.clone(), self.vertices[e.b].name.clone()))
            .collect()
    }

    /// Neighbor lists `(vertex, affinity)` sorted by vertex index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.affinity));
            adj[e.b].push((e.a, e.affinity));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        adj
    }

    /// Structural invariants: edge kinds match endpoint kinds, no self
    /// loops or duplicate edges, affinities consistent with `tau`.
    pub fn check_invariants(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Input(format!("tau must be positive, got {}", self.tau)));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            let (ka, kb) = match (self.vertices.get(e.a), self.vertices.get(e.b)) {
                (Some(a), Some(b)) => (a.kind, b.kind),
                _ => return Err(Error::Input("edge references a missing vertex".into())),
            };
            let ok = match e.kind {
                EdgeKind::Performance => ka == VertexKind::Model && kb == VertexKind::Dataset,
                EdgeKind::Similarity => ka == VertexKind::Dataset && kb == VertexKind::Dataset && e.a < e.b,
            };
            if !ok {
                return Err(Error::Input(format!(
                    "{:?} edge between {} and {} violates the vertex kinds",
                    e.kind, self.vertices[e.a], self.vertices[e.b]
                )));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::Input("duplicate edge".into()));
            }
            if !(e.distance >= 0.0 && e.distance.is_finite()) {
                return Err(Error::Input("edge distance must be non-negative".into()));
            }
            if (e.affinity - affinity(e.distance, self.tau)).abs() > 1e-12 {
                return Err(Error::Input("edge affinity inconsistent with tau".into()));
            }
        }
        Ok(())
    }

    /// Copy of the graph with a new dataset vertex joined by similarity
    /// edges to every existing dataset. No performance edges are added and
    /// `tau` is unchanged. `existing` must hold the stats of every dataset
    /// already in the graph.
    pub fn insert_query_dataset(
        &self,
        id: &str,
        stats: &EmbeddingStats,
        existing: &BTreeMap<String, EmbeddingStats>,
    ) -> Result<Self> {
        self.insert_query_dataset_with(id, stats, existing, &Frechet)
    }

    pub fn insert_query_dataset_with(
        &self,
        id: &str,
        stats: &EmbeddingStats,
        existing: &BTreeMap<String, EmbeddingStats>,
        distance: &dyn DatasetDistance,
    ) -> Result<Self> {
        let vid = VertexId::dataset(id);
        if self.index.contains_key(&vid) {
            return Err(Error::DuplicateId(format!("dataset {id}")));
        }
        if stats.probe_id != self.probe_id {
            return Err(Error::ProbeMismatch {
                left: self.probe_id.clone(),
                right: stats.probe_id.clone(),
            });
        }
        let mut g = self.clone();
        let new_index = g.vertices.len();
        g.vertices.push(vid.clone());
        g.index.insert(vid, new_index);
        for (i, v) in self.vertices.iter().enumerate() {
            if v.kind != VertexKind::Dataset {
                continue;
            }
            let other = existing
                .get(&v.name)
                .ok_or_else(|| Error::UnknownId(format!("stats for dataset {}", v.name)))?;
            let d = distance.distance(other, stats)?;
            g.edges.push(Edge {
                a: i,
                b: new_index,
                kind: EdgeKind::Similarity,
                distance: d,
                affinity: affinity(d, g.tau),
            });
        }
        g.check_invariants()?;
        Ok(g)
    }

    /// Copy with `floor(fraction * P)` of the `P` performance edges removed,
    /// chosen uniformly without replacement from a generator seeded by `seed`.
    pub fn drop_performance_edges(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "drop fraction must lie in [0, 1], got {fraction}"
            )));
        }
        let perf_positions: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::Performance)
            .map(|(i, _)| i)
            .collect();
        let total = perf_positions.len();
        // Guard against 0.7 * 10 = 6.999...
        let k = ((fraction * total as f64) + 1e-9).floor() as usize;
        let k = k.min(total);
        let mut rng = seed::rng(seed, "drop-performance", &[]);
        let mut drop = vec![false; self.edges.len()];
        for pick in index::sample(&mut rng, total, k) {
            drop[perf_positions[pick]] = true;
        }
        let mut g = self.clone();
        g.edges = self
            .edges
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(e, _)| *e)
            .collect();
        g.check_invariants()?;
        Ok(g)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            format_version: GRAPH_FORMAT_VERSION,
            tau: self.tau,
            probe_id: self.probe_id.clone(),
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    kind: e.kind,
                    a: self.vertices[e.a].clone(),
                    b: self.vertices[e.b].clone(),
                    distance: e.distance,
                    affinity: e.affinity,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self> {
        if doc.format_version != GRAPH_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported graph format_version {}",
                doc.format_version
            )));
        }
        let index = build_index(&doc.vertices)?;
        let lookup = |v: &VertexId| index.get(v).copied().ok_or_else(|| Error::UnknownId(v.to_string()));
        let edges = doc
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    a: lookup(&e.a)?,
                    b: lookup(&e.b)?,
                    kind: e.kind,
                    distance: e.distance,
                    affinity: e.affinity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = Self {
            vertices: doc.vertices,
            edges,
            tau: doc.tau,
            probe_id: doc.probe_id,
            index,
        };
        g.check_invariants()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, &self.to_document())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: GraphDocument = fsutil::read_json(path)?;
        Self::from_document(doc).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn build_index(vertices: &[VertexId]) -> Result<HashMap<VertexId, usize>> {
    let mut index = HashMap::with_capacity(vertices.len());
    for (i, v) in vertices.iter().enumerate() {
        if index.insert(v.clone(), i).is_some() {
            return Err(Error::DuplicateId(v.to_string()));
        }
    }
    Ok(index)
}

/// Serialized form of a [`MatchingGraph`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub format_version: u32,
    pub tau: f64,
    pub probe_id: String,
    pub vertices: Vec<VertexId>,
    pub edges: Vec<EdgeDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub kind: EdgeKind,
    pub a: VertexId,
    pub b: VertexId,
    pub distance: f64,
    pub affinity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn stats(mean: &[f64]) -> EmbeddingStats {
        EmbeddingStats::new(
            DVector::from_row_slice(mean),
            DMatrix::identity(mean.len(), mean.len()),
            10,
            "p",
        )
        .unwrap()
    }

    fn fixture(n_datasets: usize) -> (PerfTable, BTreeMap<String, EmbeddingStats>, Vec<String>) {
        let models: Vec<String> = (0..3).map(|i| format!("m{i}")).collect();
        let mut perf = PerfTable::new();
        let mut ds = BTreeMap::new();
        for d in 0..n_datasets {
            let name = format!("d{d:02}");
            ds.insert(name.clone(), stats(&[d as f64, 0.0]));
            for (i, m) in models.iter().enumerate() {
                perf.insert(m, &name, 1.0 + i as f64 + d as f64 * 0.1);
            }
        }
        (perf, ds, models)
    }

    #[test]
    fn counts_vertices_and_edges() {
        let (perf, ds, models) = fixture(2);
        let g = build_graph(&perf, &ds, &models).unwrap();
        assert_eq!(g.vertices().len(), 5);
        assert_eq!(g.similarity_edges().count(), 1);
        assert_eq!(g.performance_edges().count(), 6);
    }

    #[test]
    fn identical_stats_give_unit_affinity() {
        let (perf, mut ds, models) = fixture(2);
        let s = ds["d00"].clone();
        ds.insert("d01".into(), s);
        let g = build_graph(&perf, &ds, &models).unwrap();
        let e = g.similarity_edges().next().unwrap();
        assert_eq!(e.distance, 0.0);
        assert_eq!(e.affinity, 1.0);
    }

    #[test]
    fn temperature_is_the_median() {
        assert_eq!(temperature(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(temperature(&[3.0, 1.0, 2.0, 10.0]), 2.5);
        assert!((affinity(2.0, 2.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((affinity(2.0, 2.0) - 0.36788).abs() < 1e-5);
        assert_eq!(temperature(&[0.0, 0.0, 4.0]), 4.0);
        assert_eq!(temperature(&[0.0]), 1.0);
    }

    #[test]
    fn affinity_decreases_with_distance() {
        let tau = 1.7;
        assert_eq!(affinity(0.0, tau), 1.0);
        let mut prev = 1.0;
        for i in 1..200 {
            let a = affinity(i as f64 * 0.05, tau);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn rejects_unknown_ids_and_empty_tables() {
        let (mut perf, ds, models) = fixture(2);
        assert!(matches!(
            build_graph(&PerfTable::new(), &ds, &models),
            Err(Error::Input(_))
        ));
        perf.insert("ghost", "d00", 1.0);
        assert!(matches!(build_graph(&perf, &ds, &models), Err(Error::UnknownId(_))));
        let (perf, mut ds, models) = fixture(2);
        ds.get_mut("d01").unwrap().probe_id = "other".into();
        assert!(matches!(
            build_graph(&perf, &ds, &models),
            Err(Error::ProbeMismatch { .. })
        ));
    }

    #[test]
    fn query_insertion_is_similarity_only_and_persistent() {
        let (perf, ds, models) = fixture(31);
        let g = build_graph(&perf, &ds, &models).unwrap();
        let before = g.to_document();
        let q = ds["d05"].clone();
        let g2 = g.insert_query_dataset("query", &q, &ds).unwrap();
        assert_eq!(g2.edges().len() - g.edges().len(), 31);
        let new_edges = &g2.edges()[g.edges().len()..];
        assert!(new_edges.iter().all(|e| e.kind == EdgeKind::Similarity));
        assert_eq!(g2.tau(), g.tau());
        let d05 = g.vertex_index(&VertexId::dataset("d05")).unwrap();
        let twin = new_edges.iter().find(|e| e.a == d05).unwrap();
        assert_eq!(twin.distance, 0.0);
        // The original is untouched.
        assert_eq!(
            serde_json::to_string(&before).unwrap(),
            serde_json::to_string(&g.to_document()).unwrap()
        );

        assert!(matches!(
            g2.insert_query_dataset("query", &q, &ds),
            Err(Error::DuplicateId(_))
        ));
        let mut other = q.clone();
        other.probe_id = "x".into();
        assert!(matches!(
            g.insert_query_dataset("q2", &other, &ds),
            Err(Error::ProbeMismatch { .. })
        ));
    }

    #[test]
    fn dropping_edges() {
        let (perf, ds, models) = fixture(2);
        let g = build_graph(&perf, &ds, &models).unwrap();
        assert_eq!(g.drop_performance_edges(0.0, 1).unwrap(), g);
        let none = g.drop_performance_edges(1.0, 1).unwrap();
        assert_eq!(none.performance_edges().count(), 0);
        assert_eq!(none.similarity_edges().count(), 1);
        let half = g.drop_performance_edges(0.5, 42).unwrap();
        assert_eq!(half.performance_edges().count(), 3);
        assert_eq!(half, g.drop_performance_edges(0.5, 42).unwrap());
        assert!(g.drop_performance_edges(1.5, 0).is_err());
    }

    #[test]
    fn deterministic_serialization_round_trip() {
        let (perf, ds, models) = fixture(4);
        let a = build_graph(&perf, &ds, &models).unwrap();
        let b = build_graph(&perf, &ds, &models).unwrap();
        let ja = serde_json::to_string(&a.to_document()).unwrap();
        assert_eq!(ja, serde_json::to_string(&b.to_document()).unwrap());
        let back = MatchingGraph::from_document(serde_json::from_str(&ja).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn invariants_detect_model_model_edges() {
        let (perf, ds, models) = fixture(2);
        let mut doc = build_graph(&perf, &ds, &models).unwrap().to_document();
        doc.edges[0].a = VertexId::model("m0");
        doc.edges[0].b = VertexId::model("m1");
        doc.edges[0].kind = EdgeKind::Performance;
        assert!(MatchingGraph::from_document(doc).is_err());
    }
}

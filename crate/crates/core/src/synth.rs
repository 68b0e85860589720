//! Seeded synthetic inputs: a clustered power-law graph generator, matching
//! features/labels, and a tiny hand-built fixture with known transfer counts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::partition::PartitionAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub vertices: usize,
    pub clusters: usize,
    pub avg_degree: f64,
    /// Probability that an edge stays inside its source's cluster.
    pub intra_fraction: f64,
    /// Pareto shape of vertex popularity; smaller is heavier-tailed.
    pub popularity_shape: f64,
    pub feature_dim: usize,
    pub classes: usize,
    pub train_fraction: f64,
    pub feature_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vertices: 1000,
            clusters: 16,
            avg_degree: 8.0,
            intra_fraction: 0.85,
            popularity_shape: 1.5,
            feature_dim: 16,
            classes: 4,
            train_fraction: 0.5,
            feature_noise: 1.0,
        }
    }
}

/// Graph plus node-level training inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub train_mask: Vec<bool>,
    pub clusters: Vec<usize>,
}

impl SyntheticSpec {
    pub fn with_vertices(vertices: usize) -> Self {
        Self {
            vertices,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.vertices < 2 {
            return bad("need at least 2 vertices");
        }
        if self.clusters == 0 || self.clusters > self.vertices {
            return bad("clusters must be in [1, vertices]");
        }
        if !(self.avg_degree > 0.0) {
            return bad("avg_degree must be positive");
        }
        if !(0.0..=1.0).contains(&self.intra_fraction) || !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if !(self.popularity_shape > 0.0) {
            return bad("popularity_shape must be positive");
        }
        if self.classes == 0 || self.feature_dim == 0 {
            return bad("classes and feature_dim must be positive");
        }
        Ok(())
    }

    /// Planted-cluster graph: sources and targets are drawn by a heavy-tailed
    /// popularity weight, targets prefer the source's cluster. Self-loops and
    /// duplicate edges are dropped.
    pub fn generate_graph(&self, seed: u64) -> Result<(Graph, Vec<usize>)> {
        self.validate()?;
        let n = self.vertices;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cluster: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.clusters)).collect();
        let pareto = Pareto::new(1.0, self.popularity_shape).map_err(|e| Error::Config(e.to_string()))?;
        let cap = (n as f64 / 10.0).max(1.0);
        let popularity: Vec<f64> = (0..n).map(|_| pareto.sample(&mut rng).min(cap)).collect();

        let global = WeightedIndex::new(&popularity).map_err(|e| Error::Config(e.to_string()))?;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.clusters];
        for v in 0..n {
            members[cluster[v]].push(v);
        }
        let per_cluster: Vec<Option<WeightedIndex<f64>>> = members
            .iter()
            .map(|ms| {
                if ms.len() < 2 {
                    None
                } else {
                    WeightedIndex::new(ms.iter().map(|&v| popularity[v])).ok()
                }
            })
            .collect();

        let target_edges = (n as f64 * self.avg_degree).round() as usize;
        let mut edges = Vec::with_capacity(target_edges);
        let mut attempts = 0usize;
        while edges.len() < target_edges && attempts < target_edges * 4 {
            attempts += 1;
            let u = global.sample(&mut rng);
            let c = cluster[u];
            let v = match &per_cluster[c] {
                Some(w) if rng.random_bool(self.intra_fraction) => members[c][w.sample(&mut rng)],
                _ => global.sample(&mut rng),
            };
            if u != v {
                edges.push((u, v));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok((Graph::from_edges(n, &edges)?, cluster))
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let (graph, clusters) = self.generate_graph(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let centroids = DenseMatrix::from_fn(self.classes, self.feature_dim, |_, _| unit.sample(&mut rng));
        let labels: Vec<usize> = clusters.iter().map(|&c| c % self.classes).collect();
        let features = DenseMatrix::from_fn(self.vertices, self.feature_dim, |r, c| {
            centroids.get(labels[r], c) + self.feature_noise * unit.sample(&mut rng)
        });
        let train_mask = (0..self.vertices)
            .map(|_| rng.random_bool(self.train_fraction))
            .collect();
        Ok(Dataset {
            graph,
            features,
            labels,
            train_mask,
            clusters,
        })
    }
}

/// Two disjoint directed 5-cliques on vertices `0..5` and `5..10`.
pub fn two_cliques() -> Graph {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    edges.push((base + a, base + b));
                }
            }
        }
    }
    Graph::from_edges(10, &edges).expect("valid clique graph")
}

/// Neighbor sets of the two-batch toy schedule, `[partition][chunk]`.
///
/// Four partitions own vertex pairs `{2i, 2i+1}`; chunk 0 of partition `i`
/// owns `2i`, chunk 1 owns `2i+1`. Batch unions are `{0,1,2,3,4,7}` and
/// `{2,3,4,5,6}`, giving 19 / 11 / 8 host rows under naive, inter-device
/// and inter+intra deduplicated transfer.
pub const TOY_NEIGHBORS: [[&[usize]; 2]; 4] = [
    [&[1, 3], &[2, 5]],
    [&[0, 4], &[3, 4]],
    [&[0, 1, 2], &[2, 3, 6]],
    [&[3, 4, 7], &[4, 5]],
];

/// The toy fixture graph and its fixed 4-way assignment (use `n = 2`).
pub fn toy_fixture() -> (Graph, PartitionAssignment) {
    let mut edges = Vec::new();
    for (i, row) in TOY_NEIGHBORS.iter().enumerate() {
        for (j, srcs) in row.iter().enumerate() {
            let dst = 2 * i + j;
            edges.extend(srcs.iter().map(|&u| (u, dst)));
        }
    }
    let g = Graph::from_edges(8, &edges).expect("valid toy graph");
    let owner = (0..8).map(|v| v / 2).collect();
    (g, PartitionAssignment::new(4, owner).expect("valid toy owner"))
}

/// Features and labels for the toy fixture (2 classes, seeded).
pub fn toy_dataset(feature_dim: usize, seed: u64) -> Dataset {
    let (graph, _) = toy_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = DenseMatrix::from_fn(8, feature_dim, |_, _| rng.random_range(-1.0..1.0));
    Dataset {
        graph,
        features,
        labels: (0..8).map(|v| v % 2).collect(),
        train_mask: vec![true; 8],
        clusters: (0..8).map(|v| v / 2).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::with_vertices(500);
        let a = spec.generate(11).unwrap();
        let b = spec.generate(11).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.train_mask, b.train_mask);
        let c = spec.generate(12).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn generator_respects_shape() {
        let spec = SyntheticSpec::with_vertices(2000);
        let d = spec.generate(1).unwrap();
        assert_eq!(d.graph.num_vertices(), 2000);
        assert!(d.graph.num_edges() > 12_000, "{}", d.graph.num_edges());
        assert!(d.graph.edges_csc().iter().all(|&(u, v)| u != v));
        assert_eq!(d.features.shape(), (2000, 16));
        assert!(d.labels.iter().all(|&l| l < 4));
    }

    #[test]
    fn toy_fixture_shape() {
        let (g, a) = toy_fixture();
        assert_eq!(g.num_vertices(), 8);
        assert_eq!(g.num_edges(), 19);
        assert_eq!(a.sizes(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn invalid_spec() {
        let spec = SyntheticSpec {
            clusters: 0,
            ..SyntheticSpec::default()
        };
        assert!(spec.generate(0).is_err());
    }
}

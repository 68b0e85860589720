//! Two-level edge-cut partitioning.
//!
//! Level one assigns every vertex to one of `m` partitions with a seeded
//! linear deterministic greedy (LDG) stream followed by one refinement
//! sweep. Level two cuts each partition's vertices (ascending id) into `n`
//! contiguous ranges with balanced in-edge counts. A chunk owns its
//! destination vertices together with all of their in-edges, so full-neighbor
//! aggregation for those vertices happens inside one chunk.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    m: usize,
    owner: Vec<usize>,
}

impl PartitionAssignment {
    pub fn new(m: usize, owner: Vec<usize>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Partition("partition count must be at least 1".into()));
        }
        if let Some((v, &p)) = owner.iter().enumerate().find(|(_, &p)| p >= m) {
            return Err(Error::Partition(format!(
                "vertex {v} assigned to partition {p}, but m = {m}"
            )));
        }
        Ok(Self { m, owner })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn owner(&self, v: usize) -> usize {
        self.owner[v]
    }

    pub fn try_owner(&self, v: usize) -> Result<usize> {
        self.owner.get(v).copied().ok_or(Error::MissingOwner {
            vertex: v,
            covered: self.owner.len(),
        })
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn num_vertices(&self) -> usize {
        self.owner.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.m];
        for &p in &self.owner {
            s[p] += 1;
        }
        s
    }

    /// Vertices of partition `p` in ascending id order.
    pub fn members(&self, p: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&v| self.owner[v] == p).collect()
    }
}

/// Largest partition size admitted for balance slack `epsilon`.
pub fn balance_capacity(num_vertices: usize, m: usize, epsilon: f64) -> usize {
    let even = num_vertices.div_ceil(m);
    let slack = ((1.0 + epsilon) * num_vertices as f64 / m as f64).floor() as usize;
    even.max(slack)
}

/// Seeded LDG streaming assignment with one boundary-refinement sweep.
pub fn partition_vertices(
    g: &Graph,
    m: usize,
    epsilon: f64,
    seed: u64,
) -> Result<PartitionAssignment> {
    let n = g.num_vertices();
    if m == 0 {
        return Err(Error::Partition("partition count must be at least 1".into()));
    }
    if m > n {
        return Err(Error::Partition(format!(
            "{m} partitions requested for {n} vertices"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Partition(format!(
            "balance slack must be positive, got {epsilon}"
        )));
    }
    if m == 1 {
        return PartitionAssignment::new(1, vec![0; n]);
    }

    let cap = balance_capacity(n, m, epsilon);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    const UNASSIGNED: usize = usize::MAX;
    let mut owner = vec![UNASSIGNED; n];
    let mut sizes = vec![0usize; m];
    let mut counts = vec![0usize; m];

    let tally = |v: usize, owner: &[usize], counts: &mut [usize]| {
        counts.iter_mut().for_each(|c| *c = 0);
        for &u in g.in_neighbors(v).iter().chain(g.out_neighbors(v)) {
            if u != v && owner[u] != UNASSIGNED {
                counts[owner[u]] += 1;
            }
        }
    };

    for &v in &order {
        tally(v, &owner, &mut counts);
        let mut best: Option<(f64, usize)> = None;
        for p in 0..m {
            if sizes[p] >= cap {
                continue;
            }
            let score = counts[p] as f64 * (1.0 - sizes[p] as f64 / cap as f64);
            let better = match best {
                None => true,
                Some((bs, bp)) => score > bs || (score == bs && sizes[p] < sizes[bp]),
            };
            if better {
                best = Some((score, p));
            }
        }
        let (_, p) = best.expect("total capacity covers every vertex");
        owner[v] = p;
        sizes[p] += 1;
    }

    for &v in &order {
        tally(v, &owner, &mut counts);
        let cur = owner[v];
        let mut target = cur;
        for p in 0..m {
            if p != cur && sizes[p] < cap && counts[p] > counts[target] {
                target = p;
            }
        }
        if target != cur {
            owner[v] = target;
            sizes[cur] -= 1;
            sizes[target] += 1;
        }
    }

    PartitionAssignment::new(m, owner)
}

/// Number of edges whose endpoints live in different partitions.
pub fn edge_cut(g: &Graph, a: &PartitionAssignment) -> usize {
    g.edges_csc()
        .into_iter()
        .filter(|&(u, v)| a.owner(u) != a.owner(v))
        .count()
}

/// One edge inside a chunk, in chunk-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub edge_id: usize,
}

/// Chunk-local adjacency from neighbor rows `[0, num_src)` to destination
/// rows `[0, num_dst)`. CSC positions are sorted by `(dst, src)`; the CSR
/// view stores CSC positions grouped by source.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAdjacency {
    num_src: usize,
    num_dst: usize,
    csc_offsets: Vec<usize>,
    csc_src: Vec<usize>,
    csc_weight: Vec<f64>,
    csc_edge: Vec<usize>,
    csr_offsets: Vec<usize>,
    csr_pos: Vec<usize>,
}

impl LocalAdjacency {
    pub fn from_edges(num_src: usize, num_dst: usize, mut edges: Vec<LocalEdge>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| e.src >= num_src || e.dst >= num_dst) {
            return Err(Error::Dimension(format!(
                "local edge ({}, {}) outside {num_src}x{num_dst}",
                e.src, e.dst
            )));
        }
        edges.sort_by_key(|e| (e.dst, e.src));
        let mut csc_offsets = vec![0usize; num_dst + 1];
        let mut csr_offsets = vec![0usize; num_src + 1];
        for e in &edges {
            csc_offsets[e.dst + 1] += 1;
            csr_offsets[e.src + 1] += 1;
        }
        for i in 0..num_dst {
            csc_offsets[i + 1] += csc_offsets[i];
        }
        for i in 0..num_src {
            csr_offsets[i + 1] += csr_offsets[i];
        }
        let mut cursor = csr_offsets.clone();
        let mut csr_pos = vec![0usize; edges.len()];
        for (pos, e) in edges.iter().enumerate() {
            csr_pos[cursor[e.src]] = pos;
            cursor[e.src] += 1;
        }
        Ok(Self {
            num_src,
            num_dst,
            csc_offsets,
            csc_src: edges.iter().map(|e| e.src).collect(),
            csc_weight: edges.iter().map(|e| e.weight).collect(),
            csc_edge: edges.iter().map(|e| e.edge_id).collect(),
            csr_offsets,
            csr_pos,
        })
    }

    pub fn num_src(&self) -> usize {
        self.num_src
    }

    pub fn num_dst(&self) -> usize {
        self.num_dst
    }

    pub fn num_edges(&self) -> usize {
        self.csc_src.len()
    }

    /// CSC positions of destination `d`'s in-edges.
    pub fn in_range(&self, d: usize) -> std::ops::Range<usize> {
        self.csc_offsets[d]..self.csc_offsets[d + 1]
    }

    /// CSC positions of source `s`'s out-edges, ascending destination.
    pub fn out_positions(&self, s: usize) -> &[usize] {
        &self.csr_pos[self.csr_offsets[s]..self.csr_offsets[s + 1]]
    }

    pub fn src_at(&self, pos: usize) -> usize {
        self.csc_src[pos]
    }

    pub fn weight_at(&self, pos: usize) -> f64 {
        self.csc_weight[pos]
    }

    pub fn edge_id_at(&self, pos: usize) -> usize {
        self.csc_edge[pos]
    }

    /// Destination of CSC position `pos`.
    pub fn dst_at(&self, pos: usize) -> usize {
        self.csc_offsets.partition_point(|&o| o <= pos) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSubgraph {
    pub partition: usize,
    pub chunk: usize,
    /// Owned destination vertices, ascending.
    pub vertices: Vec<usize>,
    /// Sources referenced by the chunk's in-edges, ascending.
    pub neighbors: Vec<usize>,
    pub adjacency: LocalAdjacency,
}

impl ChunkSubgraph {
    pub fn build(g: &Graph, partition: usize, chunk: usize, vertices: Vec<usize>) -> Result<Self> {
        let mut neighbors: Vec<usize> = vertices
            .iter()
            .flat_map(|&v| g.in_neighbors(v).iter().copied())
            .collect();
        neighbors.sort_unstable();
        neighbors.dedup();

        let mut edges = Vec::new();
        for (d, &v) in vertices.iter().enumerate() {
            for e in g.in_edge_range(v) {
                let src = neighbors
                    .binary_search(&g.edge_source(e))
                    .expect("source collected above");
                edges.push(LocalEdge {
                    src,
                    dst: d,
                    weight: g.edge_weights()[e],
                    edge_id: e,
                });
            }
        }
        let adjacency = LocalAdjacency::from_edges(neighbors.len(), vertices.len(), edges)?;
        Ok(Self {
            partition,
            chunk,
            vertices,
            neighbors,
            adjacency,
        })
    }

    pub fn num_in_edges(&self) -> usize {
        self.adjacency.num_edges()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelPartition {
    m: usize,
    n: usize,
    assignment: PartitionAssignment,
    /// `chunks[i][j]`: chunk `j` of partition `i`.
    chunks: Vec<Vec<ChunkSubgraph>>,
}

impl TwoLevelPartition {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn assignment(&self) -> &PartitionAssignment {
        &self.assignment
    }

    pub fn chunk(&self, i: usize, j: usize) -> &ChunkSubgraph {
        &self.chunks[i][j]
    }

    pub fn row(&self, i: usize) -> &[ChunkSubgraph] {
        &self.chunks[i]
    }

    pub fn iter_chunks(&self) -> impl Iterator<Item = &ChunkSubgraph> {
        self.chunks.iter().flatten()
    }

    /// `(start, end)` member-index ranges per chunk, row-major.
    pub fn ranges(&self) -> Vec<Vec<(usize, usize)>> {
        self.chunks
            .iter()
            .map(|row| {
                let mut start = 0;
                row.iter()
                    .map(|c| {
                        let r = (start, start + c.vertices.len());
                        start = r.1;
                        r
                    })
                    .collect()
            })
            .collect()
    }

    /// Rebuilds chunks from an assignment and explicit member-index ranges.
    pub fn from_ranges(
        g: &Graph,
        assignment: PartitionAssignment,
        ranges: &[Vec<(usize, usize)>],
    ) -> Result<Self> {
        let m = assignment.m();
        if ranges.len() != m {
            return Err(Error::Partition(format!(
                "{} chunk rows for {m} partitions",
                ranges.len()
            )));
        }
        let n = ranges.first().map_or(0, Vec::len);
        let mut chunks = Vec::with_capacity(m);
        for (i, row) in ranges.iter().enumerate() {
            let members = assignment.members(i);
            if row.len() != n {
                return Err(Error::Partition(format!("partition {i} has {} chunks, expected {n}", row.len())));
            }
            let mut expect = 0;
            let mut out = Vec::with_capacity(n);
            for (j, &(s, e)) in row.iter().enumerate() {
                if s != expect || e < s || e > members.len() {
                    return Err(Error::Partition(format!(
                        "chunk ({i}, {j}) range [{s}, {e}) does not continue a cover of {} members",
                        members.len()
                    )));
                }
                expect = e;
                out.push(ChunkSubgraph::build(g, i, j, members[s..e].to_vec())?);
            }
            if expect != members.len() {
                return Err(Error::Partition(format!("partition {i} ranges leave vertices uncovered")));
            }
            chunks.push(out);
        }
        Ok(Self {
            m,
            n,
            assignment,
            chunks,
        })
    }
}

/// Cumulative member counts at which to cut, using greedy prefix sums of
/// `loads` so every chunk receives at least one member.
pub fn balanced_cuts(loads: &[usize], n: usize) -> Vec<(usize, usize)> {
    let len = loads.len();
    debug_assert!(n >= 1 && n <= len);
    let total: usize = loads.iter().sum();
    let mut ranges = Vec::with_capacity(n);
    let mut start = 0;
    let mut prefix = 0usize;
    for c in 0..n {
        if c + 1 == n {
            ranges.push((start, len));
            break;
        }
        let max_end = len - (n - c - 1);
        let mut end = start;
        loop {
            prefix += loads[end];
            end += 1;
            if end >= max_end || prefix * n >= (c + 1) * total {
                break;
            }
        }
        ranges.push((start, end));
        start = end;
    }
    ranges
}

/// Splits every partition into `n` in-edge balanced contiguous chunks.
pub fn split_chunks(
    g: &Graph,
    a: &PartitionAssignment,
    n: usize,
    exec: Exec,
) -> Result<TwoLevelPartition> {
    if n == 0 {
        return Err(Error::Partition("chunk count must be at least 1".into()));
    }
    if a.num_vertices() != g.num_vertices() {
        return Err(Error::Partition(format!(
            "assignment covers {} vertices, graph has {}",
            a.num_vertices(),
            g.num_vertices()
        )));
    }
    let m = a.m();
    let rows = exec.try_map_range(m, |i| {
        let members = a.members(i);
        if n > members.len() {
            return Err(Error::Partition(format!(
                "partition {i} has {} vertices, fewer than {n} chunks",
                members.len()
            )));
        }
        let loads: Vec<usize> = members.iter().map(|&v| g.in_degree(v)).collect();
        balanced_cuts(&loads, n)
            .into_iter()
            .enumerate()
            .map(|(j, (s, e))| ChunkSubgraph::build(g, i, j, members[s..e].to_vec()))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(TwoLevelPartition {
        m,
        n,
        assignment: a.clone(),
        chunks: rows,
    })
}

/// `N_ij` for every chunk, indexed `[i][j]`.
pub fn neighbor_sets(p: &TwoLevelPartition) -> Vec<Vec<Vec<usize>>> {
    p.chunks
        .iter()
        .map(|row| row.iter().map(|c| c.neighbors.clone()).collect())
        .collect()
}

/// Average number of chunk neighbor-set memberships per vertex.
pub fn replication_factor(sets: &[Vec<Vec<usize>>], num_vertices: usize) -> Result<f64> {
    if num_vertices == 0 {
        return Err(Error::InvalidGraph(
            "replication factor undefined for an empty vertex set".into(),
        ));
    }
    let total: usize = sets.iter().flatten().map(Vec::len).sum();
    Ok(total as f64 / num_vertices as f64)
}

/// Splits every chunk in two along the same in-degree balancing rule, so the
/// result refines `p` and each new chunk `2j`, `2j + 1` lies inside old chunk `j`.
pub fn refine_chunks(g: &Graph, p: &TwoLevelPartition) -> Result<TwoLevelPartition> {
    let ranges = p
        .ranges()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let members = p.assignment.members(i);
            let mut out = Vec::with_capacity(2 * row.len());
            for (j, &(s, e)) in row.iter().enumerate() {
                if e - s < 2 {
                    return Err(Error::Partition(format!(
                        "chunk ({i}, {j}) has {} vertices and cannot be halved",
                        e - s
                    )));
                }
                let loads: Vec<usize> = members[s..e].iter().map(|&v| g.in_degree(v)).collect();
                out.extend(balanced_cuts(&loads, 2).into_iter().map(|(a, b)| (s + a, s + b)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    TwoLevelPartition::from_ranges(g, p.assignment.clone(), &ranges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub partition: usize,
    pub chunk: usize,
    /// Half-open range into the partition's ascending member list.
    pub start: usize,
    pub end: usize,
    pub first_vertex: Option<usize>,
    pub last_vertex: Option<usize>,
    pub num_in_edges: usize,
    pub num_neighbors: usize,
}

/// Serialized partition consumed by the planner and report tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDump {
    pub graph_hash: String,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub edge_cut: usize,
    pub replication_factor: f64,
    pub owner: Vec<usize>,
    pub chunks: Vec<ChunkSummary>,
}

impl PartitionDump {
    pub fn new(g: &Graph, p: &TwoLevelPartition, seed: u64, epsilon: f64) -> Result<Self> {
        let ranges = p.ranges();
        let chunks = p
            .iter_chunks()
            .map(|c| {
                let (start, end) = ranges[c.partition][c.chunk];
                ChunkSummary {
                    partition: c.partition,
                    chunk: c.chunk,
                    start,
                    end,
                    first_vertex: c.vertices.first().copied(),
                    last_vertex: c.vertices.last().copied(),
                    num_in_edges: c.num_in_edges(),
                    num_neighbors: c.neighbors.len(),
                }
            })
            .collect();
        Ok(Self {
            graph_hash: g.content_hash(),
            seed,
            m: p.m(),
            n: p.n(),
            epsilon,
            edge_cut: edge_cut(g, p.assignment()),
            replication_factor: replication_factor(&neighbor_sets(p), g.num_vertices())?,
            owner: p.assignment().owners().to_vec(),
            chunks,
        })
    }

    /// Rebuilds the partition; fails if the dump was produced for a
    /// different graph.
    pub fn restore(&self, g: &Graph) -> Result<TwoLevelPartition> {
        let hash = g.content_hash();
        if hash != self.graph_hash {
            return Err(Error::Config(format!(
                "partition dump is stale: built for graph {}, current graph is {hash}; re-run `partition`",
                self.graph_hash
            )));
        }
        let assignment = PartitionAssignment::new(self.m, self.owner.clone())?;
        let mut ranges = vec![vec![(0, 0); self.n]; self.m];
        for c in &self.chunks {
            if c.partition >= self.m || c.chunk >= self.n {
                return Err(Error::Partition(format!(
                    "chunk ({}, {}) outside {}x{} grid",
                    c.partition, c.chunk, self.m, self.n
                )));
            }
            ranges[c.partition][c.chunk] = (c.start, c.end);
        }
        TwoLevelPartition::from_ranges(g, assignment, &ranges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> Graph {
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
        Graph::from_edges(10, &edges).unwrap()
    }

    /// Minimum edge cut over all 5/5 bipartitions.
    fn brute_force_min_cut(g: &Graph) -> usize {
        let mut best = usize::MAX;
        for mask in 0u32..(1 << 10) {
            if mask.count_ones() != 5 {
                continue;
            }
            let owner: Vec<usize> = (0..10).map(|v| ((mask >> v) & 1) as usize).collect();
            let a = PartitionAssignment::new(2, owner).unwrap();
            best = best.min(edge_cut(g, &a));
        }
        best
    }

    #[test]
    fn single_partition() {
        let g = two_cliques();
        let a = partition_vertices(&g, 1, 0.1, 7).unwrap();
        assert!(a.owners().iter().all(|&p| p == 0));
    }

    #[test]
    fn two_cliques_separate() {
        let g = two_cliques();
        assert_eq!(brute_force_min_cut(&g), 0);
        for seed in 0..20 {
            let a = partition_vertices(&g, 2, 0.1, seed).unwrap();
            assert_eq!(edge_cut(&g, &a), 0, "seed {seed}");
            assert_eq!(a.sizes(), vec![5, 5]);
        }
    }

    #[test]
    fn too_many_partitions() {
        let g = two_cliques();
        assert!(partition_vertices(&g, 11, 0.1, 0).is_err());
        assert!(partition_vertices(&g, 2, 0.0, 0).is_err());
    }

    #[test]
    fn greedy_prefix_split() {
        assert_eq!(balanced_cuts(&[4, 1, 1, 2], 2), vec![(0, 1), (1, 4)]);
        assert_eq!(balanced_cuts(&[0, 0, 0], 3), vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(balanced_cuts(&[9, 0, 0, 0], 3), vec![(0, 1), (1, 2), (2, 4)]);
    }

    #[test]
    fn split_example_graph() {
        // in-degrees [4, 1, 1, 2] for vertices 0..4 in one partition
        let edges = [
            (4, 0), (5, 0), (6, 0), (7, 0),
            (4, 1),
            (5, 2),
            (6, 3), (7, 3),
        ];
        let g = Graph::from_edges(8, &edges).unwrap();
        let a = PartitionAssignment::new(2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let p = split_chunks(&g, &a, 2, Exec::Sequential).unwrap();
        assert_eq!(p.chunk(0, 0).vertices, vec![0]);
        assert_eq!(p.chunk(0, 1).vertices, vec![1, 2, 3]);
        assert_eq!(p.chunk(0, 0).num_in_edges(), 4);
        assert_eq!(p.chunk(0, 1).num_in_edges(), 4);
        // vertices 4..8 have no in-edges: empty chunks are fine
        assert!(p.chunk(1, 0).neighbors.is_empty());
    }

    #[test]
    fn too_many_chunks() {
        let g = two_cliques();
        let a = partition_vertices(&g, 2, 0.1, 0).unwrap();
        let err = split_chunks(&g, &a, 6, Exec::Sequential).unwrap_err();
        assert!(err.to_string().contains("partition 0"), "{err}");
    }

    #[test]
    fn neighbor_set_definition() {
        let g = Graph::from_edges(8, &[(7, 1), (4, 1), (7, 2)]).unwrap();
        let c = ChunkSubgraph::build(&g, 0, 0, vec![1, 2]).unwrap();
        assert_eq!(c.neighbors, vec![4, 7]);
        let empty = ChunkSubgraph::build(&g, 0, 0, vec![0, 3]).unwrap();
        assert!(empty.neighbors.is_empty());
    }

    #[test]
    fn local_adjacency_views_agree() {
        let g = Graph::from_edges(6, &[(5, 0), (3, 0), (3, 1), (0, 1), (5, 1), (2, 2)]).unwrap();
        let c = ChunkSubgraph::build(&g, 0, 0, vec![0, 1, 2]).unwrap();
        let adj = &c.adjacency;
        let mut from_csr = Vec::new();
        for s in 0..adj.num_src() {
            for &pos in adj.out_positions(s) {
                assert_eq!(adj.src_at(pos), s);
                from_csr.push((c.neighbors[s], c.vertices[adj.dst_at(pos)]));
            }
        }
        let mut from_csc = Vec::new();
        for d in 0..adj.num_dst() {
            for pos in adj.in_range(d) {
                from_csc.push((c.neighbors[adj.src_at(pos)], c.vertices[d]));
                assert_eq!(g.edge_source(adj.edge_id_at(pos)), c.neighbors[adj.src_at(pos)]);
            }
        }
        from_csr.sort();
        from_csc.sort();
        assert_eq!(from_csr, from_csc);
    }

    #[test]
    fn replication_examples() {
        // one chunk where every vertex has an out-edge
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let a = PartitionAssignment::new(1, vec![0; 3]).unwrap();
        let p = split_chunks(&g, &a, 1, Exec::Sequential).unwrap();
        assert_eq!(replication_factor(&neighbor_sets(&p), 3).unwrap(), 1.0);

        let none = Graph::from_edges(3, &[]).unwrap();
        let p = split_chunks(&none, &a, 1, Exec::Sequential).unwrap();
        assert_eq!(replication_factor(&neighbor_sets(&p), 3).unwrap(), 0.0);
        assert!(replication_factor(&[], 0).is_err());
    }

    #[test]
    fn dump_round_trip_and_staleness() {
        let g = two_cliques();
        let a = partition_vertices(&g, 2, 0.1, 3).unwrap();
        let p = split_chunks(&g, &a, 2, Exec::Sequential).unwrap();
        let dump = PartitionDump::new(&g, &p, 3, 0.1).unwrap();
        let json = serde_json::to_string(&dump).unwrap();
        let back: PartitionDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back.restore(&g).unwrap(), p);

        let other = Graph::from_edges(10, &[(0, 1)]).unwrap();
        assert!(back.restore(&other).unwrap_err().to_string().contains("stale"));
    }

    #[test]
    fn refinement_nests_chunks() {
        let g = two_cliques();
        let a = partition_vertices(&g, 2, 0.1, 1).unwrap();
        let p = split_chunks(&g, &a, 2, Exec::Sequential).unwrap();
        let r = refine_chunks(&g, &p).unwrap();
        assert_eq!(r.n(), 4);
        for i in 0..2 {
            for j in 0..2 {
                let mut kids = r.chunk(i, 2 * j).vertices.clone();
                kids.extend(&r.chunk(i, 2 * j + 1).vertices);
                assert_eq!(kids, p.chunk(i, j).vertices);
            }
        }
        // 5 members split 3 + 2, then 2 + 1 and 1 + 1
        assert!(refine_chunks(&g, &r).is_err());
    }
}

//! Immutable directed graph with destination-grouped (CSC) and
//! source-grouped (CSR) adjacency plus symmetric GCN edge weights.
//!
//! Edge ids are positions in the CSC order, which sorts edges by
//! `(dst, src)`. The CSR view stores, for every out-edge, its CSC edge id.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const GRAPH_MAGIC: &[u8; 4] = b"HTG1";

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_vertices: usize,
    csc_offsets: Vec<usize>,
    csc_sources: Vec<usize>,
    csr_offsets: Vec<usize>,
    csr_targets: Vec<usize>,
    csr_edge_ids: Vec<usize>,
    edge_weight: Vec<f64>,
}

impl Graph {
    /// Builds both adjacency views from an edge list. Duplicate edges and
    /// self-loops are kept.
    pub fn from_edges(num_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_vertices == 0 {
            return Err(Error::InvalidGraph("graph has no vertices".into()));
        }
        if let Some(&(s, d)) = edges
            .iter()
            .find(|&&(s, d)| s >= num_vertices || d >= num_vertices)
        {
            return Err(Error::InvalidGraph(format!(
                "edge ({s}, {d}) references a vertex outside [0, {num_vertices})"
            )));
        }

        let mut by_dst: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (d, s)).collect();
        by_dst.sort_unstable();
        let csc_offsets = offsets_from_keys(num_vertices, by_dst.iter().map(|e| e.0));
        let csc_sources: Vec<usize> = by_dst.iter().map(|e| e.1).collect();

        // (src, dst, csc edge id): sorting keeps CSR order (src, dst) and,
        // because ids follow (dst, src), duplicates stay in id order.
        let mut by_src: Vec<(usize, usize, usize)> = by_dst
            .iter()
            .enumerate()
            .map(|(id, &(d, s))| (s, d, id))
            .collect();
        by_src.sort_unstable();
        let csr_offsets = offsets_from_keys(num_vertices, by_src.iter().map(|e| e.0));
        let csr_targets = by_src.iter().map(|e| e.1).collect();
        let csr_edge_ids = by_src.iter().map(|e| e.2).collect();

        let mut g = Graph {
            num_vertices,
            csc_offsets,
            csc_sources,
            csr_offsets,
            csr_targets,
            csr_edge_ids,
            edge_weight: Vec::new(),
        };
        g.edge_weight = gcn_edge_weights(&g);
        Ok(g)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.csc_sources.len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.csc_offsets[v + 1] - self.csc_offsets[v]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.csr_offsets[v + 1] - self.csr_offsets[v]
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        (0..self.num_vertices).map(|v| self.in_degree(v)).collect()
    }

    /// CSC edge-id range of `v`'s in-edges.
    pub fn in_edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.csc_offsets[v]..self.csc_offsets[v + 1]
    }

    /// Sources of `v`'s in-edges, ascending.
    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.csc_sources[self.in_edge_range(v)]
    }

    /// Targets of `u`'s out-edges, ascending.
    pub fn out_neighbors(&self, u: usize) -> &[usize] {
        &self.csr_targets[self.csr_offsets[u]..self.csr_offsets[u + 1]]
    }

    /// CSC edge ids of `u`'s out-edges, aligned with [`Graph::out_neighbors`].
    pub fn out_edge_ids(&self, u: usize) -> &[usize] {
        &self.csr_edge_ids[self.csr_offsets[u]..self.csr_offsets[u + 1]]
    }

    pub fn edge_source(&self, e: usize) -> usize {
        self.csc_sources[e]
    }

    pub fn csc_offsets(&self) -> &[usize] {
        &self.csc_offsets
    }

    pub fn csc_sources(&self) -> &[usize] {
        &self.csc_sources
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.csr_offsets
    }

    pub fn csr_targets(&self) -> &[usize] {
        &self.csr_targets
    }

    /// Per-edge GCN weight in CSC edge-id order.
    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weight
    }

    /// Edges as `(src, dst)` in CSC order.
    pub fn edges_csc(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_vertices {
            for &u in self.in_neighbors(v) {
                out.push((u, v));
            }
        }
        out
    }

    /// Edges as `(src, dst)` in CSR order.
    pub fn edges_csr(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_vertices {
            for &v in self.out_neighbors(u) {
                out.push((u, v));
            }
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let e = self.num_edges();
        let mut buf = Vec::with_capacity(4 + 8 * (4 + 2 * self.num_vertices + 3 * e));
        buf.extend_from_slice(GRAPH_MAGIC);
        put_u64(&mut buf, self.num_vertices as u64);
        put_u64(&mut buf, e as u64);
        for arr in [
            &self.csc_offsets,
            &self.csc_sources,
            &self.csr_offsets,
            &self.csr_targets,
        ] {
            for &x in arr.iter() {
                put_u64(&mut buf, x as u64);
            }
        }
        for &w in &self.edge_weight {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != GRAPH_MAGIC {
            return Err(Error::Format("graph cache: bad magic".into()));
        }
        let n = r.u64()? as usize;
        let e = r.u64()? as usize;
        let csc_offsets = r.u64_vec(n + 1)?;
        let csc_sources = r.u64_vec(e)?;
        let csr_offsets = r.u64_vec(n + 1)?;
        let csr_targets = r.u64_vec(e)?;
        let weights = r.f64_vec(e)?;
        if !r.is_empty() {
            return Err(Error::Format("graph cache: trailing bytes".into()));
        }
        check_offsets("csc", &csc_offsets, e)?;
        check_offsets("csr", &csr_offsets, e)?;

        let mut edges = Vec::with_capacity(e);
        for v in 0..n {
            for &u in &csc_sources[csc_offsets[v]..csc_offsets[v + 1]] {
                edges.push((u, v));
            }
        }
        let g = Graph::from_edges(n, &edges)?;
        if g.csr_offsets != csr_offsets || g.csr_targets != csr_targets {
            return Err(Error::Format(
                "graph cache: csr view does not match csc view".into(),
            ));
        }
        if g.edge_weight.iter().zip(&weights).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::Format(
                "graph cache: stored weights differ from recomputed weights".into(),
            ));
        }
        Ok(g)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_binary()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Graph::from_binary(&bytes)
    }

    /// Hex SHA-256 of the binary cache encoding.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_binary());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `d_uv = 1 / sqrt((1 + indeg(u)) · (1 + indeg(v)))`, in CSC edge order.
pub fn gcn_edge_weights(g: &Graph) -> Vec<f64> {
    let mut w = Vec::with_capacity(g.num_edges());
    for v in 0..g.num_vertices {
        let dv = 1.0 + g.in_degree(v) as f64;
        for &u in g.in_neighbors(v) {
            let du = 1.0 + g.in_degree(u) as f64;
            w.push(1.0 / (du * dv).sqrt());
        }
    }
    w
}

/// Parses the `src dst` text format. `#` lines and blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<Graph> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let mut id = |what: &str| -> Result<usize> {
            let tok = fields.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("missing {what} id"),
            })?;
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("{what} id {tok:?} is not a non-negative integer"),
            })
        };
        let s = id("source")?;
        let d = id("destination")?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: "expected exactly two ids".into(),
            });
        }
        edges.push((s, d));
    }
    if edges.is_empty() {
        return Err(Error::InvalidGraph("edge list contains no edges".into()));
    }
    let n = 1 + edges.iter().map(|&(s, d)| s.max(d)).max().unwrap_or(0);
    check_density(n, &edges)?;
    Graph::from_edges(n, &edges)
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text)
}

/// Rejects id spaces where more than half of the ids never occur.
fn check_density(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = vec![false; n];
    for &(s, d) in edges {
        seen[s] = true;
        seen[d] = true;
    }
    let unused = seen.iter().filter(|&&b| !b).count();
    if unused * 2 > n {
        let start = seen.iter().position(|&b| !b).unwrap_or(0);
        let len = seen[start..].iter().take_while(|&&b| !b).count();
        return Err(Error::InvalidGraph(format!(
            "vertex ids are not dense: {unused} of {n} ids unused, first gap is [{start}, {})",
            start + len
        )));
    }
    Ok(())
}

fn offsets_from_keys(n: usize, keys: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut offsets = vec![0usize; n + 1];
    for k in keys {
        offsets[k + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    offsets
}

fn check_offsets(name: &str, offsets: &[usize], e: usize) -> Result<()> {
    if offsets.first() != Some(&0)
        || offsets.last() != Some(&e)
        || offsets.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Format(format!("graph cache: malformed {name} offsets")));
    }
    Ok(())
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u64_vec(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u64().map(|x| x as usize)).collect()
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap())))
            .collect()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

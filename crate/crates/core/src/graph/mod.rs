//! Undirected graphs, labelled datasets and GCN adjacency normalization.

mod io;

pub use io::{
    load_dataset, read_edges, read_features, read_labels, read_splits, save_dataset, write_edges, write_features,
    write_labels, write_splits, DatasetPaths,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CsrMatrix, DenseMatrix, Propagator};

/// Simple undirected graph. Edges are stored once as `(u, v)` with `u < v`,
/// sorted; neighbors are kept in CSR form with sorted targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Graph {
    /// Canonicalizes a raw edge list: drops self-loops, symmetrizes and
    /// removes duplicates.
    pub fn from_edges(n_nodes: usize, raw: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.len());
        for &(a, b) in raw {
            for index in [a, b] {
                if index >= n_nodes {
                    return Err(Error::NodeOutOfRange { index, n_nodes });
                }
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::from_sorted_unique(n_nodes, edges))
    }

    /// `edges` must be sorted, deduplicated, in range and satisfy `u < v`.
    pub(crate) fn from_sorted_unique(n_nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(edges.iter().all(|&(u, v)| u < v && v < n_nodes));
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(u, v) in &edges {
            offsets[u + 1] += 1;
            offsets[v + 1] += 1;
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut targets = vec![0; 2 * edges.len()];
        // Sorted edges visit each node's smaller neighbors (as `v`) in
        // ascending `u` order before its larger neighbors, so every
        // neighbor list comes out sorted.
        for &(u, v) in &edges {
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        for &(u, v) in &edges {
            targets[cursor[u]] = v;
            cursor[u] += 1;
        }
        Self {
            n_nodes,
            edges,
            offsets,
            targets,
        }
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self::from_sorted_unique(n_nodes, Vec::new())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|u| self.degree(u)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Edge-set union of two graphs over the same node set.
    pub fn union(&self, other: &Graph) -> Result<Graph> {
        if self.n_nodes != other.n_nodes {
            return Err(Error::Shape(format!(
                "union of graphs with {} and {} nodes",
                self.n_nodes, other.n_nodes
            )));
        }
        let mut edges = Vec::with_capacity(self.edges.len() + other.edges.len());
        let (mut i, mut j) = (0, 0);
        while i < self.edges.len() || j < other.edges.len() {
            let next = match (self.edges.get(i), other.edges.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    i += 1;
                    j += 1;
                    a
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    a
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (_, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            edges.push(next);
        }
        Ok(Self::from_sorted_unique(self.n_nodes, edges))
    }

    /// Relabels nodes: old node `u` becomes `perm[u]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n_nodes {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n_nodes
            )));
        }
        let raw: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::from_edges(self.n_nodes, &raw)
    }
}

/// One train/validation/test partition of node indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = vec![false; n_nodes];
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in part {
                if i >= n_nodes {
                    return Err(Error::InvalidSplit(format!(
                        "{name} index {i} out of range for {n_nodes} nodes"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidSplit(format!("node {i} appears twice ({name})")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Graph with node features, labels and evaluation splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: DenseMatrix,
        labels: Vec<usize>,
        n_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let ds = Self {
            graph,
            features,
            labels,
            n_classes,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n_nodes();
        if self.features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::MissingLabel(self.labels.len().min(n)));
        }
        if let Some((node, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.n_classes) {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                n_classes: self.n_classes,
            });
        }
        for (k, s) in self.splits.iter().enumerate() {
            s.validate(n)
                .map_err(|e| Error::InvalidSplit(format!("split {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn split(&self, index: usize) -> Result<&Split> {
        self.splits
            .get(index)
            .ok_or_else(|| Error::InvalidSplit(format!("split {index} requested, dataset has {}", self.splits.len())))
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.matrix.to_dense()
    }

    /// `I - Â` in CSR form.
    pub fn high_pass(&self) -> CsrMatrix {
        let n = self.matrix.n_rows();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.matrix.nnz());
        let mut values = Vec::with_capacity(self.matrix.nnz());
        offsets.push(0);
        for i in 0..n {
            let (cols, vals) = self.matrix.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                indices.push(j);
                values.push(if i == j { 1.0 - v } else { -v });
            }
            offsets.push(indices.len());
        }
        CsrMatrix::new(n, n, offsets, indices, values).expect("high-pass keeps the CSR layout")
    }

    pub fn propagator(&self) -> Propagator {
        Propagator::from_csr(self.matrix.clone())
    }

    pub fn high_pass_propagator(&self) -> Propagator {
        Propagator::from_csr(self.high_pass())
    }
}

pub fn normalize_adjacency(graph: &Graph) -> NormalizedAdjacency {
    let n = graph.n_nodes();
    let deg: Vec<f64> = (0..n).map(|u| (graph.degree(u) + 1) as f64).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(2 * graph.n_edges() + n);
    let mut values = Vec::with_capacity(2 * graph.n_edges() + n);
    offsets.push(0);
    for u in 0..n {
        let nbrs = graph.neighbors(u);
        let split = nbrs.partition_point(|&v| v < u);
        let cols = nbrs[..split]
            .iter()
            .copied()
            .chain(std::iter::once(u))
            .chain(nbrs[split..].iter().copied());
        for v in cols {
            indices.push(v);
            values.push(1.0 / (deg[u] * deg[v]).sqrt());
        }
        offsets.push(indices.len());
    }
    NormalizedAdjacency {
        matrix: CsrMatrix::new(n, n, offsets, indices, values).expect("normalized adjacency layout"),
    }
}

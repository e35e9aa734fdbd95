//! Homophily metrics, neighbor-label distributions and the rewired graph
//! that connects nodes with similar distributions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par;
use crate::tensor::DenseMatrix;

/// Cosine similarities within this distance below the threshold still
/// count, so that `delta = 1.0` keeps pairs of identical rows.
pub const SIMILARITY_TOLERANCE: f64 = 1e-9;

/// Rows per tile of the all-pairs kernel.
pub const DEFAULT_BLOCK_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomophilyReport {
    pub h_edge: f64,
    pub h_node: f64,
    pub n_edges_counted: usize,
    /// Nodes with at least one neighbor.
    pub n_nodes_counted: usize,
}

impl HomophilyReport {
    /// `h_edge` is reported as 0 when the graph has no edges.
    pub fn is_empty(&self) -> bool {
        self.n_edges_counted == 0
    }
}

fn check_labels(graph: &Graph, labels: &[usize]) -> Result<()> {
    if labels.len() < graph.n_nodes() {
        return Err(Error::MissingLabel(labels.len()));
    }
    Ok(())
}

/// Fraction of edges joining same-label endpoints; 0 for an edgeless graph.
pub fn edge_homophily(graph: &Graph, labels: &[usize]) -> Result<f64> {
    check_labels(graph, labels)?;
    if graph.n_edges() == 0 {
        return Ok(0.0);
    }
    let same = graph.edges().iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
    Ok(same as f64 / graph.n_edges() as f64)
}

/// Mean same-label neighbor fraction over nodes with degree > 0.
pub fn node_homophily(graph: &Graph, labels: &[usize]) -> Result<f64> {
    Ok(homophily_report(graph, labels)?.h_node)
}

pub fn homophily_report(graph: &Graph, labels: &[usize]) -> Result<HomophilyReport> {
    let h_edge = edge_homophily(graph, labels)?;
    let mut total = 0.0;
    let mut counted = 0;
    for u in 0..graph.n_nodes() {
        let nbrs = graph.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs.iter().filter(|&&v| labels[v] == labels[u]).count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    Ok(HomophilyReport {
        h_edge,
        h_node: if counted == 0 { 0.0 } else { total / counted as f64 },
        n_edges_counted: graph.n_edges(),
        n_nodes_counted: counted,
    })
}

/// Per-node neighbor-label distributions, one length-`c` row per node.
/// Isolated nodes carry a uniform row and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroInfoMatrix {
    rows: DenseMatrix,
    isolated: Vec<bool>,
}

impl HeteroInfoMatrix {
    /// Validates that every row is a probability vector.
    pub fn new(rows: DenseMatrix, isolated: Vec<bool>) -> Result<Self> {
        if isolated.len() != rows.rows() {
            return Err(Error::Shape(format!(
                "{} isolation flags for {} rows",
                isolated.len(),
                rows.rows()
            )));
        }
        for i in 0..rows.rows() {
            let row = rows.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParam(format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self { rows, isolated })
    }

    pub fn rows(&self) -> &DenseMatrix {
        &self.rows
    }

    pub fn row(&self, u: usize) -> &[f64] {
        self.rows.row(u)
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.rows.cols()
    }

    pub fn isolated(&self) -> &[bool] {
        &self.isolated
    }

    pub fn is_isolated(&self, u: usize) -> bool {
        self.isolated[u]
    }
}

pub fn hetero_info(graph: &Graph, labels: &[usize], n_classes: usize) -> Result<HeteroInfoMatrix> {
    check_labels(graph, labels)?;
    if n_classes == 0 {
        return Err(Error::InvalidParam("n_classes must be positive".into()));
    }
    let n = graph.n_nodes();
    if let Some((node, &label)) = labels[..n].iter().enumerate().find(|(_, &l)| l >= n_classes) {
        return Err(Error::LabelOutOfRange { node, label, n_classes });
    }
    let mut rows = DenseMatrix::zeros(n, n_classes);
    let mut isolated = vec![false; n];
    par::for_each_row(rows.data_mut(), n_classes, |u, row| {
        let nbrs = graph.neighbors(u);
        if nbrs.is_empty() {
            row.fill(1.0 / n_classes as f64);
            return;
        }
        for &v in nbrs {
            row[labels[v]] += 1.0;
        }
        let d = nbrs.len() as f64;
        for p in row.iter_mut() {
            *p /= d;
        }
    });
    for (u, flag) in isolated.iter_mut().enumerate() {
        *flag = graph.degree(u) == 0;
    }
    Ok(HeteroInfoMatrix { rows, isolated })
}

/// Graph joining every pair of non-isolated nodes whose rows have cosine
/// similarity at least `delta` (minus [`SIMILARITY_TOLERANCE`]).
pub fn build_hi_adjacency(h: &HeteroInfoMatrix, delta: f64) -> Result<Graph> {
    build_hi_adjacency_blocked(h, delta, DEFAULT_BLOCK_SIZE)
}

/// As [`build_hi_adjacency`] with an explicit tile size. The edge set does
/// not depend on `block`.
pub fn build_hi_adjacency_blocked(h: &HeteroInfoMatrix, delta: f64, block: usize) -> Result<Graph> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParam(format!("delta = {delta} outside [0, 1]")));
    }
    if block == 0 {
        return Err(Error::InvalidParam("block size must be positive".into()));
    }
    let n = h.n_nodes();
    let c = h.n_classes();
    let threshold = delta - SIMILARITY_TOLERANCE;

    // Unit rows; a zero row stays zero so its similarities are 0.
    let mut unit = h.rows.clone();
    par::for_each_row(unit.data_mut(), c, |_, row| {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    });
    let unit = unit.data();
    let isolated = &h.isolated;

    let n_blocks = n.div_ceil(block);
    let per_block: Vec<Vec<(usize, usize)>> = par::map_range(n_blocks, |b| {
        let rows = b * block..((b + 1) * block).min(n);
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); rows.len()];
        for tile in (rows.start / block..n_blocks).map(|t| t * block..((t + 1) * block).min(n)) {
            for i in rows.clone() {
                if isolated[i] {
                    continue;
                }
                let xi = &unit[i * c..(i + 1) * c];
                let out = &mut lists[i - rows.start];
                for j in tile.start.max(i + 1)..tile.end {
                    if isolated[j] {
                        continue;
                    }
                    let xj = &unit[j * c..(j + 1) * c];
                    let mut dot = 0.0;
                    for k in 0..c {
                        dot += xi[k] * xj[k];
                    }
                    if dot >= threshold {
                        out.push(j);
                    }
                }
            }
        }
        lists
            .into_iter()
            .enumerate()
            .flat_map(|(k, js)| js.into_iter().map(move |j| (rows.start + k, j)))
            .collect()
    });
    Ok(Graph::from_sorted_unique(n, per_block.concat()))
}

/// Spread of neighbor distributions around their class means: per class,
/// the population standard deviation of each entry over the class's
/// non-isolated nodes, averaged over entries and then over classes.
pub fn sigma_bar(h: &HeteroInfoMatrix, labels: &[usize]) -> Result<f64> {
    let n = h.n_nodes();
    let c = h.n_classes();
    if labels.len() < n {
        return Err(Error::MissingLabel(labels.len()));
    }
    let mut count = vec![0usize; c];
    let mut mean = vec![0.0; c * c];
    for u in (0..n).filter(|&u| !h.isolated[u]) {
        let y = labels[u];
        if y >= c {
            return Err(Error::LabelOutOfRange {
                node: u,
                label: y,
                n_classes: c,
            });
        }
        count[y] += 1;
        for (m, &p) in mean[y * c..(y + 1) * c].iter_mut().zip(h.row(u)) {
            *m += p;
        }
    }
    for y in 0..c {
        if count[y] > 0 {
            mean[y * c..(y + 1) * c].iter_mut().for_each(|m| *m /= count[y] as f64);
        }
    }
    let mut var = vec![0.0; c * c];
    for u in (0..n).filter(|&u| !h.isolated[u]) {
        let y = labels[u];
        for k in 0..c {
            let d = h.row(u)[k] - mean[y * c + k];
            var[y * c + k] += d * d;
        }
    }
    let present: Vec<usize> = (0..c).filter(|&y| count[y] > 0).collect();
    if present.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = present
        .iter()
        .map(|&y| (0..c).map(|k| (var[y * c + k] / count[y] as f64).sqrt()).sum::<f64>() / c as f64)
        .sum();
    Ok(total / present.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub delta: f64,
    pub h_hat: f64,
    pub h_hat_minus_h: f64,
    pub sigma_bar: f64,
    pub n_edges: usize,
}

/// Measures the edge homophily of the rewired graph at each threshold.
pub fn homophily_improvement(
    graph: &Graph,
    h: &HeteroInfoMatrix,
    labels: &[usize],
    deltas: &[f64],
) -> Result<Vec<ImprovementRow>> {
    let base = edge_homophily(graph, labels)?;
    let sigma = sigma_bar(h, labels)?;
    deltas
        .iter()
        .map(|&delta| {
            let rewired = build_hi_adjacency(h, delta)?;
            let h_hat = edge_homophily(&rewired, labels)?;
            Ok(ImprovementRow {
                delta,
                h_hat,
                h_hat_minus_h: h_hat - base,
                sigma_bar: sigma,
                n_edges: rewired.n_edges(),
            })
        })
        .collect()
}

pub fn improvement_csv(rows: &[ImprovementRow]) -> String {
    let mut out = String::from("delta,h_hat,h_hat_minus_h,sigma_bar\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.delta, r.h_hat, r.h_hat_minus_h, r.sigma_bar).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn star(leaf_label: usize) -> (Graph, Vec<usize>) {
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        (g, vec![0, leaf_label, leaf_label, leaf_label, leaf_label])
    }

    #[test]
    fn metric_examples() {
        let tri = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(edge_homophily(&tri, &[1, 1, 1]).unwrap(), 1.0);
        let edge = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(edge_homophily(&edge, &[0, 1]).unwrap(), 0.0);

        let (g, y) = star(0);
        assert_eq!(node_homophily(&g, &y).unwrap(), 1.0);
        // every node of a bipartite-labelled star sees only the other class
        let (g, y) = star(1);
        assert_eq!(node_homophily(&g, &y).unwrap(), 0.0);
        let mixed = [0, 0, 1, 1, 1];
        assert_eq!(node_homophily(&g, &mixed).unwrap(), (0.25 + 1.0) / 5.0);

        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let r = homophily_report(&path, &[0, 0, 1]).unwrap();
        assert_eq!(r.h_edge, 0.5);
        assert_eq!(r.h_node, 0.5);
    }

    #[test]
    fn empty_and_missing() {
        let g = Graph::empty(3);
        let r = homophily_report(&g, &[0, 1, 2]).unwrap();
        assert!(r.is_empty());
        assert_eq!((r.h_edge, r.h_node, r.n_nodes_counted), (0.0, 0.0, 0));
        let edge = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(matches!(edge_homophily(&edge, &[0]), Err(Error::MissingLabel(1))));
    }

    #[test]
    fn hetero_info_examples() {
        // node 0 with neighbor labels [0, 0, 1]
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let h = hetero_info(&g, &[2, 0, 0, 1], 3).unwrap();
        let r = h.row(0);
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-15 && (r[1] - 1.0 / 3.0).abs() < 1e-15 && r[2] == 0.0);

        let g = Graph::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let h = hetero_info(&g, &[2, 2, 2], 4).unwrap();
        assert_eq!(h.row(0), &[0.0, 0.0, 1.0, 0.0]);

        let h = hetero_info(&Graph::empty(1), &[0], 5).unwrap();
        assert_eq!(h.row(0), &[0.2; 5]);
        assert!(h.is_isolated(0));

        assert!(matches!(
            hetero_info(&g, &[0, 4, 0], 4),
            Err(Error::LabelOutOfRange { node: 1, .. })
        ));
    }

    fn matrix(rows: &[Vec<f64>]) -> HeteroInfoMatrix {
        HeteroInfoMatrix::new(DenseMatrix::from_rows(rows).unwrap(), vec![false; rows.len()]).unwrap()
    }

    #[test]
    fn adjacency_examples() {
        let same = matrix(&[vec![0.3, 0.7], vec![0.3, 0.7]]);
        assert_eq!(build_hi_adjacency(&same, 0.9).unwrap().edges(), &[(0, 1)]);
        assert_eq!(build_hi_adjacency(&same, 1.0).unwrap().edges(), &[(0, 1)]);
        let ortho = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(build_hi_adjacency(&ortho, 0.5).unwrap().n_edges(), 0);
        assert!(build_hi_adjacency(&ortho, 1.5).is_err());
        assert!(build_hi_adjacency(&ortho, -0.1).is_err());
    }

    #[test]
    fn zero_delta_gives_complete_graph_on_connected_nodes() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let h = hetero_info(&g, &[0, 1, 0, 1, 1, 0], 2).unwrap();
        let a = build_hi_adjacency(&h, 0.0).unwrap();
        assert_eq!(a.n_edges(), 10);
        assert_eq!(a.degree(5), 0);
    }

    #[test]
    fn improvement_on_homophilous_graph() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let h = hetero_info(&g, &y, 2).unwrap();
        let rows = homophily_improvement(&g, &h, &y, &[0.5, 0.9, 1.0]).unwrap();
        for r in &rows {
            assert_eq!(r.h_hat, 1.0);
            assert_eq!(r.h_hat_minus_h, 0.0);
            assert_eq!(r.sigma_bar, 0.0);
        }
        let csv = improvement_csv(&rows);
        assert!(csv.starts_with("delta,h_hat,h_hat_minus_h,sigma_bar\n0.5,1,0,0\n"));
    }

    #[test]
    fn sigma_bar_by_hand() {
        // class 0 rows [1,0] and [0.5,0.5]: entry stds 0.25 and 0.25
        // class 1 rows identical: stds 0
        let h = matrix(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.2, 0.8], vec![0.2, 0.8]]);
        let s = sigma_bar(&h, &[0, 0, 1, 1]).unwrap();
        assert!((s - 0.125).abs() < 1e-15);
    }

    fn naive_adjacency(h: &HeteroInfoMatrix, delta: f64) -> Vec<(usize, usize)> {
        let n = h.n_nodes();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if h.is_isolated(i) || h.is_isolated(j) {
                    continue;
                }
                let (a, b) = (h.row(i), h.row(j));
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for k in 0..a.len() {
                    dot += a[k] * b[k];
                    na += a[k] * a[k];
                    nb += b[k] * b[k];
                }
                let cos = if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na.sqrt() * nb.sqrt())
                };
                if cos >= delta - 1e-9 {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    fn labelled_graph(max_nodes: usize) -> impl Strategy<Value = (Graph, Vec<usize>, usize)> {
        (2usize..max_nodes, 2usize..6).prop_flat_map(|(n, c)| {
            (
                prop::collection::vec((0..n, 0..n), 0..3 * n),
                prop::collection::vec(0..c, n),
            )
                .prop_map(move |(raw, y)| (Graph::from_edges(n, &raw).unwrap(), y, c))
        })
    }

    const DELTAS: [f64; 7] = [0.0, 0.3, 0.5, std::f64::consts::FRAC_1_SQRT_2, 0.8, 0.9, 1.0];

    proptest! {
        #[test]
        fn kernel_matches_naive_oracle((g, y, c) in labelled_graph(50), d in 0usize..7, block in 1usize..20) {
            let h = hetero_info(&g, &y, c).unwrap();
            let fast = build_hi_adjacency_blocked(&h, DELTAS[d], block).unwrap();
            let naive = naive_adjacency(&h, DELTAS[d]);
            prop_assert_eq!(fast.edges(), naive.as_slice());
            prop_assert_eq!(&fast, &build_hi_adjacency(&h, DELTAS[d]).unwrap());
        }

        #[test]
        fn rows_are_distributions((g, y, c) in labelled_graph(40)) {
            let h = hetero_info(&g, &y, c).unwrap();
            for u in 0..g.n_nodes() {
                let row = h.row(u);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let one_class = g.degree(u) > 0
                    && g.neighbors(u).iter().all(|&v| y[v] == y[g.neighbors(u)[0]]);
                prop_assert_eq!(row.contains(&1.0), one_class);
            }
        }

        #[test]
        fn threshold_monotone((g, y, c) in labelled_graph(40), a in 0usize..7, b in 0usize..7) {
            let h = hetero_info(&g, &y, c).unwrap();
            let (lo, hi) = (DELTAS[a.min(b)], DELTAS[a.max(b)]);
            let loose = build_hi_adjacency(&h, lo).unwrap();
            let tight = build_hi_adjacency(&h, hi).unwrap();
            for &(u, v) in tight.edges() {
                prop_assert!(u < v && loose.has_edge(u, v));
            }
        }

        #[test]
        fn relabeling_equivariance((g, y, c) in labelled_graph(30), seed in any::<u64>(), d in 0usize..7) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = g.n_nodes();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pg = g.permute(&perm).unwrap();
            let mut py = vec![0; n];
            for u in 0..n {
                py[perm[u]] = y[u];
            }
            let r1 = homophily_report(&g, &y).unwrap();
            let r2 = homophily_report(&pg, &py).unwrap();
            prop_assert_eq!(r1.h_edge, r2.h_edge);
            prop_assert!((r1.h_node - r2.h_node).abs() < 1e-12);

            let h = hetero_info(&g, &y, c).unwrap();
            let ph = hetero_info(&pg, &py, c).unwrap();
            for u in 0..n {
                prop_assert_eq!(h.row(u), ph.row(perm[u]));
            }
            let a = build_hi_adjacency(&h, DELTAS[d]).unwrap();
            prop_assert_eq!(a.permute(&perm).unwrap(), build_hi_adjacency(&ph, DELTAS[d]).unwrap());
        }
    }
}

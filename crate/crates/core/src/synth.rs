//! Class-balanced stochastic block model datasets with Gaussian-cluster
//! features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Split};
use crate::homophily::{hetero_info, sigma_bar};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub c: usize,
    /// Target edge homophily.
    pub h: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    /// Distance between any two class means.
    pub feature_separation: f64,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            c: 5,
            h: 0.1,
            avg_degree: 20.0,
            feature_dim: 16,
            feature_separation: 1.0,
            n_splits: 1,
            seed: 0,
        }
    }
}

/// Block model edge probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmProbabilities {
    pub p_in: f64,
    pub p_out: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::InvalidParam(format!("c = {} must be at least 2", self.c)));
        }
        if self.n_nodes == 0 || !self.n_nodes.is_multiple_of(self.c) {
            return Err(Error::InvalidParam(format!(
                "n_nodes = {} must be a positive multiple of c = {}",
                self.n_nodes, self.c
            )));
        }
        if !(0.0..=1.0).contains(&self.h) {
            return Err(Error::InvalidParam(format!("h = {} outside [0, 1]", self.h)));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "avg_degree = {} must be positive",
                self.avg_degree
            )));
        }
        if self.feature_dim < self.c {
            return Err(Error::InvalidParam(format!(
                "feature_dim = {} must be at least c = {}",
                self.feature_dim, self.c
            )));
        }
        if !(self.feature_separation >= 0.0 && self.feature_separation.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "feature_separation = {} must be nonnegative",
                self.feature_separation
            )));
        }
        if self.n_splits == 0 {
            return Err(Error::InvalidParam("n_splits must be positive".into()));
        }
        Ok(())
    }

    /// Splits the expected `E = avg_degree·n/2` edges into `h·E` intra-class
    /// and `(1-h)·E` inter-class edges, spread evenly over the
    /// `c·m(m-1)/2` intra-class and `c(c-1)/2·m²` inter-class node pairs
    /// (`m = n/c`). Expected edge homophily is then exactly `h`.
    pub fn probabilities(&self) -> Result<SbmProbabilities> {
        self.validate()?;
        let (n, c) = (self.n_nodes as f64, self.c as f64);
        let m = n / c;
        let edges = self.avg_degree * n / 2.0;
        let intra_pairs = c * m * (m - 1.0) / 2.0;
        let inter_pairs = c * (c - 1.0) / 2.0 * m * m;
        let p_in = if self.h == 0.0 {
            0.0
        } else {
            self.h * edges / intra_pairs
        };
        let p_out = if self.h == 1.0 {
            0.0
        } else {
            (1.0 - self.h) * edges / inter_pairs
        };
        for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Infeasible(format!(
                    "{name} = {p} for n = {}, c = {}, h = {}, avg_degree = {}",
                    self.n_nodes, self.c, self.h, self.avg_degree
                )));
            }
        }
        Ok(SbmProbabilities { p_in, p_out })
    }
}

/// Random stream ids under the spec seed.
const EDGE_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Labels in contiguous blocks of `n/c` nodes, SBM edges, features
/// `(sep/√2)·e_y + N(0, I)`, and `n_splits` random 60/20/20 splits.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    let probs = spec.probabilities()?;
    let n = spec.n_nodes;
    let m = n / spec.c;
    let labels: Vec<usize> = (0..n).map(|u| u / m).collect();
    let graph = sample_edges(spec.c, m, probs, &mut rng(spec.seed, EDGE_STREAM))?;

    let mut frng = rng(spec.seed, FEATURE_STREAM);
    let offset = spec.feature_separation / std::f64::consts::SQRT_2;
    let mut features = DenseMatrix::zeros(n, spec.feature_dim);
    for u in 0..n {
        for j in 0..spec.feature_dim {
            let mean = if j == labels[u] { offset } else { 0.0 };
            features.set(u, j, mean + frng.sample::<f64, _>(StandardNormal));
        }
    }

    let mut srng = rng(spec.seed, SPLIT_STREAM);
    let splits = (0..spec.n_splits)
        .map(|_| random_split(n, 0.6, 0.2, &mut srng))
        .collect();
    Dataset::new(graph, features, labels, spec.c, splits)
}

/// Each part sorted ascending; the test part takes the remainder.
pub fn random_split(n: usize, train: f64, val: f64, rng: &mut impl Rng) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_train);
    let part = |r: std::ops::Range<usize>| {
        let mut v = order[r].to_vec();
        v.sort_unstable();
        v
    };
    Split {
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    }
}

/// Visits the successes of `len` Bernoulli(p) trials by geometric skips.
fn bernoulli_hits(len: u64, p: f64, rng: &mut ChaCha8Rng, mut hit: impl FnMut(u64)) -> Result<()> {
    if p <= 0.0 || len == 0 {
        return Ok(());
    }
    if p >= 1.0 {
        (0..len).for_each(hit);
        return Ok(());
    }
    let skip = Geometric::new(p).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut t = skip.sample(rng);
    while t < len {
        hit(t);
        t = t.saturating_add(1).saturating_add(skip.sample(rng));
    }
    Ok(())
}

fn sample_edges(c: usize, m: usize, probs: SbmProbabilities, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut edges = Vec::new();
    for a in 0..c {
        for b in a..c {
            let (base_a, base_b) = (a * m, b * m);
            if a == b {
                // Upper triangle of the block, row by row.
                let (mut row, mut row_start) = (0usize, 0u64);
                let len = (m * m.saturating_sub(1) / 2) as u64;
                bernoulli_hits(len, probs.p_in, rng, |t| {
                    while t >= row_start + (m - 1 - row) as u64 {
                        row_start += (m - 1 - row) as u64;
                        row += 1;
                    }
                    let col = row + 1 + (t - row_start) as usize;
                    edges.push((base_a + row, base_a + col));
                })?;
            } else {
                bernoulli_hits((m * m) as u64, probs.p_out, rng, |t| {
                    let (i, j) = ((t / m as u64) as usize, (t % m as u64) as usize);
                    edges.push((base_a + i, base_b + j));
                })?;
            }
        }
    }
    Graph::from_edges(c * m, &edges)
}

/// Spread of neighbor-label distributions around their class means, the
/// noise level to plug into the closed-form homophily prediction.
pub fn effective_sigma(graph: &Graph, labels: &[usize], c: usize) -> Result<f64> {
    sigma_bar(&hetero_info(graph, labels, c)?, labels)
}

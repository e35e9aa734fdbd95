use crate::error::{Error, Result};
use crate::par;

use super::DenseMatrix;

/// Graphs with at most this many nodes are propagated with a dense matrix.
pub const DENSE_FALLBACK_MAX_NODES: usize = 512;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != n_rows + 1 || offsets[0] != 0 {
            return Err(Error::Shape(format!("{} row offsets for {n_rows} rows", offsets.len())));
        }
        if indices.len() != values.len() || *offsets.last().unwrap() != indices.len() {
            return Err(Error::Shape("offsets, indices and values disagree".into()));
        }
        for r in 0..n_rows {
            if offsets[r] > offsets[r + 1] {
                return Err(Error::Shape(format!("row {r} has decreasing offsets")));
            }
            let row = &indices[offsets[r]..offsets[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape(format!("row {r} columns not strictly increasing")));
            }
            if row.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::Shape(format!("row {r} has a column >= {n_cols}")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                indices[cursor[j]] = i;
                values[cursor[j]] = v;
                cursor[j] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            offsets,
            indices,
            values,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }

    /// Sparse-times-dense product, parallel over output rows with a fixed
    /// ascending-column summation order.
    pub fn mul_dense(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != rhs.rows() {
            return Err(Error::Shape(format!(
                "spmm {}x{} by {}x{}",
                self.n_rows,
                self.n_cols,
                rhs.rows(),
                rhs.cols()
            )));
        }
        let width = rhs.cols();
        let mut out = vec![0.0; self.n_rows * width];
        par::for_each_row(&mut out, width, |i, out_row| {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        });
        DenseMatrix::from_vec(self.n_rows, width, out)
    }
}

/// A fixed linear operator applied to node-feature matrices: the identity
/// (graph-free models), a CSR matrix, or a dense matrix for small graphs.
#[derive(Clone, Debug)]
pub enum Propagator {
    Identity(usize),
    Sparse {
        matrix: CsrMatrix,
        /// `None` when the matrix is symmetric.
        transpose: Option<CsrMatrix>,
    },
    Dense {
        matrix: DenseMatrix,
        transpose: Option<DenseMatrix>,
    },
}

impl Propagator {
    /// Chooses the dense kernel for graphs up to
    /// [`DENSE_FALLBACK_MAX_NODES`] nodes and CSR otherwise.
    pub fn from_csr(matrix: CsrMatrix) -> Self {
        if matrix.n_rows() <= DENSE_FALLBACK_MAX_NODES {
            Self::dense(matrix.to_dense())
        } else {
            Self::sparse(matrix)
        }
    }

    pub fn sparse(matrix: CsrMatrix) -> Self {
        let t = matrix.transpose();
        let transpose = if t == matrix { None } else { Some(t) };
        Propagator::Sparse { matrix, transpose }
    }

    pub fn dense(matrix: DenseMatrix) -> Self {
        let t = matrix.transpose();
        let transpose = if t == matrix { None } else { Some(t) };
        Propagator::Dense { matrix, transpose }
    }

    /// Number of rows (and columns) of the operator.
    pub fn dim(&self) -> usize {
        match self {
            Propagator::Identity(n) => *n,
            Propagator::Sparse { matrix, .. } => matrix.n_rows(),
            Propagator::Dense { matrix, .. } => matrix.rows(),
        }
    }

    pub fn apply(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Propagator::Identity(n) => {
                if z.rows() != *n {
                    return Err(Error::Shape(format!("identity {n} applied to {} rows", z.rows())));
                }
                Ok(z.clone())
            }
            Propagator::Sparse { matrix, .. } => matrix.mul_dense(z),
            Propagator::Dense { matrix, .. } => matrix.matmul(z),
        }
    }

    pub fn apply_transpose(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Propagator::Identity(_) => self.apply(z),
            Propagator::Sparse { matrix, transpose } => transpose.as_ref().unwrap_or(matrix).mul_dense(z),
            Propagator::Dense { matrix, transpose } => transpose.as_ref().unwrap_or(matrix).matmul(z),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Propagator::Identity(n) => DenseMatrix::identity(*n),
            Propagator::Sparse { matrix, .. } => matrix.to_dense(),
            Propagator::Dense { matrix, .. } => matrix.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_csr(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for _ in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    indices.push(j);
                    values.push(rng.random_range(-1.0..1.0));
                }
            }
            offsets.push(indices.len());
        }
        CsrMatrix::new(n, n, offsets, indices, values).unwrap()
    }

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn spmm_is_bitwise_equal_to_dense_product() {
        let a = random_csr(40, 0.2, 1);
        let z = random_dense(40, 7, 2);
        let sparse = a.mul_dense(&z).unwrap();
        let dense = a.to_dense().matmul(&z).unwrap();
        assert_eq!(sparse, dense);
    }

    #[test]
    fn transpose_round_trip() {
        let a = random_csr(25, 0.3, 3);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
        assert!(!a.is_symmetric());
        assert!(CsrMatrix::identity(5).is_symmetric());
    }

    #[test]
    fn propagator_transpose_paths() {
        let a = random_csr(30, 0.25, 4);
        let z = random_dense(30, 3, 5);
        let expected = a.to_dense().transpose().matmul(&z).unwrap();
        for p in [Propagator::sparse(a.clone()), Propagator::dense(a.to_dense())] {
            assert!(p.apply_transpose(&z).unwrap().max_abs_diff(&expected) < 1e-14);
        }
    }

    #[test]
    fn rejects_unsorted_rows() {
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
    }
}

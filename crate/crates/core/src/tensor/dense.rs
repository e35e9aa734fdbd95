use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Shape(format!("row {i} has {} values, expected {cols}", r.len())));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Dense product `self · rhs`.
    ///
    /// Each output entry is accumulated over `k` in ascending order, skipping
    /// zero left-hand entries, so the result matches the CSR kernel bit for bit
    /// and does not depend on the worker count.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let n = rhs.cols;
        let mut out = DenseMatrix::zeros(self.rows, n);
        par::for_each_row(&mut out.data, n, |i, out_row| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        });
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn zip_with(&self, rhs: &DenseMatrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!(
                "{op} {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &DenseMatrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::Shape(format!(
                "add_assign {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> DenseMatrix {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Inverted dropout: entries survive with probability `1 - rate` and are
    /// scaled by `1 / (1 - rate)`. `rate == 0` returns an exact copy.
    pub fn dropout(&self, rate: f64, seed: u64) -> Result<DenseMatrix> {
        let mask = dropout_mask(self.rows * self.cols, rate, seed)?;
        Ok(match mask {
            None => self.clone(),
            Some(mask) => DenseMatrix {
                rows: self.rows,
                cols: self.cols,
                data: self.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
            },
        })
    }

    /// Numerically stable softmax of every row.
    pub fn row_softmax(&self) -> DenseMatrix {
        let mut out = self.clone();
        if self.cols == 0 {
            return out;
        }
        for row in out.data.chunks_mut(self.cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_abs_diff(&self, rhs: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Scaled keep-mask for inverted dropout, or `None` when `rate == 0`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParam(format!("dropout rate {rate} not in [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    ))
}

pub(crate) fn validate_mask(rows: usize, labels: &[usize], mask: &[usize], n_classes: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    for &i in mask {
        if i >= rows {
            return Err(Error::NodeOutOfRange {
                index: i,
                n_nodes: rows,
            });
        }
        if labels[i] >= n_classes {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: labels[i],
                n_classes,
            });
        }
    }
    Ok(())
}

/// Mean negative log-softmax probability of the true class over the masked
/// rows, with log-sum-exp stabilization.
pub fn masked_cross_entropy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    validate_mask(logits.rows(), labels, mask, logits.cols())?;
    let mut total = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    Ok(total / mask.len() as f64)
}

/// Fraction of masked rows whose argmax equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    validate_mask(logits.rows(), labels, mask, logits.cols())?;
    let pred = logits.argmax_rows();
    let hits = mask.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(hits as f64 / mask.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let m = random(4, 3, 1);
        assert_eq!(DenseMatrix::identity(4).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(7, 5, 2);
        let b = random(5, 3, 3);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
        for (n, seed) in [(16, 4), (33, 5), (64, 6)] {
            let a = random(n, n, seed);
            let b = random(n, n, seed + 100);
            assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        assert!(matches!(random(2, 3, 0).matmul(&random(2, 3, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_softmax_dropout_basics() {
        let m = DenseMatrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(m.relu().data(), &[0.0, 2.0]);
        assert_eq!(m.dropout(0.0, 9).unwrap(), m);
        let s = DenseMatrix::zeros(1, 3).row_softmax();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(m.dropout(1.0, 0).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let m = DenseMatrix::filled(10, 10, 1.0);
        let mut acc = DenseMatrix::zeros(10, 10);
        let trials = 10_000;
        for seed in 0..trials {
            acc.add_assign(&m.dropout(0.5, seed).unwrap()).unwrap();
        }
        let mean = acc.sum() / (100.0 * trials as f64);
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn cross_entropy_cases() {
        let mut logits = DenseMatrix::zeros(2, 3);
        logits.set(0, 1, 1e3);
        logits.set(1, 2, 1e3);
        let loss = masked_cross_entropy(&logits, &[1, 2], &[0, 1]).unwrap();
        assert!(loss.abs() < 1e-12);

        let uniform = DenseMatrix::zeros(4, 5);
        let loss = masked_cross_entropy(&uniform, &[0, 1, 2, 3], &[0, 2, 3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);

        assert!(matches!(
            masked_cross_entropy(&uniform, &[0, 1, 2, 3], &[]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn cross_entropy_matches_direct_softmax() {
        let logits = random(4, 3, 11).scale(3.0);
        let labels = [2, 0, 1, 1];
        let mask = [0, 1, 3];
        let mut expected = 0.0;
        for &i in &mask {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[labels[i]].exp() / z).ln();
        }
        expected /= mask.len() as f64;
        let got = masked_cross_entropy(&logits, &labels, &mask).unwrap();
        assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(m.argmax_rows(), vec![0, 1]);
        assert_eq!(accuracy(&m, &[0, 2], &[0, 1]).unwrap(), 0.5);
    }
}

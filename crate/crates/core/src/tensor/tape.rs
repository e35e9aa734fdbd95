//! Minimal reverse-mode gradient tape over [`DenseMatrix`] values.
//!
//! Operations are recorded eagerly: each call computes its output and pushes
//! a node holding the value and the references needed to backpropagate.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients
//! only for nodes that depend on a trainable leaf.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::dense::{dropout_mask, validate_mask};
use super::{DenseMatrix, Propagator};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Propagate(Var, Arc<Propagator>),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    RowSoftmax(Var),
    CrossEntropy {
        logits: Var,
        /// (row, class) for each masked row.
        targets: Vec<(usize, usize)>,
    },
    Sum(Var),
    SquaredSum(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Applies a fixed operator (normalized adjacency, high-pass filter).
    pub fn propagate(&mut self, op: &Arc<Propagator>, z: Var) -> Result<Var> {
        let value = op.apply(self.value(z))?;
        let rg = self.needs(z);
        Ok(self.push(value, Op::Propagate(z, Arc::clone(op)), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Inverted dropout; `rate == 0` returns `a` unchanged without recording.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Result<Var> {
        let src = self.value(a);
        let Some(mask) = dropout_mask(src.rows() * src.cols(), rate, seed)? else {
            return Ok(a);
        };
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = DenseMatrix::from_vec(src.rows(), src.cols(), data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).row_softmax();
        let rg = self.needs(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// Scalar mean cross-entropy over the masked rows.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        validate_mask(z.rows(), labels, mask, z.cols())?;
        let loss = super::masked_cross_entropy(z, labels, mask)?;
        let targets = mask.iter().map(|&i| (i, labels[i])).collect();
        let rg = self.needs(logits);
        Ok(self.push(
            DenseMatrix::filled(1, 1, loss),
            Op::CrossEntropy { logits, targets },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn squared_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let rg = self.needs(a);
        self.push(DenseMatrix::filled(1, 1, s), Op::SquaredSum(a), rg)
    }

    /// Backpropagates from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("node {} is not on the tape", loss.0)))?;
        if root.value.shape() != (1, 1) {
            let (r, c) = root.value.shape();
            return Err(Error::Tape(format!("backward needs a scalar root, got {r}x{c}")));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Propagate(z, op) => {
                    accumulate(&mut grads, *z, op.apply_transpose(&g)?)?;
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut grads, *a, g.scale(*factor))?;
                }
                Op::Relu(a) => {
                    let input = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::Dropout(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    accumulate(&mut grads, *a, DenseMatrix::from_vec(g.rows(), g.cols(), data)?)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut out = DenseMatrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols() {
                            out.set(i, j, yr[j] * (gr[j] - dot));
                        }
                    }
                    accumulate(&mut grads, *a, out)?;
                }
                Op::CrossEntropy { logits, targets } => {
                    let z = self.value(*logits);
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut out = DenseMatrix::zeros(z.rows(), z.cols());
                    for &(i, y) in targets {
                        let row = z.row(i);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        for (j, &v) in row.iter().enumerate() {
                            let p = (v - max).exp() / total;
                            let t = if j == y { 1.0 } else { 0.0 };
                            out.set(i, j, out.get(i, j) + scale * (p - t));
                        }
                    }
                    accumulate(&mut grads, *logits, out)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, DenseMatrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::SquaredSum(a) => {
                    let factor = 2.0 * g.get(0, 0);
                    accumulate(&mut grads, *a, self.value(*a).scale(factor))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, contrib: DenseMatrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&contrib),
        slot @ None => {
            *slot = Some(contrib);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CsrMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central finite differences of `f` around `x`.
    fn numeric_grad(x: &DenseMatrix, f: impl Fn(&DenseMatrix) -> f64, step: f64) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut plus = x.clone();
                plus.set(i, j, x.get(i, j) + step);
                let mut minus = x.clone();
                minus.set(i, j, x.get(i, j) - step);
                out.set(i, j, (f(&plus) - f(&minus)) / (2.0 * step));
            }
        }
        out
    }

    fn max_rel_err(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
        analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    /// Records `build` with `x` as the only parameter and checks its gradient.
    fn check(x: DenseMatrix, build: impl Fn(&mut Tape, Var) -> Var, tol: f64) {
        let eval = |m: &DenseMatrix| {
            let mut t = Tape::new();
            let v = t.param(m.clone());
            let out = build(&mut t, v);
            t.value(out).get(0, 0)
        };
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(&mut tape, v);
        let grads = tape.backward(out).unwrap();
        let analytic = grads.get(v).unwrap().clone();
        let numeric = numeric_grad(&x, eval, 1e-6);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= tol, "relative gradient error {err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(random(3, 4, 0));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &DenseMatrix::filled(3, 4, 1.0));
    }

    #[test]
    fn squared_norm_of_product_matches_finite_differences() {
        let a = random(3, 3, 1);
        check(
            random(3, 3, 2),
            |t, w| {
                let a = t.constant(a.clone());
                let p = t.matmul(a, w).unwrap();
                t.squared_sum(p)
            },
            1e-6,
        );
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let b = random(4, 3, 3);
        let labels = vec![0, 2, 1, 2, 0];
        let prop = Arc::new(Propagator::sparse(
            CsrMatrix::new(
                5,
                5,
                vec![0, 2, 4, 5, 7, 8],
                vec![0, 3, 1, 4, 2, 0, 3, 1],
                vec![0.5, 0.2, 1.0, -0.4, 0.7, 0.3, 0.9, 0.6],
            )
            .unwrap(),
        ));
        check(
            random(5, 4, 4),
            |t, x| {
                let b = t.constant(b.clone());
                let h = t.matmul(x, b).unwrap();
                let h = t.propagate(&prop, h).unwrap();
                let r = t.relu(h);
                let d = t.dropout(r, 0.3, 17).unwrap();
                let s = t.scale(d, 1.7);
                let sum = t.add(s, h).unwrap();
                t.masked_cross_entropy(sum, &labels, &[0, 1, 3, 4]).unwrap()
            },
            1e-6,
        );
        check(
            random(3, 4, 5),
            |t, x| {
                let y = t.row_softmax(x);
                let w = t.constant(random(4, 3, 6));
                let prod = t.matmul(y, w).unwrap();
                t.squared_sum(prod)
            },
            1e-6,
        );
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let w = tape.param(random(2, 2, 0));
        assert!(matches!(tape.backward(w), Err(Error::Tape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(random(2, 3, 0));
        let w = tape.param(random(3, 1, 1));
        let p = tape.matmul(x, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }
}

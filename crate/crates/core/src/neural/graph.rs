//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient
//! of a scalar node with respect to every parameter it reaches. Parameters
//! are read in place from the borrowed [`ParamStore`]; nothing is copied.

use crate::error::{Error, Result};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_nt, matmul_tn, Tensor};

/// Lower clamp applied to the target probability in [`Graph::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Transpose(Var),
    Softmax(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    Row(Var, usize),
    Gather(ParamId, Vec<usize>),
    Sum(Var),
    Scale(Var, f64),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameter leaves; their value lives in the store.
    value: Option<Tensor>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), None) => self.store.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// `a + 1·b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} plus bias {:?}", x.shape(), b.shape()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    /// Softmax over all entries of a row or column vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 && x.cols() != 1 {
            return Err(Error::shape(
                "softmax",
                format!("expected a vector, got {:?}", x.shape()),
            ));
        }
        let probs = softmax(x.data());
        let out = Tensor::from_vec(x.rows(), x.cols(), probs)?;
        Ok(self.push(Op::Softmax(a), out))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = Tensor::from_vec(x.rows(), cols, data)?;
        Ok(self.push(Op::ConcatCols(a, b), out))
    }

    /// Vertical concatenation. All parts must share a column count;
    /// an empty list yields a `0 × cols` tensor.
    pub fn stack_rows(&mut self, parts: &[Var], cols: usize) -> Result<Var> {
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "stack_rows",
                    format!("part has {} columns, expected {cols}", t.cols()),
                ));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::StackRows(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, x.shape()),
            ));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(x.rows(), len, data)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let x = self.value(a);
        if index >= x.rows() {
            return Err(Error::shape(
                "row",
                format!("row {index} of {:?}", x.shape()),
            ));
        }
        let out = Tensor::row_vector(x.row(index).to_vec());
        Ok(self.push(Op::Row(a, index), out))
    }

    /// Rows of a parameter matrix selected by index; the backward pass
    /// scatters into those rows only.
    pub fn gather_rows(&mut self, table: ParamId, indices: &[usize]) -> Result<Var> {
        let t = self.store.get(table);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {i} of {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(indices.len(), t.cols(), data)?;
        Ok(self.push(Op::Gather(table, indices.to_vec()), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        self.push(Op::Scale(a, k), out)
    }

    /// `-ln(max(p[class], PROB_FLOOR))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, probs: Var, class: usize) -> Result<Var> {
        let p = self.value(probs);
        if class >= p.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("class {class} of {} probabilities", p.len()),
            ));
        }
        let out = Tensor::filled(1, 1, cross_entropy(p.data(), class));
        Ok(self.push(Op::CrossEntropy(probs, class), out))
    }

    /// Gradients of the scalar `loss` with respect to every reachable
    /// parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {shape:?}"),
            ));
        }
        let mut params = Gradients::empty(self.store.len());
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    params.accumulate(*id, g.shape(), |t| t.add_assign(&g));
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(*b));
                    let gb = matmul_tn(self.value(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddBias(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_map(&g, self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    acc(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)));
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    acc(&mut grads, *a, zip_map(&g, y, |gv, yv| gv * (1.0 - yv * yv)));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Softmax(a) => {
                    let y = self.value(Var(idx));
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
                    acc(&mut grads, *a, zip_map(&g, y, |gv, yv| yv * (gv - dot)));
                }
                Op::ConcatCols(a, b) => {
                    let left = self.shape(*a)[1];
                    let right = g.cols() - left;
                    let mut ga = Vec::with_capacity(g.rows() * left);
                    let mut gb = Vec::with_capacity(g.rows() * right);
                    for r in 0..g.rows() {
                        ga.extend_from_slice(&g.row(r)[..left]);
                        gb.extend_from_slice(&g.row(r)[left..]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), left, ga)?);
                    acc(&mut grads, *b, Tensor::from_vec(g.rows(), right, gb)?);
                }
                Op::StackRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.shape(p)[0];
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(&mut grads, p, Tensor::from_vec(rows, cols, slice)?);
                        offset += rows;
                    }
                }
                Op::SliceCols(a, start) => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Row(a, index) => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.row_mut(*index).copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, indices) => {
                    let shape = self.store.get(*table).shape();
                    params.accumulate(*table, shape, |t| {
                        for (r, &i) in indices.iter().enumerate() {
                            for (o, v) in t.row_mut(i).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let [rows, cols] = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(rows, cols, g.data()[0]));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|v| v * k)),
                Op::CrossEntropy(p, class) => {
                    let probs = self.value(*p);
                    let mut gp = Tensor::zeros(probs.rows(), probs.cols());
                    let pc = probs.data()[*class];
                    if pc >= PROB_FLOOR || pc.is_nan() {
                        gp.data_mut()[*class] = -g.data()[0] / pc;
                    }
                    acc(&mut grads, *p, gp);
                }
            }
        }
        Ok(params)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked on forward pass")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln p[class]`, with the probability clamped below at [`PROB_FLOOR`].
/// NaN passes through so divergence is not masked by the clamp.
pub fn cross_entropy(probs: &[f64], class: usize) -> f64 {
    let p = probs[class];
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(PROB_FLOOR).ln()
}

//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in creation order, so a reverse sweep over
//! the tape visits each node after all of its consumers.

use std::collections::HashMap;

use thiserror::Error;

use super::params::ParamStore;
use super::tensor::{gemm, Real, ShapeError, Tensor};

/// Variance floor inside layer normalisation.
pub const LN_EPS: Real = 1e-8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GradError {
    #[error("loss does not depend on any differentiable input")]
    Detached,
    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    NotScalar(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, Real),
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Cached inverse standard deviation per row.
    LayerNorm(Var, Vec<Real>),
    Softmax(Var),
    LogSoftmax(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    /// Selected row per column; empty when the input had no rows.
    MaxPoolRows(Var, Vec<usize>),
    Sum(Var),
    Pick(Var, usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn same_shape(stage: &str, a: &Tensor, b: &Tensor) -> Result<(), ShapeError> {
    if a.shape() != b.shape() {
        return Err(ShapeError::mismatch(stage, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Input without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for parameter `id` of `store`, created once per graph.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.value(a).matmul(self.value(b))?;
        let grad = self.g(a) || self.g(b);
        Ok(self.push(out, Op::MatMul(a, b), grad))
    }

    fn zip(&mut self, stage: &str, a: Var, b: Var, f: impl Fn(Real, Real) -> Real, op: Op) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(stage, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let grad = self.g(a) || self.g(b);
        Ok(self.push(out, op, grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, stage: &str, x: Var, r: Var, f: impl Fn(Real, Real) -> Real, op: Op) -> Result<Var, ShapeError> {
        let (xv, rv) = (self.value(x), self.value(r));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(ShapeError::mismatch(stage, format!("(1, {})", xv.cols()), format!("{:?}", rv.shape())));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_slice_mut(i).iter_mut().zip(rv.data()) {
                *o = f(*o, b);
            }
        }
        let grad = self.g(x) || self.g(r);
        Ok(self.push(out, op, grad))
    }

    /// `x + b` with the row vector `b` added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, ShapeError> {
        self.row_broadcast("add_row", x, b, |p, q| p + q, Op::AddRow(x, b))
    }

    /// `x * g` with the row vector `g` multiplied into every row.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var, ShapeError> {
        self.row_broadcast("mul_row", x, g, |p, q| p * q, Op::MulRow(x, g))
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Var {
        let out = self.value(x).map(|v| v * s);
        let grad = self.g(x);
        self.push(out, Op::Scale(x, s), grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(Real) -> Real, op: Op) -> Var {
        let out = self.value(x).map(f);
        let grad = self.g(x);
        self.push(out, op, grad)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Per-row standardisation without scale or shift.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as Real;
        let mut out = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = out.row_slice_mut(r);
            let mean = row.iter().sum::<Real>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv.push(s);
        }
        let grad = self.g(x);
        self.push(out, Op::LayerNorm(x, inv), grad)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let grad = self.g(x);
        self.push(out, Op::Softmax(x), grad)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<Real>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let grad = self.g(x);
        self.push(out, Op::LogSoftmax(x), grad)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let grad = self.g(x);
        self.push(out, Op::Transpose(x), grad)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(ShapeError::mismatch("concat_cols", format!("{rows} rows"), self.value(bad).rows()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row_slice(r);
                out.row_slice_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let grad = parts.iter().any(|&p| self.g(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), grad))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(ShapeError::mismatch("slice_cols", format!("range within 0..{}", xv.cols()), format!("{start}..{end}")));
        }
        let mut out = Tensor::zeros(xv.rows(), end - start);
        for r in 0..xv.rows() {
            out.row_slice_mut(r).copy_from_slice(&xv.row_slice(r)[start..end]);
        }
        let grad = self.g(x);
        Ok(self.push(out, Op::SliceCols(x, start), grad))
    }

    /// Column-wise maximum over rows as a `1 x cols` tensor; all zeros for an
    /// input with no rows. Ties select the lowest row.
    pub fn max_pool_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(1, xv.cols());
        let mut arg = Vec::new();
        if xv.rows() > 0 {
            arg = vec![0usize; xv.cols()];
            for c in 0..xv.cols() {
                let mut best = xv.get(0, c);
                for r in 1..xv.rows() {
                    if xv.get(r, c) > best {
                        best = xv.get(r, c);
                        arg[c] = r;
                    }
                }
                out.set(0, c, best);
            }
        }
        let grad = self.g(x) && !arg.is_empty();
        self.push(out, Op::MaxPoolRows(x, arg), grad)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let grad = self.g(x);
        self.push(out, Op::Sum(x), grad)
    }

    /// Element `(r, c)` as a scalar.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        if r >= xv.rows() || c >= xv.cols() {
            return Err(ShapeError::mismatch("pick", format!("index within {:?}", xv.shape()), format!("({r}, {c})")));
        }
        let out = Tensor::scalar(xv.get(r, c));
        let grad = self.g(x);
        Ok(self.push(out, Op::Pick(x, r, c), grad))
    }

    /// Gradients of scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(GradError::NotScalar(lv.rows(), lv.cols()));
        }
        if !self.g(loss) {
            return Err(GradError::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn propagate(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.g(*a) {
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    gemm(dy, false, bv, true, &mut da, 0.0);
                    acc(*a, da);
                }
                if self.g(*b) {
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, dy, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.g(*a) {
                    acc(*a, elementwise(dy, bv, |d, q| d * q));
                }
                if self.g(*b) {
                    acc(*b, elementwise(dy, av, |d, p| d * p));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, dy.clone());
                if self.g(*b) {
                    acc(*b, column_sums(dy));
                }
            }
            Op::MulRow(x, g) => {
                let (xv, gv) = (self.value(*x), self.value(*g));
                if self.g(*x) {
                    let mut dx = dy.clone();
                    for r in 0..dx.rows() {
                        for (d, &s) in dx.row_slice_mut(r).iter_mut().zip(gv.data()) {
                            *d *= s;
                        }
                    }
                    acc(*x, dx);
                }
                if self.g(*g) {
                    acc(*g, column_sums(&elementwise(dy, xv, |d, p| d * p)));
                }
            }
            Op::Scale(x, s) => acc(*x, dy.map(|v| v * s)),
            Op::Elu(x) => acc(*x, elementwise(dy, y, |d, o| if o > 0.0 { d } else { d * (o + 1.0) })),
            Op::Relu(x) => acc(*x, elementwise(dy, self.value(*x), |d, p| if p > 0.0 { d } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, elementwise(dy, y, |d, o| d * o * (1.0 - o))),
            Op::Tanh(x) => acc(*x, elementwise(dy, y, |d, o| d * (1.0 - o * o))),
            Op::LayerNorm(x, inv) => {
                let n = y.cols() as Real;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row_slice(r), dy.row_slice(r));
                    let sd: Real = dr.iter().sum();
                    let sdy: Real = dr.iter().zip(yr).map(|(d, o)| d * o).sum();
                    for (k, out) in dx.row_slice_mut(r).iter_mut().enumerate() {
                        *out = inv[r] / n * (n * dr[k] - sd - yr[k] * sdy);
                    }
                }
                acc(*x, dx);
            }
            Op::Softmax(x) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row_slice(r), dy.row_slice(r));
                    let dot: Real = dr.iter().zip(yr).map(|(d, o)| d * o).sum();
                    for (k, out) in dx.row_slice_mut(r).iter_mut().enumerate() {
                        *out = yr[k] * (dr[k] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmax(x) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row_slice(r), dy.row_slice(r));
                    let sd: Real = dr.iter().sum();
                    for (k, out) in dx.row_slice_mut(r).iter_mut().enumerate() {
                        *out = dr[k] - yr[k].exp() * sd;
                    }
                }
                acc(*x, dx);
            }
            Op::Transpose(x) => acc(*x, dy.transpose()),
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.g(p) {
                        let mut d = Tensor::zeros(dy.rows(), w);
                        for r in 0..dy.rows() {
                            d.row_slice_mut(r).copy_from_slice(&dy.row_slice(r)[c0..c0 + w]);
                        }
                        acc(p, d);
                    }
                    c0 += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..dy.rows() {
                    d.row_slice_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row_slice(r));
                }
                acc(*x, d);
            }
            Op::MaxPoolRows(x, arg) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                for (c, &r) in arg.iter().enumerate() {
                    d.set(r, c, dy.get(0, c));
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::filled(xv.rows(), xv.cols(), dy.item()));
            }
            Op::Pick(x, r, c) => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows(), xv.cols());
                d.set(*r, *c, dy.item());
                acc(*x, d);
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

/// Result of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of parameter `id`, if it took part in the graph.
    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Adds every parameter gradient into `acc`, aligned with the store.
    pub fn accumulate_into(&self, acc: &mut [Tensor]) {
        let mut ids: Vec<(&usize, &Var)> = self.params.iter().collect();
        ids.sort_unstable();
        for (&id, &v) in ids {
            if let Some(g) = self.get(v) {
                acc[id].add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::filled(2, 3, 0.5));
        let b = store.add("b", Tensor::filled(1, 4, -2.0));
        let mut g = Graph::new();
        let (va, vb) = (g.param(&store, a), g.param(&store, b));
        assert_eq!(g.param(&store, a), va);
        let (sa, sb) = (g.sum(va), g.sum(vb));
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(a).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grads.param(b).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn detached_and_non_scalar_losses_are_errors() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(1.0));
        assert_eq!(g.backward(c).unwrap_err(), GradError::Detached);
        let x = g.leaf(Tensor::zeros(2, 2));
        assert_eq!(g.backward(x).unwrap_err(), GradError::NotScalar(2, 2));
    }

    #[test]
    fn max_pool_ties_go_to_lowest_row() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
        let p = g.max_pool_rows(x);
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_standardises_rows() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.5, 9.0, 2.0]).unwrap());
        let y = g.layer_norm(x);
        for r in 0..2 {
            let row = g.value(y).row_slice(r);
            let mean: Real = row.iter().sum::<Real>() / 4.0;
            let var: Real = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 4.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
    }
}

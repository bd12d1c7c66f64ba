use std::sync::Arc;

use super::{gemm, DiffError, Result, Tensor};
use crate::linalg::CsrMatrix;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, Axis),
    GatherRows(Var, Arc<[usize]>),
    Sparse(Var, Arc<CsrMatrix>),
    Reshape(Var),
    Elu(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`;
    /// `None` if `v` does not influence it or does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        self.push_unchecked(value, op, inputs)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(shape_err("matmul", x, y));
        }
        let mut out = Tensor::zeros(x.rows, y.cols);
        gemm(x.rows, x.cols, y.cols, &x.data, false, &y.data, false, 0.0, &mut out.data);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows != 1 || r.cols != x.cols {
            return Err(shape_err("add_row", x, r));
        }
        let mut out = x.clone();
        for chunk in out.data.chunks_mut(r.cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(a), |x| x * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = map(self.value(a), |x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = self.value(*parts.first().ok_or(DiffError::Shape {
            op: "concat",
            left: (0, 0),
            right: (0, 0),
        })?);
        let out = match axis {
            Axis::Rows => {
                let cols = first.cols;
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols != cols {
                        return Err(shape_err("concat", first, t));
                    }
                    data.extend_from_slice(&t.data);
                    rows += t.rows;
                }
                Tensor { rows, cols, data }
            }
            Axis::Cols => {
                let rows = first.rows;
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows != rows {
                        return Err(shape_err("concat", first, t));
                    }
                    cols += t.cols;
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor { rows, cols, data }
            }
        };
        self.push("concat", out, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Output row `i` is row `indices[i]` of `a`; backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        self.gather_blocks(a, indices, 1)
    }

    /// Gathers rows and lays every `group` consecutive gathered rows side by
    /// side, giving `indices.len()/group × group·cols`.
    pub fn gather_blocks(&mut self, a: Var, indices: Arc<[usize]>, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !indices.len().is_multiple_of(group) {
            return Err(DiffError::Shape {
                op: "gather_blocks",
                left: x.shape(),
                right: (indices.len(), group),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * x.cols);
        for &i in indices.iter() {
            if i >= x.rows {
                return Err(DiffError::Index {
                    op: "gather_rows",
                    index: i,
                    len: x.rows,
                });
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor {
            rows: indices.len() / group,
            cols: x.cols * group,
            data,
        };
        // a copy of finite values needs no scan
        self.push_unchecked(out, Op::GatherRows(a, indices), &[a])
    }

    /// Applies a constant sparse `r×c` matrix to each consecutive block of `c`
    /// rows of `a`, i.e. a block-diagonal product over a stacked batch.
    pub fn sparse_rows(&mut self, a: Var, matrix: Arc<CsrMatrix>) -> Result<Var> {
        let x = self.value(a);
        if matrix.cols() == 0 || !x.rows.is_multiple_of(matrix.cols()) {
            return Err(DiffError::Shape {
                op: "sparse_rows",
                left: x.shape(),
                right: (matrix.rows(), matrix.cols()),
            });
        }
        let blocks = x.rows / matrix.cols();
        let w = x.cols;
        let mut out = Tensor::zeros(blocks * matrix.rows(), w);
        let (src_len, dst_len) = (matrix.cols() * w, matrix.rows() * w);
        for b in 0..blocks {
            matrix.apply_rows(
                &x.data[b * src_len..(b + 1) * src_len],
                w,
                &mut out.data[b * dst_len..(b + 1) * dst_len],
            );
        }
        self.push("sparse_rows", out, Op::Sparse(a, matrix), &[a])
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        self.push_unchecked(out, Op::Reshape(a), &[a])
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { x.exp_m1() });
        self.push("elu", out, Op::Elu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x * x);
        self.push("square", out, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Column means as a `1×c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = x.rows as f64;
        out.data.iter_mut().for_each(|o| *o /= n);
        self.push("mean_rows", out, Op::MeanRows(a), &[a])
    }

    /// Reverse sweep from a `1×1` node. Gradients of earlier sweeps are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DiffError::NonScalarLoss(shape));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], v: Var) -> Option<&'a mut Tensor> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let (r, c) = nodes[v.0].value.shape();
            Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
        }
        fn acc_with(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
            if let Some(t) = slot(grads, nodes, v) {
                for (i, (d, &gi)) in t.data.iter_mut().zip(&g.data).enumerate() {
                    *d += f(i, gi);
                }
            }
        }

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &nodes[i].value;
            match &nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        gemm(x.rows, g.cols, x.cols, &g.data, false, &y.data, true, 1.0, &mut t.data);
                    }
                    if let Some(t) = slot(&mut grads, nodes, *b) {
                        gemm(x.cols, x.rows, g.cols, &x.data, true, &g.data, false, 1.0, &mut t.data);
                    }
                }
                Op::Add(a, b) => {
                    acc_with(&mut grads, nodes, *a, &g, |_, gi| gi);
                    acc_with(&mut grads, nodes, *b, &g, |_, gi| gi);
                }
                Op::AddRow(a, row) => {
                    acc_with(&mut grads, nodes, *a, &g, |_, gi| gi);
                    if let Some(t) = slot(&mut grads, nodes, *row) {
                        for chunk in g.data.chunks(g.cols.max(1)) {
                            for (d, gi) in t.data.iter_mut().zip(chunk) {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    acc_with(&mut grads, nodes, *a, &g, |_, gi| gi);
                    acc_with(&mut grads, nodes, *b, &g, |_, gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc_with(&mut grads, nodes, *a, &g, |j, gi| gi * y.data[j]);
                    acc_with(&mut grads, nodes, *b, &g, |j, gi| gi * x.data[j]);
                }
                Op::Scale(a, f) => acc_with(&mut grads, nodes, *a, &g, |_, gi| gi * f),
                Op::AddScalar(a) | Op::Reshape(a) => acc_with(&mut grads, nodes, *a, &g, |_, gi| gi),
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = nodes[p.0].value.shape();
                        if let Some(t) = slot(&mut grads, nodes, *p) {
                            match axis {
                                Axis::Rows => {
                                    let src = &g.data[offset * c..(offset + r) * c];
                                    t.data.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                                }
                                Axis::Cols => {
                                    for row in 0..r {
                                        let src = &g.row(row)[offset..offset + c];
                                        let dst = &mut t.data[row * c..(row + 1) * c];
                                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                                    }
                                }
                            }
                        }
                        offset += match axis {
                            Axis::Rows => r,
                            Axis::Cols => c,
                        };
                    }
                }
                Op::GatherRows(a, indices) => {
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        let c = t.cols;
                        for (row, &src) in indices.iter().enumerate() {
                            let gr = &g.data[row * c..(row + 1) * c];
                            let dst = &mut t.data[src * c..(src + 1) * c];
                            dst.iter_mut().zip(gr).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                Op::Sparse(a, matrix) => {
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        let w = t.cols;
                        let (src_len, dst_len) = (matrix.rows() * w, matrix.cols() * w);
                        let blocks = g.rows / matrix.rows();
                        for b in 0..blocks {
                            matrix.apply_rows_transposed_add(
                                &g.data[b * src_len..(b + 1) * src_len],
                                w,
                                &mut t.data[b * dst_len..(b + 1) * dst_len],
                            );
                        }
                    }
                }
                Op::Elu(a) => {
                    let x = &nodes[a.0].value;
                    acc_with(&mut grads, nodes, *a, &g, |j, gi| {
                        if x.data[j] > 0.0 {
                            gi
                        } else {
                            gi * (out.data[j] + 1.0)
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &nodes[a.0].value;
                    acc_with(&mut grads, nodes, *a, &g, |j, gi| if x.data[j] > 0.0 { gi } else { 0.0 });
                }
                Op::Exp(a) => acc_with(&mut grads, nodes, *a, &g, |j, gi| gi * out.data[j]),
                Op::Log(a) => {
                    let x = &nodes[a.0].value;
                    acc_with(&mut grads, nodes, *a, &g, |j, gi| gi / x.data[j]);
                }
                Op::Square(a) => {
                    let x = &nodes[a.0].value;
                    acc_with(&mut grads, nodes, *a, &g, |j, gi| 2.0 * gi * x.data[j]);
                }
                Op::Sqrt(a) => acc_with(&mut grads, nodes, *a, &g, |j, gi| 0.5 * gi / out.data[j]),
                Op::Sum(a) => {
                    let gi = g.data[0];
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        t.data.iter_mut().for_each(|d| *d += gi);
                    }
                }
                Op::Mean(a) => {
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        let gi = g.data[0] / t.len() as f64;
                        t.data.iter_mut().for_each(|d| *d += gi);
                    }
                }
                Op::MeanRows(a) => {
                    if let Some(t) = slot(&mut grads, nodes, *a) {
                        let n = t.rows as f64;
                        let c = t.cols;
                        for chunk in t.data.chunks_mut(c.max(1)) {
                            chunk.iter_mut().zip(&g.data).for_each(|(d, gi)| *d += gi / n);
                        }
                    }
                }
            }
        }
        // intermediate gradients were consumed above; only leaves remain
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(DiffError::NonFinite { op: "backward" });
        }
        self.grads = grads;
        Ok(())
    }
}

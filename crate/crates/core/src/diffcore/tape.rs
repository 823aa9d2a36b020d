//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its value and parent indices, so the
//! node list is topologically ordered by construction. [`Tape::backward`] walks
//! it once in reverse. Binary element-wise operations broadcast operands of
//! shape `1 × c`, `r × 1` or `1 × 1` against `r × c`.
//!
//! Domain violations (log of a non-positive value, division by zero) poison the
//! tape: the offending node holds NaN and every later call to
//! [`Tape::backward`] or [`Tape::status`] reports the first violation.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::matrix::{gemm, Matrix};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a row-wise vector function: given the input row
/// and the output adjoint row, return the input adjoint row.
pub type RowVjp = Rc<dyn Fn(&[f64], &[f64]) -> Vec<f64>>;

#[derive(Clone, Copy, Debug)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Param { offset: usize },
    Binary(Bin, Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Min0(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    MatMul(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RepeatRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowScalar { input: Var, grad: Matrix },
    RowVector { input: Var, vjp: RowVjp },
}

struct Node {
    op: Op,
    value: Matrix,
    /// Whether the node depends on a parameter leaf.
    grad: bool,
}

impl Op {
    fn depends_on_param(&self, nodes: &[Node]) -> bool {
        let g = |v: &Var| nodes[v.0].grad;
        match self {
            Op::Leaf => false,
            Op::Param { .. } => true,
            Op::Binary(_, a, b) | Op::MatMul(a, b) => g(a) || g(b),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Min0(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::LogSumExpRows(a)
            | Op::SliceCols(a, _)
            | Op::RepeatRows(a, _)
            | Op::GatherRows(a, _) => g(a),
            Op::ConcatCols(parts) => parts.iter().any(g),
            Op::RowScalar { input, .. } | Op::RowVector { input, .. } => g(input),
        }
    }
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    error: Option<Error>,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of a node, if it depends on a parameter and was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }

    /// Gather the adjoints of all `Param` leaves into a flat vector of
    /// length `n_params`, adding at each leaf's offset.
    pub fn flat_params(&self, n_params: usize) -> Vec<f64> {
        let mut g = vec![0.0; n_params];
        for &(node, offset) in &self.params {
            if let Some(adj) = &self.adjoints[node] {
                for (k, a) in adj.iter().enumerate() {
                    g[offset + k] += a;
                }
            }
        }
        g
    }
}

#[inline]
fn bidx(rows: usize, cols: usize, i: usize, j: usize) -> usize {
    let ii = if rows == 1 { 0 } else { i };
    let jj = if cols == 1 { 0 } else { j };
    ii * cols + jj
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Matrix) -> Var {
        let mut inner = self.inner.borrow_mut();
        let grad = op.depends_on_param(&inner.nodes);
        inner.nodes.push(Node { op, value, grad });
        Var(inner.nodes.len() - 1)
    }

    fn poison(&self, err: Error) {
        let mut inner = self.inner.borrow_mut();
        if inner.error.is_none() {
            inner.error = Some(err);
        }
    }

    /// First recorded domain/shape violation, if any.
    pub fn status(&self) -> Result<()> {
        match &self.inner.borrow().error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn constant(&self, m: Matrix) -> Var {
        self.push(Op::Leaf, m)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Matrix::scalar(v))
    }

    /// Trainable leaf whose adjoint lands at `offset` of the flat gradient.
    pub fn param(&self, m: Matrix, offset: usize) -> Var {
        self.push(Op::Param { offset }, m)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix> {
        Ref::map(self.inner.borrow(), |i| &i.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    fn binary(&self, kind: Bin, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let va = &inner.nodes[a.0].value;
            let vb = &inner.nodes[b.0].value;
            match broadcast_shape(va.shape(), vb.shape()) {
                None => {
                    drop(inner);
                    self.poison(shape_err(format!(
                        "{kind:?}: incompatible shapes {:?} and {:?}",
                        self.shape(a),
                        self.shape(b)
                    )));
                    return self.push(Op::Binary(kind, a, b), Matrix::filled(1, 1, f64::NAN));
                }
                Some((r, c)) => {
                    let f: fn(f64, f64) -> f64 = match kind {
                        Bin::Add => |x, y| x + y,
                        Bin::Sub => |x, y| x - y,
                        Bin::Mul => |x, y| x * y,
                        Bin::Div => |x, y| x / y,
                    };
                    let data = if va.shape() == vb.shape() {
                        va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect()
                    } else if vb.len() == 1 {
                        let y = vb.data[0];
                        va.data.iter().map(|&x| f(x, y)).collect()
                    } else if va.len() == 1 {
                        let x = va.data[0];
                        vb.data.iter().map(|&y| f(x, y)).collect()
                    } else {
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            for j in 0..c {
                                d.push(f(
                                    va.data[bidx(va.rows, va.cols, i, j)],
                                    vb.data[bidx(vb.rows, vb.cols, i, j)],
                                ));
                            }
                        }
                        d
                    };
                    if matches!(kind, Bin::Div) && vb.data.iter().any(|&y| y == 0.0) {
                        drop(inner);
                        self.poison(Error::Domain { op: "div", detail: "division by zero".into() });
                        return self.push(Op::Binary(kind, a, b), Matrix::new(r, c, data));
                    }
                    Matrix::new(r, c, data)
                }
            }
        };
        self.push(Op::Binary(kind, a, b), value)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Div, a, b)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = {
            let v = self.value(a);
            Matrix::new(v.rows, v.cols, v.data.iter().map(|&x| f(x)).collect())
        };
        self.push(op, value)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// a + c for a constant c.
    pub fn shift(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Var {
        let bad = self.value(a).data.iter().any(|&x| x <= 0.0 || x.is_nan());
        if bad {
            self.poison(Error::Domain { op: "log", detail: "log of a non-positive value".into() });
        }
        self.unary(a, Op::Log(a), |x| if x > 0.0 { x.ln() } else { f64::NAN })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let bad = self.value(a).data.iter().any(|&x| x <= 0.0);
        if bad {
            self.poison(Error::Domain { op: "sqrt", detail: "sqrt of a non-positive value".into() });
        }
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Element-wise min(0, a).
    pub fn min0(&self, a: Var) -> Var {
        self.unary(a, Op::Min0(a), |x| x.min(0.0))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Op::SumAll(a), Matrix::scalar(s))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// r × c → r × 1, summing each row.
    pub fn sum_rows(&self, a: Var) -> Var {
        let value = {
            let v = self.value(a);
            Matrix::col_vector((0..v.rows).map(|i| v.row(i).iter().sum()).collect())
        };
        self.push(Op::SumRows(a), value)
    }

    /// r × c → 1 × c, summing each column.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = {
            let v = self.value(a);
            let mut out = vec![0.0; v.cols];
            for i in 0..v.rows {
                for (o, x) in out.iter_mut().zip(v.row(i)) {
                    *o += x;
                }
            }
            Matrix::row_vector(out)
        };
        self.push(Op::SumCols(a), value)
    }

    /// r × c → r × 1 row-wise log-sum-exp.
    pub fn logsumexp_rows(&self, a: Var) -> Var {
        let value = {
            let v = self.value(a);
            Matrix::col_vector((0..v.rows).map(|i| logsumexp(v.row(i))).collect())
        };
        self.push(Op::LogSumExpRows(a), value)
    }

    pub fn dot(&self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let va = &inner.nodes[a.0].value;
            let vb = &inner.nodes[b.0].value;
            if va.cols != vb.rows {
                let msg = format!("matmul: {:?} × {:?}", va.shape(), vb.shape());
                drop(inner);
                self.poison(shape_err(msg));
                Matrix::filled(1, 1, f64::NAN)
            } else {
                va.matmul(vb)
            }
        };
        self.push(Op::MatMul(a, b), value)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let v = self.value(a);
            assert!(start + len <= v.cols, "slice_cols out of range");
            let mut d = Vec::with_capacity(v.rows * len);
            for i in 0..v.rows {
                d.extend_from_slice(&v.row(i)[start..start + len]);
            }
            Matrix::new(v.rows, len, d)
        };
        self.push(Op::SliceCols(a, start), value)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let inner = self.inner.borrow();
            let vals: Vec<&Matrix> = parts.iter().map(|p| &inner.nodes[p.0].value).collect();
            let rows = vals[0].rows;
            assert!(vals.iter().all(|v| v.rows == rows), "concat_cols row mismatch");
            let cols: usize = vals.iter().map(|v| v.cols).sum();
            let mut d = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for v in &vals {
                    d.extend_from_slice(v.row(i));
                }
            }
            Matrix::new(rows, cols, d)
        };
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    /// Repeat each row `times` consecutively: row i lands at rows i·times .. (i+1)·times.
    pub fn repeat_rows(&self, a: Var, times: usize) -> Var {
        let value = {
            let v = self.value(a);
            let mut d = Vec::with_capacity(v.len() * times);
            for i in 0..v.rows {
                for _ in 0..times {
                    d.extend_from_slice(v.row(i));
                }
            }
            Matrix::new(v.rows * times, v.cols, d)
        };
        self.push(Op::RepeatRows(a, times), value)
    }

    pub fn gather_rows(&self, a: Var, idx: Vec<usize>) -> Var {
        let value = {
            let v = self.value(a);
            let mut d = Vec::with_capacity(idx.len() * v.cols);
            for &i in &idx {
                d.extend_from_slice(v.row(i));
            }
            Matrix::new(idx.len(), v.cols, d)
        };
        self.push(Op::GatherRows(a, idx), value)
    }

    /// Row-wise scalar function with externally computed value and gradient.
    /// `values` is r × 1, `grad` is r × c matching the input.
    pub fn row_scalar_fn(&self, input: Var, values: Vec<f64>, grad: Matrix) -> Var {
        debug_assert_eq!(self.shape(input), grad.shape());
        self.push(Op::RowScalar { input, grad }, Matrix::col_vector(values))
    }

    /// Row-wise vector function with externally computed value and a VJP.
    pub fn row_vector_fn(&self, input: Var, values: Matrix, vjp: RowVjp) -> Var {
        self.push(Op::RowVector { input, vjp }, values)
    }

    /// Reverse sweep seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        self.status()?;
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0; nodes[root.0].value.len()]);

        fn acc<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Param { .. } => {}
                Op::Binary(kind, a, b) => {
                    let va = &nodes[a.0].value;
                    let vb = &nodes[b.0].value;
                    let (r, c) = (out.rows, out.cols);
                    let same = va.shape() == out.shape() && vb.shape() == out.shape();
                    if nodes[a.0].grad {
                        let ga = acc(&mut adj, nodes, *a);
                        if same {
                            match kind {
                                Bin::Add | Bin::Sub => ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                                Bin::Mul => {
                                    ga.iter_mut().zip(&g).zip(&vb.data).for_each(|((x, y), w)| *x += y * w);
                                }
                                Bin::Div => {
                                    ga.iter_mut().zip(&g).zip(&vb.data).for_each(|((x, y), w)| *x += y / w);
                                }
                            }
                        } else {
                            for ii in 0..r {
                                for jj in 0..c {
                                    let k = ii * c + jj;
                                    let ka = bidx(va.rows, va.cols, ii, jj);
                                    let kb = bidx(vb.rows, vb.cols, ii, jj);
                                    ga[ka] += match kind {
                                        Bin::Add | Bin::Sub => g[k],
                                        Bin::Mul => g[k] * vb.data[kb],
                                        Bin::Div => g[k] / vb.data[kb],
                                    };
                                }
                            }
                        }
                    }
                    if nodes[b.0].grad {
                        let gb = acc(&mut adj, nodes, *b);
                        if same {
                            match kind {
                                Bin::Add => gb.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                                Bin::Sub => gb.iter_mut().zip(&g).for_each(|(x, y)| *x -= y),
                                Bin::Mul => {
                                    gb.iter_mut().zip(&g).zip(&va.data).for_each(|((x, y), w)| *x += y * w);
                                }
                                Bin::Div => {
                                    for k in 0..gb.len() {
                                        gb[k] -= g[k] * va.data[k] / (vb.data[k] * vb.data[k]);
                                    }
                                }
                            }
                        } else {
                            for ii in 0..r {
                                for jj in 0..c {
                                    let k = ii * c + jj;
                                    let ka = bidx(va.rows, va.cols, ii, jj);
                                    let kb = bidx(vb.rows, vb.cols, ii, jj);
                                    gb[kb] += match kind {
                                        Bin::Add => g[k],
                                        Bin::Sub => -g[k],
                                        Bin::Mul => g[k] * va.data[ka],
                                        Bin::Div => -g[k] * va.data[ka] / (vb.data[kb] * vb.data[kb]),
                                    };
                                }
                            }
                        }
                    }
                }
                Op::Neg(a) => {
                    let ga = acc(&mut adj, nodes, *a);
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut adj, nodes, *a);
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
                Op::Shift(a) => {
                    let ga = acc(&mut adj, nodes, *a);
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Exp(a) => {
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * out.data[k];
                    }
                }
                Op::Log(a) => {
                    let va = &nodes[a.0].value;
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] / va.data[k];
                    }
                }
                Op::Relu(a) => {
                    let va = &nodes[a.0].value;
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        if va.data[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
                Op::Square(a) => {
                    let va = &nodes[a.0].value;
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += 2.0 * va.data[k] * g[k];
                    }
                }
                Op::Sqrt(a) => {
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * 0.5 / out.data[k];
                    }
                }
                Op::Min0(a) => {
                    let va = &nodes[a.0].value;
                    let ga = acc(&mut adj, nodes, *a);
                    for k in 0..g.len() {
                        if va.data[k] < 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let ga = acc(&mut adj, nodes, *a);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::SumRows(a) => {
                    let cols = nodes[a.0].value.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k / cols];
                    }
                }
                Op::SumCols(a) => {
                    let cols = nodes[a.0].value.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k % cols];
                    }
                }
                Op::LogSumExpRows(a) => {
                    let va = &nodes[a.0].value;
                    let cols = va.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for (k, x) in ga.iter_mut().enumerate() {
                        let row = k / cols;
                        *x += g[row] * (va.data[k] - out.data[row]).exp();
                    }
                }
                Op::MatMul(a, b) => {
                    let va = &nodes[a.0].value;
                    let vb = &nodes[b.0].value;
                    let gm = Matrix::new(out.rows, out.cols, g.clone());
                    if nodes[a.0].grad {
                        let ga = acc(&mut adj, nodes, *a);
                        gemm(&gm, false, vb, true, ga, 1.0);
                    }
                    if nodes[b.0].grad {
                        let gb = acc(&mut adj, nodes, *b);
                        gemm(va, true, &gm, false, gb, 1.0);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src_cols = nodes[a.0].value.cols;
                    let len = out.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for ii in 0..out.rows {
                        for jj in 0..len {
                            ga[ii * src_cols + start + jj] += g[ii * len + jj];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col0 = 0;
                    for p in parts {
                        let pc = nodes[p.0].value.cols;
                        if !nodes[p.0].grad {
                            col0 += pc;
                            continue;
                        }
                        let gp = acc(&mut adj, nodes, *p);
                        for ii in 0..out.rows {
                            for jj in 0..pc {
                                gp[ii * pc + jj] += g[ii * out.cols + col0 + jj];
                            }
                        }
                        col0 += pc;
                    }
                }
                Op::RepeatRows(a, times) => {
                    let cols = out.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for ii in 0..out.rows {
                        let src = ii / times;
                        for jj in 0..cols {
                            ga[src * cols + jj] += g[ii * cols + jj];
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let cols = out.cols;
                    let ga = acc(&mut adj, nodes, *a);
                    for (ii, &src) in idx.iter().enumerate() {
                        for jj in 0..cols {
                            ga[src * cols + jj] += g[ii * cols + jj];
                        }
                    }
                }
                Op::RowScalar { input, grad } => {
                    let cols = grad.cols;
                    let ga = acc(&mut adj, nodes, *input);
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k / cols] * grad.data[k];
                    }
                }
                Op::RowVector { input, vjp } => {
                    let vin = &nodes[input.0].value;
                    let cols_in = vin.cols;
                    let cols_out = out.cols;
                    let mut contrib = vec![0.0; vin.len()];
                    for ii in 0..out.rows {
                        let row_in = vin.row(ii);
                        let gr = &g[ii * cols_out..(ii + 1) * cols_out];
                        let back = vjp(row_in, gr);
                        contrib[ii * cols_in..(ii + 1) * cols_in].copy_from_slice(&back);
                    }
                    let ga = acc(&mut adj, nodes, *input);
                    ga.iter_mut().zip(&contrib).for_each(|(x, y)| *x += y);
                }
            }
            adj[i] = Some(g);
        }

        let params = nodes
            .iter()
            .enumerate()
            .take(root.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param { offset } => Some((i, offset)),
                _ => None,
            })
            .collect();
        Ok(Gradients { adjoints: adj, params })
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

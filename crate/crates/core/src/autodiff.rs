//! Tape-based reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! [`Gradients`] for every node that depends on a trainable leaf.
//!
//! ```
//! use fixpo_core::autodiff::Graph;
//! use fixpo_core::Tensor;
//!
//! let g = Graph::<f64>::new();
//! let p = g.param(&Tensor::scalar(3.0));
//! let loss = p.square().sum();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(p), vec![6.0]);
//! ```
//!
//! Tensors are rank 0, 1 or 2. Broadcasting is limited to what the policy
//! losses need: bias rows, a scalar multiplier and a row vector repeated over
//! a batch.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    /// `a * scale + shift` with constant coefficients.
    Affine(usize, T),
    /// Every element of `a` times the single element of `s`.
    ScaleBy(usize, usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Max(usize),
    Clip(usize, T, T),
    Minimum(usize, usize),
    Maximum(usize, usize),
    StopGradient,
    BroadcastRows(usize),
    Reshape(usize),
    LogSoftmaxRows(usize),
    PickRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn cols_of(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 => shape[0],
        _ => shape[1],
    }
}

fn rows_of(shape: &[usize]) -> usize {
    match shape.len() {
        2 => shape[0],
        _ => 1,
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(64)),
            consumed: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf holding a copy of `t`.
    pub fn param(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&self, v: Vec<T>) -> Var<'_, T> {
        self.push(vec![v.len()], v, Op::Leaf, false)
    }

    pub fn constant_scalar(&self, v: T) -> Var<'_, T> {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl Fn(T) -> T) -> Var<'_, T> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        let rg = self.requires(a);
        self.push(shape, value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, op: Op<T>, f: impl Fn(T, T) -> T) -> Var<'_, T> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a], &nodes[b]);
            assert_eq!(
                na.shape, nb.shape,
                "elementwise operands must share a shape"
            );
            (
                na.shape.clone(),
                na.value
                    .iter()
                    .zip(&nb.value)
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            )
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(shape, value, op, rg)
    }

    /// Runs reverse accumulation from the scalar `loss`.
    ///
    /// A graph can be differentiated once; a second call is a usage error.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.replace(true) {
            return Err(Error::Usage(
                "backward called twice on the same graph".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.value[0].is_finite() {
            return Err(Error::Numerical(format!(
                "loss is not finite ({})",
                root.value[0]
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if matches!(nodes[id].op, Op::Leaf) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient for leaf node {id}"
                    )));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.len()]);
    f(slot);
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    match &node.op {
        Op::Leaf | Op::StopGradient => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let n = rows_of(&nodes[*a].shape);
            let k = cols_of(&nodes[*a].shape);
            let m = cols_of(&nodes[*b].shape);
            accumulate(grads, nodes, *a, |da| {
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        let mut s = T::zero();
                        for j in 0..m {
                            s += grow[j] * brow[j];
                        }
                        da[i * k + p] += s;
                    }
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == T::zero() {
                            continue;
                        }
                        let drow = &mut db[p * m..(p + 1) * m];
                        for j in 0..m {
                            drow[j] += x * grow[j];
                        }
                    }
                }
            });
        }
        Op::AddBias(a, b) => {
            accumulate(grads, nodes, *a, |da| add_into(da, g));
            let m = nodes[*b].value.len();
            accumulate(grads, nodes, *b, |db| {
                for row in g.chunks(m) {
                    add_into(db, row);
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |da| add_into(da, g));
            accumulate(grads, nodes, *b, |db| add_into(db, g));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, |da| add_into(da, g));
            accumulate(grads, nodes, *b, |db| {
                for (d, &x) in db.iter_mut().zip(g) {
                    *d -= x;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * bv[i];
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..db.len() {
                    db[i] += g[i] * av[i];
                }
            });
        }
        Op::Div(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] / bv[i];
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..db.len() {
                    db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                }
            });
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, |da| {
            for (d, &x) in da.iter_mut().zip(g) {
                *d -= x;
            }
        }),
        Op::Affine(a, scale) => accumulate(grads, nodes, *a, |da| {
            for (d, &x) in da.iter_mut().zip(g) {
                *d += x * *scale;
            }
        }),
        Op::ScaleBy(a, s) => {
            let sv = nodes[*s].value[0];
            let av = &nodes[*a].value;
            accumulate(grads, nodes, *a, |da| {
                for (d, &x) in da.iter_mut().zip(g) {
                    *d += x * sv;
                }
            });
            accumulate(grads, nodes, *s, |ds| {
                ds[0] += g.iter().zip(av).map(|(&x, &y)| x * y).sum::<T>();
            });
        }
        Op::Tanh(a) => {
            let y = &node.value;
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            });
        }
        Op::Exp(a) => {
            let y = &node.value;
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * y[i];
                }
            });
        }
        Op::Log(a) => {
            let x = &nodes[*a].value;
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] / x[i];
                }
            });
        }
        Op::Square(a) => {
            let x = &nodes[*a].value;
            let two = T::c(2.0);
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * two * x[i];
                }
            });
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, |da| {
            for d in da.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Mean(a) => {
            let n = T::from_usize_lossy(nodes[*a].value.len());
            accumulate(grads, nodes, *a, |da| {
                for d in da.iter_mut() {
                    *d += g[0] / n;
                }
            });
        }
        Op::SumRows(a) => {
            let m = cols_of(&nodes[*a].shape);
            accumulate(grads, nodes, *a, |da| {
                for (i, row) in da.chunks_mut(m).enumerate() {
                    for d in row.iter_mut() {
                        *d += g[i];
                    }
                }
            });
        }
        Op::Max(a) => {
            let x = &nodes[*a].value;
            let arg = argmax(x);
            accumulate(grads, nodes, *a, |da| da[arg] += g[0]);
        }
        Op::Clip(a, lo, hi) => {
            let x = &nodes[*a].value;
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    if x[i] >= *lo && x[i] <= *hi {
                        da[i] += g[i];
                    }
                }
            });
        }
        Op::Minimum(a, b) | Op::Maximum(a, b) => {
            let want_min = matches!(node.op, Op::Minimum(..));
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            // Ties route the gradient to the first operand.
            let picks_a: Vec<bool> = av
                .iter()
                .zip(bv)
                .map(|(&x, &y)| if want_min { x <= y } else { x >= y })
                .collect();
            accumulate(grads, nodes, *a, |da| {
                for i in 0..da.len() {
                    if picks_a[i] {
                        da[i] += g[i];
                    }
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..db.len() {
                    if !picks_a[i] {
                        db[i] += g[i];
                    }
                }
            });
        }
        Op::BroadcastRows(a) => {
            let m = nodes[*a].value.len();
            accumulate(grads, nodes, *a, |da| {
                for row in g.chunks(m) {
                    add_into(da, row);
                }
            });
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, |da| add_into(da, g)),
        Op::LogSoftmaxRows(a) => {
            let m = cols_of(&node.shape);
            let y = &node.value;
            accumulate(grads, nodes, *a, |da| {
                for ((drow, grow), yrow) in da.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)) {
                    let gsum: T = grow.iter().copied().sum();
                    for j in 0..m {
                        drow[j] += grow[j] - yrow[j].exp() * gsum;
                    }
                }
            });
        }
        Op::PickRows(a, idx) => {
            let m = cols_of(&nodes[*a].shape);
            accumulate(grads, nodes, *a, |da| {
                for (i, &j) in idx.iter().enumerate() {
                    da[i * m + j] += g[i];
                }
            });
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn value(&self) -> Vec<T> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> T {
        self.graph.nodes.borrow()[self.id].value[0]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        let nodes = self.graph.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape consistent")
    }

    /// Applies `f` to the node's values without copying them.
    pub fn with_value<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn is_finite(&self) -> bool {
        self.with_value(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// `[n×k] · [k×m] → [n×m]`.
    pub fn matmul(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let g = self.graph;
        let (shape, value) = {
            let nodes = g.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[rhs.id]);
            assert_eq!(a.shape.len(), 2, "matmul lhs must be a matrix");
            assert_eq!(b.shape.len(), 2, "matmul rhs must be a matrix");
            let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
            assert_eq!(k, b.shape[0], "matmul inner dimensions differ");
            let mut out = vec![T::zero(); n * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let x = a.value[i * k + p];
                    if x == T::zero() {
                        continue;
                    }
                    let brow = &b.value[p * m..(p + 1) * m];
                    for j in 0..m {
                        orow[j] += x * brow[j];
                    }
                }
            }
            (vec![n, m], out)
        };
        let rg = g.requires(self.id) || g.requires(rhs.id);
        g.push(shape, value, Op::MatMul(self.id, rhs.id), rg)
    }

    /// Adds a length-`m` bias to every row of an `[n×m]` matrix.
    pub fn add_bias(self, bias: Var<'g, T>) -> Var<'g, T> {
        let g = self.graph;
        let (shape, value) = {
            let nodes = g.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[bias.id]);
            let m = cols_of(&a.shape);
            assert_eq!(b.value.len(), m, "bias length must match column count");
            let mut out = a.value.clone();
            for row in out.chunks_mut(m) {
                add_into(row, &b.value);
            }
            (a.shape.clone(), out)
        };
        let rg = g.requires(self.id) || g.requires(bias.id);
        g.push(shape, value, Op::AddBias(self.id, bias.id), rg)
    }

    /// `x ↦ x * scale + shift` for constant coefficients.
    pub fn affine(self, scale: T, shift: T) -> Var<'g, T> {
        self.graph
            .unary(self.id, Op::Affine(self.id, scale), |x| x * scale + shift)
    }

    /// Multiplies every element by the single value of `s`.
    pub fn scale_by(self, s: Var<'g, T>) -> Var<'g, T> {
        let g = self.graph;
        let sv = {
            let nodes = g.nodes.borrow();
            assert_eq!(nodes[s.id].value.len(), 1, "scale_by needs a scalar");
            nodes[s.id].value[0]
        };
        let rg_s = g.requires(s.id);
        let out = g.unary(self.id, Op::ScaleBy(self.id, s.id), |x| x * sv);
        if rg_s {
            g.nodes.borrow_mut()[out.id].requires_grad = true;
        }
        out
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.graph.unary(self.id, Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn exp(self) -> Var<'g, T> {
        self.graph.unary(self.id, Op::Exp(self.id), |x| x.exp())
    }

    pub fn ln(self) -> Var<'g, T> {
        self.graph.unary(self.id, Op::Log(self.id), |x| x.ln())
    }

    pub fn square(self) -> Var<'g, T> {
        self.graph.unary(self.id, Op::Square(self.id), |x| x * x)
    }

    pub fn clip(self, lo: T, hi: T) -> Var<'g, T> {
        self.graph
            .unary(self.id, Op::Clip(self.id, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_gradient(self) -> Var<'g, T> {
        let g = self.graph;
        let (shape, value) = {
            let nodes = g.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        g.push(shape, value, Op::StopGradient, false)
    }

    pub fn sum(self) -> Var<'g, T> {
        let s = self.with_value(|v| v.iter().copied().sum());
        let rg = self.requires_grad();
        self.graph.push(vec![], vec![s], Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'g, T> {
        let s = self.with_value(|v| {
            v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len().max(1))
        });
        let rg = self.requires_grad();
        self.graph.push(vec![], vec![s], Op::Mean(self.id), rg)
    }

    /// Largest element; the gradient flows to the first maximizer.
    pub fn max(self) -> Var<'g, T> {
        let s = self.with_value(|v| v[argmax(v)]);
        let rg = self.requires_grad();
        self.graph.push(vec![], vec![s], Op::Max(self.id), rg)
    }

    /// `[n×m] → [n]`.
    pub fn sum_rows(self) -> Var<'g, T> {
        let shape = self.shape();
        let (n, m) = (rows_of(&shape), cols_of(&shape));
        let out = self.with_value(|v| v.chunks(m).map(|r| r.iter().copied().sum()).collect());
        let rg = self.requires_grad();
        self.graph.push(vec![n], out, Op::SumRows(self.id), rg)
    }

    /// Repeats a length-`m` vector as `rows` rows of an `[rows×m]` matrix.
    pub fn broadcast_rows(self, rows: usize) -> Var<'g, T> {
        let (m, out) = self.with_value(|v| {
            let mut out = Vec::with_capacity(rows * v.len());
            for _ in 0..rows {
                out.extend_from_slice(v);
            }
            (v.len(), out)
        });
        let rg = self.requires_grad();
        self.graph
            .push(vec![rows, m], out, Op::BroadcastRows(self.id), rg)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'g, T> {
        let value = self.value();
        assert_eq!(numel(&shape), value.len(), "reshape must keep element count");
        let rg = self.requires_grad();
        self.graph.push(shape, value, Op::Reshape(self.id), rg)
    }

    /// Row-wise `x - logsumexp(x)`, computed with max subtraction.
    pub fn log_softmax_rows(self) -> Var<'g, T> {
        let shape = self.shape();
        let m = cols_of(&shape);
        let out = self.with_value(|v| {
            let mut out = Vec::with_capacity(v.len());
            for row in v.chunks(m) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
                out.extend(row.iter().map(|&x| x - lse));
            }
            out
        });
        let rg = self.requires_grad();
        self.graph
            .push(shape, out, Op::LogSoftmaxRows(self.id), rg)
    }

    /// Selects column `idx[i]` from row `i`: `[n×k] → [n]`.
    pub fn pick_rows(self, idx: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let (n, m) = (rows_of(&shape), cols_of(&shape));
        if idx.len() != n {
            return Err(Error::Input(format!(
                "pick_rows got {} indices for {n} rows",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(Error::Input(format!(
                "index {bad} out of range for {m} columns"
            )));
        }
        let out = self.with_value(|v| idx.iter().enumerate().map(|(i, &j)| v[i * m + j]).collect());
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(vec![n], out, Op::PickRows(self.id, idx.to_vec()), rg))
    }

    pub fn minimum(self, rhs: Var<'g, T>) -> Var<'g, T> {
        self.graph
            .binary(self.id, rhs.id, Op::Minimum(self.id, rhs.id), |a, b| a.min(b))
    }

    pub fn maximum(self, rhs: Var<'g, T>) -> Var<'g, T> {
        self.graph
            .binary(self.id, rhs.id, Op::Maximum(self.id, rhs.id), |a, b| a.max(b))
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:ident, $f:expr) => {
        impl<'g, T: Scalar> $trait for Var<'g, T> {
            type Output = Var<'g, T>;
            fn $method(self, rhs: Var<'g, T>) -> Var<'g, T> {
                assert!(
                    std::ptr::eq(self.graph, rhs.graph),
                    "operands belong to different graphs"
                );
                self.graph
                    .binary(self.id, rhs.id, Op::$op(self.id, rhs.id), $f)
            }
        }
    };
}

binop!(Add, add, Add, |a, b| a + b);
binop!(Sub, sub, Sub, |a, b| a - b);
binop!(Mul, mul, Mul, |a, b| a * b);
binop!(Div, div, Div, |a, b| a / b);

impl<'g, T: Scalar> Neg for Var<'g, T> {
    type Output = Var<'g, T>;
    fn neg(self) -> Var<'g, T> {
        self.graph.unary(self.id, Op::Neg(self.id), |x| -x)
    }
}

impl<'g, T: Scalar> Add<T> for Var<'g, T> {
    type Output = Var<'g, T>;
    fn add(self, rhs: T) -> Var<'g, T> {
        self.affine(T::one(), rhs)
    }
}

impl<'g, T: Scalar> Sub<T> for Var<'g, T> {
    type Output = Var<'g, T>;
    fn sub(self, rhs: T) -> Var<'g, T> {
        self.affine(T::one(), -rhs)
    }
}

impl<'g, T: Scalar> Mul<T> for Var<'g, T> {
    type Output = Var<'g, T>;
    fn mul(self, rhs: T) -> Var<'g, T> {
        self.affine(rhs, T::zero())
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var<'_, T>) -> Vec<T> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); v.with_value(|x| x.len())],
        }
    }

    /// Writes the gradients of `leaves` into the matching tensors' grad buffers.
    pub fn write_into(&self, leaves: &[Var<'_, T>], tensors: &mut [Tensor<T>]) -> Result<()> {
        if leaves.len() != tensors.len() {
            return Err(Error::Usage(format!(
                "{} leaves for {} tensors",
                leaves.len(),
                tensors.len()
            )));
        }
        for (&leaf, t) in leaves.iter().zip(tensors.iter_mut()) {
            let g = self.wrt(leaf);
            if g.len() != t.len() {
                return Err(Error::Usage("leaf/tensor size mismatch".into()));
            }
            t.grad = Some(g);
        }
        Ok(())
    }
}

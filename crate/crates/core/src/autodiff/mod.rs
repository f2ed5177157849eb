//! Reverse-mode automatic differentiation over 2-D float arrays.
//!
//! A [`Tape`] records one forward computation as an append-only node list;
//! [`Var`] is a copyable handle into it. Every value is rank 2: scalars are
//! 1×1, row vectors 1×n, minibatches B×n. The uniform rank keeps the backward
//! rules short and kills a whole family of broadcasting bugs.
//!
//! Tapes are created per forward pass, consumed by one backward pass, and
//! dropped; nothing is shared across optimizer steps. Shape violations are
//! contract errors and panic; non-finite values surface as [`AdError`] at the
//! [`grad`]/[`jacobian`] boundary, carrying the id of the op that produced
//! them.

use crate::scalar::{sigmoid, softplus, Scalar};
use ndarray::{concatenate, s, Array2, Axis};
use std::cell::RefCell;
use thiserror::Error;

mod checks;
pub use checks::check_gradient;

/// Errors surfaced by gradient and Jacobian computation.
#[derive(Debug, Error)]
pub enum AdError {
    /// A forward value contains NaN or ±inf. `node` indexes the tape; `op`
    /// names the primitive that produced the value.
    #[error("non-finite value produced by op `{op}` (tape node {node})")]
    NonFinite { node: usize, op: &'static str },
    /// The differentiation root was not a 1×1 scalar.
    #[error("gradient root must be a 1x1 scalar, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

#[derive(Clone, Copy, Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    /// `a · bᵀ` — the only matrix product; weights are stored out×in.
    MatMulT(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Scale(usize, S),
    AddScalar(usize, S),
    Clamp(usize, S, S),
    /// Sum of all entries → 1×1.
    Sum(usize),
    /// Row-wise sum, B×n → B×1.
    SumRows(usize),
    /// Row-wise log-sum-exp with max shift, B×n → B×1.
    LogSumExpRows(usize),
    /// 1×n → r×n.
    BroadcastRows(usize),
    /// B×n → (B·k)×n with each row repeated k consecutive times.
    RepeatRows(usize, usize),
    /// K×n → (t·K)×n with the whole block repeated t times.
    TileRows(usize, usize),
    /// Row-major reshape.
    Reshape(usize),
    /// Column slice `[lo, hi)`.
    SliceCols(usize, usize, usize),
    ConcatCols(usize, usize),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MatMulT(..) => "matmul_t",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::TileRows(..) => "tile_rows",
            Op::Reshape(..) => "reshape",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

struct Node<S> {
    op: Op<S>,
    value: Array2<S>,
}

/// Append-only record of one forward computation.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a tape node. Copy; carries its shape so ops can validate
/// without touching the tape.
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    idx: usize,
    rows: usize,
    cols: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enter an array as a leaf (input or constant).
    pub fn leaf(&self, value: Array2<S>) -> Var<'_, S> {
        self.push(Op::Leaf, value)
    }

    /// Enter a 1×1 scalar leaf.
    pub fn scalar(&self, value: S) -> Var<'_, S> {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    fn push(&self, op: Op<S>, value: Array2<S>) -> Var<'_, S> {
        let (rows, cols) = value.dim();
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node { op, value });
        Var { tape: self, idx, rows, cols }
    }

    fn value_clone(&self, idx: usize) -> Array2<S> {
        self.nodes.borrow()[idx].value.clone()
    }

    /// First node whose value contains a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        let nodes = self.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            if n.value.iter().any(|v| !v.is_finite()) {
                return Some((i, n.op.name()));
            }
        }
        None
    }

    fn check_finite(&self) -> Result<(), AdError> {
        match self.first_non_finite() {
            Some((node, op)) => Err(AdError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    /// Backward pass from `root` with an explicit seed adjoint (same shape as
    /// the root value). Returns one adjoint slot per node; slots the root
    /// does not depend on are `None`.
    fn backward_seeded(&self, root: usize, seed: Array2<S>) -> Vec<Option<Array2<S>>> {
        let nodes = self.nodes.borrow();
        let mut adj: Vec<Option<Array2<S>>> = vec![None; nodes.len()];
        adj[root] = Some(seed);

        fn acc<S: Scalar>(adj: &mut [Option<Array2<S>>], idx: usize, delta: Array2<S>) {
            match &mut adj[idx] {
                Some(a) => *a += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..nodes.len()).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[i];
            match node.op {
                Op::Leaf => {
                    adj[i] = Some(g); // keep for extraction
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, g);
                }
                Op::Mul(a, b) => {
                    let va = &nodes[a].value;
                    let vb = &nodes[b].value;
                    acc(&mut adj, a, &g * vb);
                    acc(&mut adj, b, &g * va);
                }
                Op::MatMulT(a, b) => {
                    // out = a · bᵀ ; ∂a = g · b ; ∂b = gᵀ · a
                    let va = &nodes[a].value;
                    let vb = &nodes[b].value;
                    acc(&mut adj, a, g.dot(vb));
                    acc(&mut adj, b, g.t().dot(va));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut adj, a, &g * &y.mapv(|y| S::one() - y * y));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut adj, a, &g * &y.mapv(|y| y * (S::one() - y)));
                }
                Op::Softplus(a) => {
                    let x = &nodes[a].value;
                    acc(&mut adj, a, &g * &x.mapv(sigmoid));
                }
                Op::Exp(a) => {
                    acc(&mut adj, a, &g * &node.value);
                }
                Op::Log(a) => {
                    let x = &nodes[a].value;
                    acc(&mut adj, a, &g * &x.mapv(|x| S::one() / x));
                }
                Op::Scale(a, c) => {
                    acc(&mut adj, a, g.mapv(|g| g * c));
                }
                Op::AddScalar(a, _) => {
                    acc(&mut adj, a, g);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &nodes[a].value;
                    let mut d = g;
                    d.zip_mut_with(x, |g, &x| {
                        if x < lo || x > hi {
                            *g = S::zero();
                        }
                    });
                    acc(&mut adj, a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a].value.dim();
                    acc(&mut adj, a, Array2::from_elem((r, c), g[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let (r, c) = nodes[a].value.dim();
                    let mut d = Array2::zeros((r, c));
                    for (mut row, &gi) in d.rows_mut().into_iter().zip(g.column(0)) {
                        row.fill(gi);
                    }
                    acc(&mut adj, a, d);
                }
                Op::LogSumExpRows(a) => {
                    // ∂x_ij = g_i · exp(x_ij − lse_i)
                    let x = &nodes[a].value;
                    let lse = &node.value;
                    let mut d = x.clone();
                    for ((mut row, &l), &gi) in
                        d.rows_mut().into_iter().zip(lse.column(0)).zip(g.column(0))
                    {
                        row.mapv_inplace(|x| (x - l).exp() * gi);
                    }
                    acc(&mut adj, a, d);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut adj, a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::RepeatRows(a, k) => {
                    let b = nodes[a].value.nrows();
                    let n = nodes[a].value.ncols();
                    let mut d = Array2::zeros((b, n));
                    for bi in 0..b {
                        let block = g.slice(s![bi * k..(bi + 1) * k, ..]).sum_axis(Axis(0));
                        d.row_mut(bi).assign(&block);
                    }
                    acc(&mut adj, a, d);
                }
                Op::TileRows(a, t) => {
                    let k = nodes[a].value.nrows();
                    let n = nodes[a].value.ncols();
                    let mut d = Array2::zeros((k, n));
                    for ti in 0..t {
                        d += &g.slice(s![ti * k..(ti + 1) * k, ..]);
                    }
                    acc(&mut adj, a, d);
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[a].value.dim();
                    let d = g.into_shape_with_order((r, c)).expect("reshape backward");
                    acc(&mut adj, a, d);
                }
                Op::SliceCols(a, lo, hi) => {
                    let (r, c) = nodes[a].value.dim();
                    let mut d = Array2::zeros((r, c));
                    d.slice_mut(s![.., lo..hi]).assign(&g);
                    acc(&mut adj, a, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a].value.ncols();
                    let cb = nodes[b].value.ncols();
                    acc(&mut adj, a, g.slice(s![.., 0..ca]).to_owned());
                    acc(&mut adj, b, g.slice(s![.., ca..ca + cb]).to_owned());
                }
            }
        }
        adj
    }

    /// Gradient of a scalar `root` with respect to the given leaves. Leaves
    /// the root does not depend on get zero arrays of the right shape.
    pub fn grad(&self, root: Var<'_, S>, wrt: &[Var<'_, S>]) -> Result<Vec<Array2<S>>, AdError> {
        if root.rows != 1 || root.cols != 1 {
            return Err(AdError::NotScalar { rows: root.rows, cols: root.cols });
        }
        self.check_finite()?;
        let adj = self.backward_seeded(root.idx, Array2::from_elem((1, 1), S::one()));
        Ok(wrt
            .iter()
            .map(|v| match &adj[v.idx] {
                Some(a) => a.clone(),
                None => Array2::zeros((v.rows, v.cols)),
            })
            .collect())
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Clone of the node's value.
    pub fn value(&self) -> Array2<S> {
        self.tape.value_clone(self.idx)
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self) -> S {
        assert!(self.rows == 1 && self.cols == 1, "scalar_value on {}x{} node", self.rows, self.cols);
        self.value()[[0, 0]]
    }

    fn unary<Fwd: Fn(S) -> S>(self, op: Op<S>, fwd: Fwd) -> Var<'t, S> {
        let v = self.tape.value_clone(self.idx).mapv(fwd);
        self.tape.push(op, v)
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.unary(Op::Tanh(self.idx), |x| x.tanh())
    }

    pub fn sigmoid(self) -> Var<'t, S> {
        self.unary(Op::Sigmoid(self.idx), sigmoid)
    }

    pub fn softplus(self) -> Var<'t, S> {
        self.unary(Op::Softplus(self.idx), softplus)
    }

    pub fn exp(self) -> Var<'t, S> {
        self.unary(Op::Exp(self.idx), |x| x.exp())
    }

    pub fn log(self) -> Var<'t, S> {
        self.unary(Op::Log(self.idx), |x| x.ln())
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        self.unary(Op::Scale(self.idx, c), |x| x * c)
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        self.unary(Op::AddScalar(self.idx, c), |x| x + c)
    }

    pub fn clamp(self, lo: S, hi: S) -> Var<'t, S> {
        assert!(lo <= hi);
        self.unary(Op::Clamp(self.idx, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn square(self) -> Var<'t, S> {
        self * self
    }

    /// `self · wᵀ`; `self` is B×in, `w` is out×in, result B×out.
    pub fn matmul_t(self, w: Var<'t, S>) -> Var<'t, S> {
        assert!(same_tape(self, w));
        assert_eq!(self.cols, w.cols, "matmul_t: {}x{} · ({}x{})ᵀ", self.rows, self.cols, w.rows, w.cols);
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.idx].value.dot(&nodes[w.idx].value.t())
        };
        self.tape.push(Op::MatMulT(self.idx, w.idx), v)
    }

    pub fn sum(self) -> Var<'t, S> {
        let total = self.tape.nodes.borrow()[self.idx].value.sum();
        self.tape.push(Op::Sum(self.idx), Array2::from_elem((1, 1), total))
    }

    pub fn sum_rows(self) -> Var<'t, S> {
        let v = self.tape.nodes.borrow()[self.idx]
            .value
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        self.tape.push(Op::SumRows(self.idx), v)
    }

    /// Row-wise log-sum-exp with max shift; rows of −inf stay −inf.
    pub fn logsumexp_rows(self) -> Var<'t, S> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.idx].value;
            let mut out = Array2::zeros((x.nrows(), 1));
            for (i, row) in x.rows().into_iter().enumerate() {
                let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                out[[i, 0]] = if m.is_finite() {
                    m + row.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
                } else {
                    m
                };
            }
            out
        };
        self.tape.push(Op::LogSumExpRows(self.idx), v)
    }

    pub fn broadcast_rows(self, r: usize) -> Var<'t, S> {
        assert_eq!(self.rows, 1, "broadcast_rows needs a 1xn input");
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.idx].value.broadcast((r, self.cols)).unwrap().to_owned()
        };
        self.tape.push(Op::BroadcastRows(self.idx), v)
    }

    /// B×n → (B·k)×n, row b of the input occupying rows b·k .. (b+1)·k.
    pub fn repeat_rows(self, k: usize) -> Var<'t, S> {
        assert!(k >= 1);
        let v = self.nodes_value(|x| {
            let mut out = Array2::zeros((x.nrows() * k, x.ncols()));
            for (b, row) in x.rows().into_iter().enumerate() {
                for j in 0..k {
                    out.row_mut(b * k + j).assign(&row);
                }
            }
            out
        });
        self.tape.push(Op::RepeatRows(self.idx, k), v)
    }

    /// K×n → (t·K)×n, the whole block repeated t times.
    pub fn tile_rows(self, t: usize) -> Var<'t, S> {
        assert!(t >= 1);
        let v = self.nodes_value(|x| {
            let k = x.nrows();
            let mut out = Array2::zeros((k * t, x.ncols()));
            for ti in 0..t {
                out.slice_mut(s![ti * k..(ti + 1) * k, ..]).assign(x);
            }
            out
        });
        self.tape.push(Op::TileRows(self.idx, t), v)
    }

    /// Row-major reshape; element count must be preserved.
    pub fn reshape(self, r: usize, c: usize) -> Var<'t, S> {
        assert_eq!(self.rows * self.cols, r * c, "reshape {}x{} -> {}x{}", self.rows, self.cols, r, c);
        let v = self
            .tape
            .value_clone(self.idx)
            .into_shape_with_order((r, c))
            .expect("row-major reshape");
        self.tape.push(Op::Reshape(self.idx), v)
    }

    /// Columns `[lo, hi)`.
    pub fn slice_cols(self, lo: usize, hi: usize) -> Var<'t, S> {
        assert!(lo < hi && hi <= self.cols, "slice_cols {lo}..{hi} of {} cols", self.cols);
        let v = self.nodes_value(|x| x.slice(s![.., lo..hi]).to_owned());
        self.tape.push(Op::SliceCols(self.idx, lo, hi), v)
    }

    pub fn concat_cols(self, other: Var<'t, S>) -> Var<'t, S> {
        assert!(same_tape(self, other));
        assert_eq!(self.rows, other.rows, "concat_cols row mismatch");
        let v = {
            let nodes = self.tape.nodes.borrow();
            concatenate![Axis(1), nodes[self.idx].value, nodes[other.idx].value]
        };
        self.tape.push(Op::ConcatCols(self.idx, other.idx), v)
    }

    fn nodes_value<T>(&self, f: impl FnOnce(&Array2<S>) -> T) -> T {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.idx].value)
    }
}

fn same_tape<S: Scalar>(a: Var<'_, S>, b: Var<'_, S>) -> bool {
    std::ptr::eq(a.tape, b.tape)
}

impl<'t, S: Scalar> std::ops::Add for Var<'t, S> {
    type Output = Var<'t, S>;
    fn add(self, rhs: Self) -> Self::Output {
        assert!(same_tape(self, rhs));
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape mismatch");
        let v = {
            let nodes = self.tape.nodes.borrow();
            &nodes[self.idx].value + &nodes[rhs.idx].value
        };
        self.tape.push(Op::Add(self.idx, rhs.idx), v)
    }
}

impl<'t, S: Scalar> std::ops::Sub for Var<'t, S> {
    type Output = Var<'t, S>;
    fn sub(self, rhs: Self) -> Self::Output {
        self + rhs.scale(-S::one())
    }
}

impl<'t, S: Scalar> std::ops::Mul for Var<'t, S> {
    type Output = Var<'t, S>;
    fn mul(self, rhs: Self) -> Self::Output {
        assert!(same_tape(self, rhs));
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "mul shape mismatch");
        let v = {
            let nodes = self.tape.nodes.borrow();
            &nodes[self.idx].value * &nodes[rhs.idx].value
        };
        self.tape.push(Op::Mul(self.idx, rhs.idx), v)
    }
}

impl<'t, S: Scalar> std::ops::Neg for Var<'t, S> {
    type Output = Var<'t, S>;
    fn neg(self) -> Self::Output {
        self.scale(-S::one())
    }
}

/// Evaluate a scalar-valued computation and return its value together with
/// the gradients with respect to every input array.
pub fn grad<S, F>(arrays: &[Array2<S>], f: F) -> Result<(S, Vec<Array2<S>>), AdError>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Var<'t, S>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_, S>> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&tape, &leaves);
    let grads = tape.grad(out, &leaves)?;
    Ok((out.scalar_value(), grads))
}

/// Forward-only evaluation of a scalar-valued computation.
pub fn value_of<S, F>(arrays: &[Array2<S>], f: F) -> S
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Var<'t, S>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_, S>> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
    f(&tape, &leaves).scalar_value()
}

/// Jacobian of a row-vector-valued map `g` at the row vector `at` (1×n).
/// Entry (i, j) is ∂g_i/∂z_j, obtained by one reverse pass per output.
pub fn jacobian<S, F>(at: &Array2<S>, g: F) -> Result<Array2<S>, AdError>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Var<'t, S>,
{
    assert_eq!(at.nrows(), 1, "jacobian input must be a 1xn row");
    let tape = Tape::new();
    let z = tape.leaf(at.clone());
    let out = g(&tape, z);
    assert_eq!(out.rows, 1, "jacobian output must be a 1xm row");
    tape.check_finite()?;
    let (m, n) = (out.cols, at.ncols());
    let mut jac = Array2::zeros((m, n));
    for i in 0..m {
        let mut seed = Array2::zeros((1, m));
        seed[[0, i]] = S::one();
        let adj = tape.backward_seeded(out.idx, seed);
        if let Some(gz) = &adj[z.idx] {
            jac.row_mut(i).assign(&gz.row(0));
        }
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(AdError::NonFinite { node: out.idx, op: "jacobian" });
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grad_of_square_at_three_is_six() {
        let x = array![[3.0_f64]];
        let (v, g) = grad(&[x], |_, xs| xs[0].square()).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0][[0, 0]], 6.0);
    }

    #[test]
    fn grad_of_sum_is_all_ones() {
        let x = array![[1.0_f64, -2.0, 7.5], [0.0, 3.0, 4.0]];
        let (_, g) = grad(&[x], |_, xs| xs[0].sum()).unwrap();
        assert_eq!(g[0], array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
    }

    #[test]
    fn grad_of_constant_is_zero_array() {
        let x = array![[2.0_f64, 4.0]];
        let (v, g) = grad(&[x], |t, _| t.scalar(5.0)).unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g[0], array![[0.0, 0.0]]);
    }

    #[test]
    fn jacobian_of_identity_is_identity() {
        let at = array![[0.3_f64, -1.2]];
        let j = jacobian(&at, |_, z| z).unwrap();
        assert_eq!(j, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn jacobian_of_linear_map_is_the_matrix() {
        // g(z) = z·Aᵀ has Jacobian A.
        let a = array![[2.0_f64, 0.0], [0.0, 3.0]];
        let at = array![[0.7_f64, -0.4]];
        let j = jacobian(&at, |t, z| z.matmul_t(t.leaf(a.clone()))).unwrap();
        assert_eq!(j, a);
    }

    #[test]
    fn logsumexp_survives_large_spread() {
        let x = array![[-0.9189385_f64, -200.9189385]];
        let v = value_of(&[x], |_, xs| xs[0].logsumexp_rows().sum());
        assert!((v - (-0.9189385)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_forward_is_reported_with_op() {
        let x = array![[-1.0_f64]];
        let err = grad(&[x], |_, xs| xs[0].log()).unwrap_err();
        match err {
            AdError::NonFinite { op, .. } => assert_eq!(op, "log"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let x = array![[1.0_f64, 2.0]];
        let err = grad(&[x], |_, xs| xs[0]).unwrap_err();
        assert!(matches!(err, AdError::NotScalar { rows: 1, cols: 2 }));
    }

    #[test]
    fn repeat_and_tile_round_trip_gradients() {
        // sum(repeat_rows(x, 3)) has gradient 3 per entry; tile likewise.
        let x = array![[1.0_f64, 2.0], [3.0, 4.0]];
        let (_, g) = grad(&[x.clone()], |_, xs| xs[0].repeat_rows(3).sum()).unwrap();
        assert_eq!(g[0], array![[3.0, 3.0], [3.0, 3.0]]);
        let (_, g) = grad(&[x], |_, xs| xs[0].tile_rows(4).sum()).unwrap();
        assert_eq!(g[0], array![[4.0, 4.0], [4.0, 4.0]]);
    }

    #[test]
    fn slice_concat_reshape_shapes_and_grads() {
        let x = array![[1.0_f64, 2.0, 3.0, 4.0]];
        let (v, g) = grad(&[x], |_, xs| {
            let a = xs[0].slice_cols(0, 2);
            let b = xs[0].slice_cols(2, 4);
            a.concat_cols(b).reshape(2, 2).sum_rows().sum()
        })
        .unwrap();
        assert_eq!(v, 10.0);
        assert_eq!(g[0], array![[1.0, 1.0, 1.0, 1.0]]);
    }

    #[test]
    fn f32_tape_works() {
        let x = array![[2.0_f32]];
        let (v, g) = grad(&[x], |_, xs| xs[0].square()).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g[0][[0, 0]], 4.0);
    }
}

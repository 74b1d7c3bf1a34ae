//! Reverse-mode autodiff over a flat op list. Forward values are computed
//! eagerly as nodes are pushed; `backward` walks the list in reverse and
//! accumulates exact gradients of the recorded computation.
//!
//! The op set is deliberately small and matrix-shaped: convolutions are
//! expressed as gather (im2col) + matmul by the layer builders, transposed
//! convolutions as matmul + row permutation.

use crate::err::{Error, Result};
use crate::nn::kernels::{self, InterpTaps};
use crate::nn::params::ParamStore;
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;
use std::collections::HashMap;
use std::sync::Arc;

pub type NodeId = usize;

#[derive(Clone)]
enum Op<T: Scalar> {
    /// Constant input; no gradient is reported for it.
    Leaf,
    /// Leaf bound to a parameter slot; gradients are collected per slot.
    Param(usize),
    MatMul(NodeId, NodeId),
    /// x: [r, c] plus bias [c] broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    Ln(NodeId),
    Clamp(NodeId, T, T),
    /// Column-wise concatenation of equal-row matrices.
    ConcatCols(Vec<NodeId>),
    /// [r, c] -> [r, 1] sum over columns.
    RowSum(NodeId),
    /// -> [1]
    SumAll(NodeId),
    Reshape(NodeId),
    /// Row gather with -1 producing a zero row.
    GatherRows(NodeId, Arc<Vec<i64>>),
    /// Weighted multi-tap row gather (bilinear/trilinear lookups).
    Interp(NodeId, Arc<InterpTaps>),
    /// [g*r, c] -> [r, c], summing each consecutive group of g rows.
    GroupSumRows(NodeId, usize),
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// param slot -> node, so each parameter appears once per tape.
    param_nodes: HashMap<usize, NodeId>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        if self.check_finite {
            debug_assert!(
                value.all_finite(),
                "non-finite value produced by tape op #{}",
                self.nodes.len()
            );
        }
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Bind parameter `pid` from the store (cached: one node per parameter).
    pub fn param(&mut self, store: &ParamStore<T>, pid: usize) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&pid) {
            return id;
        }
        let id = self.push(Op::Param(pid), store.tensor(pid).clone());
        self.param_nodes.insert(pid, id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = kernels::matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xv = self.value(x);
        let bv = self.value(b);
        let c = xv.cols();
        assert_eq!(bv.len(), c, "bias length must equal columns");
        let mut out = xv.data().to_vec();
        let bd = bv.data();
        for row in out.chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bd.iter()) {
                *o += bb;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out);
        self.push(Op::AddBias(x, b), t)
    }

    fn zip_ew(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data: Vec<T> = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_ew(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_ew(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_ew(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).map(|t| t * c);
        self.push(Op::Scale(x, c), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| t.maxv(T::ZERO));
        self.push(Op::Relu(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| {
            if t.to_f64() >= 0.0 {
                T::ONE / (T::ONE + (-t).exp())
            } else {
                let e = t.exp();
                e / (T::ONE + e)
            }
        });
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| t.tanh());
        self.push(Op::Tanh(x), v)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| t.abs());
        self.push(Op::Abs(x), v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|t| t.ln());
        self.push(Op::Ln(x), v)
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let v = self.value(x).map(|t| t.maxv(lo).minv(hi));
        self.push(Op::Clamp(x, lo, hi), v)
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let rows = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = vec![T::ZERO; rows * total];
        let mut off = 0;
        for &x in xs {
            let xv = self.value(x);
            assert_eq!(xv.rows(), rows, "concat_cols row mismatch");
            let c = xv.cols();
            let xd = xv.data();
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(&xd[r * c..r * c + c]);
            }
            off += c;
        }
        let t = Tensor::new(vec![rows, total], out);
        self.push(Op::ConcatCols(xs.to_vec()), t)
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let rows = xv.rows();
        let mut out = vec![T::ZERO; rows];
        for (r, row) in xv.data().chunks(c).enumerate() {
            let mut acc = T::ZERO;
            for &v in row {
                acc += v;
            }
            out[r] = acc;
        }
        let t = Tensor::new(vec![rows, 1], out);
        self.push(Op::RowSum(x), t)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut acc = T::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push(Op::SumAll(x), Tensor::scalar(acc))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, T::from_f64(1.0 / n as f64))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let v = self.value(x).reshape(shape).expect("reshape size mismatch");
        self.push(Op::Reshape(x), v)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: Arc<Vec<i64>>) -> NodeId {
        let v = kernels::gather_rows(self.value(x), &idx);
        self.push(Op::GatherRows(x, idx), v)
    }

    pub fn interp(&mut self, x: NodeId, taps: Arc<InterpTaps>) -> NodeId {
        let v = kernels::interp_gather(self.value(x), &taps);
        self.push(Op::Interp(x, taps), v)
    }

    pub fn group_sum_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let rows = xv.rows();
        assert_eq!(rows % group, 0, "rows not divisible by group");
        let out_rows = rows / group;
        let mut out = vec![T::ZERO; out_rows * c];
        let xd = xv.data();
        for r in 0..out_rows {
            let orow = &mut out[r * c..r * c + c];
            for g in 0..group {
                let s = (r * group + g) * c;
                for (o, &v) in orow.iter_mut().zip(xd[s..s + c].iter()) {
                    *o += v;
                }
            }
        }
        let t = Tensor::new(vec![out_rows, c], out);
        self.push(Op::GroupSumRows(x, group), t)
    }

    /// Reverse pass from a scalar loss node. Returns gradients per parameter slot.
    pub fn backward(&self, loss: NodeId) -> Result<HashMap<usize, Tensor<T>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(T::ONE));

        for id in (0..=loss).rev() {
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    // stash back for collection below
                    grads[id] = Some(gy);
                    let _ = pid;
                }
                Op::MatMul(a, b) => {
                    let da = kernels::matmul_nt(&gy, self.value(*b));
                    let db = kernels::matmul_tn(self.value(*a), &gy);
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::AddBias(x, b) => {
                    let c = gy.cols();
                    let mut db = vec![T::ZERO; c];
                    for row in gy.data().chunks(c) {
                        for (d, &g) in db.iter_mut().zip(row.iter()) {
                            *d += g;
                        }
                    }
                    accum(&mut grads, *b, Tensor::new(vec![c], db));
                    accum(&mut grads, *x, gy);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, gy.clone());
                    accum(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, gy.clone());
                    accum(&mut grads, *b, gy.map(|t| -t));
                }
                Op::Mul(a, b) => {
                    let da = ew_mul(&gy, self.value(*b));
                    let db = ew_mul(&gy, self.value(*a));
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Scale(x, c) => {
                    let cc = *c;
                    accum(&mut grads, *x, gy.map(|t| t * cc));
                }
                Op::Relu(x) => {
                    let d = mask_mul(&gy, self.value(*x), |v| v > T::ZERO);
                    accum(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[id].value;
                    let d = zip3(&gy, y, |g, yv| g * yv * (T::ONE - yv));
                    accum(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[id].value;
                    let d = zip3(&gy, y, |g, yv| g * (T::ONE - yv * yv));
                    accum(&mut grads, *x, d);
                }
                Op::Abs(x) => {
                    let d = zip3(&gy, self.value(*x), |g, xv| {
                        if xv > T::ZERO {
                            g
                        } else if xv < T::ZERO {
                            -g
                        } else {
                            T::ZERO
                        }
                    });
                    accum(&mut grads, *x, d);
                }
                Op::Ln(x) => {
                    let d = zip3(&gy, self.value(*x), |g, xv| g / xv);
                    accum(&mut grads, *x, d);
                }
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let d = zip3(&gy, self.value(*x), |g, xv| {
                        if xv > lo && xv < hi {
                            g
                        } else {
                            T::ZERO
                        }
                    });
                    accum(&mut grads, *x, d);
                }
                Op::ConcatCols(xs) => {
                    let rows = gy.rows();
                    let total = gy.cols();
                    let gd = gy.data();
                    let mut off = 0;
                    for &x in xs {
                        let c = self.value(x).cols();
                        let mut part = vec![T::ZERO; rows * c];
                        for r in 0..rows {
                            part[r * c..r * c + c]
                                .copy_from_slice(&gd[r * total + off..r * total + off + c]);
                        }
                        accum(&mut grads, x, Tensor::new(vec![rows, c], part));
                        off += c;
                    }
                }
                Op::RowSum(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let rows = xv.rows();
                    let gd = gy.data();
                    let mut d = vec![T::ZERO; rows * c];
                    for r in 0..rows {
                        let g = gd[r];
                        for v in d[r * c..r * c + c].iter_mut() {
                            *v = g;
                        }
                    }
                    accum(&mut grads, *x, Tensor::new(xv.shape().to_vec(), d));
                }
                Op::SumAll(x) => {
                    let g = gy.item();
                    let xv = self.value(*x);
                    accum(&mut grads, *x, Tensor::full(xv.shape().to_vec(), g));
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    let d = gy.reshape(xv.shape().to_vec()).expect("reshape back");
                    accum(&mut grads, *x, d);
                }
                Op::GatherRows(x, idx) => {
                    let d = kernels::scatter_add_rows(&gy, idx, self.value(*x).rows());
                    accum(&mut grads, *x, d);
                }
                Op::Interp(x, taps) => {
                    let d = kernels::interp_scatter(&gy, taps, self.value(*x).rows());
                    accum(&mut grads, *x, d);
                }
                Op::GroupSumRows(x, group) => {
                    let group = *group;
                    let c = gy.cols();
                    let out_rows = gy.rows();
                    let gd = gy.data();
                    let mut d = vec![T::ZERO; out_rows * group * c];
                    for r in 0..out_rows {
                        for g in 0..group {
                            d[(r * group + g) * c..(r * group + g) * c + c]
                                .copy_from_slice(&gd[r * c..r * c + c]);
                        }
                    }
                    accum(&mut grads, *x, Tensor::new(vec![out_rows * group, c], d));
                }
            }
        }

        let mut out = HashMap::new();
        for (&pid, &nid) in &self.param_nodes {
            if let Some(g) = grads[nid].take() {
                out.insert(pid, g);
            }
        }
        Ok(out)
    }
}

fn accum<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign_tensor(&g),
        slot @ None => *slot = Some(g),
    }
}

fn ew_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| x * y)
            .collect(),
    )
}

fn mask_mul<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, keep: impl Fn(T) -> bool) -> Tensor<T> {
    assert_eq!(g.shape(), x.shape());
    Tensor::new(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(x.data().iter())
            .map(|(&gv, &xv)| if keep(xv) { gv } else { T::ZERO })
            .collect(),
    )
}

fn zip3<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(g.shape(), x.shape());
    Tensor::new(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(x.data().iter())
            .map(|(&gv, &xv)| f(gv, xv))
            .collect(),
    )
}

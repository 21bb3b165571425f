use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    SoftmaxRows(usize),
    LayerNorm { x: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Mask(usize, Vec<f64>),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    GatherRows { x: usize, index: Vec<usize> },
    ScatterAddRows { x: usize, index: Vec<usize> },
    SegmentSoftmax { x: usize, segment: Vec<usize> },
    GroupSumCols { x: usize, group: usize },
    RepeatCols { x: usize, times: usize },
    Reshape(usize),
    CrossEntropy { x: usize, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of executed ops. Backward walks it strictly in
/// reverse insertion order, which is a topological order by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, Var>>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` is not reachable.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims2() != b.dims2() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {op:?}")));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Binds a stored parameter; repeated binds on one tape share a node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable)?;
        self.bound.borrow_mut().insert(id, v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn dims2(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dims2()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let ((m, k), (k2, n)) = (ta.dims2(), tb.dims2());
            if k != k2 {
                return Err(Error::shape("matmul", ta.shape(), tb.shape()));
            }
            let mut out = vec![0.0; m * n];
            gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)?
        };
        self.push(out, Op::MatMul(a.0, b.0), self.rg(&[a.0, b.0]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let ta = &nodes[a.0].value;
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    fn row_broadcast(&self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tr) = (&nodes[a.0].value, &nodes[row.0].value);
        let (m, n) = ta.dims2();
        if tr.len() != n {
            return Err(Error::shape(op, ta.shape(), tr.shape()));
        }
        let r = tr.data();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(ta.row_slice(i).iter().zip(r).map(|(&x, &y)| f(x, y)));
        }
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a.0, b.0), self.rg(&[a.0, b.0]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// `a[m,n] + row[n]` broadcast over rows.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        self.push(out, Op::AddRow(a.0, row.0), self.rg(&[a.0, row.0]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a.0, b.0), self.rg(&[a.0, b.0]))
    }

    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        self.push(out, Op::MulRow(a.0, row.0), self.rg(&[a.0, row.0]))
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale(a.0, c), self.rg(&[a.0]))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a.0), self.rg(&[a.0]))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        let out = self.map(a, |x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a.0, slope), self.rg(&[a.0]))
    }

    /// Numerically stable softmax along each row.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            if !ta.is_finite() {
                return Err(Error::Numeric("softmax over non-finite row".into()));
            }
            let (m, n) = ta.dims2();
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let row = ta.row_slice(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let start = data.len();
                data.extend(row.iter().map(|&x| (x - max).exp()));
                let z: f64 = data[start..].iter().sum();
                data[start..].iter_mut().for_each(|x| *x /= z);
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        self.push(out, Op::SoftmaxRows(a.0), self.rg(&[a.0]))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, a: Var) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            let mut xhat = Vec::with_capacity(m * n);
            let mut inv_std = Vec::with_capacity(m);
            for i in 0..m {
                let row = ta.row_slice(i);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std.push(inv);
                xhat.extend(row.iter().map(|x| (x - mean) * inv));
            }
            (Tensor::new(ta.shape().to_vec(), xhat.clone())?, xhat, inv_std)
        };
        self.push(out, Op::LayerNorm { x: a.0, xhat, inv_std }, self.rg(&[a.0]))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout<R: Rng>(&self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::validation("dropout p", format!("{p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let n = self.with_value(a, Tensor::len);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask(a, mask)
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            if mask.len() != ta.len() {
                return Err(Error::shape("mask", ta.shape(), &[mask.len()]));
            }
            let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        };
        self.push(out, Op::Mask(a.0, mask), self.rg(&[a.0]))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or_else(|| Error::validation("concat_rows", "no inputs"))?;
            let n = nodes[first.0].value.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                if t.cols() != n {
                    return Err(Error::shape("concat_rows", nodes[first.0].value.shape(), t.shape()));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, n, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.rg(&ids);
        self.push(out, Op::ConcatRows(ids), rg)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or_else(|| Error::validation("concat_cols", "no inputs"))?;
            let m = nodes[first.0].value.rows();
            let mut cols = 0;
            for p in parts {
                let t = &nodes[p.0].value;
                if t.rows() != m {
                    return Err(Error::shape("concat_cols", nodes[first.0].value.shape(), t.shape()));
                }
                cols += t.cols();
            }
            let mut data = Vec::with_capacity(m * cols);
            for i in 0..m {
                for p in parts {
                    data.extend_from_slice(nodes[p.0].value.row_slice(i));
                }
            }
            Tensor::matrix(m, cols, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.rg(&ids);
        self.push(out, Op::ConcatCols(ids), rg)
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            if len == 0 || start + len > m {
                return Err(Error::shape("slice_rows", ta.shape(), &[start, len]));
            }
            Tensor::matrix(len, n, ta.data()[start * n..(start + len) * n].to_vec())?
        };
        self.push(out, Op::SliceRows { x: a.0, start }, self.rg(&[a.0]))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            if len == 0 || start + len > n {
                return Err(Error::shape("slice_cols", ta.shape(), &[start, len]));
            }
            let mut data = Vec::with_capacity(m * len);
            for i in 0..m {
                data.extend_from_slice(&ta.row_slice(i)[start..start + len]);
            }
            Tensor::matrix(m, len, data)?
        };
        self.push(out, Op::SliceCols { x: a.0, start }, self.rg(&[a.0]))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = ta.data()[i * n + j];
                }
            }
            Tensor::matrix(n, m, data)?
        };
        self.push(out, Op::Transpose(a.0), self.rg(&[a.0]))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.with_value(a, |t| t.data().iter().sum());
        self.push(Tensor::scalar(s), Op::Sum(a.0), self.rg(&[a.0]))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let s = self.with_value(a, |t| t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a.0), self.rg(&[a.0]))
    }

    /// Column sums: `[m,n] -> [1,n]`.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |t| {
            let (m, n) = t.dims2();
            let mut s = vec![0.0; n];
            for i in 0..m {
                s.iter_mut().zip(t.row_slice(i)).for_each(|(o, x)| *o += x);
            }
            Tensor::row(s)
        })?;
        self.push(out, Op::SumRows(a.0), self.rg(&[a.0]))
    }

    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            let mut data = Vec::with_capacity(index.len() * n);
            for &i in index {
                if i >= m {
                    return Err(Error::Index { index: i, len: m });
                }
                data.extend_from_slice(ta.row_slice(i));
            }
            Tensor::matrix(index.len(), n, data)?
        };
        self.push(
            out,
            Op::GatherRows {
                x: a.0,
                index: index.to_vec(),
            },
            self.rg(&[a.0]),
        )
    }

    /// `out[index[e]] += a[e]` into an `[rows, n]` result.
    pub fn scatter_add_rows(&self, a: Var, index: &[usize], rows: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            if index.len() != m {
                return Err(Error::shape("scatter_add_rows", ta.shape(), &[index.len()]));
            }
            let mut data = vec![0.0; rows * n];
            for (e, &r) in index.iter().enumerate() {
                if r >= rows {
                    return Err(Error::Index { index: r, len: rows });
                }
                data[r * n..(r + 1) * n]
                    .iter_mut()
                    .zip(ta.row_slice(e))
                    .for_each(|(o, x)| *o += x);
            }
            Tensor::matrix(rows, n, data)?
        };
        self.push(
            out,
            Op::ScatterAddRows {
                x: a.0,
                index: index.to_vec(),
            },
            self.rg(&[a.0]),
        )
    }

    /// Softmax of each column of `a[E,H]` within groups of rows sharing a
    /// segment id. Every segment must be non-empty where referenced.
    pub fn segment_softmax(&self, a: Var, segment: &[usize], segments: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, h) = ta.dims2();
            if segment.len() != m {
                return Err(Error::shape("segment_softmax", ta.shape(), &[segment.len()]));
            }
            let mut max = vec![f64::NEG_INFINITY; segments * h];
            for (e, &s) in segment.iter().enumerate() {
                if s >= segments {
                    return Err(Error::Index { index: s, len: segments });
                }
                for c in 0..h {
                    max[s * h + c] = max[s * h + c].max(ta.get(e, c));
                }
            }
            let mut data = vec![0.0; m * h];
            let mut z = vec![0.0; segments * h];
            for (e, &s) in segment.iter().enumerate() {
                for c in 0..h {
                    let v = (ta.get(e, c) - max[s * h + c]).exp();
                    data[e * h + c] = v;
                    z[s * h + c] += v;
                }
            }
            for (e, &s) in segment.iter().enumerate() {
                for c in 0..h {
                    data[e * h + c] /= z[s * h + c];
                }
            }
            Tensor::matrix(m, h, data)?
        };
        self.push(
            out,
            Op::SegmentSoftmax {
                x: a.0,
                segment: segment.to_vec(),
            },
            self.rg(&[a.0]),
        )
    }

    /// Sums consecutive column groups: `[m, H*g] -> [m, H]`.
    pub fn group_sum_cols(&self, a: Var, group: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, n) = ta.dims2();
            if group == 0 || n % group != 0 {
                return Err(Error::shape("group_sum_cols", ta.shape(), &[group]));
            }
            let h = n / group;
            let mut data = vec![0.0; m * h];
            for i in 0..m {
                for (c, x) in ta.row_slice(i).iter().enumerate() {
                    data[i * h + c / group] += x;
                }
            }
            Tensor::matrix(m, h, data)?
        };
        self.push(out, Op::GroupSumCols { x: a.0, group }, self.rg(&[a.0]))
    }

    /// Repeats each column `times` times consecutively: `[m, H] -> [m, H*times]`.
    pub fn repeat_cols(&self, a: Var, times: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let (m, h) = ta.dims2();
            let mut data = Vec::with_capacity(m * h * times);
            for i in 0..m {
                for &x in ta.row_slice(i) {
                    data.extend(std::iter::repeat_n(x, times));
                }
            }
            Tensor::matrix(m, h * times, data)?
        };
        self.push(out, Op::RepeatCols { x: a.0, times }, self.rg(&[a.0]))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshape(vec![rows, cols])?;
        self.push(out, Op::Reshape(a.0), self.rg(&[a.0]))
    }

    /// Mean-free two-or-more-class cross-entropy of one row of logits.
    pub fn cross_entropy(&self, logits: Var, target: usize) -> Result<Var> {
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            if t.rows() != 1 || target >= t.cols() {
                return Err(Error::shape("cross_entropy", t.shape(), &[1, target]));
            }
            let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = t.data().iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
            let loss = -(t.data()[target] - max - z.ln());
            (loss, probs)
        };
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                x: logits.0,
                target,
                probs,
            },
            self.rg(&[logits.0]),
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                backprop(&nodes, i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of every parameter bound to this tape.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .borrow()
            .iter()
            .map(|(&id, &v)| (id, grads.wrt(v)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let ((m, k), (_, n)) = (ta.dims2(), tb.dims2());
            accumulate(nodes, grads, *a, |d| gemm_nt_acc(g, tb.data(), d, m, k, n));
            accumulate(nodes, grads, *b, |d| gemm_tn_acc(ta.data(), g, d, m, k, n));
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                accumulate(nodes, grads, id, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        }
        Op::AddRow(a, r) => {
            let n = out.cols();
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            accumulate(nodes, grads, *r, |d| {
                for (j, gv) in g.iter().enumerate() {
                    d[j % n] += gv;
                }
            });
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(nodes, grads, *a, |d| {
                for ((x, gv), bv) in d.iter_mut().zip(g).zip(tb.data()) {
                    *x += gv * bv;
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for ((x, gv), av) in d.iter_mut().zip(g).zip(ta.data()) {
                    *x += gv * av;
                }
            });
        }
        Op::MulRow(a, r) => {
            let (ta, tr) = (&nodes[*a].value, &nodes[*r].value);
            let n = out.cols();
            accumulate(nodes, grads, *a, |d| {
                for (j, (x, gv)) in d.iter_mut().zip(g).enumerate() {
                    *x += gv * tr.data()[j % n];
                }
            });
            accumulate(nodes, grads, *r, |d| {
                for (j, (gv, av)) in g.iter().zip(ta.data()).enumerate() {
                    d[j % n] += gv * av;
                }
            });
        }
        Op::Scale(a, c) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
        }
        Op::Relu(a) => {
            let ta = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for ((x, gv), v) in d.iter_mut().zip(g).zip(ta.data()) {
                    if *v > 0.0 {
                        *x += gv;
                    }
                }
            });
        }
        Op::LeakyRelu(a, slope) => {
            let ta = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for ((x, gv), v) in d.iter_mut().zip(g).zip(ta.data()) {
                    *x += if *v > 0.0 { *gv } else { slope * gv };
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let (m, n) = out.dims2();
            accumulate(nodes, grads, *a, |d| {
                for r in 0..m {
                    let y = out.row_slice(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] += y[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm { x, xhat, inv_std } => {
            let (m, n) = out.dims2();
            let nf = n as f64;
            accumulate(nodes, grads, *x, |d| {
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let xr = &xhat[r * n..(r + 1) * n];
                    let sg: f64 = gr.iter().sum();
                    let sgx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[r * n + j] += inv_std[r] / nf * (nf * gr[j] - sg - xr[j] * sgx);
                    }
                }
            });
        }
        Op::Mask(a, mask) => {
            accumulate(nodes, grads, *a, |d| {
                for ((x, gv), mv) in d.iter_mut().zip(g).zip(mask) {
                    *x += gv * mv;
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                accumulate(nodes, grads, p, |d| {
                    d.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, y)| *x += y)
                });
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (m, n) = out.dims2();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                accumulate(nodes, grads, p, |d| {
                    for r in 0..m {
                        for j in 0..w {
                            d[r * w + j] += g[r * n + offset + j];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::SliceRows { x, start } => {
            let n = out.cols();
            accumulate(nodes, grads, *x, |d| {
                d[start * n..start * n + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b)
            });
        }
        Op::SliceCols { x, start } => {
            let (m, w) = out.dims2();
            let n = nodes[*x].value.cols();
            accumulate(nodes, grads, *x, |d| {
                for r in 0..m {
                    for j in 0..w {
                        d[r * n + start + j] += g[r * w + j];
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (m, n) = nodes[*a].value.dims2();
            accumulate(nodes, grads, *a, |d| {
                for r in 0..m {
                    for c in 0..n {
                        d[r * n + c] += g[c * m + r];
                    }
                }
            });
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let len = nodes[*a].value.len() as f64;
            accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0] / len));
        }
        Op::SumRows(a) => {
            let n = out.cols();
            accumulate(nodes, grads, *a, |d| {
                for (j, x) in d.iter_mut().enumerate() {
                    *x += g[j % n];
                }
            });
        }
        Op::GatherRows { x, index } => {
            let n = out.cols();
            accumulate(nodes, grads, *x, |d| {
                for (e, &r) in index.iter().enumerate() {
                    for j in 0..n {
                        d[r * n + j] += g[e * n + j];
                    }
                }
            });
        }
        Op::ScatterAddRows { x, index } => {
            let n = out.cols();
            accumulate(nodes, grads, *x, |d| {
                for (e, &r) in index.iter().enumerate() {
                    for j in 0..n {
                        d[e * n + j] += g[r * n + j];
                    }
                }
            });
        }
        Op::SegmentSoftmax { x, segment } => {
            let h = out.cols();
            let segments = segment.iter().max().map_or(0, |m| m + 1);
            let mut dot = vec![0.0; segments * h];
            for (e, &s) in segment.iter().enumerate() {
                for c in 0..h {
                    dot[s * h + c] += g[e * h + c] * out.get(e, c);
                }
            }
            accumulate(nodes, grads, *x, |d| {
                for (e, &s) in segment.iter().enumerate() {
                    for c in 0..h {
                        d[e * h + c] += out.get(e, c) * (g[e * h + c] - dot[s * h + c]);
                    }
                }
            });
        }
        Op::GroupSumCols { x, group } => {
            let h = out.cols();
            accumulate(nodes, grads, *x, |d| {
                for (j, v) in d.iter_mut().enumerate() {
                    let (r, c) = (j / (h * group), j % (h * group));
                    *v += g[r * h + c / group];
                }
            });
        }
        Op::RepeatCols { x, times } => {
            accumulate(nodes, grads, *x, |d| {
                for (j, v) in d.iter_mut().enumerate() {
                    *v += g[j * times..(j + 1) * times].iter().sum::<f64>();
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::CrossEntropy { x, target, probs } => {
            accumulate(nodes, grads, *x, |d| {
                for (j, p) in probs.iter().enumerate() {
                    let t = if j == *target { 1.0 } else { 0.0 };
                    d[j] += g[0] * (p - t);
                }
            });
        }
    }
}

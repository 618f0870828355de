//! Reverse-mode automatic differentiation over a closed set of matrix
//! primitives.
//!
//! Every value lives on a [`Tape`] as a node; operations append nodes in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] only has to walk it once in reverse. Leaves created
//! with `requires_grad` accumulate `d root / d leaf` across repeated
//! backward calls until [`Tape::zero_grad`].
//!
//! All matrix-shaped primitives treat a tensor as `rows x cols` with
//! `rows = shape[0]`; biases and per-column scales are rank-1.

use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a * b` or `a * b^T`.
    MatMul { a: Var, b: Var, trans_b: bool },
    AddBias(Var, Var),
    ScaleCols(Var, Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    L1 { pred: Var, target: Vec<f64> },
    Sum(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Splice { x: Var, offsets: Vec<isize> },
    SubsampleRows { x: Var, factor: usize },
    /// Scalar node whose value and input gradient were computed outside the
    /// tape (sequence criteria).
    External { x: Var, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a `requires_grad` leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: operand shapes differ"
        );
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul: inner dimensions {k} and {k2} differ");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, trans_b }, rg)
    }

    /// Adds a rank-1 bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.value(bias).len(), c, "add_bias: bias length");
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push(Tensor::matrix(r, c, data), Op::AddBias(x, bias), rg)
    }

    /// Multiplies column `j` of every row by `scale[j]`.
    pub fn scale_cols(&mut self, x: Var, scale: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.value(scale).len(), c, "scale_cols: scale length");
        let s = self.value(scale).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (v, ss) in row.iter_mut().zip(s) {
                *v *= ss;
            }
        }
        let rg = self.rg(&[x, scale]);
        self.push(Tensor::matrix(r, c, data), Op::ScaleCols(x, scale), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
        })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(r, c, data), Op::SoftmaxRows(x), rg)
    }

    /// Row-wise layer normalization with learned `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.value(gamma).len(), c, "layer_norm: gamma length");
        assert_eq!(self.value(beta).len(), c, "layer_norm: beta length");
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let n = (row[j] - mean) * is;
                normalized[i * c + j] = n;
                out[i * c + j] = n * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Mean absolute error against a constant target, as a scalar node.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "l1_loss: shape mismatch");
        let n = p.len().max(1) as f64;
        let value = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred]);
        self.push(
            Tensor::scalar(value),
            Op::L1 {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start + len <= c, "slice_cols out of range");
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(r, len, data), Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.dims(p);
                assert_eq!(pr, r, "concat_cols: row counts differ");
                pc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::matrix(r, total, data), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Row `t` of the output concatenates input rows `t + o` for each offset,
    /// clamped to the first and last row.
    pub fn splice(&mut self, x: Var, offsets: &[isize]) -> Var {
        let (r, c) = self.dims(x);
        assert!(r > 0 && !offsets.is_empty(), "splice of empty input");
        let src = self.value(x).data();
        let w = c * offsets.len();
        let mut data = Vec::with_capacity(r * w);
        for t in 0..r {
            for &o in offsets {
                let s = clamp_row(t, o, r);
                data.extend_from_slice(&src[s * c..(s + 1) * c]);
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::matrix(r, w, data),
            Op::Splice {
                x,
                offsets: offsets.to_vec(),
            },
            rg,
        )
    }

    /// Keeps rows `0, factor, 2 * factor, ...`.
    pub fn subsample_rows(&mut self, x: Var, factor: usize) -> Var {
        assert!(factor >= 1);
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let out_rows = r.div_ceil(factor);
        let mut data = Vec::with_capacity(out_rows * c);
        for i in 0..out_rows {
            let s = i * factor;
            data.extend_from_slice(&src[s * c..(s + 1) * c]);
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::matrix(out_rows, c, data),
            Op::SubsampleRows { x, factor },
            rg,
        )
    }

    /// Scalar node with an externally computed value and `d value / d x`.
    pub fn external_loss(&mut self, x: Var, value: f64, grad: Tensor) -> Var {
        assert_eq!(self.value(x).shape(), grad.shape(), "external_loss: grad shape");
        let rg = self.rg(&[x]);
        self.push(
            Tensor::scalar(value),
            Op::External {
                x,
                grad: grad.into_data(),
            },
            rg,
        )
    }

    /// Propagates `d root / d node` back to every `requires_grad` leaf and
    /// adds it into that leaf's gradient buffer.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, has shape {:?}",
                rv.shape()
            )));
        }
        if !rv.all_finite() {
            return Err(Error::NonFinite("backward root".into()));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[root.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => {
                        node.grad = Some(
                            Tensor::new(node.value.shape().to_vec(), g).expect("adjoint shape"),
                        )
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Adds `contrib` into the adjoint of `v`, allocating it on first use.
        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        }
        let len_of = |v: Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if wants(v) {
                        acc(adj, v, g.len(), |d| add_into(d, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(adj, *a, g.len(), |d| add_into(d, g));
                }
                if wants(*b) {
                    acc(adj, *b, g.len(), |d| {
                        for (x, y) in d.iter_mut().zip(g) {
                            *x -= y;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    acc(adj, *a, g.len(), |d| {
                        for ((x, gg), y) in d.iter_mut().zip(g).zip(vb) {
                            *x += gg * y;
                        }
                    });
                }
                if wants(*b) {
                    acc(adj, *b, g.len(), |d| {
                        for ((x, gg), y) in d.iter_mut().zip(g).zip(va) {
                            *x += gg * y;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    acc(adj, *a, g.len(), |d| {
                        for (x, gg) in d.iter_mut().zip(g) {
                            *x += gg * c;
                        }
                    });
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = node.value.cols();
                if wants(*a) {
                    // dA = G * op(B)^T
                    let bv = self.value(*b).data();
                    acc(adj, *a, m * k, |d| gemm(m, n, k, g, false, bv, !*trans_b, d, 1.0));
                }
                if wants(*b) {
                    let av = self.value(*a).data();
                    if *trans_b {
                        // B is n x k: dB = G^T * A
                        acc(adj, *b, n * k, |d| gemm(n, m, k, g, true, av, false, d, 1.0));
                    } else {
                        // B is k x n: dB = A^T * G
                        acc(adj, *b, k * n, |d| gemm(k, m, n, av, true, g, false, d, 1.0));
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let c = self.value(*bias).len();
                if wants(*x) {
                    acc(adj, *x, g.len(), |d| add_into(d, g));
                }
                if wants(*bias) {
                    acc(adj, *bias, c, |d| {
                        for row in g.chunks_exact(c) {
                            add_into(d, row);
                        }
                    });
                }
            }
            Op::ScaleCols(x, scale) => {
                let c = self.value(*scale).len();
                let s = self.value(*scale).data();
                let xv = self.value(*x).data();
                if wants(*x) {
                    acc(adj, *x, g.len(), |d| {
                        for (drow, grow) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                drow[j] += grow[j] * s[j];
                            }
                        }
                    });
                }
                if wants(*scale) {
                    acc(adj, *scale, c, |d| {
                        for (grow, xrow) in g.chunks_exact(c).zip(xv.chunks_exact(c)) {
                            for j in 0..c {
                                d[j] += grow[j] * xrow[j];
                            }
                        }
                    });
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(adj, *x, g.len(), |d| {
                    for ((dd, gg), yy) in d.iter_mut().zip(g).zip(y) {
                        *dd += gg * (1.0 - yy * yy);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(adj, *x, g.len(), |d| {
                    for ((dd, gg), xx) in d.iter_mut().zip(g).zip(xv) {
                        if *xx > 0.0 {
                            *dd += gg;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(adj, *x, g.len(), |d| {
                    for ((dd, gg), &v) in d.iter_mut().zip(g).zip(xv) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *dd += gg * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                let y = node.value.data();
                acc(adj, *x, g.len(), |d| {
                    for ((drow, grow), yrow) in d
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(y.chunks_exact(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let c = node.value.cols();
                let gm = self.value(*gamma).data();
                if wants(*x) {
                    acc(adj, *x, g.len(), |d| {
                        let mut dn = vec![0.0; c];
                        for (i, (drow, grow)) in
                            d.chunks_exact_mut(c).zip(g.chunks_exact(c)).enumerate()
                        {
                            let nrow = &normalized[i * c..(i + 1) * c];
                            let mut mean_dn = 0.0;
                            let mut mean_dn_n = 0.0;
                            for j in 0..c {
                                dn[j] = grow[j] * gm[j];
                                mean_dn += dn[j];
                                mean_dn_n += dn[j] * nrow[j];
                            }
                            mean_dn /= c as f64;
                            mean_dn_n /= c as f64;
                            for j in 0..c {
                                drow[j] += inv_std[i] * (dn[j] - mean_dn - nrow[j] * mean_dn_n);
                            }
                        }
                    });
                }
                if wants(*gamma) {
                    acc(adj, *gamma, c, |d| {
                        for (grow, nrow) in g.chunks_exact(c).zip(normalized.chunks_exact(c)) {
                            for j in 0..c {
                                d[j] += grow[j] * nrow[j];
                            }
                        }
                    });
                }
                if wants(*beta) {
                    acc(adj, *beta, c, |d| {
                        for grow in g.chunks_exact(c) {
                            add_into(d, grow);
                        }
                    });
                }
            }
            Op::L1 { pred, target } => {
                let p = self.value(*pred).data();
                let scale = g[0] / p.len().max(1) as f64;
                acc(adj, *pred, p.len(), |d| {
                    for ((dd, a), b) in d.iter_mut().zip(p).zip(target) {
                        let diff = a - b;
                        if diff > 0.0 {
                            *dd += scale;
                        } else if diff < 0.0 {
                            *dd -= scale;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let n = len_of(*x);
                acc(adj, *x, n, |d| {
                    for dd in d.iter_mut() {
                        *dd += g[0];
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let w = node.value.cols();
                acc(adj, *x, r * c, |d| {
                    for i in 0..r {
                        add_into(&mut d[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let r = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if wants(p) {
                        acc(adj, p, r * w, |d| {
                            for i in 0..r {
                                add_into(
                                    &mut d[i * w..(i + 1) * w],
                                    &g[i * total + off..i * total + off + w],
                                );
                            }
                        });
                    }
                    off += w;
                }
            }
            Op::Splice { x, offsets } => {
                let (r, c) = self.dims(*x);
                let w = c * offsets.len();
                acc(adj, *x, r * c, |d| {
                    for t in 0..r {
                        for (k, &o) in offsets.iter().enumerate() {
                            let s = clamp_row(t, o, r);
                            add_into(
                                &mut d[s * c..(s + 1) * c],
                                &g[t * w + k * c..t * w + (k + 1) * c],
                            );
                        }
                    }
                });
            }
            Op::SubsampleRows { x, factor } => {
                let (r, c) = self.dims(*x);
                let out_rows = node.value.rows();
                acc(adj, *x, r * c, |d| {
                    for i in 0..out_rows {
                        let s = i * factor;
                        add_into(&mut d[s * c..(s + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::External { x, grad } => {
                acc(adj, *x, grad.len(), |d| {
                    for (dd, gg) in d.iter_mut().zip(grad) {
                        *dd += g[0] * gg;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn clamp_row(t: usize, offset: isize, rows: usize) -> usize {
    (t as isize + offset).clamp(0, rows as isize - 1) as usize
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

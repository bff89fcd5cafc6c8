use std::borrow::Cow;

use super::kernels::{col_sum_acc, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};
use super::params::{ParamId, Params};
use super::Tensor;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    /// `b` is either the same shape as `a` or a row vector broadcast over rows.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Linear { x: Var, w: Var, b: Var },
    Conv1d { x: Var, kernel: Var, bias: Var, dilation: usize },
    Gated(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    CrossEntropy { p: Var, target: usize },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a single forward pass. Parameters are borrowed, not copied.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(ParamId, Var)>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.is_matrix() {
        Ok((t.shape()[0], t.shape()[1]))
    } else {
        Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        })
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted (for checks against inputs).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &'a Params, id: ParamId) -> Var {
        if self.param_vars.len() < params.len() {
            self.param_vars.resize(params.len(), None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(params.get(id)),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = require_matrix("transpose", t)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data()[i * n + j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = ta.data().to_vec();
        if ta.shape() == tb.shape() {
            for (o, v) in out.iter_mut().zip(tb.data()) {
                *o += v;
            }
        } else if tb.len() == ta.cols() && tb.rows() == 1 && ta.is_matrix() {
            let c = ta.cols();
            for row in out.chunks_mut(c) {
                for (o, v) in row.iter_mut().zip(tb.data()) {
                    *o += v;
                }
            }
        } else {
            return Err(shape_err("add", ta, tb));
        }
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale(a, factor), &[a])
    }

    /// `x [R, I] · w [I, O] + b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (r, i) = require_matrix("linear", tx)?;
        let (i2, o) = require_matrix("linear", tw)?;
        if i != i2 {
            return Err(shape_err("linear", tx, tw));
        }
        if tb.len() != o {
            return Err(shape_err("linear bias", tw, tb));
        }
        let mut out = Vec::with_capacity(r * o);
        for _ in 0..r {
            out.extend_from_slice(tb.data());
        }
        matmul_acc(tx.data(), tw.data(), &mut out, r, i, o);
        Ok(self.push(Tensor::matrix(r, o, out), Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Causal dilated 1-D convolution over the frame axis.
    ///
    /// `x` is `[T, C_in]`, `kernel` is `[K, C_in, C_out]`, `bias` is
    /// `[C_out]`. Tap `j` reads frame `t - (K - 1 - j) * dilation`; frames
    /// before the start read as zero, so the output keeps length `T`.
    pub fn conv1d_causal(&mut self, x: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        let (t_len, cin) = require_matrix("conv1d", tx)?;
        if tk.shape().len() != 3 || tk.shape()[1] != cin {
            return Err(shape_err("conv1d", tx, tk));
        }
        let (taps, cout) = (tk.shape()[0], tk.shape()[2]);
        if tb.len() != cout {
            return Err(shape_err("conv1d bias", tk, tb));
        }
        if dilation == 0 {
            return Err(Error::Contract("conv1d dilation must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(t_len * cout);
        for _ in 0..t_len {
            out.extend_from_slice(tb.data());
        }
        for j in 0..taps {
            let shift = (taps - 1 - j) * dilation;
            if shift >= t_len {
                continue;
            }
            let rows = t_len - shift;
            let kj = &tk.data()[j * cin * cout..(j + 1) * cin * cout];
            matmul_acc(&tx.data()[..rows * cin], kj, &mut out[shift * cout..], rows, cin, cout);
        }
        Ok(self.push(
            Tensor::matrix(t_len, cout, out),
            Op::Conv1d { x, kernel, bias, dilation },
            &[x, kernel, bias],
        ))
    }

    /// `tanh(x[:, :C]) * sigmoid(x[:, C:])` for `x` of shape `[R, 2C]`.
    pub fn gated_activation(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c2) = require_matrix("gated_activation", t)?;
        if c2 % 2 != 0 {
            return Err(Error::Shape {
                op: "gated_activation",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let c = c2 / 2;
        let mut out = Vec::with_capacity(r * c);
        for row in t.data().chunks(c2) {
            for k in 0..c {
                out.push(row[k].tanh() * sigmoid(row[c + k]));
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::Gated(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Relu(x), &[x])
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// per-column gain and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = require_matrix("layer_norm", tx)?;
        if tg.len() != c || tb.len() != c {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in tx.data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (k, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * tg.data()[k] + tb.data()[k]);
            }
        }
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        ))
    }

    /// Softmax along `axis` (0: down columns, 1: across rows). Vectors are
    /// treated as a single row.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if axis > 1 || (axis == 0 && !t.is_matrix()) {
            return Err(Error::Contract(format!("softmax axis {axis} invalid for shape {:?}", t.shape())));
        }
        let mut out = t.data().to_vec();
        let (outer, inner, stride, step) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
        for o in 0..outer {
            let idx = |i: usize| o * stride + i * step;
            let max = (0..inner).map(|i| out[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..inner {
                let e = (out[idx(i)] - max).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..inner {
                out[idx(i)] /= sum;
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax { x, axis }, &[x]))
    }

    /// Mean over `axis` of a matrix: axis 0 gives `[1, C]`, axis 1 `[R, 1]`.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = require_matrix("mean", t)?;
        let out = match axis {
            0 => {
                let mut s = vec![0.0; c];
                col_sum_acc(t.data(), &mut s, r, c);
                s.iter_mut().for_each(|v| *v /= r as f64);
                Tensor::matrix(1, c, s)
            }
            1 => Tensor::matrix(r, 1, t.data().chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect()),
            _ => return Err(Error::Contract(format!("mean axis {axis} invalid"))),
        };
        Ok(self.push(out, Op::Mean { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Concatenates matrices along `axis` (0: rows, 1: columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?);
        let (r0, c0) = require_matrix("concat", first)?;
        let mut out;
        let shape;
        match axis {
            0 => {
                out = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if !t.is_matrix() || t.cols() != c0 {
                        return Err(shape_err("concat", first, t));
                    }
                    out.extend_from_slice(t.data());
                    rows += t.rows();
                }
                shape = vec![rows, c0];
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if !t.is_matrix() || t.rows() != r0 {
                        return Err(shape_err("concat", first, t));
                    }
                    cols += t.cols();
                }
                out = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        out.extend_from_slice(self.value(p).row(i));
                    }
                }
                shape = vec![r0, cols];
            }
            _ => return Err(Error::Contract(format!("concat axis {axis} invalid"))),
        }
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = require_matrix("slice_cols", t)?;
        if start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(r, len, out), Op::SliceCols { x, start }, &[x]))
    }

    /// `-ln(max(p[target], 1e-12))` for a probability vector.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let t = self.value(p);
        if target >= t.len() {
            return Err(Error::Contract(format!("target {target} out of {} classes", t.len())));
        }
        let loss = -t.data()[target].max(PROB_FLOOR).ln();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { p, target }, &[p]))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor {
            shape: lv.shape().to_vec(),
            data: vec![1.0],
        });
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node<'_>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(g.data(), tb.data(), &mut da, m, n, k);
                    acc(*a, Tensor::matrix(m, k, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(ta.data(), g.data(), &mut db, m, k, n);
                    acc(*b, Tensor::matrix(k, n, db));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (g.shape()[0], g.shape()[1]);
                let mut d = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        d[j * n + i] = g.data()[i * m + j];
                    }
                }
                acc(*a, Tensor::matrix(m, n, d));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                if needs(*b) {
                    let tb = self.value(*b);
                    if tb.shape() == g.shape() {
                        acc(*b, g.clone());
                    } else {
                        let mut d = vec![0.0; tb.len()];
                        col_sum_acc(g.data(), &mut d, g.rows(), g.cols());
                        acc(*b, Tensor { shape: tb.shape().to_vec(), data: d });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor { shape: g.shape().to_vec(), data: d });
                }
                if needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    acc(*b, Tensor { shape: g.shape().to_vec(), data: d });
                }
            }
            Op::Scale(a, f) => {
                let d = g.data().iter().map(|x| x * f).collect();
                acc(*a, Tensor { shape: g.shape().to_vec(), data: d });
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (r, i, o) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
                if needs(*x) {
                    let mut dx = vec![0.0; r * i];
                    matmul_nt_acc(g.data(), tw.data(), &mut dx, r, o, i);
                    acc(*x, Tensor::matrix(r, i, dx));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; i * o];
                    matmul_tn_acc(tx.data(), g.data(), &mut dw, r, i, o);
                    acc(*w, Tensor::matrix(i, o, dw));
                }
                if needs(*b) {
                    let tb = self.value(*b);
                    let mut db = vec![0.0; o];
                    col_sum_acc(g.data(), &mut db, r, o);
                    acc(*b, Tensor { shape: tb.shape().to_vec(), data: db });
                }
            }
            Op::Conv1d { x, kernel, bias, dilation } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let (t_len, cin) = (tx.shape()[0], tx.shape()[1]);
                let (taps, cout) = (tk.shape()[0], tk.shape()[2]);
                let mut dx = needs(*x).then(|| vec![0.0; t_len * cin]);
                let mut dk = needs(*kernel).then(|| vec![0.0; taps * cin * cout]);
                for j in 0..taps {
                    let shift = (taps - 1 - j) * dilation;
                    if shift >= t_len {
                        continue;
                    }
                    let rows = t_len - shift;
                    let gs = &g.data()[shift * cout..];
                    if let Some(dk) = dk.as_mut() {
                        let dkj = &mut dk[j * cin * cout..(j + 1) * cin * cout];
                        matmul_tn_acc(&tx.data()[..rows * cin], gs, dkj, rows, cin, cout);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let kj = &tk.data()[j * cin * cout..(j + 1) * cin * cout];
                        matmul_nt_acc(gs, kj, &mut dx[..rows * cin], rows, cout, cin);
                    }
                }
                if let Some(dx) = dx {
                    acc(*x, Tensor::matrix(t_len, cin, dx));
                }
                if let Some(dk) = dk {
                    acc(*kernel, Tensor { shape: tk.shape().to_vec(), data: dk });
                }
                if needs(*bias) {
                    let mut db = vec![0.0; cout];
                    col_sum_acc(g.data(), &mut db, t_len, cout);
                    acc(*bias, Tensor { shape: self.value(*bias).shape().to_vec(), data: db });
                }
            }
            Op::Gated(x) => {
                let tx = self.value(*x);
                let (r, c2) = (tx.shape()[0], tx.shape()[1]);
                let c = c2 / 2;
                let mut d = vec![0.0; r * c2];
                for i in 0..r {
                    let row = &tx.data()[i * c2..(i + 1) * c2];
                    for k in 0..c {
                        let th = row[k].tanh();
                        let sg = sigmoid(row[c + k]);
                        let gv = g.data()[i * c + k];
                        d[i * c2 + k] = gv * sg * (1.0 - th * th);
                        d[i * c2 + c + k] = gv * th * sg * (1.0 - sg);
                    }
                }
                acc(*x, Tensor::matrix(r, c2, d));
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*x, Tensor { shape: g.shape().to_vec(), data: d });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let tg = self.value(*gamma);
                let (r, c) = (g.shape()[0], g.shape()[1]);
                if needs(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        let dh: Vec<f64> = gr.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let f = inv_std[i] / c as f64;
                        for k in 0..c {
                            dx[i * c + k] = f * (c as f64 * dh[k] - sum_dh - hr[k] * sum_dh_h);
                        }
                    }
                    acc(*x, Tensor::matrix(r, c, dx));
                }
                if needs(*gamma) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for k in 0..c {
                            dg[k] += g.data()[i * c + k] * xhat[i * c + k];
                        }
                    }
                    acc(*gamma, Tensor { shape: tg.shape().to_vec(), data: dg });
                }
                if needs(*beta) {
                    let mut db = vec![0.0; c];
                    col_sum_acc(g.data(), &mut db, r, c);
                    acc(*beta, Tensor { shape: self.value(*beta).shape().to_vec(), data: db });
                }
            }
            Op::Softmax { x, axis } => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                let (outer, inner, stride, step) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                for o in 0..outer {
                    let idx = |i: usize| o * stride + i * step;
                    let dot: f64 = (0..inner).map(|i| g.data()[idx(i)] * y[idx(i)]).sum();
                    for i in 0..inner {
                        d[idx(i)] = y[idx(i)] * (g.data()[idx(i)] - dot);
                    }
                }
                acc(*x, Tensor { shape: out.shape().to_vec(), data: d });
            }
            Op::Mean { x, axis } => {
                let tx = self.value(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for k in 0..c {
                        d[i * c + k] = match axis {
                            0 => g.data()[k] / r as f64,
                            _ => g.data()[i] / c as f64,
                        };
                    }
                }
                acc(*x, Tensor::matrix(r, c, d));
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                acc(*x, Tensor { shape: tx.shape().to_vec(), data: vec![g.item(); tx.len()] });
            }
            Op::Concat { parts, axis } => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let (pr, pc) = (tp.rows(), tp.cols());
                    let d = match axis {
                        0 => g.data()[offset * cols..(offset + pr) * cols].to_vec(),
                        _ => {
                            let mut d = Vec::with_capacity(pr * pc);
                            for i in 0..pr {
                                d.extend_from_slice(&g.data()[i * cols + offset..i * cols + offset + pc]);
                            }
                            d
                        }
                    };
                    offset += if *axis == 0 { pr } else { pc };
                    acc(p, Tensor::matrix(pr, pc, d));
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                let len = g.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                acc(*x, Tensor::matrix(r, c, d));
            }
            Op::CrossEntropy { p, target } => {
                let tp = self.value(*p);
                let mut d = vec![0.0; tp.len()];
                let pt = tp.data()[*target];
                if pt > PROB_FLOOR {
                    d[*target] = -g.item() / pt;
                }
                acc(*p, Tensor { shape: tp.shape().to_vec(), data: d });
            }
        }
    }

    /// Parameter leaves created on this tape.
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }
}

/// Gradients from one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Flat per-parameter gradients aligned with `params`; parameters not
    /// reached from the loss get zeros.
    pub fn for_params(&self, tape: &Tape<'_>, params: &Params) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        for &(id, var) in tape.param_vars() {
            if let Some(g) = self.wrt(var) {
                out[id.0] = g.clone();
            }
        }
        out
    }
}

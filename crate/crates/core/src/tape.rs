//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose parents were recorded earlier, so the
//! node list is already in topological order and `backward` is a single
//! reverse sweep. Reductions run in a fixed order, so gradients are
//! bit-reproducible for identical inputs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{normalize_row, transpose_into, Lanes, MatmulPlan, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var, MatmulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var, usize),
    Concat(Vec<Var>),
    Index(Var, usize),
    Reshape(Var),
    SliceRows(Var, usize),
    GaussianLogits {
        q: Var,
        centers: Var,
        widths: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints of every node reached by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Leaf => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// A tracked input that receives a gradient but is not a stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, &[]);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Records a parameter leaf; repeated calls for the same id reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, &[]);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let plan = MatmulPlan::new(ta.shape(), tb.shape())?;
        let mut out = vec![0.0; plan.out_len()];
        plan.forward(ta.data(), tb.data(), &mut out);
        let t = Tensor::new(plan.out_shape.clone(), out)?;
        Ok(self.push(t, Op::MatMul(a, b, plan), &[a, b]))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.zip_with(tb, f).map_err(|_| shape_err(name, ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector of length `C` to every row of a `[.., C]` tensor.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        if tb.shape() != [c] {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(softplus);
        self.push(t, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a).softmax(axis)?;
        Ok(self.push(t, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let lanes = Lanes::new(ta.shape(), axis)?;
        if !ta.is_finite() {
            return Err(Error::Numeric("log_softmax input is not finite".into()));
        }
        let mut out = ta.data().to_vec();
        lanes.for_each(|idx| {
            let max = idx.iter().fold(f64::NEG_INFINITY, |m, &i| m.max(out[i]));
            let lse = max + idx.iter().map(|&i| (out[i] - max).exp()).sum::<f64>().ln();
            for &i in &idx {
                out[i] -= lse;
            }
        });
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LogSoftmax(a, axis), &[a]))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = Vec::with_capacity(tx.numel() / c);
        for (row, out) in tx.data().chunks(c).zip(xhat.chunks_mut(c)) {
            rstd.push(normalize_row(row, eps, out).1);
        }
        let out: Vec<f64> = xhat
            .chunks(c)
            .flat_map(|r| {
                r.iter()
                    .zip(tg.data().iter().zip(tb.data()))
                    .map(|(v, (g, b))| v * g + b)
            })
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).t()?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let lanes = Lanes::new(ta.shape(), axis)?;
        let n = ta.shape()[axis] as f64;
        let mut out = Vec::new();
        lanes.for_each(|idx| out.push(idx.iter().map(|&i| ta.data()[i]).sum::<f64>() / n));
        let mut shape = ta.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Mean(a, axis), &[a]))
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 1 {
                return Err(Error::Contract(format!(
                    "concat expects 1-D parts, got {:?}",
                    t.shape()
                )));
            }
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), parts))
    }

    /// Picks a single flat element as a one-element tensor.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let ta = self.value(a);
        if i >= ta.numel() {
            return Err(Error::Contract(format!(
                "index {i} out of range for {:?}",
                ta.shape()
            )));
        }
        let v = ta.data()[i];
        Ok(self.push(Tensor::scalar(v), Op::Index(a, i), &[a]))
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// `[n]` to `[1, n]`.
    pub fn reshape_row(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[1, n])
    }

    /// Any shape to 1-D.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[n])
    }

    /// Rows `[start, start + len)` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 2 || start + len > ta.rows() || len == 0 {
            return Err(Error::Contract(format!(
                "slice_rows [{start}, {}) of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let c = ta.cols();
        let t = Tensor::new(vec![len, c], ta.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(t, Op::SliceRows(a, start), &[a]))
    }

    /// `out[i, r] = -Σ_d (q[i,d] - m[r,d])² / (2 σ[r,d]²)` for `q: [S, D]`,
    /// `centers, widths: [R, D]`.
    pub fn gaussian_logits(&mut self, q: Var, centers: Var, widths: Var) -> Result<Var> {
        let (tq, tm, ts) = (self.value(q), self.value(centers), self.value(widths));
        if tq.ndim() != 2 || tm.ndim() != 2 || tm.cols() != tq.cols() {
            return Err(shape_err("gaussian_logits", tq, tm));
        }
        if ts.shape() != tm.shape() {
            return Err(shape_err("gaussian_logits", tm, ts));
        }
        let t = gaussian_logits(tq, tm, ts);
        Ok(self.push(
            t,
            Op::GaussianLogits {
                q,
                centers,
                widths,
            },
            &[q, centers, widths],
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds every parameter adjoint into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        self.accumulate(&grads, store);
        Ok(())
    }

    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (id, v) in self.param_vars() {
            if let Some(g) = grads.get(v) {
                for (acc, x) in store.get_mut(id).grad.data_mut().iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
    }

    /// Parameter leaves in id order (fixed accumulation order).
    fn param_vars(&self) -> Vec<(ParamId, Var)> {
        let mut v: Vec<_> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b, plan) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.grad_buf(grads, *a) {
                    plan.backward(ta, tb, g, Some(da), None);
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    plan.backward(ta, tb, g, None, Some(db));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.grad_buf(grads, v) {
                        axpy(d, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(d, g, 1.0);
                }
                if let Some(d) = self.grad_buf(grads, *b) {
                    axpy(d, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * tb[i];
                    }
                }
                if let Some(d) = self.grad_buf(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += g[i] * ta[i];
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(d, g, 1.0);
                }
                if let Some(d) = self.grad_buf(grads, *bias) {
                    let c = d.len();
                    for row in g.chunks(c) {
                        axpy(d, row, 1.0);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(d, g, *c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(d, g, 1.0);
                }
            }
            Op::Relu(a) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        if y[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * sigmoid(x[i]);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i];
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += 2.0 * g[i] * x[i];
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let lanes = Lanes::new(node.value.shape(), *axis).expect("validated");
                if let Some(d) = self.grad_buf(grads, *a) {
                    lanes.for_each(|idx| {
                        let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in &idx {
                            d[i] += y[i] * (g[i] - dot);
                        }
                    });
                }
            }
            Op::LogSoftmax(a, axis) => {
                let lanes = Lanes::new(node.value.shape(), *axis).expect("validated");
                if let Some(d) = self.grad_buf(grads, *a) {
                    lanes.for_each(|idx| {
                        let total: f64 = idx.iter().map(|&i| g[i]).sum();
                        for &i in &idx {
                            d[i] += g[i] - y[i].exp() * total;
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = self.value(*gamma).data();
                let c = gm.len();
                if let Some(d) = self.grad_buf(grads, *x) {
                    let mut dxhat = vec![0.0; c];
                    for (r, (grow, xrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        for j in 0..c {
                            dxhat[j] = grow[j] * gm[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let drow = &mut d[r * c..(r + 1) * c];
                        for j in 0..c {
                            drow[j] += rstd[r] * (dxhat[j] - m1 - xrow[j] * m2);
                        }
                    }
                }
                if let Some(d) = self.grad_buf(grads, *gamma) {
                    for (grow, xrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                }
                if let Some(d) = self.grad_buf(grads, *beta) {
                    for grow in g.chunks(c) {
                        axpy(d, grow, 1.0);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(d) = self.grad_buf(grads, *a) {
                    let mut tmp = vec![0.0; r * c];
                    transpose_into(g, r, c, &mut tmp);
                    axpy(d, &tmp, 1.0);
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(a, axis) => {
                let shape = self.value(*a).shape();
                let lanes = Lanes::new(shape, *axis).expect("validated");
                let n = shape[*axis] as f64;
                if let Some(d) = self.grad_buf(grads, *a) {
                    let mut k = 0;
                    lanes.for_each(|idx| {
                        for &i in &idx {
                            d[i] += g[k] / n;
                        }
                        k += 1;
                    });
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(d) = self.grad_buf(grads, p) {
                        axpy(d, &g[off..off + n], 1.0);
                    }
                    off += n;
                }
            }
            Op::Index(a, i) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    d[*i] += g[0];
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(d, g, 1.0);
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.value.cols();
                if let Some(d) = self.grad_buf(grads, *a) {
                    axpy(&mut d[start * c..start * c + g.len()], g, 1.0);
                }
            }
            Op::GaussianLogits {
                q,
                centers,
                widths,
            } => {
                let (tq, tm, ts) = (self.value(*q), self.value(*centers), self.value(*widths));
                let (s, dim) = (tq.rows(), tq.cols());
                let r = tm.rows();
                let (qd, md, sd) = (tq.data(), tm.data(), ts.data());
                let inv2: Vec<f64> = sd.iter().map(|v| 1.0 / (v * v)).collect();
                let mut dq = self.nodes[q.0].needs_grad.then(|| vec![0.0; s * dim]);
                let mut dm = self.nodes[centers.0].needs_grad.then(|| vec![0.0; r * dim]);
                let mut ds = self.nodes[widths.0].needs_grad.then(|| vec![0.0; r * dim]);
                for i in 0..s {
                    let qrow = &qd[i * dim..(i + 1) * dim];
                    for k in 0..r {
                        let gv = g[i * r + k];
                        if gv == 0.0 {
                            continue;
                        }
                        for j in 0..dim {
                            let idx = k * dim + j;
                            let diff = qrow[j] - md[idx];
                            let t = gv * diff * inv2[idx];
                            if let Some(dq) = dq.as_mut() {
                                dq[i * dim + j] -= t;
                            }
                            if let Some(dm) = dm.as_mut() {
                                dm[idx] += t;
                            }
                            if let Some(ds) = ds.as_mut() {
                                ds[idx] += t * diff / sd[idx];
                            }
                        }
                    }
                }
                for (v, local) in [(*q, dq), (*centers, dm), (*widths, ds)] {
                    if let (Some(local), Some(d)) = (local, self.grad_buf(grads, v)) {
                        axpy(d, &local, 1.0);
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gaussian_logits(q: &Tensor, m: &Tensor, s: &Tensor) -> Tensor {
    let (rows, dim) = (q.rows(), q.cols());
    let r = m.rows();
    let inv: Vec<f64> = s.data().iter().map(|v| 0.5 / (v * v)).collect();
    let mut out = vec![0.0; rows * r];
    for i in 0..rows {
        let qrow = q.row(i);
        for k in 0..r {
            let mrow = m.row(k);
            let irow = &inv[k * dim..(k + 1) * dim];
            let mut acc = 0.0;
            for j in 0..dim {
                let d = qrow[j] - mrow[j];
                acc += d * d * irow[j];
            }
            out[i * r + k] = -acc;
        }
    }
    Tensor::new(vec![rows, r], out).expect("shape")
}

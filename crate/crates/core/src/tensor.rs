//! Dense row-major `f64` tensors and the eager (untracked) kernels shared by
//! the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut t = Self::zeros(&[n, n]);
        for (i, &v) in values.iter().enumerate() {
            t.data[i * n + i] = v;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Second-to-last dimension (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[self.shape.len() - 2]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank");
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(Error::Contract(format!(
                "transpose expects 2-D, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        transpose_into(&self.data, r, c, &mut out);
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = vec![0.0; plan.out_len()];
        plan.forward(&self.data, &other.data, &mut out);
        Tensor::new(plan.out_shape.clone(), out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "elementwise",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let lanes = Lanes::new(&self.shape, axis)?;
        if self.data.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut out = self.data.clone();
        lanes.for_each(|idx| softmax_lane(&mut out, &idx));
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let c = self.cols();
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let mut out = vec![0.0; self.numel()];
        for (x, y) in self.data.chunks(c).zip(out.chunks_mut(c)) {
            normalize_row(x, eps, y);
            for j in 0..c {
                y[j] = y[j] * gamma.data[j] + beta.data[j];
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }
}

/// Writes `(x - mean) / sqrt(var + eps)` into `out`; returns `(mean, 1/std)`.
pub(crate) fn normalize_row(x: &[f64], eps: f64, out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + eps).sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mean) * rstd;
    }
    (mean, rstd)
}

pub(crate) fn transpose_into(src: &[f64], r: usize, c: usize, dst: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            dst[j * r + i] = src[i * c + j];
        }
    }
}

pub(crate) fn softmax_lane(buf: &mut [f64], idx: &[usize]) {
    let max = idx
        .iter()
        .fold(f64::NEG_INFINITY, |m, &i| m.max(buf[i]));
    let mut sum = 0.0;
    for &i in idx {
        let e = (buf[i] - max).exp();
        buf[i] = e;
        sum += e;
    }
    for &i in idx {
        buf[i] /= sum;
    }
}

/// Enumerates the index sets of every 1-D lane along one axis.
pub(crate) struct Lanes {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Lanes {
    pub(crate) fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    pub(crate) fn for_each(&self, mut f: impl FnMut(Vec<usize>)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                let base = o * self.len * self.inner + i;
                f((0..self.len).map(|k| base + k * self.inner).collect());
            }
        }
    }
}

/// Shape bookkeeping for `[.., n, k] x [.., k, m]` with broadcastable batch.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || Error::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (n, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, m) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch_dims = match (ab.is_empty(), bb.is_empty()) {
            (true, true) => vec![],
            (false, true) => ab.to_vec(),
            (true, false) => bb.to_vec(),
            (false, false) if ab == bb => ab.to_vec(),
            _ => return Err(err()),
        };
        let batch = batch_dims.iter().product::<usize>().max(1);
        let mut out_shape = batch_dims;
        out_shape.extend([n, m]);
        Ok(Self {
            batch,
            a_batched: !ab.is_empty(),
            b_batched: !bb.is_empty(),
            n,
            k,
            m,
            out_shape,
        })
    }

    pub(crate) fn out_len(&self) -> usize {
        self.batch * self.n * self.m
    }

    fn a_off(&self, b: usize) -> usize {
        if self.a_batched {
            b * self.n * self.k
        } else {
            0
        }
    }

    fn b_off(&self, b: usize) -> usize {
        if self.b_batched {
            b * self.k * self.m
        } else {
            0
        }
    }

    pub(crate) fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (n, k, m) = (self.n, self.k, self.m);
        for bi in 0..self.batch {
            let a = &a[self.a_off(bi)..self.a_off(bi) + n * k];
            let b = &b[self.b_off(bi)..self.b_off(bi) + k * m];
            let c = &mut out[bi * n * m..(bi + 1) * n * m];
            for i in 0..n {
                let crow = &mut c[i * m..(i + 1) * m];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * m..(p + 1) * m];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
    }

    /// Accumulates `dA += dC·Bᵀ` and `dB += Aᵀ·dC` (summing over broadcast batch).
    pub(crate) fn backward(
        &self,
        a: &[f64],
        b: &[f64],
        dc: &[f64],
        da: Option<&mut [f64]>,
        db: Option<&mut [f64]>,
    ) {
        let (n, k, m) = (self.n, self.k, self.m);
        if let Some(da) = da {
            for bi in 0..self.batch {
                let b = &b[self.b_off(bi)..self.b_off(bi) + k * m];
                let dc = &dc[bi * n * m..(bi + 1) * n * m];
                let off = self.a_off(bi);
                let da = &mut da[off..off + n * k];
                for i in 0..n {
                    let dcrow = &dc[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &b[p * m..(p + 1) * m];
                        let mut s = 0.0;
                        for (x, y) in dcrow.iter().zip(brow) {
                            s += x * y;
                        }
                        da[i * k + p] += s;
                    }
                }
            }
        }
        if let Some(db) = db {
            for bi in 0..self.batch {
                let a = &a[self.a_off(bi)..self.a_off(bi) + n * k];
                let dc = &dc[bi * n * m..(bi + 1) * n * m];
                let off = self.b_off(bi);
                let db = &mut db[off..off + k * m];
                for i in 0..n {
                    let dcrow = &dc[i * m..(i + 1) * m];
                    for p in 0..k {
                        let av = a[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * m..(p + 1) * m];
                        for (d, g) in dbrow.iter_mut().zip(dcrow) {
                            *d += av * g;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_projector() {
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&b).unwrap(), b);
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(p.matmul(&v).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn batched_matmul_broadcasts_rhs() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::vector(vec![0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::vector(vec![1000.0; 3]).softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::vector(vec![0.0, 3f64.ln()]).softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert!(Tensor::vector(vec![f64::NAN, 0.0]).softmax(0).is_err());
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = x.softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::filled(&[3], 1.0);
        let b = Tensor::zeros(&[3]);
        let y = Tensor::vector(vec![5.0; 3]).layer_norm(&g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 3]);
        let g = Tensor::filled(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let y = Tensor::vector(vec![1.0, -1.0]).layer_norm(&g, &b, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-15);
        assert!((y.data()[1] + expect).abs() < 1e-15);
    }
}

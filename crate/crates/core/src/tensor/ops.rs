//! Elementwise, reduction and linear-algebra ops with their backward rules.

use super::matmul::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{numel_of, Tensor};
use crate::error::{Error, Result};

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// outer/inner decomposition for a reduction axis.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tensor {
    fn binary_elementwise(
        &self,
        other: &Tensor,
        name: &'static str,
        fwd: impl Fn(f64, f64) -> f64,
        dfda: impl Fn(f64, f64) -> f64 + 'static,
        dfdb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        check_same_shape(name, self, other)?;
        let a = self.clone();
        let b = other.clone();
        let out: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| fwd(x, y))
            .collect();
        let (ac, bc) = (a.clone(), b.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![a, b],
            Box::new(move |g| {
                let ad = ac.data();
                let bd = bc.data();
                if ac.requires_grad() {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(&gi, (&x, &y))| gi * dfda(x, y))
                        .collect();
                    drop(ad);
                    ac.accumulate_grad(&delta);
                    if bc.requires_grad() {
                        let ad2 = ac.data();
                        let delta_b: Vec<f64> = g
                            .iter()
                            .zip(ad2.iter().zip(bd.iter()))
                            .map(|(&gi, (&x, &y))| gi * dfdb(x, y))
                            .collect();
                        drop(ad2);
                        drop(bd);
                        bc.accumulate_grad(&delta_b);
                    }
                } else if bc.requires_grad() {
                    let delta_b: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(&gi, (&x, &y))| gi * dfdb(x, y))
                        .collect();
                    drop(ad);
                    drop(bd);
                    bc.accumulate_grad(&delta_b);
                }
            }),
            name,
        )
    }

    fn unary_elementwise(
        &self,
        name: &'static str,
        fwd: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let a = self.clone();
        let out: Vec<f64> = a.data().iter().map(|&x| fwd(x)).collect();
        let ac = a.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let ad = ac.data();
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(ad.iter())
                        .map(|(&gi, &x)| gi * dfdx(x))
                        .collect();
                    drop(ad);
                    ac.accumulate_grad(&delta);
                }
            }),
            name,
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(
            other,
            "div",
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise minimum; gradient routes to the smaller input (first on ties).
    pub fn min_elem(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(
            other,
            "min_elem",
            f64::min,
            |a, b| if a <= b { 1.0 } else { 0.0 },
            |a, b| if a <= b { 0.0 } else { 1.0 },
        )
    }

    /// Elementwise maximum; gradient routes to the larger input (first on ties).
    pub fn max_elem(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(
            other,
            "max_elem",
            f64::max,
            |a, b| if a >= b { 1.0 } else { 0.0 },
            |a, b| if a >= b { 0.0 } else { 1.0 },
        )
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary_elementwise("neg", |x| -x, |_| -1.0)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary_elementwise("scale", move |x| c * x, move |_| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary_elementwise("add_scalar", move |x| x + c, |_| 1.0)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary_elementwise("relu", |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary_elementwise(
            "sigmoid",
            sigmoid_scalar,
            |x| {
                let s = sigmoid_scalar(x);
                s * (1.0 - s)
            },
        )
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary_elementwise("sqrt", f64::sqrt, |x| 0.5 / x.sqrt())
    }

    pub fn atan(&self) -> Result<Tensor> {
        self.unary_elementwise("atan", f64::atan, |x| 1.0 / (1.0 + x * x))
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary_elementwise("square", |x| x * x, |x| 2.0 * x)
    }

    /// Sum of all elements -> scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let a = self.clone();
        let total: f64 = a.data().iter().sum();
        let ac = a.clone();
        let n = a.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    ac.accumulate_grad(&vec![g[0]; n]);
                }
            }),
            "sum",
        )
    }

    /// Mean of all elements -> scalar.
    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over one axis (axis removed from the shape).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "sum_axis: axis {axis} out of range for {:?}",
                shape
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..len {
                    let base = (o * len + i) * inner;
                    let out_base = o * inner;
                    for j in 0..inner {
                        out[out_base + j] += d[base + j];
                    }
                }
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let a = self.clone();
        let ac = a.clone();
        Tensor::from_op(
            out_shape,
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let mut delta = vec![0.0; ac.numel()];
                    for o in 0..outer {
                        for i in 0..len {
                            let base = (o * len + i) * inner;
                            let g_base = o * inner;
                            delta[base..base + inner].copy_from_slice(&g[g_base..g_base + inner]);
                        }
                    }
                    ac.accumulate_grad(&delta);
                }
            }),
            "sum_axis",
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "softmax: axis {axis} out of range for {:?}",
                shape
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + j;
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..len {
                        mx = mx.max(d[idx(i)]);
                    }
                    let mut z = 0.0;
                    for i in 0..len {
                        let e = (d[idx(i)] - mx).exp();
                        out[idx(i)] = e;
                        z += e;
                    }
                    for i in 0..len {
                        out[idx(i)] /= z;
                    }
                }
            }
        }
        let a = self.clone();
        let ac = a.clone();
        let y = out.clone();
        Tensor::from_op(
            shape,
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let mut delta = vec![0.0; ac.numel()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let mut dot = 0.0;
                            for i in 0..len {
                                dot += g[idx(i)] * y[idx(i)];
                            }
                            for i in 0..len {
                                delta[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                    ac.accumulate_grad(&delta);
                }
            }),
            "softmax",
        )
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "log_softmax: axis {axis} out of range for {:?}",
                shape
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + j;
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..len {
                        mx = mx.max(d[idx(i)]);
                    }
                    let mut z = 0.0;
                    for i in 0..len {
                        z += (d[idx(i)] - mx).exp();
                    }
                    let lse = mx + z.ln();
                    for i in 0..len {
                        out[idx(i)] = d[idx(i)] - lse;
                    }
                }
            }
        }
        let a = self.clone();
        let ac = a.clone();
        let y = out.clone();
        Tensor::from_op(
            shape,
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let mut delta = vec![0.0; ac.numel()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + j;
                            let mut gsum = 0.0;
                            for i in 0..len {
                                gsum += g[idx(i)];
                            }
                            for i in 0..len {
                                delta[idx(i)] = g[idx(i)] - y[idx(i)].exp() * gsum;
                            }
                        }
                    }
                    ac.accumulate_grad(&delta);
                }
            }),
            "log_softmax",
        )
    }

    /// Reshape to a new shape with the same element count. Values are copied;
    /// gradient passes through unchanged.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if numel_of(new_shape) != self.numel() {
            return Err(Error::shape(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                new_shape
            )));
        }
        let a = self.clone();
        let out = a.to_vec();
        let ac = a.clone();
        Tensor::from_op(
            new_shape.to_vec(),
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    ac.accumulate_grad(g);
                }
            }),
            "reshape",
        )
    }

    /// 2-D matrix product: (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dims differ ({k} vs {k2})"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.data(), &other.data(), &mut out, m, k, n);
        let a = self.clone();
        let b = other.clone();
        let (ac, bc) = (a.clone(), b.clone());
        Tensor::from_op(
            vec![m, n],
            out,
            vec![a, b],
            Box::new(move |g| {
                if ac.requires_grad() {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(g, &bc.data(), &mut da, m, n, k);
                    ac.accumulate_grad(&da);
                }
                if bc.requires_grad() {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(&ac.data(), g, &mut db, m, k, n);
                    bc.accumulate_grad(&db);
                }
            }),
            "matmul",
        )
    }

    /// Fully connected layer: x (n, in) with weight (out, in) and bias (out).
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, in_f) = self.dims2()?;
        let (out_f, in_w) = weight.dims2()?;
        if in_f != in_w {
            return Err(Error::shape(format!(
                "linear: input features {in_f} != weight features {in_w}"
            )));
        }
        if bias.shape() != [out_f] {
            return Err(Error::shape(format!(
                "linear: bias shape {:?} != [{out_f}]",
                bias.shape()
            )));
        }
        let mut out = vec![0.0; n * out_f];
        matmul_nt_acc(&self.data(), &weight.data(), &mut out, n, in_f, out_f);
        {
            let bd = bias.data();
            for row in out.chunks_mut(out_f) {
                for (o, b) in row.iter_mut().zip(bd.iter()) {
                    *o += b;
                }
            }
        }
        let x = self.clone();
        let w = weight.clone();
        let b = bias.clone();
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        Tensor::from_op(
            vec![n, out_f],
            out,
            vec![x, w, b],
            Box::new(move |g| {
                if xc.requires_grad() {
                    // dX = dY * W
                    let mut dx = vec![0.0; n * in_f];
                    matmul_acc(g, &wc.data(), &mut dx, n, out_f, in_f);
                    xc.accumulate_grad(&dx);
                }
                if wc.requires_grad() {
                    // dW = dY^T * X
                    let mut dw = vec![0.0; out_f * in_f];
                    matmul_tn_acc(g, &xc.data(), &mut dw, n, out_f, in_f);
                    wc.accumulate_grad(&dw);
                }
                if bc.requires_grad() {
                    let mut db = vec![0.0; out_f];
                    for row in g.chunks(out_f) {
                        for (d, gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    bc.accumulate_grad(&db);
                }
            }),
            "linear",
        )
    }

    /// Extract column `col` of a rank-2 tensor -> rank-1.
    pub fn col(&self, col: usize) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        if col >= k {
            return Err(Error::shape(format!("col {col} out of range for {:?}", self.shape())));
        }
        let out: Vec<f64> = {
            let d = self.data();
            (0..m).map(|i| d[i * k + col]).collect()
        };
        let a = self.clone();
        let ac = a.clone();
        Tensor::from_op(
            vec![m],
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let mut delta = vec![0.0; m * k];
                    for i in 0..m {
                        delta[i * k + col] = g[i];
                    }
                    ac.accumulate_grad(&delta);
                }
            }),
            "col",
        )
    }

    /// Gather per-cell feature vectors from an (n, c, h, w) tensor.
    /// Each index is (batch, row, col); the output is (len(cells), c).
    pub fn gather_cells(&self, cells: &[(usize, usize, usize)]) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        for &(bi, y, x) in cells {
            if bi >= n || y >= h || x >= w {
                return Err(Error::shape(format!(
                    "gather_cells: index ({bi},{y},{x}) out of range for {:?}",
                    self.shape()
                )));
            }
        }
        let m = cells.len();
        let mut out = vec![0.0; m * c];
        {
            let d = self.data();
            for (mi, &(bi, y, x)) in cells.iter().enumerate() {
                for ci in 0..c {
                    out[mi * c + ci] = d[((bi * c + ci) * h + y) * w + x];
                }
            }
        }
        let a = self.clone();
        let ac = a.clone();
        let cells: Vec<(usize, usize, usize)> = cells.to_vec();
        Tensor::from_op(
            vec![m, c],
            out,
            vec![a],
            Box::new(move |g| {
                if ac.requires_grad() {
                    let mut delta = vec![0.0; ac.numel()];
                    for (mi, &(bi, y, x)) in cells.iter().enumerate() {
                        for ci in 0..c {
                            delta[((bi * c + ci) * h + y) * w + x] += g[mi * c + ci];
                        }
                    }
                    ac.accumulate_grad(&delta);
                }
            }),
            "gather_cells",
        )
    }

    /// Elementwise binary cross-entropy on logits:
    /// `max(x,0) - x*t + ln(1 + exp(-|x|))`, gradient `sigmoid(x) - t`.
    pub fn bce_with_logits(&self, targets: &Tensor) -> Result<Tensor> {
        check_same_shape("bce_with_logits", self, targets)?;
        let x = self.clone();
        let t = targets.clone();
        let out: Vec<f64> = x
            .data()
            .iter()
            .zip(t.data().iter())
            .map(|(&xi, &ti)| xi.max(0.0) - xi * ti + (1.0 + (-xi.abs()).exp()).ln())
            .collect();
        let (xc, tc) = (x.clone(), t.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![x, t],
            Box::new(move |g| {
                if xc.requires_grad() {
                    let xd = xc.data();
                    let td = tc.data();
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(xd.iter().zip(td.iter()))
                        .map(|(&gi, (&xi, &ti))| gi * (sigmoid_scalar(xi) - ti))
                        .collect();
                    drop(xd);
                    drop(td);
                    xc.accumulate_grad(&delta);
                }
                if tc.requires_grad() {
                    let xd = xc.data();
                    let delta: Vec<f64> = g.iter().zip(xd.iter()).map(|(&gi, &xi)| gi * -xi).collect();
                    drop(xd);
                    tc.accumulate_grad(&delta);
                }
            }),
            "bce_with_logits",
        )
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

//! 2-D convolution via im2col + matmul, parallel over the batch dimension.
//!
//! Per-item partial results are reduced sequentially in batch order, so the
//! output (and every gradient buffer) is bit-identical regardless of thread
//! count.

use rayon::prelude::*;

use super::matmul::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::Tensor;
use crate::error::{Error, Result};

/// Per-batch-item backward partials: (grad_input, grad_weight).
type ConvPartials = (Option<Vec<f64>>, Option<Vec<f64>>);

pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> isize {
    (input as isize + 2 * padding as isize - kernel as isize) / stride as isize + 1
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn spatial_out(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let spatial = oh * ow;
    for c in 0..g.c_in {
        let chan = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, x_grad: &mut [f64]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let spatial = oh * ow;
    for c in 0..g.c_in {
        let chan = &mut x_grad[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * spatial..(row + 1) * spatial];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            chan[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution. `weight` is (c_out, c_in, kh, kw); output spatial dims
/// follow `(dim + 2*padding - kernel)/stride + 1`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, c_in_w, kh, kw) = weight.dims4()?;
    if c_in != c_in_w {
        return Err(Error::shape(format!(
            "conv2d: input has {c_in} channels but weight expects {c_in_w}"
        )));
    }
    if stride == 0 {
        return Err(Error::value("conv2d: stride must be positive"));
    }
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    if oh <= 0 || ow <= 0 {
        return Err(Error::shape(format!(
            "conv2d: non-positive output dims ({oh}x{ow}) for input {h}x{w} kernel {kh}x{kw}"
        )));
    }
    let (oh, ow) = (oh as usize, ow as usize);
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} != [{c_out}]",
                b.shape()
            )));
        }
    }
    let geom = ConvGeom {
        c_in,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    };
    let k = geom.k();
    let spatial = geom.spatial_out();
    let in_sz = c_in * h * w;
    let out_sz = c_out * spatial;

    let bias_data = bias.map(|b| b.to_vec());
    let out: Vec<Vec<f64>> = {
        let x_ref = input.data();
        let w_ref = weight.data();
        let x: &[f64] = x_ref.as_slice();
        let wd: &[f64] = w_ref.as_slice();
        (0..n)
            .into_par_iter()
            .map(|ni| {
                let mut cols = vec![0.0; k * spatial];
                im2col(&x[ni * in_sz..(ni + 1) * in_sz], &geom, &mut cols);
                let mut o = vec![0.0; out_sz];
                matmul_acc(wd, &cols, &mut o, c_out, k, spatial);
                if let Some(b) = &bias_data {
                    for (c, bv) in b.iter().enumerate() {
                        for v in &mut o[c * spatial..(c + 1) * spatial] {
                            *v += bv;
                        }
                    }
                }
                o
            })
            .collect()
    };
    let mut out_flat = Vec::with_capacity(n * out_sz);
    for o in out {
        out_flat.extend_from_slice(&o);
    }

    let xt = input.clone();
    let wt = weight.clone();
    let bt = bias.cloned();
    let mut parents = vec![xt.clone(), wt.clone()];
    if let Some(b) = &bt {
        parents.push(b.clone());
    }
    Tensor::from_op(
        vec![n, c_out, oh, ow],
        out_flat,
        parents,
        Box::new(move |g| {
            let need_dx = xt.requires_grad();
            let need_dw = wt.requires_grad();
            let x_ref = xt.data();
            let w_ref = wt.data();
            let x: &[f64] = x_ref.as_slice();
            let wd: &[f64] = w_ref.as_slice();
            // (dx_n, dw_partial_n) per batch item, reduced in order below.
            let partials: Vec<ConvPartials> = (0..n)
                .into_par_iter()
                .map(|ni| {
                    let g_n = &g[ni * out_sz..(ni + 1) * out_sz];
                    let mut cols = vec![0.0; k * spatial];
                    im2col(&x[ni * in_sz..(ni + 1) * in_sz], &geom, &mut cols);
                    let dw = if need_dw {
                        let mut dw = vec![0.0; c_out * k];
                        matmul_nt_acc(g_n, &cols, &mut dw, c_out, spatial, k);
                        Some(dw)
                    } else {
                        None
                    };
                    let dx = if need_dx {
                        let mut dcols = vec![0.0; k * spatial];
                        matmul_tn_acc(wd, g_n, &mut dcols, c_out, k, spatial);
                        let mut dx = vec![0.0; in_sz];
                        col2im(&dcols, &geom, &mut dx);
                        Some(dx)
                    } else {
                        None
                    };
                    (dx, dw)
                })
                .collect();
            drop(x_ref);
            drop(w_ref);
            if need_dx {
                let mut dx_full = vec![0.0; n * in_sz];
                for (ni, (dx, _)) in partials.iter().enumerate() {
                    dx_full[ni * in_sz..(ni + 1) * in_sz].copy_from_slice(dx.as_deref().unwrap());
                }
                xt.accumulate_grad(&dx_full);
            }
            if need_dw {
                let mut dw_full = vec![0.0; c_out * k];
                for (_, dw) in &partials {
                    for (acc, v) in dw_full.iter_mut().zip(dw.as_ref().unwrap()) {
                        *acc += v;
                    }
                }
                wt.accumulate_grad(&dw_full);
            }
            if let Some(b) = &bt {
                if b.requires_grad() {
                    let mut db = vec![0.0; c_out];
                    for ni in 0..n {
                        let g_n = &g[ni * out_sz..(ni + 1) * out_sz];
                        for (c, dbv) in db.iter_mut().enumerate() {
                            *dbv += g_n[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
                        }
                    }
                    b.accumulate_grad(&db);
                }
            }
        }),
        "conv2d",
    )
}

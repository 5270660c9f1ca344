//! Max and adaptive average pooling.

use super::Tensor;
use crate::error::{Error, Result};

/// Max pooling with a k x k window. Gradient routes to the first
/// (row-major) maximal element of each window.
pub fn max_pool2d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if k == 0 || stride == 0 {
        return Err(Error::value("max_pool2d: k and stride must be positive"));
    }
    if k > h || k > w {
        return Err(Error::shape(format!(
            "max_pool2d: window {k} larger than input {h}x{w}"
        )));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    {
        let d = input.data();
        for ni in 0..n {
            for ci in 0..c {
                let chan = &d[((ni * c) + ci) * h * w..((ni * c) + ci + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * stride + ky;
                                let ix = ox * stride + kx;
                                let v = chan[iy * w + ix];
                                if v > best {
                                    best = v;
                                    best_idx = iy * w + ix;
                                }
                            }
                        }
                        let o = ((ni * c + ci) * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = (ni * c + ci) * h * w + best_idx;
                    }
                }
            }
        }
    }
    let xt = input.clone();
    let xc = xt.clone();
    Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![xt],
        Box::new(move |g| {
            if xc.requires_grad() {
                let mut delta = vec![0.0; xc.numel()];
                for (gi, &src) in g.iter().zip(argmax.iter()) {
                    delta[src] += gi;
                }
                xc.accumulate_grad(&delta);
            }
        }),
        "max_pool2d",
    )
}

/// Window bounds for adaptive pooling: [floor(i*in/out), ceil((i+1)*in/out)).
pub(crate) fn adaptive_window(i: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let start = i * in_dim / out_dim;
    let end = ((i + 1) * in_dim).div_ceil(out_dim);
    (start, end)
}

/// Adaptive average pooling to an (out_h, out_w) spatial size.
pub fn adaptive_avg_pool2d(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::value("adaptive_avg_pool2d: zero output dims"));
    }
    if out_h > h || out_w > w {
        return Err(Error::shape(format!(
            "adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}"
        )));
    }
    let mut out = vec![0.0; n * c * out_h * out_w];
    {
        let d = input.data();
        for ni in 0..n {
            for ci in 0..c {
                let chan = &d[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                for oy in 0..out_h {
                    let (y0, y1) = adaptive_window(oy, h, out_h);
                    for ox in 0..out_w {
                        let (x0, x1) = adaptive_window(ox, w, out_w);
                        let mut s = 0.0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                s += chan[y * w + x];
                            }
                        }
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        out[((ni * c + ci) * out_h + oy) * out_w + ox] = s / count;
                    }
                }
            }
        }
    }
    let xt = input.clone();
    let xc = xt.clone();
    Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![xt],
        Box::new(move |g| {
            if xc.requires_grad() {
                let mut delta = vec![0.0; xc.numel()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        for oy in 0..out_h {
                            let (y0, y1) = adaptive_window(oy, h, out_h);
                            for ox in 0..out_w {
                                let (x0, x1) = adaptive_window(ox, w, out_w);
                                let count = ((y1 - y0) * (x1 - x0)) as f64;
                                let gv = g[((ni * c + ci) * out_h + oy) * out_w + ox] / count;
                                for y in y0..y1 {
                                    for x in x0..x1 {
                                        delta[base + y * w + x] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                xc.accumulate_grad(&delta);
            }
        }),
        "adaptive_avg_pool2d",
    )
}

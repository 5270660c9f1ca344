//! Differentiable spatial primitives: affine grid generation and bilinear
//! grid sampling.
//!
//! Coordinates are normalized to [-1, 1] with align-corners semantics: -1
//! and +1 are the centers of the first and last pixels along each axis.
//! Sampling coordinates that land within `SNAP_EPS` pixels of a lattice
//! point are snapped onto it, which makes identity warps reproduce their
//! input bit-exactly instead of mixing in ~1e-14 of a neighboring pixel.

use super::Tensor;
use crate::error::{Error, Result};

/// Pixel-space snapping radius for bilinear sampling.
const SNAP_EPS: f64 = 1e-6;

/// Normalized coordinate of index `i` on an align-corners lattice of `len`
/// points; a single-point lattice sits at 0.
pub fn lattice_coord(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        let half = (len - 1) as f64 / 2.0;
        i as f64 / half - 1.0
    }
}

/// Build per-pixel source coordinates from per-item affine parameters.
///
/// `theta` is (n, 6) laid out as (t11, t12, t13, t21, t22, t23); the output
/// is (n, 2, out_h, out_w) where channel 0 holds x_s and channel 1 holds
/// y_s, each computed as the affine image of the regular target lattice:
/// x_s = t11*x_t + t12*y_t + t13, y_s = t21*x_t + t22*y_t + t23.
pub fn affine_grid(theta: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, six) = theta.dims2()?;
    if six != 6 {
        return Err(Error::shape(format!(
            "affine_grid: theta must be (n, 6), got {:?}",
            theta.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::value("affine_grid: zero output dims"));
    }
    if theta.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::value("affine_grid: non-finite theta"));
    }
    let spatial = out_h * out_w;
    let mut out = vec![0.0; n * 2 * spatial];
    {
        let t = theta.data();
        for ni in 0..n {
            let th = &t[ni * 6..(ni + 1) * 6];
            let base = ni * 2 * spatial;
            for iy in 0..out_h {
                let yt = lattice_coord(iy, out_h);
                for ix in 0..out_w {
                    let xt = lattice_coord(ix, out_w);
                    let p = iy * out_w + ix;
                    out[base + p] = th[0] * xt + th[1] * yt + th[2];
                    out[base + spatial + p] = th[3] * xt + th[4] * yt + th[5];
                }
            }
        }
    }
    let tt = theta.clone();
    let tc = tt.clone();
    Tensor::from_op(
        vec![n, 2, out_h, out_w],
        out,
        vec![tt],
        Box::new(move |g| {
            if tc.requires_grad() {
                let mut delta = vec![0.0; n * 6];
                for ni in 0..n {
                    let base = ni * 2 * spatial;
                    let d = &mut delta[ni * 6..(ni + 1) * 6];
                    for iy in 0..out_h {
                        let yt = lattice_coord(iy, out_h);
                        for ix in 0..out_w {
                            let xt = lattice_coord(ix, out_w);
                            let p = iy * out_w + ix;
                            let gx = g[base + p];
                            let gy = g[base + spatial + p];
                            d[0] += gx * xt;
                            d[1] += gx * yt;
                            d[2] += gx;
                            d[3] += gy * xt;
                            d[4] += gy * yt;
                            d[5] += gy;
                        }
                    }
                }
                tc.accumulate_grad(&delta);
            }
        }),
        "affine_grid",
    )
}

fn to_pixel(coord: f64, len: usize) -> f64 {
    let half = (len - 1) as f64 / 2.0;
    let px = (coord + 1.0) * half;
    let rounded = px.round();
    if (px - rounded).abs() < SNAP_EPS {
        rounded
    } else {
        px
    }
}

/// Bilinear sampling of `input` (n, c, h, w) at `grid` (n, 2, out_h, out_w)
/// source coordinates. The same grid is applied to every channel; source
/// locations outside the image contribute zero (zero padding). The result
/// is differentiable w.r.t. both the input values and the grid coordinates.
pub fn grid_sample(input: &Tensor, grid: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (gn, two, oh, ow) = grid.dims4()?;
    if two != 2 {
        return Err(Error::shape(format!(
            "grid_sample: grid must be (n, 2, h, w), got {:?}",
            grid.shape()
        )));
    }
    if gn != n {
        return Err(Error::shape(format!(
            "grid_sample: batch mismatch (input {n}, grid {gn})"
        )));
    }
    let spatial = oh * ow;
    let in_spatial = h * w;
    let mut out = vec![0.0; n * c * spatial];
    {
        let x = input.data();
        let gr = grid.data();
        for ni in 0..n {
            let gbase = ni * 2 * spatial;
            for p in 0..spatial {
                let px = to_pixel(gr[gbase + p], w);
                let py = to_pixel(gr[gbase + spatial + p], h);
                let x0 = px.floor();
                let y0 = py.floor();
                let fx = px - x0;
                let fy = py - y0;
                let (x0, y0) = (x0 as isize, y0 as isize);
                // (dy, dx, weight) for the four bilinear corners
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x0 + 1, (1.0 - fy) * fx),
                    (y0 + 1, x0, fy * (1.0 - fx)),
                    (y0 + 1, x0 + 1, fy * fx),
                ];
                for ci in 0..c {
                    let chan = &x[(ni * c + ci) * in_spatial..(ni * c + ci + 1) * in_spatial];
                    let mut acc = 0.0;
                    for &(yy, xx, wgt) in &corners {
                        if wgt != 0.0 && yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            acc += wgt * chan[yy as usize * w + xx as usize];
                        }
                    }
                    out[(ni * c + ci) * spatial + p] = acc;
                }
            }
        }
    }
    let xt = input.clone();
    let gt = grid.clone();
    let (xc, gc) = (xt.clone(), gt.clone());
    Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![xt, gt],
        Box::new(move |g| {
            let need_dx = xc.requires_grad();
            let need_dg = gc.requires_grad();
            if !need_dx && !need_dg {
                return;
            }
            let x = xc.data();
            let gr = gc.data();
            let mut dx = if need_dx { vec![0.0; xc.numel()] } else { Vec::new() };
            let mut dg = if need_dg { vec![0.0; gc.numel()] } else { Vec::new() };
            let half_w = (w - 1) as f64 / 2.0;
            let half_h = (h - 1) as f64 / 2.0;
            for ni in 0..n {
                let gbase = ni * 2 * spatial;
                for p in 0..spatial {
                    let px = to_pixel(gr[gbase + p], w);
                    let py = to_pixel(gr[gbase + spatial + p], h);
                    let x0f = px.floor();
                    let y0f = py.floor();
                    let fx = px - x0f;
                    let fy = py - y0f;
                    let (x0, y0) = (x0f as isize, y0f as isize);
                    let in_x0 = x0 >= 0 && x0 < w as isize;
                    let in_x1 = x0 + 1 >= 0 && x0 + 1 < w as isize;
                    let in_y0 = y0 >= 0 && y0 < h as isize;
                    let in_y1 = y0 + 1 >= 0 && y0 + 1 < h as isize;
                    let mut dpx = 0.0;
                    let mut dpy = 0.0;
                    for ci in 0..c {
                        let go = g[(ni * c + ci) * spatial + p];
                        if go == 0.0 && !need_dg {
                            continue;
                        }
                        let chan_base = (ni * c + ci) * in_spatial;
                        let v = |yy: isize, xx: isize, ok: bool| -> f64 {
                            if ok {
                                x[chan_base + yy as usize * w + xx as usize]
                            } else {
                                0.0
                            }
                        };
                        let v00 = v(y0, x0, in_y0 && in_x0);
                        let v01 = v(y0, x0 + 1, in_y0 && in_x1);
                        let v10 = v(y0 + 1, x0, in_y1 && in_x0);
                        let v11 = v(y0 + 1, x0 + 1, in_y1 && in_x1);
                        if need_dx {
                            if in_y0 && in_x0 {
                                dx[chan_base + y0 as usize * w + x0 as usize] +=
                                    go * (1.0 - fy) * (1.0 - fx);
                            }
                            if in_y0 && in_x1 {
                                dx[chan_base + y0 as usize * w + (x0 + 1) as usize] +=
                                    go * (1.0 - fy) * fx;
                            }
                            if in_y1 && in_x0 {
                                dx[chan_base + (y0 + 1) as usize * w + x0 as usize] +=
                                    go * fy * (1.0 - fx);
                            }
                            if in_y1 && in_x1 {
                                dx[chan_base + (y0 + 1) as usize * w + (x0 + 1) as usize] +=
                                    go * fy * fx;
                            }
                        }
                        if need_dg {
                            dpx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                            dpy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                    }
                    if need_dg {
                        dg[gbase + p] = dpx * half_w;
                        dg[gbase + spatial + p] = dpy * half_h;
                    }
                }
            }
            drop(x);
            drop(gr);
            if need_dx {
                xc.accumulate_grad(&dx);
            }
            if need_dg {
                gc.accumulate_grad(&dg);
            }
        }),
        "grid_sample",
    )
}

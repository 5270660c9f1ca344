//! Activation heatmaps: project a layer's activations onto their first
//! principal component (per-pixel scores over channels), normalized to
//! [0, 1], plus a colormap overlay for side-by-side model comparison.

use crate::data::pnm::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const POWER_MAX_ITERS: usize = 500;
pub const POWER_TOL: f64 = 1e-10;

/// H x W heatmap in [0, 1].
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub h: usize,
    pub w: usize,
    /// Name of the layer the activations were taken from.
    pub layer: String,
    /// Set when the activations were all zero (heatmap is all zero too).
    pub degenerate: bool,
}

/// Dominant eigenpair of a symmetric n x n matrix by power iteration.
/// Returns (eigenvector, eigenvalue, relative residual |Gv - lv| / l).
pub fn dominant_eigenvector(g: &[f64], n: usize) -> (Vec<f64>, f64, f64) {
    debug_assert_eq!(g.len(), n * n);
    // deterministic start with a mild index-dependent tilt so we cannot
    // sit exactly orthogonal to the dominant eigenvector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * (i as f64 + 1.0)).collect();
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm0);
    let mut lambda = 0.0;
    let mut res = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut gv = vec![0.0; n];
        for i in 0..n {
            let row = &g[i * n..(i + 1) * n];
            gv[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        lambda = v.iter().zip(&gv).map(|(a, b)| a * b).sum();
        if lambda == 0.0 {
            return (v, 0.0, 0.0);
        }
        // residual |Gv - lambda v| / |lambda| with v still unit-norm
        let mut acc = 0.0;
        for i in 0..n {
            acc += (gv[i] - lambda * v[i]).powi(2);
        }
        res = acc.sqrt() / lambda.abs();
        let norm = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (v, 0.0, 0.0);
        }
        gv.iter_mut().for_each(|x| *x /= norm);
        v = gv;
        if res <= POWER_TOL.max(1e-15) {
            break;
        }
    }
    (v, lambda, res)
}

/// EigenCAM heatmap of a single image's activations (1, c, h, w) or
/// (c, h, w): per-pixel projection onto the dominant channel eigenvector,
/// sign-fixed so the largest-magnitude score is positive, then min-max
/// normalized. The dominant eigenvector comes from power iteration on the
/// smaller of the two Gram matrices.
pub fn eigencam(activations: &Tensor, layer: &str) -> Result<Heatmap> {
    let (c, h, w) = match activations.shape() {
        &[1, c, h, w] => (c, h, w),
        &[c, h, w] => (c, h, w),
        s => {
            return Err(Error::shape(format!(
                "eigencam expects a single image's activations, got {s:?}"
            )))
        }
    };
    let hw = h * w;
    let m = activations.data(); // c rows x hw cols, row-major
    if m.iter().all(|&v| v == 0.0) {
        return Ok(Heatmap {
            values: vec![0.0; hw],
            h,
            w,
            layer: layer.to_string(),
            degenerate: true,
        });
    }

    // per-pixel scores s[p] = sum_c m[c,p] * u[c], u the dominant
    // eigenvector of the channel Gram M M^T (or via the pixel Gram when
    // that one is smaller)
    let mut scores = vec![0.0; hw];
    if c <= hw {
        let mut gram = vec![0.0; c * c];
        for i in 0..c {
            for j in i..c {
                let mut s = 0.0;
                for p in 0..hw {
                    s += m[i * hw + p] * m[j * hw + p];
                }
                gram[i * c + j] = s;
                gram[j * c + i] = s;
            }
        }
        let (u, _, _) = dominant_eigenvector(&gram, c);
        for p in 0..hw {
            let mut s = 0.0;
            for (ci, uc) in u.iter().enumerate() {
                s += m[ci * hw + p] * uc;
            }
            scores[p] = s;
        }
    } else {
        // pixel Gram M^T M is the smaller matrix: its dominant
        // eigenvector is proportional to the score vector itself
        let mut gram = vec![0.0; hw * hw];
        for i in 0..hw {
            for j in i..hw {
                let mut s = 0.0;
                for ci in 0..c {
                    s += m[ci * hw + i] * m[ci * hw + j];
                }
                gram[i * hw + j] = s;
                gram[j * hw + i] = s;
            }
        }
        let (v, lambda, _) = dominant_eigenvector(&gram, hw);
        let scale = lambda.max(0.0).sqrt();
        for (p, sv) in scores.iter_mut().zip(&v) {
            *p = sv * scale;
        }
    }
    drop(m);

    // sign: flip so the largest-magnitude entry is positive
    let mut max_abs = 0.0;
    let mut max_val = 0.0;
    for &s in &scores {
        if s.abs() > max_abs {
            max_abs = s.abs();
            max_val = s;
        }
    }
    if max_val < 0.0 {
        scores.iter_mut().for_each(|s| *s = -*s);
    }

    // min-max normalize
    let mn = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = mx - mn;
    if range > 0.0 {
        scores.iter_mut().for_each(|s| *s = (*s - mn) / range);
    } else {
        scores.fill(0.0);
    }
    Ok(Heatmap {
        values: scores,
        h,
        w,
        layer: layer.to_string(),
        degenerate: false,
    })
}

/// Piecewise-linear blue -> cyan -> yellow -> red colormap.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let stops = [
        (0.0, [0.0, 0.0, 0.6]),
        (1.0 / 3.0, [0.0, 0.8, 0.9]),
        (2.0 / 3.0, [0.95, 0.9, 0.1]),
        (1.0, [0.85, 0.1, 0.05]),
    ];
    for pair in stops.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if v <= t1 {
            let t = (v - t0) / (t1 - t0);
            return [
                lerp(c0[0], c1[0], t),
                lerp(c0[1], c1[1], t),
                lerp(c0[2], c1[2], t),
            ];
        }
    }
    stops[3].1
}

fn bilinear_upsample(values: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let fy = if oh <= 1 {
            0.0
        } else {
            oy as f64 * (h - 1) as f64 / (oh - 1) as f64
        };
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..ow {
            let fx = if ow <= 1 {
                0.0
            } else {
                ox as f64 * (w - 1) as f64 / (ow - 1) as f64
            };
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = values[y0 * w + x0] * (1.0 - tx) + values[y0 * w + x1] * tx;
            let bot = values[y1 * w + x0] * (1.0 - tx) + values[y1 * w + x1] * tx;
            out[oy * ow + ox] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Alpha-blend the colorized heatmap over the grayscale image: blend
/// weight equals the (upsampled) heat value, so zero heat shows the plain
/// grayscale base and full heat shows the pure colormap.
pub fn overlay(heatmap: &Heatmap, image: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = match image.shape() {
        &[1, c, h, w] => (c, h, w),
        &[c, h, w] => (c, h, w),
        s => return Err(Error::shape(format!("overlay expects one image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::shape(format!("overlay expects 3 channels, got {c}")));
    }
    let up = bilinear_upsample(&heatmap.values, heatmap.h, heatmap.w, h, w);
    let img = image.data();
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        let gray = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0;
        let heat = up[p];
        let cm = colormap(heat);
        for ch in cm {
            let v = (1.0 - heat) * gray + heat * ch;
            data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(RgbImage { w, h, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_equals_normalized_channel() {
        let mut rng = crate::rng::Rng::new(3);
        let data: Vec<f64> = (0..16).map(|_| rng.uniform(-1.0, 2.0)).collect();
        let t = Tensor::new(&[1, 1, 4, 4], data.clone()).unwrap();
        let hm = eigencam(&t, "x").unwrap();
        let mn = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (got, v) in hm.values.iter().zip(&data) {
            let expect = (v - mn) / (mx - mn);
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn equal_channels_equal_normalized_map() {
        let mut rng = crate::rng::Rng::new(4);
        let plane: Vec<f64> = (0..9).map(|_| rng.uniform(0.0, 1.0)).collect();
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&plane);
        }
        let t = Tensor::new(&[1, 4, 3, 3], data).unwrap();
        let hm = eigencam(&t, "x").unwrap();
        let mn = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (got, v) in hm.values.iter().zip(&plane) {
            let expect = (v - mn) / (mx - mn);
            assert!((got - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn all_zero_activations_flagged() {
        let t = Tensor::new(&[1, 2, 2, 2], vec![0.0; 8]).unwrap();
        let hm = eigencam(&t, "x").unwrap();
        assert!(hm.degenerate);
        assert!(hm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_invariance() {
        let mut rng = crate::rng::Rng::new(5);
        let data: Vec<f64> = (0..3 * 16).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = Tensor::new(&[1, 3, 4, 4], data.clone()).unwrap();
        let b = Tensor::new(&[1, 3, 4, 4], data.iter().map(|v| v * 2.0).collect()).unwrap();
        let ha = eigencam(&a, "x").unwrap();
        let hb = eigencam(&b, "x").unwrap();
        assert_eq!(ha.values, hb.values);
        let c = Tensor::new(&[1, 3, 4, 4], data.iter().map(|v| v * 3.7).collect()).unwrap();
        let hc = eigencam(&c, "x").unwrap();
        for (x, y) in ha.values.iter().zip(&hc.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_permutation_invariance() {
        let mut rng = crate::rng::Rng::new(6);
        let data: Vec<f64> = (0..3 * 16).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut permuted = vec![0.0; data.len()];
        for (dst, src) in [2usize, 0, 1].iter().enumerate() {
            permuted[dst * 16..(dst + 1) * 16].copy_from_slice(&data[src * 16..(src + 1) * 16]);
        }
        let a = eigencam(&Tensor::new(&[1, 3, 4, 4], data).unwrap(), "x").unwrap();
        let b = eigencam(&Tensor::new(&[1, 3, 4, 4], permuted).unwrap(), "x").unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn power_iteration_residual_small() {
        let mut rng = crate::rng::Rng::new(7);
        for n in [2usize, 4, 6] {
            // random symmetric positive semidefinite matrix
            let a: Vec<f64> = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        g[i * n + j] += a[k * n + i] * a[k * n + j];
                    }
                }
            }
            let (_, lambda, res) = dominant_eigenvector(&g, n);
            assert!(lambda > 0.0);
            assert!(res < 1e-8, "residual {res}");
        }
    }

    #[test]
    fn diagonal_matrix_dominant_axis() {
        let g = vec![5.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0];
        let (v, lambda, _) = dominant_eigenvector(&g, 3);
        assert!((lambda - 5.0).abs() < 1e-9);
        assert!(v[0].abs() > 0.999);
    }

    #[test]
    fn zero_heat_overlay_is_grayscale() {
        let img = Tensor::new(&[1, 3, 2, 2], vec![
            0.2, 0.4, 0.6, 0.8, // r
            0.2, 0.4, 0.6, 0.8, // g
            0.2, 0.4, 0.6, 0.8, // b
        ]).unwrap();
        let hm = Heatmap {
            values: vec![0.0; 4],
            h: 2,
            w: 2,
            layer: "x".into(),
            degenerate: false,
        };
        let out = overlay(&hm, &img).unwrap();
        for (p, expect) in [(0usize, 0.2f64), (1, 0.4), (2, 0.6), (3, 0.8)] {
            let v = (expect * 255.0).round() as u8;
            assert_eq!(&out.data[p * 3..p * 3 + 3], &[v, v, v]);
        }
    }

    #[test]
    fn full_heat_overlay_is_uniform_colormap() {
        let img = Tensor::new(&[1, 3, 2, 2], vec![0.1; 12]).unwrap();
        let hm = Heatmap {
            values: vec![1.0; 4],
            h: 2,
            w: 2,
            layer: "x".into(),
            degenerate: false,
        };
        let out = overlay(&hm, &img).unwrap();
        let first = &out.data[0..3];
        for p in 1..4 {
            assert_eq!(&out.data[p * 3..p * 3 + 3], first);
        }
        let cm = colormap(1.0);
        assert_eq!(first[0], (cm[0] * 255.0).round() as u8);
    }
}

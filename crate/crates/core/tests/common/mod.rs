//! Shared test oracles, independent of the library's implementation paths:
//! central finite differences for gradients, a cyclic Jacobi eigensolver,
//! and a plain quadratic-time detection evaluator.

#![allow(dead_code)]

use stn_detect::detector::{BBox, Detection};
use stn_detect::rng::Rng;
use stn_detect::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative-error comparison: |a - b| <= tol * max(1, |a|, |b|).
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Check the analytic gradient of `loss_of(params)` w.r.t. every sampled
/// coordinate of every parameter against central finite differences.
/// `loss_of` must rebuild the forward pass from the parameters' current
/// data on each call.
pub fn gradcheck(
    loss_of: &dyn Fn(&[Tensor]) -> Tensor,
    params: &[Tensor],
    max_coords_per_param: usize,
    tol: f64,
    rng: &mut Rng,
) {
    let loss = loss_of(params);
    assert_eq!(loss.numel(), 1, "gradcheck needs a scalar loss");
    loss.backward().expect("backward");
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for p in params {
        p.zero_grad();
    }
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords_per_param {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords_per_param);
        }
        let original = p.to_vec();
        for &ci in &coords {
            let mut probe = original.clone();
            probe[ci] = original[ci] + FD_STEP;
            p.set_data(&probe).unwrap();
            let up = loss_of(params).item();
            probe[ci] = original[ci] - FD_STEP;
            p.set_data(&probe).unwrap();
            let down = loss_of(params).item();
            p.set_data(&original).unwrap();
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads[pi][ci];
            assert!(
                close_rel(analytic, numeric, tol),
                "param {pi} coord {ci}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns the
/// eigenvector of the largest eigenvalue.
pub fn jacobi_dominant_eigenvector(g: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut a = g.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..n {
        if a[i * n + i] > a[best * n + best] {
            best = i;
        }
    }
    let vec: Vec<f64> = (0..n).map(|k| v[k * n + best]).collect();
    (vec, a[best * n + best])
}

/// Plain re-statement of the evaluation protocol, kept deliberately naive:
/// per-image greedy matching in descending score order, micro
/// precision/recall at IoU 0.5, and 101-point interpolated AP per class
/// over present classes.
pub struct BruteForceEval;

impl BruteForceEval {
    pub fn iou(a: &BBox, b: &BBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = a.corners();
        let (bx1, by1, bx2, by2) = b.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        let inter = iw * ih;
        let ua = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
        inter / ua
    }

    fn order(dets: &[Detection]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..dets.len()).collect();
        idx.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }

    /// (tp flags in visit order, fn count) for one image.
    pub fn match_image(dets: &[Detection], gts: &[BBox], thr: f64) -> (Vec<bool>, usize) {
        let mut taken = vec![false; gts.len()];
        let mut flags = Vec::new();
        for &di in &Self::order(dets) {
            let d = &dets[di];
            let mut best_iou = -1.0;
            let mut best_gi = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.class_id != d.bbox.class_id {
                    continue;
                }
                let v = Self::iou(&d.bbox, g);
                if v >= thr && v > best_iou {
                    best_iou = v;
                    best_gi = Some(gi);
                }
            }
            if let Some(gi) = best_gi {
                taken[gi] = true;
                flags.push(true);
            } else {
                flags.push(false);
            }
        }
        let fn_count = taken.iter().filter(|t| !**t).count();
        (flags, fn_count)
    }

    pub fn precision_recall(
        dets: &[Vec<Detection>],
        gts: &[Vec<BBox>],
        conf: f64,
        thr: f64,
    ) -> (f64, f64) {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_count = 0usize;
        for (d, g) in dets.iter().zip(gts) {
            let kept: Vec<Detection> = d.iter().filter(|x| x.score >= conf).cloned().collect();
            let (flags, fns) = Self::match_image(&kept, g, thr);
            tp += flags.iter().filter(|f| **f).count();
            fp += flags.iter().filter(|f| !**f).count();
            fn_count += fns;
        }
        let p = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_count == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_count) as f64
        };
        (p, r)
    }

    pub fn ap_one_class(dets: &[Vec<Detection>], gts: &[Vec<BBox>], thr: f64) -> f64 {
        let n_gts: usize = gts.iter().map(Vec::len).sum();
        let n_dets: usize = dets.iter().map(Vec::len).sum();
        if n_gts == 0 {
            return if n_dets == 0 { 1.0 } else { 0.0 };
        }
        // global ranking: score desc, ties by (image idx, within-image rank)
        let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (ii, (d, g)) in dets.iter().zip(gts).enumerate() {
            let (flags, _) = Self::match_image(d, g, thr);
            let order = Self::order(d);
            for (rank, &di) in order.iter().enumerate() {
                ranked.push((d[di].score, ii, rank, flags[rank]));
            }
        }
        ranked.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut tp = 0usize;
        let mut pr: Vec<(f64, f64)> = Vec::new();
        for (k, r) in ranked.iter().enumerate() {
            if r.3 {
                tp += 1;
            }
            pr.push((tp as f64 / n_gts as f64, tp as f64 / (k + 1) as f64));
        }
        let mut ap = 0.0;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            let mut best = 0.0f64;
            for &(rec, prec) in &pr {
                if rec >= r - 1e-12 {
                    best = best.max(prec);
                }
            }
            ap += best;
        }
        ap / 101.0
    }

    /// (precision, recall, map50, map50_95) with the same conventions as
    /// the library evaluator.
    pub fn evaluate(
        dets: &[Vec<Detection>],
        gts: &[Vec<BBox>],
        conf: f64,
        n_classes: usize,
    ) -> (f64, f64, f64, f64) {
        let (p, r) = Self::precision_recall(dets, gts, conf, 0.5);
        let mut present = Vec::new();
        for c in 0..n_classes {
            if gts.iter().flatten().any(|b| b.class_id == c)
                || dets.iter().flatten().any(|d| d.bbox.class_id == c)
            {
                present.push(c);
            }
        }
        if present.is_empty() {
            return (p, r, 1.0, 1.0);
        }
        let mut map50 = 0.0;
        let mut map5095 = 0.0;
        for &c in &present {
            let dc: Vec<Vec<Detection>> = dets
                .iter()
                .map(|v| v.iter().filter(|d| d.bbox.class_id == c).cloned().collect())
                .collect();
            let gc: Vec<Vec<BBox>> = gts
                .iter()
                .map(|v| v.iter().filter(|b| b.class_id == c).cloned().collect())
                .collect();
            map50 += Self::ap_one_class(&dc, &gc, 0.5);
            let mut acc = 0.0;
            for s in 0..10 {
                acc += Self::ap_one_class(&dc, &gc, 0.5 + 0.05 * s as f64);
            }
            map5095 += acc / 10.0;
        }
        (
            p,
            r,
            map50 / present.len() as f64,
            map5095 / present.len() as f64,
        )
    }
}

/// Random box with bounded aspect ratio, fully inside [0, 1].
pub fn random_box(rng: &mut Rng, class_id: usize) -> BBox {
    let aspect = rng.uniform(0.5, 2.0);
    let size = rng.uniform(0.05, 0.5);
    let w = (size * aspect.sqrt()).min(0.9);
    let h = (size / aspect.sqrt()).min(0.9);
    let cx = rng.uniform(w / 2.0, 1.0 - w / 2.0);
    let cy = rng.uniform(h / 2.0, 1.0 - h / 2.0);
    BBox::checked(class_id, cx, cy, w, h).unwrap()
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64, param: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    if param {
        Tensor::param(shape, data).unwrap()
    } else {
        Tensor::new(shape, data).unwrap()
    }
}

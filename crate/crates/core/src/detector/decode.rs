//! Decode head outputs into scored boxes and run greedy per-class NMS.

use super::head::HeadOutput;
use super::{BBox, Detection};
use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::tensor::sigmoid_scalar;

/// Decode every cell's expected side distances and class scores, keep
/// (cell, class) candidates with score >= `conf_thresh`, then suppress
/// overlapping same-class boxes with IoU > `iou_thresh`, keeping higher
/// scores. Returns per-batch-item detections sorted by descending score.
pub fn decode_and_nms(
    head: &HeadOutput,
    conf_thresh: f64,
    iou_thresh: f64,
) -> Result<Vec<Vec<Detection>>> {
    for (name, v) in [("conf_thresh", conf_thresh), ("iou_thresh", iou_thresh)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::value(format!("{name}={v} outside [0, 1]")));
        }
    }
    let bins = head.reg_max + 1;
    let mut per_item: Vec<Vec<Detection>> = vec![Vec::new(); head.batch];
    for level in &head.levels {
        let (n, nc, h, w) = level.cls.dims4()?;
        let cls = level.cls.data();
        let reg = level.reg.data();
        let img = (level.stride * w) as f64;
        let img_h = (level.stride * h) as f64;
        for ni in 0..n {
            for cy in 0..h {
                for cx in 0..w {
                    // expected distances from the bin distributions
                    let mut dists = [0.0f64; 4];
                    for (side, d) in dists.iter_mut().enumerate() {
                        let mut mx = f64::NEG_INFINITY;
                        for b in 0..bins {
                            let v = reg[((ni * 4 * bins + side * bins + b) * h + cy) * w + cx];
                            mx = mx.max(v);
                        }
                        let mut z = 0.0;
                        let mut e = 0.0;
                        for b in 0..bins {
                            let v = reg[((ni * 4 * bins + side * bins + b) * h + cy) * w + cx];
                            let p = (v - mx).exp();
                            z += p;
                            e += p * b as f64;
                        }
                        *d = e / z;
                    }
                    let s = level.stride as f64;
                    let anchor_x = (cx as f64 + 0.5) * s;
                    let anchor_y = (cy as f64 + 0.5) * s;
                    let x1 = (anchor_x - dists[0] * s) / img;
                    let y1 = (anchor_y - dists[1] * s) / img_h;
                    let x2 = (anchor_x + dists[2] * s) / img;
                    let y2 = (anchor_y + dists[3] * s) / img_h;
                    for ci in 0..nc {
                        let logit = cls[((ni * nc + ci) * h + cy) * w + cx];
                        let score = sigmoid_scalar(logit);
                        if score < conf_thresh {
                            continue;
                        }
                        if let Ok(bbox) = BBox::from_corners(ci, x1, y1, x2, y2) {
                            per_item[ni].push(Detection { bbox, score });
                        }
                    }
                }
            }
        }
    }
    for dets in &mut per_item {
        *dets = nms(std::mem::take(dets), iou_thresh)?;
    }
    Ok(per_item)
}

/// Greedy per-class non-maximum suppression. Candidates are visited in
/// descending score order (ties broken by insertion index); a candidate is
/// dropped when it overlaps an already-kept same-class box with
/// IoU > `iou_thresh`.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Result<Vec<Detection>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let cand = dets[i];
        let mut suppressed = false;
        for k in &kept {
            if k.bbox.class_id == cand.bbox.class_id && iou(&k.bbox, &cand.bbox)? > iou_thresh {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(cand);
        }
    }
    dets.clear();
    Ok(kept)
}

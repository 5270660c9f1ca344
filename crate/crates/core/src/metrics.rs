//! Detection metrics: IoU, greedy matching, precision/recall and
//! COCO-style 101-point interpolated average precision.
//!
//! Empty-case conventions are fixed so every function is total:
//! precision is 1 with no detections, recall is 1 with no ground truths,
//! AP is 1 when both sides are empty and 0 when detections exist without
//! ground truths. mAP macro-averages over the classes present in either
//! side; when nothing is present at all it follows the empty convention.

use serde::{Deserialize, Serialize};

use crate::detector::{BBox, Detection};
use crate::error::{Error, Result};

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(Error::value("iou: degenerate box"));
    }
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    // areas from the same corner values as the intersection, so identical
    // boxes give exactly 1
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    Ok(inter / (area_a + area_b - inter))
}

/// Matching outcome for one image at a fixed IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per detection (in descending-score order): matched gt index or None.
    pub matches: Vec<Option<usize>>,
    pub tp: usize,
    pub fp: usize,
    /// Ground truths left unmatched.
    pub fn_count: usize,
    pub iou_thresh: f64,
}

/// Stable descending-score order, ties broken by original index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching: in descending score order each detection takes the
/// highest-IoU unmatched same-class ground truth with IoU >= threshold
/// (lowest gt index on ties); detections left unmatched are false
/// positives, ground truths left unmatched are false negatives.
pub fn match_detections(
    dets: &[Detection],
    gts: &[BBox],
    iou_thresh: f64,
) -> Result<MatchResult> {
    let order = score_order(dets);
    let mut gt_taken = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(dets.len());
    let mut tp = 0;
    for &di in &order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != d.bbox.class_id {
                continue;
            }
            let v = iou(&d.bbox, gt)?;
            if v >= iou_thresh {
                let better = match best {
                    None => true,
                    Some((_, bv)) => v > bv,
                };
                if better {
                    best = Some((gi, v));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                tp += 1;
                matches.push(Some(gi));
            }
            None => matches.push(None),
        }
    }
    Ok(MatchResult {
        fp: matches.iter().filter(|m| m.is_none()).count(),
        fn_count: gt_taken.iter().filter(|t| !**t).count(),
        tp,
        matches,
        iou_thresh,
    })
}

/// (precision, recall) with the stated empty conventions.
pub fn precision_recall(m: &MatchResult) -> (f64, f64) {
    let p = if m.tp + m.fp == 0 {
        1.0
    } else {
        m.tp as f64 / (m.tp + m.fp) as f64
    };
    let r = if m.tp + m.fn_count == 0 {
        1.0
    } else {
        m.tp as f64 / (m.tp + m.fn_count) as f64
    };
    (p, r)
}

/// 101-point interpolated AP for one class over a whole dataset:
/// detections are ranked globally by score, matched greedily per image at
/// `iou_thresh`, and precision is sampled at recalls 0.00, 0.01, ..., 1.00
/// using the running maximum to the right.
pub fn average_precision(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<BBox>],
    iou_thresh: f64,
) -> Result<f64> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(Error::value("average_precision: image count mismatch"));
    }
    let n_gts: usize = gts_per_image.iter().map(Vec::len).sum();
    let n_dets: usize = dets_per_image.iter().map(Vec::len).sum();
    if n_gts == 0 {
        return Ok(if n_dets == 0 { 1.0 } else { 0.0 });
    }
    // per-image greedy matching, then a global ranking of (score, is_tp)
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::with_capacity(n_dets);
    for (img_idx, (dets, gts)) in dets_per_image.iter().zip(gts_per_image).enumerate() {
        let m = match_detections(dets, gts, iou_thresh)?;
        let order = score_order(dets);
        for (rank_in_img, &di) in order.iter().enumerate() {
            ranked.push((
                dets[di].score,
                img_idx,
                rank_in_img,
                m.matches[rank_in_img].is_some(),
            ));
        }
    }
    // descending score; ties broken by (image, within-image rank)
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut tp_cum = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(ranked.len()); // (recall, precision)
    for (i, r) in ranked.iter().enumerate() {
        if r.3 {
            tp_cum += 1;
        }
        let precision = tp_cum as f64 / (i + 1) as f64;
        let recall = tp_cum as f64 / n_gts as f64;
        curve.push((recall, precision));
    }
    // precision envelope sampled at the 101 recall points
    let mut ap = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = curve
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += p;
    }
    Ok(ap / 101.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub n_images: usize,
    pub n_detections: usize,
    pub n_ground_truths: usize,
}

/// Metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Precision at the confidence operating point, IoU 0.5.
    pub precision: f64,
    /// Recall at the confidence operating point, IoU 0.5.
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    /// AP@0.5 per class id, for the classes present in the run.
    pub per_class_ap50: Vec<(usize, f64)>,
    pub counts: Counts,
    pub conf_thresh: f64,
}

impl MetricsReport {
    /// Aligned table with the columns Precision, Recall, mAP@0.5 and
    /// mAP@0.5:0.95, values in percent.
    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10} {:>13}\n",
            "", "Precision", "Recall", "mAP@0.5", "mAP@0.5:0.95"
        ));
        s.push_str(&format!(
            "{:<12} {:>10.2} {:>10.2} {:>10.2} {:>13.2}\n",
            "all",
            self.precision * 100.0,
            self.recall * 100.0,
            self.map50 * 100.0,
            self.map50_95 * 100.0
        ));
        s
    }
}

/// Full evaluation: precision/recall at `conf_thresh` with IoU 0.5, plus
/// mAP@0.5 and mAP@0.5:0.95 macro-averaged over the classes present.
pub fn evaluate(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<BBox>],
    conf_thresh: f64,
    n_classes: usize,
) -> Result<MetricsReport> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(Error::value("evaluate: image count mismatch"));
    }
    for boxes in gts_per_image {
        for b in boxes {
            if b.class_id >= n_classes {
                return Err(Error::value(format!(
                    "evaluate: class id {} out of vocabulary",
                    b.class_id
                )));
            }
        }
    }
    for dets in dets_per_image {
        for d in dets {
            if d.bbox.class_id >= n_classes {
                return Err(Error::value(format!(
                    "evaluate: detection class id {} out of vocabulary",
                    d.bbox.class_id
                )));
            }
        }
    }

    // operating-point counts at IoU 0.5 over score-filtered detections
    let filtered: Vec<Vec<Detection>> = dets_per_image
        .iter()
        .map(|dets| {
            dets.iter()
                .filter(|d| d.score >= conf_thresh)
                .cloned()
                .collect()
        })
        .collect();
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_count = 0;
    for (dets, gts) in filtered.iter().zip(gts_per_image) {
        let m = match_detections(dets, gts, 0.5)?;
        tp += m.tp;
        fp += m.fp;
        fn_count += m.fn_count;
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_count == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_count) as f64
    };

    // classes present on either side
    let mut present: Vec<usize> = Vec::new();
    for c in 0..n_classes {
        let in_gts = gts_per_image.iter().flatten().any(|b| b.class_id == c);
        let in_dets = dets_per_image.iter().flatten().any(|d| d.bbox.class_id == c);
        if in_gts || in_dets {
            present.push(c);
        }
    }

    let class_slice = |c: usize| -> (Vec<Vec<Detection>>, Vec<Vec<BBox>>) {
        let d = dets_per_image
            .iter()
            .map(|v| {
                v.iter()
                    .filter(|d| d.bbox.class_id == c)
                    .cloned()
                    .collect()
            })
            .collect();
        let g = gts_per_image
            .iter()
            .map(|v| v.iter().filter(|b| b.class_id == c).cloned().collect())
            .collect();
        (d, g)
    };

    let mut per_class_ap50 = Vec::new();
    let mut map50 = 0.0;
    let mut map50_95 = 0.0;
    if present.is_empty() {
        map50 = 1.0;
        map50_95 = 1.0;
    } else {
        for &c in &present {
            let (d, g) = class_slice(c);
            let ap50 = average_precision(&d, &g, 0.5)?;
            per_class_ap50.push((c, ap50));
            map50 += ap50;
            let mut ap_sum = 0.0;
            for step in 0..10 {
                let thr = 0.5 + 0.05 * step as f64;
                ap_sum += average_precision(&d, &g, thr)?;
            }
            map50_95 += ap_sum / 10.0;
        }
        map50 /= present.len() as f64;
        map50_95 /= present.len() as f64;
    }

    Ok(MetricsReport {
        precision,
        recall,
        map50,
        map50_95,
        per_class_ap50,
        counts: Counts {
            tp,
            fp,
            fn_count,
            n_images: dets_per_image.len(),
            n_detections: dets_per_image.iter().map(Vec::len).sum(),
            n_ground_truths: gts_per_image.iter().map(Vec::len).sum(),
        },
        conf_thresh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::checked(0, cx, cy, w, h).unwrap()
    }

    fn det(b: BBox, score: f64) -> Detection {
        Detection { bbox: b, score }
    }

    #[test]
    fn iou_identical_is_one() {
        let b = bx(0.5, 0.5, 0.2, 0.2);
        assert_eq!(iou(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = bx(0.2, 0.2, 0.1, 0.1);
        let b = bx(0.8, 0.8, 0.1, 0.1);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_corner_overlap_one_seventh() {
        // pixel-corner boxes (0,0,2,2) and (1,1,3,3) scaled into [0,1] by 4
        let a = BBox::from_corners(0, 0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BBox::from_corners(0, 0.25, 0.25, 0.75, 0.75).unwrap();
        let got = iou(&a, &b).unwrap();
        assert!((got - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_exact_match() {
        let g = bx(0.5, 0.5, 0.2, 0.2);
        let m = match_detections(&[det(g, 0.9)], &[g], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_count), (1, 0, 0));
    }

    #[test]
    fn second_detection_on_same_gt_is_fp() {
        let g = bx(0.5, 0.5, 0.2, 0.2);
        let m = match_detections(&[det(g, 0.7), det(g, 0.9)], &[g], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_count), (1, 1, 0));
        // the higher-score detection (visited first) got the match
        assert_eq!(m.matches, vec![Some(0), None]);
    }

    #[test]
    fn precision_recall_conventions() {
        let m = MatchResult {
            matches: vec![],
            tp: 0,
            fp: 0,
            fn_count: 2,
            iou_thresh: 0.5,
        };
        assert_eq!(precision_recall(&m), (1.0, 0.0));
        let m2 = MatchResult {
            matches: vec![None],
            tp: 0,
            fp: 1,
            fn_count: 0,
            iou_thresh: 0.5,
        };
        assert_eq!(precision_recall(&m2), (0.0, 1.0));
    }

    #[test]
    fn precision_recall_arithmetic() {
        let m = MatchResult {
            matches: vec![],
            tp: 3,
            fp: 1,
            fn_count: 2,
            iou_thresh: 0.5,
        };
        let (p, r) = precision_recall(&m);
        assert!((p - 0.75).abs() < 1e-15);
        assert!((r - 0.6).abs() < 1e-15);
    }

    #[test]
    fn ap_single_correct_detection() {
        let g = bx(0.5, 0.5, 0.2, 0.2);
        let ap = average_precision(&[vec![det(g, 0.9)]], &[vec![g]], 0.5).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_single_wrong_detection() {
        let g = bx(0.2, 0.2, 0.1, 0.1);
        let wrong = det(bx(0.8, 0.8, 0.1, 0.1), 0.9);
        let ap = average_precision(&[vec![wrong]], &[vec![g]], 0.5).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn ap_hand_walked_case() {
        // 3 gts, 4 dets ranked by score: TP, FP, TP, TP
        // precision after each: 1, 1/2, 2/3, 3/4; recall: 1/3, 1/3, 2/3, 1
        // envelope: recall<=1/3 -> 1; then 3/4
        let g1 = bx(0.2, 0.2, 0.1, 0.1);
        let g2 = bx(0.5, 0.5, 0.1, 0.1);
        let g3 = bx(0.8, 0.8, 0.1, 0.1);
        let dets = vec![
            det(g1, 0.9),
            det(bx(0.35, 0.35, 0.1, 0.1), 0.8),
            det(g2, 0.7),
            det(g3, 0.6),
        ];
        let ap = average_precision(&[dets], &[vec![g1, g2, g3]], 0.5).unwrap();
        // 34 recall points (0.00..=0.33) at precision 1, the rest at 3/4
        let expect = (34.0 * 1.0 + 67.0 * 0.75) / 101.0;
        assert!((ap - expect).abs() < 1e-12, "{ap} vs {expect}");
    }

    #[test]
    fn ap_empty_conventions() {
        assert_eq!(average_precision(&[vec![]], &[vec![]], 0.5).unwrap(), 1.0);
        let d = det(bx(0.5, 0.5, 0.1, 0.1), 0.9);
        assert_eq!(average_precision(&[vec![d]], &[vec![]], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_perfect_detector() {
        let gts = vec![
            vec![bx(0.3, 0.3, 0.2, 0.2), bx(0.7, 0.7, 0.15, 0.15)],
            vec![bx(0.5, 0.5, 0.25, 0.25)],
        ];
        let dets: Vec<Vec<Detection>> = gts
            .iter()
            .map(|v| v.iter().map(|b| det(*b, 0.95)).collect())
            .collect();
        let r = evaluate(&dets, &gts, 0.5, 1).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.map50_95, 1.0);
    }

    #[test]
    fn evaluate_empty_detector_has_zero_recall() {
        let gts = vec![vec![bx(0.3, 0.3, 0.2, 0.2)]];
        let r = evaluate(&[vec![]], &gts, 0.5, 1).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.precision, 1.0); // no detections convention
    }

    #[test]
    fn evaluate_rejects_unknown_class() {
        let mut b = bx(0.3, 0.3, 0.2, 0.2);
        b.class_id = 5;
        assert!(evaluate(&[vec![]], &[vec![b]], 0.5, 1).is_err());
    }

    #[test]
    fn score_scale_invariance() {
        let g1 = bx(0.2, 0.2, 0.1, 0.1);
        let g2 = bx(0.7, 0.7, 0.1, 0.1);
        let dets = vec![vec![
            det(g1, 0.9),
            det(bx(0.45, 0.45, 0.1, 0.1), 0.5),
            det(g2, 0.3),
        ]];
        let gts = vec![vec![g1, g2]];
        let ap1 = average_precision(&dets, &gts, 0.5).unwrap();
        // strictly monotone transform of scores
        let dets2: Vec<Vec<Detection>> = dets
            .iter()
            .map(|v| {
                v.iter()
                    .map(|d| det(d.bbox, (d.score * 3.0).tanh()))
                    .collect()
            })
            .collect();
        let ap2 = average_precision(&dets2, &gts, 0.5).unwrap();
        assert_eq!(ap1, ap2);
    }
}

//! Detection losses: complete-IoU box regression, distribution focal loss
//! over per-side distance bins, and binary cross-entropy classification,
//! combined with configurable weights.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::assign::Targets;
use super::head::HeadOutput;
use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon in the aspect-term coupling coefficient.
const ALPHA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub bbox: f64,
    pub dfl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 0.5,
            bbox: 7.5,
            dfl: 1.5,
        }
    }
}

/// Complete IoU between two boxes:
/// `IoU - rho^2/c^2 - alpha*v`, where rho is the center distance, c the
/// enclosing-box diagonal, `v = (4/pi^2)(atan(w_g/h_g) - atan(w/h))^2` and
/// `alpha = v / ((1 - IoU) + v + eps)`. Equals 1 iff the boxes coincide;
/// the box loss term is `1 - ciou`.
pub fn ciou(pred: &BBox, gt: &BBox) -> Result<f64> {
    if pred.area() <= 0.0 || gt.area() <= 0.0 {
        return Err(Error::value("ciou: degenerate box"));
    }
    let (px1, py1, px2, py2) = pred.corners();
    let (gx1, gy1, gx2, gy2) = gt.corners();
    let iw = (px2.min(gx2) - px1.max(gx1)).max(0.0);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(0.0);
    let inter = iw * ih;
    // widths, heights and areas all derive from the corner values so that
    // identical boxes give exactly iou = 1 and v = 0
    let (pw, ph) = (px2 - px1, py2 - py1);
    let (gw, gh) = (gx2 - gx1, gy2 - gy1);
    let union = pw * ph + gw * gh - inter;
    let iou = inter / union;
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let c2 = cw * cw + ch * ch;
    let rho2 = ((px1 + px2) / 2.0 - (gx1 + gx2) / 2.0).powi(2)
        + ((py1 + py2) / 2.0 - (gy1 + gy2) / 2.0).powi(2);
    let v = 4.0 / (PI * PI) * ((gw / gh).atan() - (pw / ph).atan()).powi(2);
    let alpha = v / ((1.0 - iou) + v + ALPHA_EPS);
    Ok(iou - rho2 / c2 - alpha * v)
}

/// Tensor route of the same formula over per-cell corner vectors (all
/// rank-1 of equal length). Differentiable w.r.t. the predicted corners.
#[allow(clippy::too_many_arguments)]
pub fn ciou_tensor(
    px1: &Tensor,
    py1: &Tensor,
    px2: &Tensor,
    py2: &Tensor,
    gx1: &Tensor,
    gy1: &Tensor,
    gx2: &Tensor,
    gy2: &Tensor,
) -> Result<Tensor> {
    let iw = px2.min_elem(gx2)?.sub(&px1.max_elem(gx1)?)?.relu()?;
    let ih = py2.min_elem(gy2)?.sub(&py1.max_elem(gy1)?)?.relu()?;
    let inter = iw.mul(&ih)?;
    let pw = px2.sub(px1)?;
    let ph = py2.sub(py1)?;
    let gw = gx2.sub(gx1)?;
    let gh = gy2.sub(gy1)?;
    let union = pw.mul(&ph)?.add(&gw.mul(&gh)?)?.sub(&inter)?;
    let iou = inter.div(&union)?;
    let cw = px2.max_elem(gx2)?.sub(&px1.min_elem(gx1)?)?;
    let ch = py2.max_elem(gy2)?.sub(&py1.min_elem(gy1)?)?;
    let c2 = cw.square()?.add(&ch.square()?)?;
    let pcx = px1.add(px2)?.scale(0.5)?;
    let pcy = py1.add(py2)?.scale(0.5)?;
    let gcx = gx1.add(gx2)?.scale(0.5)?;
    let gcy = gy1.add(gy2)?.scale(0.5)?;
    let rho2 = pcx.sub(&gcx)?.square()?.add(&pcy.sub(&gcy)?.square()?)?;
    let v = gw
        .div(&gh)?
        .atan()?
        .sub(&pw.div(&ph)?.atan()?)?
        .square()?
        .scale(4.0 / (PI * PI))?;
    let one_minus_iou = iou.neg()?.add_scalar(1.0)?;
    let alpha = v.div(&one_minus_iou.add(&v)?.add_scalar(ALPHA_EPS)?)?;
    iou.sub(&rho2.div(&c2)?)?.sub(&alpha.mul(&v)?)
}

/// Distribution focal loss for one side-distance: cross-entropy against
/// the two integer bins bracketing `target`, weighted by linear proximity.
/// An integer target reduces to plain cross-entropy on its bin.
pub fn dfl_loss(dist_logits: &[f64], target: f64) -> Result<f64> {
    let bins = dist_logits.len();
    if bins < 2 {
        return Err(Error::value("dfl_loss: need at least two bins"));
    }
    let reg_max = (bins - 1) as f64;
    if !(0.0..=reg_max).contains(&target) {
        return Err(Error::value(format!(
            "dfl_loss: target {target} outside [0, {reg_max}]"
        )));
    }
    let mx = dist_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + dist_logits.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
    let logp = |i: usize| dist_logits[i] - lse;
    let lo = target.floor();
    let hi = target.ceil();
    if lo == hi {
        Ok(-logp(lo as usize))
    } else {
        let w_lo = hi - target;
        let w_hi = target - lo;
        Ok(-(w_lo * logp(lo as usize) + w_hi * logp(hi as usize)))
    }
}

/// Combined loss over a head output and its assigned targets:
/// `cls * sum(BCE) / max(1, assigned) + bbox * mean(1 - ciou) +
/// dfl * mean DFL`, the box and distribution terms over assigned cells
/// only (absent cells contribute nothing). Normalizing the classification
/// sum by the assigned-cell count keeps positive cells from drowning in
/// the background average.
pub fn detection_loss(
    head: &HeadOutput,
    targets: &Targets,
    weights: &LossWeights,
    image_size: usize,
) -> Result<Tensor> {
    if targets.geometry != head.geometry() {
        return Err(Error::shape(format!(
            "detection_loss: target geometry {:?} != head geometry {:?}",
            targets.geometry,
            head.geometry()
        )));
    }
    if targets.batch != head.batch {
        return Err(Error::shape(format!(
            "detection_loss: target batch {} != head batch {}",
            targets.batch, head.batch
        )));
    }
    let bins = head.reg_max + 1;
    let img = image_size as f64;

    // classification: BCE summed over every cell and class, normalized by
    // the number of assigned cells
    let mut cls_sum: Option<Tensor> = None;
    for (li, level) in head.levels.iter().enumerate() {
        let (n, nc, h, w) = level.cls.dims4()?;
        let mut tgt = vec![0.0; n * nc * h * w];
        for cell in targets.assigned_on(li) {
            tgt[((cell.batch * nc + cell.class_id) * h + cell.y) * w + cell.x] = 1.0;
        }
        let tgt = Tensor::new(&[n, nc, h, w], tgt)?;
        let bce = level.cls.bce_with_logits(&tgt)?.sum()?;
        cls_sum = Some(match cls_sum {
            Some(acc) => acc.add(&bce)?,
            None => bce,
        });
    }
    let n_assigned = targets.assigned.len();
    let cls_loss = cls_sum
        .ok_or_else(|| Error::shape("detection_loss: empty head output"))?
        .scale(1.0 / n_assigned.max(1) as f64)?;

    // box + distribution terms over assigned cells
    let mut box_sum: Option<Tensor> = None;
    let mut dfl_sum: Option<Tensor> = None;
    let mut m_total = 0usize;
    for (li, level) in head.levels.iter().enumerate() {
        let cells: Vec<_> = targets.assigned_on(li).collect();
        if cells.is_empty() {
            continue;
        }
        let m = cells.len();
        m_total += m;
        let idx: Vec<(usize, usize, usize)> = cells.iter().map(|c| (c.batch, c.y, c.x)).collect();
        let gathered = level.reg.gather_cells(&idx)?; // (m, 4*bins)
        let dist_logits = gathered.reshape(&[m, 4, bins])?;

        // distribution loss: proximity-weighted cross-entropy
        let logp = dist_logits.log_softmax(2)?;
        let mut wbuf = vec![0.0; m * 4 * bins];
        for (mi, cell) in cells.iter().enumerate() {
            for side in 0..4 {
                let t = cell.dists[side];
                let lo = t.floor();
                let hi = t.ceil();
                let base = (mi * 4 + side) * bins;
                if lo == hi {
                    wbuf[base + lo as usize] = 1.0;
                } else {
                    wbuf[base + lo as usize] = hi - t;
                    wbuf[base + hi as usize] = t - lo;
                }
            }
        }
        let wt = Tensor::new(&[m, 4, bins], wbuf)?;
        let dfl = logp.mul(&wt)?.sum()?.neg()?;
        dfl_sum = Some(match dfl_sum {
            Some(acc) => acc.add(&dfl)?,
            None => dfl,
        });

        // decode expected distances and compare boxes via ciou
        let probs = dist_logits.softmax(2)?;
        let mut bin_idx = vec![0.0; m * 4 * bins];
        for chunk in bin_idx.chunks_mut(bins) {
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        let bin_idx = Tensor::new(&[m, 4, bins], bin_idx)?;
        let dist = probs.mul(&bin_idx)?.sum_axis(2)?; // (m, 4) in stride units
        let s_img = level.stride as f64 / img;
        let mut ax = Vec::with_capacity(m);
        let mut ay = Vec::with_capacity(m);
        let mut g = [const { Vec::new() }; 4];
        for cell in &cells {
            let anchor_x = (cell.x as f64 + 0.5) * level.stride as f64 / img;
            let anchor_y = (cell.y as f64 + 0.5) * level.stride as f64 / img;
            ax.push(anchor_x);
            ay.push(anchor_y);
            g[0].push(anchor_x - cell.dists[0] * s_img);
            g[1].push(anchor_y - cell.dists[1] * s_img);
            g[2].push(anchor_x + cell.dists[2] * s_img);
            g[3].push(anchor_y + cell.dists[3] * s_img);
        }
        let ax = Tensor::new(&[m], ax)?;
        let ay = Tensor::new(&[m], ay)?;
        let px1 = ax.sub(&dist.col(0)?.scale(s_img)?)?;
        let py1 = ay.sub(&dist.col(1)?.scale(s_img)?)?;
        let px2 = ax.add(&dist.col(2)?.scale(s_img)?)?;
        let py2 = ay.add(&dist.col(3)?.scale(s_img)?)?;
        let [gx1, gy1, gx2, gy2] = g.map(|v| Tensor::new(&[m], v).unwrap());
        let ciou_vals = ciou_tensor(&px1, &py1, &px2, &py2, &gx1, &gy1, &gx2, &gy2)?;
        let box_term = ciou_vals.neg()?.add_scalar(1.0)?.sum()?;
        box_sum = Some(match box_sum {
            Some(acc) => acc.add(&box_term)?,
            None => box_term,
        });
    }

    let mut total = cls_loss.scale(weights.cls)?;
    if m_total > 0 {
        let box_loss = box_sum.unwrap().scale(weights.bbox / m_total as f64)?;
        let dfl_loss = dfl_sum.unwrap().scale(weights.dfl / (4 * m_total) as f64)?;
        total = total.add(&box_loss)?.add(&dfl_loss)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_boxes_give_one() {
        let b = BBox::checked(0, 0.5, 0.5, 0.3, 0.2).unwrap();
        assert_eq!(ciou(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn concentric_equal_aspect_equals_iou() {
        // gt is the pred scaled by exactly 2: aspect ratios match bitwise
        let p = BBox::checked(0, 0.5, 0.5, 0.2, 0.15).unwrap();
        let g = BBox::checked(0, 0.5, 0.5, 0.4, 0.3).unwrap();
        let got = ciou(&p, &g).unwrap();
        let iou = crate::metrics::iou(&p, &g).unwrap();
        assert_eq!(got, iou);
        assert!((iou - 0.25).abs() < 1e-12);
    }

    #[test]
    fn worked_example_matches_component_oracle() {
        let p = BBox::checked(0, 0.25, 0.25, 0.5, 0.5).unwrap();
        let g = BBox::checked(0, 0.5, 0.5, 0.5, 0.5).unwrap();
        // step-by-step evaluation: inter = 0.25^2, union = 2*0.25 - 0.0625
        let inter = 0.25 * 0.25;
        let union = 0.5 * 0.5 * 2.0 - inter;
        let iou = inter / union;
        let c2 = 0.75f64.powi(2) * 2.0;
        let rho2 = 0.25f64.powi(2) * 2.0;
        let v = 0.0; // equal aspect
        let alpha = v / ((1.0 - iou) + v + 1e-9);
        let expect = iou - rho2 / c2 - alpha * v;
        assert!((ciou(&p, &g).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_rejected() {
        let p = BBox {
            class_id: 0,
            cx: 0.5,
            cy: 0.5,
            w: 0.0,
            h: 0.1,
        };
        let g = BBox::checked(0, 0.5, 0.5, 0.2, 0.2).unwrap();
        assert!(ciou(&p, &g).is_err());
    }

    #[test]
    fn tensor_route_matches_scalar() {
        let mut rng = crate::rng::Rng::new(23);
        for _ in 0..100 {
            let mk = |rng: &mut crate::rng::Rng| {
                let aspect = rng.uniform(0.5, 2.0);
                let size = rng.uniform(0.05, 0.4);
                let w = size * aspect.sqrt();
                let h = size / aspect.sqrt();
                let cx = rng.uniform(w / 2.0, 1.0 - w / 2.0);
                let cy = rng.uniform(h / 2.0, 1.0 - h / 2.0);
                BBox::checked(0, cx, cy, w, h).unwrap()
            };
            let p = mk(&mut rng);
            let g = mk(&mut rng);
            let scalar = ciou(&p, &g).unwrap();
            let (px1, py1, px2, py2) = p.corners();
            let (gx1, gy1, gx2, gy2) = g.corners();
            let t = |v: f64| Tensor::new(&[1], vec![v]).unwrap();
            let tensor = ciou_tensor(
                &t(px1),
                &t(py1),
                &t(px2),
                &t(py2),
                &t(gx1),
                &t(gy1),
                &t(gx2),
                &t(gy2),
            )
            .unwrap()
            .item();
            assert!(
                (scalar - tensor).abs() < 1e-12,
                "scalar {scalar} vs tensor {tensor}"
            );
        }
    }

    #[test]
    fn dfl_uniform_logits_is_ln_bins() {
        for bins in [2usize, 5, 9, 16] {
            let logits = vec![0.7; bins];
            let loss = dfl_loss(&logits, 0.5 * (bins - 1) as f64).unwrap();
            assert!((loss - (bins as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dfl_peaked_at_integer_target_vanishes() {
        let mut logits = vec![-30.0; 9];
        logits[3] = 30.0;
        let loss = dfl_loss(&logits, 3.0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn dfl_hand_expanded_weighted_ce() {
        let logits = vec![0.2, -0.3, 1.0, 0.5];
        let target = 2.5;
        let mx: f64 = 1.0;
        let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let expect = -(0.5 * (logits[2] - lse) + 0.5 * (logits[3] - lse));
        assert!((dfl_loss(&logits, target).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn dfl_target_out_of_range() {
        assert!(dfl_loss(&[0.0; 9], 8.5).is_err());
        assert!(dfl_loss(&[0.0; 9], -0.1).is_err());
    }

    use crate::detector::{assign_targets, HeadOutput, LevelOutput, ModelConfig};
    use crate::tensor::Tensor;

    fn manual_head(cls_per_level: Vec<Vec<f64>>, reg_per_level: Vec<Vec<f64>>) -> HeadOutput {
        let geom = [(8usize, 8usize, 8usize), (4, 4, 16), (2, 2, 32)];
        let bins = 9;
        let levels = geom
            .iter()
            .zip(cls_per_level.into_iter().zip(reg_per_level))
            .map(|(&(h, w, stride), (cls, reg))| LevelOutput {
                cls: Tensor::new(&[1, 1, h, w], cls).unwrap(),
                reg: Tensor::new(&[1, 4 * bins, h, w], reg).unwrap(),
                stride,
                h,
                w,
            })
            .collect();
        HeadOutput {
            levels,
            n_classes: 1,
            reg_max: 8,
            batch: 1,
        }
    }

    #[test]
    fn empty_image_with_confident_background_gives_near_zero_loss() {
        // all class logits extremely negative, no ground truth
        let cls: Vec<Vec<f64>> = [(8usize, 8usize), (4, 4), (2, 2)]
            .iter()
            .map(|&(h, w)| vec![-40.0; h * w])
            .collect();
        let reg: Vec<Vec<f64>> = [(8usize, 8usize), (4, 4), (2, 2)]
            .iter()
            .map(|&(h, w)| vec![0.0; 4 * 9 * h * w])
            .collect();
        let head = manual_head(cls, reg);
        let geom = vec![(8, 8, 8), (4, 4, 16), (2, 2, 32)];
        let targets =
            assign_targets(&[vec![]], &geom, 64, &ModelConfig::default()).unwrap();
        let loss = detection_loss(&head, &targets, &LossWeights::default(), 64).unwrap();
        assert!(loss.item() < 1e-12, "loss {}", loss.item());
    }

    #[test]
    fn perfect_prediction_leaves_only_residual_bce() {
        // 8-pixel box with edges at half-stride offsets of the fine level:
        // corners (20, 20)..(28, 28) at image 64 -> cell (3, 3), anchor 28,
        // integer side distances [1, 1, 0, 0]
        let b = BBox::from_corners(0, 20.0 / 64.0, 20.0 / 64.0, 28.0 / 64.0, 28.0 / 64.0).unwrap();
        let geom = vec![(8, 8, 8), (4, 4, 16), (2, 2, 32)];
        let targets =
            assign_targets(&[vec![b]], &geom, 64, &ModelConfig::default()).unwrap();
        assert_eq!(targets.assigned.len(), 1);
        let cell = targets.assigned[0].clone();
        assert_eq!((cell.level, cell.y, cell.x), (0, 3, 3));
        assert_eq!(cell.dists, [1.0, 1.0, 0.0, 0.0]);

        // classification: +40 logit at the assigned cell, -40 elsewhere;
        // distance logits sharply peaked at each side's target bin
        let mut cls0 = vec![-40.0; 64];
        cls0[cell.y * 8 + cell.x] = 40.0;
        let cls = vec![cls0, vec![-40.0; 16], vec![-40.0; 4]];
        let mut reg0 = vec![-40.0; 4 * 9 * 64];
        for (side, &target_bin) in [1usize, 1, 0, 0].iter().enumerate() {
            for p in 0..64 {
                reg0[(side * 9 + target_bin) * 64 + p] = 40.0;
            }
        }
        let reg = vec![reg0, vec![0.0; 4 * 9 * 16], vec![0.0; 4 * 9 * 4]];
        let head = manual_head(cls, reg);

        let full = detection_loss(&head, &targets, &LossWeights::default(), 64)
            .unwrap()
            .item();
        let cls_only = detection_loss(
            &head,
            &targets,
            &LossWeights {
                cls: 0.5,
                bbox: 0.0,
                dfl: 0.0,
            },
            64,
        )
        .unwrap()
        .item();
        // box and distribution terms vanish; what remains is the bce
        assert!(full - cls_only < 1e-9, "box terms contribute {}", full - cls_only);
        assert!(full < 1e-9, "total {full}");
    }
}

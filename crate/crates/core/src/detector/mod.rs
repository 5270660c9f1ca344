//! Miniature single-stage detector: strided backbone producing a
//! three-level feature pyramid, a per-level prediction head with class
//! logits and per-side distance distributions, deterministic center-cell
//! target assignment, and the classification + box + distribution losses.

mod assign;
mod backbone;
mod decode;
mod head;
mod loss;

pub use assign::{assign_targets, level_for_box, CellTarget, Targets};
pub use backbone::{backbone_forward, Backbone, LevelFeat, PyramidFeatures, LEVEL_STRIDES};
pub use decode::decode_and_nms;
pub use head::{head_forward, Head, HeadOutput, LevelOutput};
pub use loss::{ciou, ciou_tensor, detection_loss, dfl_loss, LossWeights};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stn::LocalizationNet;
use crate::tensor::Tensor;

/// Axis-aligned box in normalized image fractions, center + size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Validate fields and clip the corners into [0, 1].
    pub fn checked(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<BBox> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !v.is_finite() {
                return Err(Error::value(format!("box {name} is not finite")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::value(format!("box {name}={v} outside [0, 1]")));
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::value("box must have positive width and height"));
        }
        BBox::from_corners(
            class_id,
            cx - w / 2.0,
            cy - h / 2.0,
            cx + w / 2.0,
            cy + h / 2.0,
        )
    }

    /// Build from corners, clipping into [0, 1]; degenerate results are
    /// rejected.
    pub fn from_corners(class_id: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BBox> {
        let x1 = x1.clamp(0.0, 1.0);
        let y1 = y1.clamp(0.0, 1.0);
        let x2 = x2.clamp(0.0, 1.0);
        let y2 = y2.clamp(0.0, 1.0);
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::value("degenerate box after clipping"));
        }
        Ok(BBox {
            class_id,
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    /// Corners (x1, y1, x2, y2).
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// A scored box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Detection> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::value(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, score })
    }
}

/// Model hyperparameters stored alongside checkpoints, so a baseline
/// detector and the transformer-equipped variant differ by one flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_classes: usize,
    /// Side-distance distributions use reg_max + 1 integer bins.
    pub reg_max: usize,
    pub stn_enabled: bool,
    /// Adaptive-pool output size of the localization network.
    pub stn_pool_size: usize,
    /// Hidden width of the head branches.
    pub head_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: 1,
            reg_max: 8,
            stn_enabled: false,
            stn_pool_size: 28,
            head_width: 32,
        }
    }
}

/// The full model: optional input transformer, backbone and head.
pub struct Detector {
    pub cfg: ModelConfig,
    pub stn: Option<LocalizationNet>,
    pub backbone: Backbone,
    pub head: Head,
    /// When set, the input warp uses these fixed affine parameters instead
    /// of the localization network (controlled-warp experiments).
    pub frozen_theta: Option<[f64; 6]>,
}

impl Detector {
    pub fn new(cfg: ModelConfig, seed: u64) -> Detector {
        let mut rng = Rng::new(seed);
        let stn = cfg
            .stn_enabled
            .then(|| LocalizationNet::new(&mut rng, cfg.stn_pool_size));
        let backbone = Backbone::new(&mut rng);
        let head = Head::new(&mut rng, &cfg);
        Detector {
            cfg,
            stn,
            backbone,
            head,
            frozen_theta: None,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut params = Vec::new();
        if let Some(stn) = &self.stn {
            params.extend(stn.named_params());
        }
        params.extend(self.backbone.named_params());
        params.extend(self.head.named_params());
        params
    }

    /// Input after the (optional) spatial transformer, plus the per-item
    /// affine parameters that were applied (None when no warp ran).
    pub fn transform_input(&self, images: &Tensor) -> Result<(Tensor, Option<Vec<[f64; 6]>>)> {
        let (n, _, h, w) = images.dims4()?;
        if let Some(theta) = self.frozen_theta {
            let warped = crate::stn::warp_with_theta(images, theta)?;
            return Ok((warped, Some(vec![theta; n])));
        }
        match &self.stn {
            Some(net) => {
                let params = crate::stn::localize(net, images)?;
                let grid = crate::stn::generate_grid(&params, h, w)?;
                let warped = crate::stn::sample(images, &grid)?;
                let thetas = (0..n).map(|i| params.row(i)).collect();
                Ok((warped, Some(thetas)))
            }
            None => Ok((images.clone(), None)),
        }
    }

    pub fn forward(&self, images: &Tensor) -> Result<HeadOutput> {
        Ok(self.forward_with_thetas(images)?.0)
    }

    /// Forward pass that also reports the warp applied per item, needed to
    /// map decoded boxes back into input-image coordinates.
    pub fn forward_with_thetas(
        &self,
        images: &Tensor,
    ) -> Result<(HeadOutput, Option<Vec<[f64; 6]>>)> {
        let (x, thetas) = self.transform_input(images)?;
        let feats = backbone_forward(&self.backbone, &x)?;
        Ok((head_forward(&self.head, &feats, &self.cfg)?, thetas))
    }

    /// End-to-end inference: forward, decode with NMS, and map boxes from
    /// the warped frame back into input-image coordinates (a box at warped
    /// position x shows input content at A_theta x).
    pub fn predict(
        &self,
        images: &Tensor,
        conf_thresh: f64,
        nms_iou_thresh: f64,
    ) -> Result<Vec<Vec<Detection>>> {
        let (_, _, h, w) = images.dims4()?;
        let (head, thetas) = self.forward_with_thetas(images)?;
        let mut dets = decode_and_nms(&head, conf_thresh, nms_iou_thresh)?;
        if let Some(thetas) = thetas {
            for (items, theta) in dets.iter_mut().zip(&thetas) {
                let m = crate::affine::theta_to_box_frac(theta, w, h);
                if m == crate::affine::IDENTITY {
                    continue;
                }
                let mapped: Vec<Detection> = items
                    .iter()
                    .filter_map(|d| {
                        let (x1, y1, x2, y2) = d.bbox.corners();
                        let corners = [(x1, y1), (x2, y1), (x1, y2), (x2, y2)];
                        let mut hx1 = f64::INFINITY;
                        let mut hy1 = f64::INFINITY;
                        let mut hx2 = f64::NEG_INFINITY;
                        let mut hy2 = f64::NEG_INFINITY;
                        for (cx, cy) in corners {
                            let (tx, ty) = crate::affine::apply(&m, cx, cy);
                            hx1 = hx1.min(tx);
                            hy1 = hy1.min(ty);
                            hx2 = hx2.max(tx);
                            hy2 = hy2.max(ty);
                        }
                        BBox::from_corners(d.bbox.class_id, hx1, hy1, hx2, hy2)
                            .ok()
                            .map(|bbox| Detection {
                                bbox,
                                score: d.score,
                            })
                    })
                    .collect();
                *items = mapped;
            }
        }
        Ok(dets)
    }

    /// Transformed input plus the feature pyramid (activation taps for
    /// heatmap rendering).
    pub fn features(&self, images: &Tensor) -> Result<(Tensor, PyramidFeatures)> {
        let (x, _) = self.transform_input(images)?;
        let feats = backbone_forward(&self.backbone, &x)?;
        Ok((x, feats))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        for (name, t) in self.named_params() {
            ck.push(name, t.shape(), t.to_vec());
        }
        ck.extra = serde_json::json!({ "model_config": self.cfg });
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Detector> {
        let cfg: ModelConfig = serde_json::from_value(
            ck.extra
                .get("model_config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing model_config".into()))?,
        )?;
        let model = Detector::new(cfg, 0);
        for (name, t) in model.named_params() {
            let e = ck
                .entry(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?;
            if e.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry '{name}': shape {:?} does not match model {:?}",
                    e.shape,
                    t.shape()
                )));
            }
            t.set_data(&e.data)?;
        }
        Ok(model)
    }
}

//! Prediction head: per pyramid level, one branch for class logits and one
//! for the four per-side distance distributions. Branches are two conv
//! layers deep and unshared across levels.

use super::backbone::{Backbone, PyramidFeatures};
use super::ModelConfig;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{conv2d, he_uniform, Tensor};

/// Initial class-logit bias; keeps background scores low at the start of
/// training so the classification loss does not swamp the box terms.
const CLS_BIAS_INIT: f64 = -4.0;

struct Branch {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Branch {
    fn new(rng: &mut Rng, in_ch: usize, mid: usize, out_ch: usize, out_bias: f64) -> Branch {
        Branch {
            w1: he_uniform(rng, &[mid, in_ch, 3, 3], in_ch * 9),
            b1: Tensor::param(&[mid], vec![0.0; mid]).unwrap(),
            w2: he_uniform(rng, &[out_ch, mid, 1, 1], mid),
            b2: Tensor::param(&[out_ch], vec![out_bias; out_ch]).unwrap(),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = conv2d(x, &self.w1, Some(&self.b1), 1, 1)?.relu()?;
        conv2d(&h, &self.w2, Some(&self.b2), 1, 0)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.conv1.weight"), self.w1.clone()));
        out.push((format!("{prefix}.conv1.bias"), self.b1.clone()));
        out.push((format!("{prefix}.conv2.weight"), self.w2.clone()));
        out.push((format!("{prefix}.conv2.bias"), self.b2.clone()));
    }
}

pub struct Head {
    cls: Vec<Branch>,
    reg: Vec<Branch>,
}

impl Head {
    pub fn new(rng: &mut Rng, cfg: &ModelConfig) -> Head {
        let bins = cfg.reg_max + 1;
        let mut cls = Vec::new();
        let mut reg = Vec::new();
        for level in 0..3 {
            let in_ch = Backbone::level_channels(level);
            cls.push(Branch::new(
                rng,
                in_ch,
                cfg.head_width,
                cfg.n_classes,
                CLS_BIAS_INIT,
            ));
            reg.push(Branch::new(rng, in_ch, cfg.head_width, 4 * bins, 0.0));
        }
        Head { cls, reg }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (c, r)) in self.cls.iter().zip(&self.reg).enumerate() {
            c.named(&format!("head.level{i}.cls"), &mut out);
            r.named(&format!("head.level{i}.reg"), &mut out);
        }
        out
    }
}

/// Per-level head output: class logits (n, n_classes, h, w) and distance
/// logits (n, 4 * (reg_max + 1), h, w).
pub struct LevelOutput {
    pub cls: Tensor,
    pub reg: Tensor,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
}

pub struct HeadOutput {
    pub levels: Vec<LevelOutput>,
    pub n_classes: usize,
    pub reg_max: usize,
    pub batch: usize,
}

impl HeadOutput {
    /// (h, w, stride) of every level, the geometry targets are assigned on.
    pub fn geometry(&self) -> Vec<(usize, usize, usize)> {
        self.levels.iter().map(|l| (l.h, l.w, l.stride)).collect()
    }
}

pub fn head_forward(
    head: &Head,
    feats: &PyramidFeatures,
    cfg: &ModelConfig,
) -> Result<HeadOutput> {
    let mut levels = Vec::new();
    let mut batch = 0;
    for (i, lf) in feats.levels.iter().enumerate() {
        let cls = head.cls[i].forward(&lf.feat)?;
        let reg = head.reg[i].forward(&lf.feat)?;
        let (n, _, h, w) = cls.dims4()?;
        batch = n;
        levels.push(LevelOutput {
            cls,
            reg,
            stride: lf.stride,
            h,
            w,
        });
    }
    Ok(HeadOutput {
        levels,
        n_classes: cfg.n_classes,
        reg_max: cfg.reg_max,
        batch,
    })
}

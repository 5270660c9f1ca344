//! Strided backbone: five conv-ReLU stages halving the resolution each
//! time; the last three (strides 8, 16, 32) feed the head.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv2d, he_uniform, Tensor};

const STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 128];

/// Strides of the pyramid levels handed to the head, fine to coarse.
pub const LEVEL_STRIDES: [usize; 3] = [8, 16, 32];

pub struct Backbone {
    stage_w: Vec<Tensor>,
    stage_b: Vec<Tensor>,
}

impl Backbone {
    pub fn new(rng: &mut Rng) -> Backbone {
        let mut stage_w = Vec::new();
        let mut stage_b = Vec::new();
        let mut in_ch = 3;
        for &out_ch in &STAGE_WIDTHS {
            stage_w.push(he_uniform(rng, &[out_ch, in_ch, 3, 3], in_ch * 9));
            stage_b.push(Tensor::param(&[out_ch], vec![0.0; out_ch]).unwrap());
            in_ch = out_ch;
        }
        Backbone { stage_w, stage_b }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.stage_w.iter().zip(&self.stage_b).enumerate() {
            out.push((format!("backbone.stage{}.weight", i + 1), w.clone()));
            out.push((format!("backbone.stage{}.bias", i + 1), b.clone()));
        }
        out
    }

    /// Channel width of pyramid level `level` (0 = stride 8).
    pub fn level_channels(level: usize) -> usize {
        STAGE_WIDTHS[level + 2]
    }
}

pub struct LevelFeat {
    pub feat: Tensor,
    pub stride: usize,
}

/// Feature maps at strides 8, 16 and 32, fine to coarse; spatial dims halve
/// between consecutive levels.
pub struct PyramidFeatures {
    pub levels: Vec<LevelFeat>,
}

pub fn backbone_forward(backbone: &Backbone, image: &Tensor) -> Result<PyramidFeatures> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("backbone expects 3 channels, got {c}")));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::shape(format!(
            "backbone input dims must be divisible by 32, got {h}x{w}"
        )));
    }
    let mut x = image.clone();
    let mut levels = Vec::new();
    for (i, (wgt, b)) in backbone.stage_w.iter().zip(&backbone.stage_b).enumerate() {
        x = conv2d(&x, wgt, Some(b), 2, 1)?.relu()?;
        if i >= 2 {
            levels.push(LevelFeat {
                feat: x.clone(),
                stride: LEVEL_STRIDES[i - 2],
            });
        }
    }
    Ok(PyramidFeatures { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic() {
        let mut rng = Rng::new(1);
        let bb = Backbone::new(&mut rng);
        let img = Tensor::new(&[1, 3, 64, 64], vec![0.1; 3 * 64 * 64]).unwrap();
        let feats = backbone_forward(&bb, &img).unwrap();
        let dims: Vec<(usize, usize)> = feats
            .levels
            .iter()
            .map(|l| {
                let (_, _, h, w) = l.feat.dims4().unwrap();
                (h, w)
            })
            .collect();
        assert_eq!(dims, vec![(8, 8), (4, 4), (2, 2)]);
        assert_eq!(
            feats.levels.iter().map(|l| l.stride).collect::<Vec<_>>(),
            vec![8, 16, 32]
        );
    }

    #[test]
    fn batch_dim_preserved() {
        let mut rng = Rng::new(2);
        let bb = Backbone::new(&mut rng);
        let img = Tensor::new(&[2, 3, 32, 32], vec![0.1; 2 * 3 * 32 * 32]).unwrap();
        let feats = backbone_forward(&bb, &img).unwrap();
        for l in &feats.levels {
            assert_eq!(l.feat.shape()[0], 2);
        }
    }

    #[test]
    fn non_divisible_dims_rejected() {
        let mut rng = Rng::new(3);
        let bb = Backbone::new(&mut rng);
        let img = Tensor::new(&[1, 3, 48, 64], vec![0.0; 3 * 48 * 64]).unwrap();
        assert!(backbone_forward(&bb, &img).is_err());
    }
}

//! Spatial transformer: a shallow localization network regresses six
//! affine parameters per image, a grid generator maps the regular output
//! lattice through them, and a bilinear sampler warps the input.
//!
//! The transformer warps the raw 3-channel input image, output size equal
//! to input size, and is initialized to the identity warp: the final
//! regression layer starts with zero weights and bias (1, 0, 0, 0, 1, 0),
//! so a freshly constructed network is an exact identity map regardless of
//! its convolutional weights.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{affine_grid, grid_sample, he_uniform, Tensor};

/// Per-item affine coefficients (t11, t12, t13, t21, t22, t23) as an
/// (n, 6) tensor.
#[derive(Debug, Clone)]
pub struct AffineParams {
    tensor: Tensor,
}

impl AffineParams {
    pub fn from_tensor(tensor: Tensor) -> Result<AffineParams> {
        let (_, six) = tensor.dims2()?;
        if six != 6 {
            return Err(Error::shape(format!(
                "affine params must be (n, 6), got {:?}",
                tensor.shape()
            )));
        }
        if tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::value("non-finite affine parameters"));
        }
        Ok(AffineParams { tensor })
    }

    /// Identity parameters for a batch of `n`.
    pub fn identity(n: usize) -> AffineParams {
        let mut d = Vec::with_capacity(n * 6);
        for _ in 0..n {
            d.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        AffineParams {
            tensor: Tensor::new(&[n, 6], d).unwrap(),
        }
    }

    /// Same six coefficients replicated across a batch of `n`.
    pub fn broadcast(theta: [f64; 6], n: usize) -> AffineParams {
        let mut d = Vec::with_capacity(n * 6);
        for _ in 0..n {
            d.extend_from_slice(&theta);
        }
        AffineParams {
            tensor: Tensor::new(&[n, 6], d).unwrap(),
        }
    }

    pub fn batch(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn row(&self, i: usize) -> [f64; 6] {
        let d = self.tensor.data();
        let mut out = [0.0; 6];
        out.copy_from_slice(&d[i * 6..(i + 1) * 6]);
        out
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Source coordinates for every output pixel, in normalized [-1, 1]
/// align-corners coordinates, stored as an (n, 2, out_h, out_w) tensor.
#[derive(Debug, Clone)]
pub struct SamplingGrid {
    coords: Tensor,
    out_h: usize,
    out_w: usize,
}

impl SamplingGrid {
    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Source coordinates (x_s, y_s) for output pixel (iy, ix) of item `n`.
    pub fn source(&self, n: usize, iy: usize, ix: usize) -> (f64, f64) {
        let spatial = self.out_h * self.out_w;
        let d = self.coords.data();
        let base = n * 2 * spatial;
        let p = iy * self.out_w + ix;
        (d[base + p], d[base + spatial + p])
    }

    /// Regular target lattice coordinate (x_t, y_t) for output pixel (iy, ix).
    pub fn target(&self, iy: usize, ix: usize) -> (f64, f64) {
        (
            crate::tensor::lattice_coord(ix, self.out_w),
            crate::tensor::lattice_coord(iy, self.out_h),
        )
    }

    pub fn tensor(&self) -> &Tensor {
        &self.coords
    }
}

/// Map the regular output lattice through per-item affine parameters:
/// (x_s, y_s) = A_theta (x_t, y_t, 1). Differentiable w.r.t. theta.
pub fn generate_grid(theta: &AffineParams, out_h: usize, out_w: usize) -> Result<SamplingGrid> {
    let coords = affine_grid(theta.tensor(), out_h, out_w)?;
    Ok(SamplingGrid {
        coords,
        out_h,
        out_w,
    })
}

/// Bilinear sampling of `input` at the grid's source coordinates; the same
/// grid is applied to every channel, out-of-image sources read as zero.
pub fn sample(input: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    grid_sample(input, &grid.coords)
}

/// Shallow localization network: one 7x7 convolution (3 -> 8 channels,
/// stride 1, padding 3), 2x2 max pooling, ReLU, adaptive average pooling
/// to `pool_size` x `pool_size`, and a linear regression to 6 outputs.
pub struct LocalizationNet {
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
    pub pool_size: usize,
}

pub const LOC_CONV_CHANNELS: usize = 8;

impl LocalizationNet {
    pub fn new(rng: &mut Rng, pool_size: usize) -> LocalizationNet {
        let fan_in = 3 * 7 * 7;
        let conv_w = he_uniform(rng, &[LOC_CONV_CHANNELS, 3, 7, 7], fan_in);
        let conv_b = Tensor::param(&[LOC_CONV_CHANNELS], vec![0.0; LOC_CONV_CHANNELS]).unwrap();
        let feat = LOC_CONV_CHANNELS * pool_size * pool_size;
        // Identity initialization: zero regression weights, identity bias.
        let fc_w = Tensor::param(&[6, feat], vec![0.0; 6 * feat]).unwrap();
        let fc_b = Tensor::param(&[6], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        LocalizationNet {
            conv_w,
            conv_b,
            fc_w,
            fc_b,
            pool_size,
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("stn.conv.weight".into(), self.conv_w.clone()),
            ("stn.conv.bias".into(), self.conv_b.clone()),
            ("stn.fc.weight".into(), self.fc_w.clone()),
            ("stn.fc.bias".into(), self.fc_b.clone()),
        ]
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = image.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!(
                "localization net expects 3 input channels, got {c}"
            )));
        }
        let x = crate::tensor::conv2d(image, &self.conv_w, Some(&self.conv_b), 1, 3)?;
        let x = crate::tensor::max_pool2d(&x, 2, 2)?;
        let x = x.relu()?;
        let x = crate::tensor::adaptive_avg_pool2d(&x, self.pool_size, self.pool_size)?;
        let feat = LOC_CONV_CHANNELS * self.pool_size * self.pool_size;
        let x = x.reshape(&[n, feat])?;
        x.linear(&self.fc_w, &self.fc_b)
    }
}

/// Run the localization network; the result is differentiable w.r.t. both
/// the image and the network parameters.
pub fn localize(net: &LocalizationNet, image: &Tensor) -> Result<AffineParams> {
    AffineParams::from_tensor(net.forward(image)?)
}

/// Full transformer pass: localize, generate the grid at the input's own
/// spatial size, and sample. A freshly initialized net returns its input
/// unchanged.
pub fn stn_forward(net: &LocalizationNet, image: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = image.dims4()?;
    let theta = localize(net, image)?;
    let grid = generate_grid(&theta, h, w)?;
    sample(image, &grid)
}

/// Transformer pass with externally supplied parameters (frozen-warp
/// experiments, augmentation undo checks).
pub fn warp_with_theta(image: &Tensor, theta: [f64; 6]) -> Result<Tensor> {
    let (n, _, h, w) = image.dims4()?;
    let params = AffineParams::broadcast(theta, n);
    let grid = generate_grid(&params, h, w)?;
    sample(image, &grid)
}

//! Test-time geometric augmentation: rotation, shear and crop-zoom applied
//! consistently to images and boxes.
//!
//! Every warp is defined by one forward content transform in the image
//! plane, composed as zoom-scale after shear after rotation about the
//! image center. The image is warped through the inverse of that
//! transform (bilinear, zero fill) while box corners are mapped forward
//! and replaced by their axis-aligned hull. Parameter draws are keyed by
//! (seed, image index), so parallel application cannot change results.

use serde::{Deserialize, Serialize};

use crate::affine::{self, Affine2};
use crate::data::{LoadedDataset, Sample};
use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Declared parameter bounds: rotation and shear within +/-10 degrees,
/// crop zoom at most 15%.
pub const MAX_ANGLE_DEG: f64 = 10.0;
pub const MAX_CROP_ZOOM: f64 = 0.15;

/// Fraction of original box area below which a clipped box is dropped.
pub const DEFAULT_DROP_FRAC: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Rotation range in degrees, or off.
    pub rotation: Option<(f64, f64)>,
    /// Horizontal shear range in degrees, or off.
    pub shear_h: Option<(f64, f64)>,
    /// Vertical shear range in degrees, or off.
    pub shear_v: Option<(f64, f64)>,
    /// Maximum extra zoom fraction (scale drawn from [1, 1 + zoom]), or off.
    pub crop_zoom: Option<f64>,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn off(seed: u64) -> AugmentSpec {
        AugmentSpec {
            rotation: None,
            shear_h: None,
            shear_v: None,
            crop_zoom: None,
            seed,
        }
    }

    /// Build a spec from the three on/off switches with the declared
    /// default ranges.
    pub fn from_flags(rotation: bool, shear: bool, crop: bool, seed: u64) -> AugmentSpec {
        AugmentSpec {
            rotation: rotation.then_some((-MAX_ANGLE_DEG, MAX_ANGLE_DEG)),
            shear_h: shear.then_some((-MAX_ANGLE_DEG, MAX_ANGLE_DEG)),
            shear_v: shear.then_some((-MAX_ANGLE_DEG, MAX_ANGLE_DEG)),
            crop_zoom: crop.then_some(MAX_CROP_ZOOM),
            seed,
        }
    }

    pub fn is_off(&self) -> bool {
        self.rotation.is_none()
            && self.shear_h.is_none()
            && self.shear_v.is_none()
            && self.crop_zoom.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, range) in [
            ("rotation", self.rotation),
            ("shear_h", self.shear_h),
            ("shear_v", self.shear_v),
        ] {
            if let Some((lo, hi)) = range {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::Config(format!("{name}: bad range [{lo}, {hi}]")));
                }
                if lo < -MAX_ANGLE_DEG || hi > MAX_ANGLE_DEG {
                    return Err(Error::Config(format!(
                        "{name}: range [{lo}, {hi}] outside +/-{MAX_ANGLE_DEG} degrees"
                    )));
                }
            }
        }
        if let Some(z) = self.crop_zoom {
            if !(0.0..=MAX_CROP_ZOOM).contains(&z) {
                return Err(Error::Config(format!(
                    "crop_zoom {z} outside (0, {MAX_CROP_ZOOM}]"
                )));
            }
        }
        Ok(())
    }

    /// Per-image parameter draw; the sequence depends only on
    /// (seed, index).
    pub fn draw(&self, index: usize) -> AffineDraw {
        let mut rng = Rng::new(derive_seed(self.seed, index as u64));
        let mut draw = AffineDraw::identity();
        if let Some((lo, hi)) = self.rotation {
            draw.rot_deg = rng.uniform(lo, hi);
        }
        if let Some((lo, hi)) = self.shear_h {
            draw.shear_h_deg = rng.uniform(lo, hi);
        }
        if let Some((lo, hi)) = self.shear_v {
            draw.shear_v_deg = rng.uniform(lo, hi);
        }
        if let Some(z) = self.crop_zoom {
            draw.zoom = rng.uniform(1.0, 1.0 + z);
        }
        draw
    }
}

/// Concrete per-image affine parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub rot_deg: f64,
    pub shear_h_deg: f64,
    pub shear_v_deg: f64,
    pub zoom: f64,
}

impl AffineDraw {
    pub fn identity() -> AffineDraw {
        AffineDraw {
            rot_deg: 0.0,
            shear_h_deg: 0.0,
            shear_v_deg: 0.0,
            zoom: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rot_deg == 0.0
            && self.shear_h_deg == 0.0
            && self.shear_v_deg == 0.0
            && self.zoom == 1.0
    }

    /// Forward content transform in plane coordinates, acting about the
    /// image center: zoom-scale after shear after rotation.
    pub fn content_transform(&self, w: usize, h: usize) -> Affine2 {
        let r = self.rot_deg.to_radians();
        let (sin, cos) = r.sin_cos();
        let rot: Affine2 = [[cos, -sin, 0.0], [sin, cos, 0.0]];
        let sh: Affine2 = [
            [1.0, self.shear_h_deg.to_radians().tan(), 0.0],
            [self.shear_v_deg.to_radians().tan(), 1.0, 0.0],
        ];
        let sc: Affine2 = [[self.zoom, 0.0, 0.0], [0.0, self.zoom, 0.0]];
        let lin = affine::compose(&sc, &affine::compose(&sh, &rot));
        affine::about_point(&lin, w as f64 / 2.0, h as f64 / 2.0)
    }

    /// Normalized affine parameters that warp the augmented image back to
    /// the original: the content transform expressed in the sampler frame.
    pub fn undo_theta(&self, w: usize, h: usize) -> Result<[f64; 6]> {
        let m = self.content_transform(w, h);
        Ok(affine::pixel_center_to_theta(
            &affine::plane_to_pixel_center(&m),
            w,
            h,
        ))
    }
}

/// Warp an (n, c, h, w) image by the composed affine about its center,
/// bilinear with zero fill, output size unchanged. All-zero parameters
/// return the input bit-exactly.
pub fn affine_image(
    image: &Tensor,
    rot_deg: f64,
    shear_h_deg: f64,
    shear_v_deg: f64,
    zoom: f64,
) -> Result<Tensor> {
    for (name, v) in [
        ("rot_deg", rot_deg),
        ("shear_h_deg", shear_h_deg),
        ("shear_v_deg", shear_v_deg),
        ("zoom", zoom),
    ] {
        if !v.is_finite() {
            return Err(Error::value(format!("affine_image: {name} is not finite")));
        }
    }
    let draw = AffineDraw {
        rot_deg,
        shear_h_deg,
        shear_v_deg,
        zoom,
    };
    let (n, _, h, w) = image.dims4()?;
    let m = draw.content_transform(w, h);
    let m_inv = affine::invert(&m)?;
    let theta = affine::pixel_center_to_theta(&affine::plane_to_pixel_center(&m_inv), w, h);
    let params = crate::stn::AffineParams::broadcast(theta, n);
    let grid = crate::stn::generate_grid(&params, h, w)?;
    crate::stn::sample(image, &grid)
}

/// Map each box's corners through the forward plane transform, take the
/// axis-aligned hull, clip into [0, 1]; boxes whose clipped area falls
/// below `drop_frac` of their original area are dropped.
pub fn transform_boxes(
    boxes: &[BBox],
    m: &Affine2,
    image_dims: (usize, usize),
    drop_frac: f64,
) -> Result<Vec<BBox>> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::value("transform_boxes: singular affine"));
    }
    if *m == affine::IDENTITY {
        return Ok(boxes.to_vec());
    }
    let (w, h) = (image_dims.0 as f64, image_dims.1 as f64);
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        let (x1, y1, x2, y2) = b.corners();
        let corners = [
            (x1 * w, y1 * h),
            (x2 * w, y1 * h),
            (x1 * w, y2 * h),
            (x2 * w, y2 * h),
        ];
        let mut hx1 = f64::INFINITY;
        let mut hy1 = f64::INFINITY;
        let mut hx2 = f64::NEG_INFINITY;
        let mut hy2 = f64::NEG_INFINITY;
        for (cx, cy) in corners {
            let (tx, ty) = affine::apply(m, cx, cy);
            hx1 = hx1.min(tx);
            hy1 = hy1.min(ty);
            hx2 = hx2.max(tx);
            hy2 = hy2.max(ty);
        }
        let hull_area_px = (hx2 - hx1) * (hy2 - hy1);
        let orig_area_px = (x2 - x1) * w * ((y2 - y1) * h);
        match BBox::from_corners(b.class_id, hx1 / w, hy1 / h, hx2 / w, hy2 / h) {
            Ok(clipped) => {
                let clip_ratio = clipped.area() * w * h * hull_area_px
                    / (hull_area_px * orig_area_px.max(f64::MIN_POSITIVE));
                // ratio of clipped area to the original box area
                let _ = clip_ratio;
                let clipped_px = clipped.w * w * (clipped.h * h);
                if clipped_px >= drop_frac * orig_area_px {
                    out.push(clipped);
                }
            }
            Err(_) => {
                // degenerate after clipping: dropped
            }
        }
    }
    Ok(out)
}

/// Apply per-image draws to a whole dataset: images warped through the
/// inverse map, labels through the forward map. An all-off spec returns
/// the dataset bitwise unchanged; the same seed always produces the same
/// result.
pub fn augment_testset(dataset: &LoadedDataset, spec: &AugmentSpec) -> Result<LoadedDataset> {
    spec.validate()?;
    if spec.is_off() {
        return Ok(dataset.clone());
    }
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let draw = spec.draw(i);
        if draw.is_identity() {
            samples.push(s.clone());
            continue;
        }
        let img = s.to_tensor();
        let warped = affine_image(
            &img,
            draw.rot_deg,
            draw.shear_h_deg,
            draw.shear_v_deg,
            draw.zoom,
        )
        .map_err(|e| Error::Dataset(format!("item '{}': {e}", s.stem)))?;
        let m = draw.content_transform(s.w, s.h);
        let boxes = transform_boxes(&s.boxes, &m, (s.w, s.h), DEFAULT_DROP_FRAC)
            .map_err(|e| Error::Dataset(format!("item '{}': {e}", s.stem)))?;
        samples.push(Sample {
            stem: s.stem.clone(),
            pixels: warped.to_vec(),
            h: s.h,
            w: s.w,
            boxes,
        });
    }
    Ok(LoadedDataset {
        samples,
        n_classes: dataset.n_classes,
    })
}

/// The eight on/off combinations of (rotation, shear, crop), in grid order:
/// none first, all three last.
pub fn grid_rows() -> [[bool; 3]; 8] {
    let mut rows = [[false; 3]; 8];
    for (i, row) in rows.iter_mut().enumerate() {
        row[0] = i & 0b100 != 0;
        row[1] = i & 0b010 != 0;
        row[2] = i & 0b001 != 0;
    }
    rows
}

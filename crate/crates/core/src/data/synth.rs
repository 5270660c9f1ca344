//! Synthetic dataset generator: filled rectangles and ellipses on textured
//! backgrounds, with exact bounding-box labels, deterministic from a seed.
//!
//! Shape extents snap to half-stride offsets of the finest pyramid level
//! (pixel coordinates congruent to 4 mod 8) and stay under a quarter of
//! the image side, so every box lands on the stride-8 level with integer
//! side-distance targets. That puts the optimum of the distribution loss
//! at exactly zero, which keeps overfit runs meaningful. Shapes keep a
//! 16-pixel border margin so moderate test-time rotations do not push
//! them into the zero-padded corners.

use std::fs;
use std::path::Path;

use super::dataset::{load_dataset, DatasetIndex};
use super::labels::serialize_labels;
use super::pnm::{write_ppm, RgbImage};
use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

const STRIDE: usize = 8;
const MARGIN: usize = 16;
const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// One rendered shape, exposed for mask-based verification.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub kind: ShapeKind,
    /// Pixel-plane extents [x1, x2) x [y1, y2).
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    pub color: [f64; 3],
}

impl Shape {
    /// Whether the pixel with index (px, py) is covered (pixel centers at
    /// half offsets).
    pub fn covers(&self, px: usize, py: usize) -> bool {
        let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
        match self.kind {
            ShapeKind::Rect => {
                fx >= self.x1 as f64 && fx < self.x2 as f64 && fy >= self.y1 as f64 && fy < self.y2 as f64
            }
            ShapeKind::Ellipse => {
                let a = (self.x2 - self.x1) as f64 / 2.0;
                let b = (self.y2 - self.y1) as f64 / 2.0;
                let cx = self.x1 as f64 + a;
                let cy = self.y1 as f64 + b;
                let dx = (fx - cx) / a;
                let dy = (fy - cy) / b;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

pub struct SynthImage {
    pub rgb: RgbImage,
    pub boxes: Vec<BBox>,
    pub shapes: Vec<Shape>,
}

/// Render one synthetic image. `(seed, index)` fully determines the output.
pub fn synth_image(seed: u64, index: usize, image_size: usize) -> Result<SynthImage> {
    if !image_size.is_multiple_of(32) {
        return Err(Error::value(format!(
            "image size {image_size} must be divisible by 32"
        )));
    }
    if image_size < 64 {
        return Err(Error::value("image size must be at least 64"));
    }
    let s = image_size;
    let mut rng = Rng::new(derive_seed(seed, index as u64));

    // textured background: per-tile base color plus per-pixel jitter
    let tiles = s.div_ceil(TILE);
    let mut tile_colors = Vec::with_capacity(tiles * tiles);
    for _ in 0..tiles * tiles {
        tile_colors.push([
            rng.uniform(0.05, 0.30),
            rng.uniform(0.05, 0.30),
            rng.uniform(0.05, 0.30),
        ]);
    }
    let mut pixels = vec![0.0f64; 3 * s * s];
    for py in 0..s {
        for px in 0..s {
            let base = tile_colors[(py / TILE) * tiles + px / TILE];
            let jitter = rng.uniform(-0.02, 0.02);
            for c in 0..3 {
                pixels[c * s * s + py * s + px] = (base[c] + jitter).clamp(0.0, 1.0);
            }
        }
    }

    // shapes with half-stride-aligned extents
    let n_shapes = 1 + rng.next_below(3);
    let mut shapes: Vec<Shape> = Vec::new();
    'place: for _ in 0..n_shapes {
        for _attempt in 0..40 {
            let w = (1 + rng.next_below(3)) * STRIDE;
            let h = (1 + rng.next_below(3)) * STRIDE;
            let k_max_x = (s - MARGIN - 4 - w) / STRIDE;
            let k_max_y = (s - MARGIN - 4 - h) / STRIDE;
            if k_max_x < 2 || k_max_y < 2 {
                continue 'place;
            }
            let kx = 2 + rng.next_below(k_max_x - 1);
            let ky = 2 + rng.next_below(k_max_y - 1);
            let x1 = 4 + STRIDE * kx;
            let y1 = 4 + STRIDE * ky;
            let (x2, y2) = (x1 + w, y1 + h);
            // keep shapes separated by at least one stride so centers land
            // in distinct cells and boxes never overlap
            let clear = shapes.iter().all(|sh| {
                let gap = STRIDE;
                x2 + gap <= sh.x1 || sh.x2 + gap <= x1 || y2 + gap <= sh.y1 || sh.y2 + gap <= y1
            });
            if !clear {
                continue;
            }
            let kind = if rng.next_below(2) == 0 {
                ShapeKind::Rect
            } else {
                ShapeKind::Ellipse
            };
            let color = [
                rng.uniform(0.6, 1.0),
                rng.uniform(0.6, 1.0),
                rng.uniform(0.6, 1.0),
            ];
            shapes.push(Shape {
                kind,
                x1,
                y1,
                x2,
                y2,
                color,
            });
            continue 'place;
        }
    }

    for sh in &shapes {
        for py in sh.y1..sh.y2 {
            for px in sh.x1..sh.x2 {
                if sh.covers(px, py) {
                    for c in 0..3 {
                        pixels[c * s * s + py * s + px] = sh.color[c];
                    }
                }
            }
        }
    }

    let img = s as f64;
    let boxes: Vec<BBox> = shapes
        .iter()
        .map(|sh| {
            BBox::from_corners(
                0,
                sh.x1 as f64 / img,
                sh.y1 as f64 / img,
                sh.x2 as f64 / img,
                sh.y2 as f64 / img,
            )
            .expect("synth shape extents are valid")
        })
        .collect();

    let mut data = Vec::with_capacity(3 * s * s);
    for i in 0..s * s {
        for c in 0..3 {
            data.push((pixels[c * s * s + i] * 255.0).round() as u8);
        }
    }
    Ok(SynthImage {
        rgb: RgbImage { w: s, h: s, data },
        boxes,
        shapes,
    })
}

/// Materialize `n_images` synthetic images plus labels under
/// `root/images/<split>` and `root/labels/<split>`, then index them.
/// Regeneration from the same seed is byte-identical.
pub fn synth_dataset(
    root: impl AsRef<Path>,
    split: &str,
    seed: u64,
    n_images: usize,
    image_size: usize,
) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let img_dir = root.join("images").join(split);
    let lbl_dir = root.join("labels").join(split);
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&lbl_dir)?;
    for i in 0..n_images {
        let item = synth_image(seed, i, image_size)?;
        let stem = format!("synth_{i:04}");
        write_ppm(img_dir.join(format!("{stem}.ppm")), &item.rgb)?;
        fs::write(lbl_dir.join(format!("{stem}.txt")), serialize_labels(&item.boxes))?;
    }
    load_dataset(root, split, 1)
}

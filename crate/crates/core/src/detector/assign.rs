//! Deterministic target assignment: each ground-truth box goes to the
//! pyramid level selected by its size and to the single cell containing
//! its center. When two boxes land on the same cell the earlier one (by
//! input order) keeps it.

use super::{BBox, ModelConfig};
use crate::error::{Error, Result};

/// Reference image size the level thresholds are stated at.
const REFERENCE_SIZE: f64 = 256.0;

/// Pyramid level for a box: the level whose stride range contains
/// max(w, h) * 256 (< 64 -> stride 8, < 128 -> stride 16, else stride 32).
pub fn level_for_box(b: &BBox) -> usize {
    let size_ref = b.w.max(b.h) * REFERENCE_SIZE;
    if size_ref < 64.0 {
        0
    } else if size_ref < 128.0 {
        1
    } else {
        2
    }
}

/// One assigned cell: class target plus the four side distances
/// (left, top, right, bottom) from the cell's anchor point, in stride units.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTarget {
    pub batch: usize,
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub class_id: usize,
    pub dists: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Targets {
    pub assigned: Vec<CellTarget>,
    /// (h, w, stride) per level.
    pub geometry: Vec<(usize, usize, usize)>,
    pub batch: usize,
    pub n_classes: usize,
}

impl Targets {
    pub fn assigned_on(&self, level: usize) -> impl Iterator<Item = &CellTarget> {
        self.assigned.iter().filter(move |c| c.level == level)
    }
}

/// Assign per-image ground truths onto the pyramid geometry. `image_size`
/// is the square input resolution in pixels; distances are clamped into
/// [0, reg_max - 1e-3] so they always fall inside the distribution bins.
pub fn assign_targets(
    gts: &[Vec<BBox>],
    geometry: &[(usize, usize, usize)],
    image_size: usize,
    cfg: &ModelConfig,
) -> Result<Targets> {
    let img = image_size as f64;
    let mut assigned: Vec<CellTarget> = Vec::new();
    let mut occupied: std::collections::HashSet<(usize, usize, usize, usize)> =
        std::collections::HashSet::new();
    for (bi, boxes) in gts.iter().enumerate() {
        for b in boxes {
            if b.area() <= 0.0 {
                return Err(Error::value("zero-area ground-truth box"));
            }
            if b.class_id >= cfg.n_classes {
                return Err(Error::value(format!(
                    "class id {} out of vocabulary ({} classes)",
                    b.class_id, cfg.n_classes
                )));
            }
            let level = level_for_box(b);
            let (h, w, stride) = geometry[level];
            let s = stride as f64;
            let cx_px = b.cx * img;
            let cy_px = b.cy * img;
            let cell_x = ((cx_px / s).floor() as usize).min(w - 1);
            let cell_y = ((cy_px / s).floor() as usize).min(h - 1);
            if !occupied.insert((bi, level, cell_y, cell_x)) {
                continue;
            }
            let anchor_x = (cell_x as f64 + 0.5) * s;
            let anchor_y = (cell_y as f64 + 0.5) * s;
            let (x1, y1, x2, y2) = b.corners();
            let max_d = cfg.reg_max as f64 - 1e-3;
            let dists = [
                ((anchor_x - x1 * img) / s).clamp(0.0, max_d),
                ((anchor_y - y1 * img) / s).clamp(0.0, max_d),
                ((x2 * img - anchor_x) / s).clamp(0.0, max_d),
                ((y2 * img - anchor_y) / s).clamp(0.0, max_d),
            ];
            assigned.push(CellTarget {
                batch: bi,
                level,
                y: cell_y,
                x: cell_x,
                class_id: b.class_id,
                dists,
            });
        }
    }
    Ok(Targets {
        assigned,
        geometry: geometry.to_vec(),
        batch: gts.len(),
        n_classes: cfg.n_classes,
    })
}

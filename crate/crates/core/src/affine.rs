//! 2x3 affine matrices and the coordinate-frame conversions shared by the
//! sampler and the augmentation harness.
//!
//! Three frames appear in the toolkit:
//! - *plane*: continuous image plane `[0,W] x [0,H]` (box corners live here,
//!   scaled from normalized `[0,1]` fractions),
//! - *pixel-center*: pixel i has coordinate i, so the grid sampler reads
//!   plane coordinate i + 0.5,
//! - *normalized*: [-1,1] align-corners coordinates consumed by the grid
//!   generator.
//!
//! All warps are defined by a forward content transform F in plane
//! coordinates; the sampler needs the inverse (destination -> source)
//! converted into normalized coordinates.

use crate::error::{Error, Result};

/// Row-major 2x3 affine: `[ [a, b, tx], [c, d, ty] ]`, mapping
/// (x, y) -> (a x + b y + tx, c x + d y + ty).
pub type Affine2 = [[f64; 3]; 2];

pub const IDENTITY: Affine2 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

pub fn apply(m: &Affine2, x: f64, y: f64) -> (f64, f64) {
    (
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
    )
}

/// a after b: compose(a, b)(p) = a(b(p)).
pub fn compose(a: &Affine2, b: &Affine2) -> Affine2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[0][0] * b[0][2] + a[0][1] * b[1][2] + a[0][2],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
            a[1][0] * b[0][2] + a[1][1] * b[1][2] + a[1][2],
        ],
    ]
}

pub fn invert(m: &Affine2) -> Result<Affine2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::value("singular affine matrix"));
    }
    let ia = m[1][1] / det;
    let ib = -m[0][1] / det;
    let ic = -m[1][0] / det;
    let id = m[0][0] / det;
    Ok([
        [ia, ib, -(ia * m[0][2] + ib * m[1][2])],
        [ic, id, -(ic * m[0][2] + id * m[1][2])],
    ])
}

/// Conjugate a linear map `a` (2x2 embedded in 2x3 with zero translation)
/// so it acts about the point (cx, cy).
pub fn about_point(a: &Affine2, cx: f64, cy: f64) -> Affine2 {
    let shift_in: Affine2 = [[1.0, 0.0, -cx], [0.0, 1.0, -cy]];
    let shift_out: Affine2 = [[1.0, 0.0, cx], [0.0, 1.0, cy]];
    compose(&shift_out, &compose(a, &shift_in))
}

/// Convert a destination->source matrix in pixel-center coordinates into
/// the six normalized align-corners parameters the grid generator expects.
///
/// With half-extents cx = (w-1)/2, cy = (h-1)/2 shared by input and output
/// (output size equals input size):
/// t11 = m00, t12 = m01*cy/cx, t13 = (m00*cx + m01*cy + m02)/cx - 1, and
/// symmetrically for the second row. An identity matrix maps to exactly
/// (1, 0, 0, 0, 1, 0).
pub fn pixel_center_to_theta(m: &Affine2, w: usize, h: usize) -> [f64; 6] {
    let cx = (w.max(2) - 1) as f64 / 2.0;
    let cy = (h.max(2) - 1) as f64 / 2.0;
    [
        m[0][0],
        m[0][1] * cy / cx,
        (m[0][0] * cx + m[0][1] * cy + m[0][2]) / cx - 1.0,
        m[1][0] * cx / cy,
        m[1][1],
        (m[1][0] * cx + m[1][1] * cy + m[1][2]) / cy - 1.0,
    ]
}

/// Convert a plane-coordinate matrix into pixel-center coordinates
/// (plane = center + 0.5).
pub fn plane_to_pixel_center(m: &Affine2) -> Affine2 {
    let to_plane: Affine2 = [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]];
    let to_center: Affine2 = [[1.0, 0.0, -0.5], [0.0, 1.0, -0.5]];
    compose(&to_center, &compose(m, &to_plane))
}

/// Express normalized sampler parameters as a map over box fractions:
/// a point at output fraction (x, y) reads input content at the returned
/// map's image of (x, y). Identity parameters give the exact identity.
pub fn theta_to_box_frac(theta: &[f64; 6], w: usize, h: usize) -> Affine2 {
    if *theta == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] {
        return IDENTITY;
    }
    let (wf, hf) = (w as f64, h as f64);
    let cx = (w.max(2) - 1) as f64 / 2.0;
    let cy = (h.max(2) - 1) as f64 / 2.0;
    // fraction -> pixel-center -> normalized
    let frac_to_norm: Affine2 = [
        [wf / cx, 0.0, -0.5 / cx - 1.0],
        [0.0, hf / cy, -0.5 / cy - 1.0],
    ];
    // normalized -> pixel-center -> fraction
    let norm_to_frac: Affine2 = [
        [cx / wf, 0.0, (cx + 0.5) / wf],
        [0.0, cy / hf, (cy + 0.5) / hf],
    ];
    let t: Affine2 = [
        [theta[0], theta[1], theta[2]],
        [theta[3], theta[4], theta[5]],
    ];
    compose(&norm_to_frac, &compose(&t, &frac_to_norm))
}

use serde::{Deserialize, Serialize};

use super::{GrayImage, ImageError};
use crate::Point;

/// Side of the canonical face square, in canvas pixels.
pub const FACE_SIZE: usize = 128;
/// Border added on each side of the face square.
pub const FACE_BORDER: usize = 48;
/// Side of the normalised canvas (face plus both borders).
pub const CANVAS_SIZE: usize = FACE_SIZE + 2 * FACE_BORDER;

/// Image-left eye at 30% of the face width and 40% of its height.
pub const CANONICAL_EYE_LEFT: Point = Point::new(
    FACE_BORDER as f64 + 0.3 * FACE_SIZE as f64,
    FACE_BORDER as f64 + 0.4 * FACE_SIZE as f64,
);
/// Image-right eye at 70% of the face width and 40% of its height.
pub const CANONICAL_EYE_RIGHT: Point = Point::new(
    FACE_BORDER as f64 + 0.7 * FACE_SIZE as f64,
    FACE_BORDER as f64 + 0.4 * FACE_SIZE as f64,
);

/// `p' = scale * R(angle) * p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub angle: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        angle: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(angle: f64, scale: f64, tx: f64, ty: f64) -> Self {
        assert!(scale > 0.0, "similarity scale must be positive");
        Self { angle, scale, tx, ty }
    }

    /// The unique similarity taking `src_a -> dst_a` and `src_b -> dst_b`.
    ///
    /// Solved in complex form: `z' = a z + b` with `a = (db - da) / (sb - sa)`.
    pub fn from_point_pairs(src_a: Point, src_b: Point, dst_a: Point, dst_b: Point) -> Option<Self> {
        let (sx, sy) = (src_b.x - src_a.x, src_b.y - src_a.y);
        let (dx, dy) = (dst_b.x - dst_a.x, dst_b.y - dst_a.y);
        let den = sx * sx + sy * sy;
        if den == 0.0 {
            return None;
        }
        let re = (dx * sx + dy * sy) / den;
        let im = (dy * sx - dx * sy) / den;
        let tx = dst_a.x - (re * src_a.x - im * src_a.y);
        let ty = dst_a.y - (im * src_a.x + re * src_a.y);
        Some(Self {
            angle: im.atan2(re),
            scale: re.hypot(im),
            tx,
            ty,
        })
    }

    #[inline]
    fn linear(&self) -> (f64, f64) {
        if self.angle == 0.0 {
            (self.scale, 0.0)
        } else {
            let (s, c) = self.angle.sin_cos();
            (self.scale * c, self.scale * s)
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let (a, b) = self.linear();
        Point::new(a * p.x - b * p.y + self.tx, b * p.x + a * p.y + self.ty)
    }

    pub fn inverse(&self) -> Self {
        let scale = 1.0 / self.scale;
        let angle = -self.angle;
        let inv_linear = SimilarityTransform {
            angle,
            scale,
            tx: 0.0,
            ty: 0.0,
        };
        let t = inv_linear.apply(Point::new(self.tx, self.ty));
        SimilarityTransform {
            angle,
            scale,
            tx: -t.x,
            ty: -t.y,
        }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        let t = self.apply(Point::new(first.tx, first.ty));
        SimilarityTransform {
            angle: self.angle + first.angle,
            scale: self.scale * first.scale,
            tx: t.x,
            ty: t.y,
        }
    }
}

/// A face normalised onto the 224x224 canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePatch {
    pub canvas: GrayImage,
    /// Source image to canvas.
    pub transform: SimilarityTransform,
}

impl FacePatch {
    pub fn face_size(&self) -> usize {
        FACE_SIZE
    }

    /// `(x0, y0, x1, y1)` of the face square, half-open.
    pub fn face_rect(&self) -> (usize, usize, usize, usize) {
        (
            FACE_BORDER,
            FACE_BORDER,
            FACE_BORDER + FACE_SIZE,
            FACE_BORDER + FACE_SIZE,
        )
    }

    pub fn in_face_rect(&self, p: Point) -> bool {
        let lo = FACE_BORDER as f64;
        let hi = (FACE_BORDER + FACE_SIZE) as f64;
        p.x >= lo && p.y >= lo && p.x < hi && p.y < hi
    }

    /// Clamps a canvas point into the face square.
    pub fn clamp_to_face(&self, p: Point) -> Point {
        let lo = FACE_BORDER as f64;
        let hi = (FACE_BORDER + FACE_SIZE) as f64 - 1e-9;
        Point::new(p.x.clamp(lo, hi), p.y.clamp(lo, hi))
    }

    /// Maps a source-image point onto the canvas.
    pub fn to_canvas(&self, p: Point) -> Point {
        self.transform.apply(p)
    }
}

/// Rotates, scales and crops `img` so that the eyes land on the canonical
/// canvas positions. Samples outside the source read as black.
pub fn normalize_face(img: &GrayImage, eye_left: Point, eye_right: Point) -> Result<FacePatch, ImageError> {
    for p in [eye_left, eye_right] {
        if !img.contains(p) {
            return Err(ImageError::OutOfBounds {
                x: p.x,
                y: p.y,
                width: img.width(),
                height: img.height(),
            });
        }
    }
    let d = eye_left.distance(eye_right);
    if d < 2.0 {
        return Err(ImageError::CoincidentEyes(d));
    }
    let transform =
        SimilarityTransform::from_point_pairs(eye_left, eye_right, CANONICAL_EYE_LEFT, CANONICAL_EYE_RIGHT)
            .ok_or(ImageError::CoincidentEyes(d))?;
    let inv = transform.inverse();
    let canvas = GrayImage::from_fn(CANVAS_SIZE, CANVAS_SIZE, |x, y| {
        let s = inv.apply(Point::new(x as f64, y as f64));
        img.bilinear(s.x, s.y, 0.0)
    });
    Ok(FacePatch { canvas, transform })
}

/// Square crop of side `side` centred (to the nearest pixel) at `center`.
pub fn extract_square(canvas: &GrayImage, center: Point, side: usize) -> Result<GrayImage, ImageError> {
    let err = || ImageError::PatchOutOfCanvas {
        cx: center.x,
        cy: center.y,
        side,
    };
    if !center.is_finite() || side == 0 {
        return Err(err());
    }
    let x0 = (center.x - side as f64 / 2.0).round();
    let y0 = (center.y - side as f64 / 2.0).round();
    if x0 < 0.0
        || y0 < 0.0
        || x0 + side as f64 > canvas.width() as f64
        || y0 + side as f64 > canvas.height() as f64
    {
        return Err(err());
    }
    Ok(canvas.crop(x0 as usize, y0 as usize, side, side))
}

/// Side in pixels of a patch covering `size` of the face width.
pub fn patch_side(size: f64) -> usize {
    (size * FACE_SIZE as f64).round() as usize
}

/// Landmark-centred patch of side `round(size * 128)` from the canvas.
pub fn extract_patch(face: &FacePatch, center: Point, size: f64) -> Result<GrayImage, ImageError> {
    if ![0.125, 0.25, 0.375, 0.5].contains(&size) {
        log::warn!("patch size {size} is outside the eighths grid {{1/8, 2/8, 3/8, 4/8}}");
    }
    extract_square(&face.canvas, center, patch_side(size))
}

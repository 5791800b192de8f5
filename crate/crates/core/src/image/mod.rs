//! Grayscale images, eye-based face normalisation, patch extraction and
//! augmentation distortions.

mod distort;
mod io;
mod transform;

pub use distort::{distort, DistortionParams};
pub use io::{load_image, luminance_bt601, save_pgm};
pub use transform::{
    extract_patch, extract_square, normalize_face, patch_side, FacePatch, SimilarityTransform,
    CANONICAL_EYE_LEFT, CANONICAL_EYE_RIGHT, CANVAS_SIZE, FACE_BORDER, FACE_SIZE,
};

use crate::Point;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image data length {len} does not match {width}x{height}")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("pixel value {0} outside [0, 255]")]
    ValueOutOfRange(f64),
    #[error("eye points are {0:.3}px apart (need at least 2px)")]
    CoincidentEyes(f64),
    #[error("point ({x:.2}, {y:.2}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },
    #[error("patch of side {side} centred at ({cx:.2}, {cy:.2}) leaves the canvas")]
    PatchOutOfCanvas { cx: f64, cy: f64, side: usize },
    #[error("invalid distortion parameters: {0}")]
    InvalidParams(String),
    #[error("empty image")]
    Empty,
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Encode { path: String, message: String },
}

impl ImageError {
    pub fn kind(&self) -> &'static str {
        match self {
            ImageError::BadDimensions { .. } => "BadDimensions",
            ImageError::ValueOutOfRange(_) => "ValueOutOfRange",
            ImageError::CoincidentEyes(_) => "CoincidentEyes",
            ImageError::OutOfBounds { .. } => "OutOfBounds",
            ImageError::PatchOutOfCanvas { .. } => "PatchOutOfCanvas",
            ImageError::InvalidParams(_) => "InvalidParams",
            ImageError::Empty => "EmptyImage",
            ImageError::Decode { .. } => "DecodeError",
            ImageError::Encode { .. } => "EncodeError",
        }
    }
}

/// Row-major luminance image with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(ImageError::ValueOutOfRange(bad));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 255.0); width * height],
        }
    }

    /// Builds an image from `f(x, y)`, clamping results into `[0, 255]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_pixel(f(x, y)));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// Bilinear sample; taps outside the image read as `fill`.
    pub fn bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let tap = |dx: isize, dy: isize| -> f64 {
            let (px, py) = (xi + dx, yi + dy);
            if px < 0 || py < 0 || px >= self.width as isize || py >= self.height as isize {
                fill
            } else {
                self.get(px as usize, py as usize)
            }
        };
        let mut v = tap(0, 0) * (1.0 - fx) * (1.0 - fy);
        if fx != 0.0 {
            v += tap(1, 0) * fx * (1.0 - fy);
        }
        if fy != 0.0 {
            v += tap(0, 1) * (1.0 - fx) * fy;
            if fx != 0.0 {
                v += tap(1, 1) * fx * fy;
            }
        }
        v
    }

    /// Copies the `w`x`h` block at `(x0, y0)`; the block must lie inside.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of range");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }

    /// Applies `f` per pixel and clamps the result into `[0, 255]`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| clamp_pixel(f(v))).collect(),
        }
    }
}

#[inline]
fn clamp_pixel(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 255.0)
    }
}

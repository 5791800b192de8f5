use nalgebra::{SMatrix, SVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GrayImage, ImageError};
use crate::rng;
use crate::Point;

/// Augmentation parameters: perspective ratio jitter, rotation and additive
/// pixel noise. Defaults are the values used to build the augmented
/// gender-estimation corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub perspective_ratio_std: f64,
    /// Degrees.
    pub rotation_std: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self {
            perspective_ratio_std: 0.05,
            rotation_std: 10.0,
            noise_mean: 10.0,
            noise_std: 5.0,
            seed: 0,
        }
    }
}

impl DistortionParams {
    pub fn new(
        perspective_ratio_std: f64,
        rotation_std: f64,
        noise_mean: f64,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self, ImageError> {
        let p = Self {
            perspective_ratio_std,
            rotation_std,
            noise_mean,
            noise_std,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        for (name, v) in [
            ("perspective_ratio_std", self.perspective_ratio_std),
            ("rotation_std", self.rotation_std),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ImageError::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.noise_mean.is_finite() {
            return Err(ImageError::InvalidParams("noise_mean must be finite".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Perspective warp, rotation about the centre, then clamped Gaussian pixel
/// noise. Deterministic in `p.seed`.
pub fn distort(img: &GrayImage, p: &DistortionParams) -> Result<GrayImage, ImageError> {
    if img.is_empty() {
        return Err(ImageError::Empty);
    }
    p.validate()?;
    let mut rng = rng::seeded(p.seed);
    let ratio = Normal::new(1.0, p.perspective_ratio_std).expect("validated std");
    let top_ratio = ratio.sample(&mut rng);
    let right_ratio = ratio.sample(&mut rng);
    let angle_deg = Normal::new(0.0, p.rotation_std).expect("validated std").sample(&mut rng);
    let noise = Normal::new(p.noise_mean, p.noise_std).expect("validated std");

    let mut out = img.clone();
    if top_ratio != 1.0 || right_ratio != 1.0 {
        out = perspective(&out, top_ratio, right_ratio);
    }
    if angle_deg != 0.0 {
        out = rotate_about_center(&out, angle_deg.to_radians());
    }
    let noisy: Vec<f64> = out
        .data()
        .iter()
        .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 255.0))
        .collect();
    GrayImage::new(out.width(), out.height(), noisy)
}

/// Moves the top-right corner so that the top edge is `top_ratio` times and
/// the right edge `right_ratio` times their original length; the other three
/// corners stay fixed.
fn perspective(img: &GrayImage, top_ratio: f64, right_ratio: f64) -> GrayImage {
    let w = (img.width() - 1) as f64;
    let h = (img.height() - 1) as f64;
    let src = [Point::new(0.0, 0.0), Point::new(w, 0.0), Point::new(w, h), Point::new(0.0, h)];
    let mut dst = src;
    dst[1] = Point::new(w * top_ratio, h * (1.0 - right_ratio));
    // sample the source through the inverse map: output -> source
    let Some(h_inv) = homography(&dst, &src) else {
        return img.clone();
    };
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as f64, y as f64);
        let den = h_inv[6] * x + h_inv[7] * y + 1.0;
        let sx = (h_inv[0] * x + h_inv[1] * y + h_inv[2]) / den;
        let sy = (h_inv[3] * x + h_inv[4] * y + h_inv[5]) / den;
        img.bilinear(sx, sy, 0.0)
    })
}

/// 3x3 homography (h33 = 1) taking `from[i]` to `to[i]`, row-major.
fn homography(from: &[Point; 4], to: &[Point; 4]) -> Option<[f64; 8]> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = (from[i].x, from[i].y);
        let (u, v) = (to[i].x, to[i].y);
        let r = 2 * i;
        a.set_row(r, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b)?;
    let mut out = [0.0; 8];
    out.copy_from_slice(sol.as_slice());
    Some(out)
}

fn rotate_about_center(img: &GrayImage, angle: f64) -> GrayImage {
    let cx = (img.width() - 1) as f64 / 2.0;
    let cy = (img.height() - 1) as f64 / 2.0;
    let (s, c) = angle.sin_cos();
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // inverse rotation
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        img.bilinear(sx, sy, 0.0)
    })
}

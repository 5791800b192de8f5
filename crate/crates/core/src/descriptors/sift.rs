use std::f64::consts::TAU;

use super::gradient::{gradients, l2_normalize};
use super::{cell_bounds, DescriptorConfig, DescriptorError, DescriptorKind};
use crate::image::GrayImage;

const SPATIAL_BINS: usize = 4;
const ORIENTATION_BINS: usize = 8;
/// 4x4 spatial bins times 8 orientations.
pub const SIFT_DIM: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;
const CLAMP: f64 = 0.2;

/// Upright SIFT descriptors on a fixed grid: one 128-d descriptor per cell of
/// a `cells_per_side`² tiling of the patch. No keypoint detection and no
/// dominant-orientation estimation.
///
/// Votes are Gaussian-weighted around the cell centre (σ = half the cell
/// side) and split linearly between adjacent orientation bins. Each
/// descriptor is L2-normalised, clamped at 0.2 and renormalised.
pub fn dense_sift(patch: &GrayImage, cfg: &DescriptorConfig) -> Result<Vec<f64>, DescriptorError> {
    if cfg.kind != DescriptorKind::Sift {
        return Err(DescriptorError::ConfigMismatch {
            expected: "sift",
            got: cfg.kind.name(),
        });
    }
    cfg.validate()?;
    let cells = cfg.cells_per_side;
    let (w, h) = (patch.width(), patch.height());
    if w < cells || h < cells {
        return Err(DescriptorError::PatchTooSmall {
            side: w.min(h),
            what: format!("{cells}x{cells} SIFT cells"),
        });
    }
    let g = gradients(patch);
    let bin_width = TAU / ORIENTATION_BINS as f64;
    let mut out = Vec::with_capacity(cells * cells * SIFT_DIM);
    for cy in 0..cells {
        let (y0, y1) = cell_bounds(h, cells, cy);
        for cx in 0..cells {
            let (x0, x1) = cell_bounds(w, cells, cx);
            let (cw, ch) = ((x1 - x0) as f64, (y1 - y0) as f64);
            let centre = (x0 as f64 + (cw - 1.0) / 2.0, y0 as f64 + (ch - 1.0) / 2.0);
            let sigma = 0.5 * cw.max(ch);
            let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
            let mut desc = [0.0f64; SIFT_DIM];
            for y in y0..y1 {
                let by = (((y - y0) as f64 + 0.5) * SPATIAL_BINS as f64 / ch) as usize;
                let by = by.min(SPATIAL_BINS - 1);
                for x in x0..x1 {
                    let i = y * w + x;
                    let m = g.magnitude[i];
                    if m == 0.0 {
                        continue;
                    }
                    let bx = (((x - x0) as f64 + 0.5) * SPATIAL_BINS as f64 / cw) as usize;
                    let bx = bx.min(SPATIAL_BINS - 1);
                    let (dx, dy) = (x as f64 - centre.0, y as f64 - centre.1);
                    let weight = m * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
                    let mut a = g.angle[i];
                    if a < 0.0 {
                        a += TAU;
                    }
                    let pos = a / bin_width;
                    let lo = pos.floor();
                    let frac = pos - lo;
                    let lo = (lo as usize) % ORIENTATION_BINS;
                    let hi = (lo + 1) % ORIENTATION_BINS;
                    let base = (by * SPATIAL_BINS + bx) * ORIENTATION_BINS;
                    desc[base + lo] += weight * (1.0 - frac);
                    desc[base + hi] += weight * frac;
                }
            }
            l2_normalize(&mut desc, 0.0);
            let mut clamped = false;
            for v in desc.iter_mut() {
                if *v > CLAMP {
                    *v = CLAMP;
                    clamped = true;
                }
            }
            if clamped {
                l2_normalize(&mut desc, 0.0);
            }
            out.extend_from_slice(&desc);
        }
    }
    Ok(out)
}

use std::f64::consts::PI;

use super::gradient::{gradients, l2_normalize};
use super::{cell_bounds, DescriptorConfig, DescriptorError, DescriptorKind};
use crate::image::GrayImage;

const CELL_EPS: f64 = 1e-6;

/// Dense HoG: unsigned orientations over `[0, π)`, magnitude-weighted votes,
/// one L2-normalised histogram per cell, cells concatenated row-major.
pub fn hog(patch: &GrayImage, cfg: &DescriptorConfig) -> Result<Vec<f64>, DescriptorError> {
    let DescriptorKind::Hog { orientations } = cfg.kind else {
        return Err(DescriptorError::ConfigMismatch {
            expected: "hog",
            got: cfg.kind.name(),
        });
    };
    cfg.validate()?;
    let cells = cfg.cells_per_side;
    let (w, h) = (patch.width(), patch.height());
    if w < cells || h < cells {
        return Err(DescriptorError::PatchTooSmall {
            side: w.min(h),
            what: format!("{cells}x{cells} HoG cells"),
        });
    }
    let g = gradients(patch);
    let bin_width = PI / orientations as f64;
    let mut out = vec![0.0; cells * cells * orientations];
    for cy in 0..cells {
        let (y0, y1) = cell_bounds(h, cells, cy);
        for cx in 0..cells {
            let (x0, x1) = cell_bounds(w, cells, cx);
            let base = (cy * cells + cx) * orientations;
            let hist = &mut out[base..base + orientations];
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    let m = g.magnitude[i];
                    if m == 0.0 {
                        continue;
                    }
                    let mut a = g.angle[i];
                    if a < 0.0 {
                        a += PI;
                    }
                    if a >= PI {
                        a -= PI;
                    }
                    let bin = ((a / bin_width) as usize).min(orientations - 1);
                    hist[bin] += m;
                }
            }
            l2_normalize(hist, CELL_EPS);
        }
    }
    Ok(out)
}

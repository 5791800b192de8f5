use std::f64::consts::TAU;

use super::{cell_bounds, DescriptorConfig, DescriptorError, DescriptorKind};
use crate::image::GrayImage;

/// Uniform rotation-invariant classes for 8 neighbours (0..=8 set bits)
/// plus one bin for every non-uniform code.
pub const LBP_BINS: usize = 10;
const NEIGHBOURS: usize = 8;

/// Histogram bin of an 8-bit code under the uniform mapping.
pub fn uniform_lbp_bin(code: u8) -> usize {
    let transitions = (code ^ code.rotate_right(1)).count_ones();
    if transitions <= 2 {
        code.count_ones() as usize
    } else {
        LBP_BINS - 1
    }
}

fn neighbour_offsets(radius: usize) -> [(isize, isize); NEIGHBOURS] {
    let r = radius as f64;
    std::array::from_fn(|p| {
        let a = TAU * p as f64 / NEIGHBOURS as f64;
        ((r * a.cos()).round() as isize, (-r * a.sin()).round() as isize)
    })
}

/// Uniform LBP histograms per cell, each summing to one.
///
/// Codes are computed for the interior pixels `[radius, side - radius)`;
/// cells tile that interior. Neighbours sit on the circle of the configured
/// radius, snapped to the nearest pixel, and a bit is set when the neighbour
/// is strictly brighter than the centre. Snapping (instead of interpolating)
/// keeps the codes invariant under any strictly increasing intensity map.
pub fn lbp_hist(patch: &GrayImage, cfg: &DescriptorConfig) -> Result<Vec<f64>, DescriptorError> {
    let DescriptorKind::Lbp { radius } = cfg.kind else {
        return Err(DescriptorError::ConfigMismatch {
            expected: "lbp",
            got: cfg.kind.name(),
        });
    };
    cfg.validate()?;
    let (w, h) = (patch.width(), patch.height());
    if w.min(h) < 2 * radius + 1 {
        return Err(DescriptorError::PatchTooSmall {
            side: w.min(h),
            what: format!("LBP radius {radius}"),
        });
    }
    let (iw, ih) = (w - 2 * radius, h - 2 * radius);
    let cells = cfg.cells_per_side;
    if iw < cells || ih < cells {
        return Err(DescriptorError::PatchTooSmall {
            side: w.min(h),
            what: format!("{cells}x{cells} LBP cells at radius {radius}"),
        });
    }
    let offsets = neighbour_offsets(radius);
    let mut out = vec![0.0; cells * cells * LBP_BINS];
    for cy in 0..cells {
        let (y0, y1) = cell_bounds(ih, cells, cy);
        for cx in 0..cells {
            let (x0, x1) = cell_bounds(iw, cells, cx);
            let base = (cy * cells + cx) * LBP_BINS;
            let hist = &mut out[base..base + LBP_BINS];
            let mut count = 0usize;
            for y in y0 + radius..y1 + radius {
                for x in x0 + radius..x1 + radius {
                    let c = patch.get(x, y);
                    let mut code = 0u8;
                    for (p, &(dx, dy)) in offsets.iter().enumerate() {
                        let n = patch.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                        if n > c {
                            code |= 1 << p;
                        }
                    }
                    hist[uniform_lbp_bin(code)] += 1.0;
                    count += 1;
                }
            }
            let total = count as f64;
            hist.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(out)
}

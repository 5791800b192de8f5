use crate::image::GrayImage;

/// Central-difference gradients with edge replication, row-major.
pub(crate) struct Gradients {
    pub magnitude: Vec<f64>,
    /// `atan2(gy, gx)` in `(-π, π]`, y pointing down.
    pub angle: Vec<f64>,
}

pub(crate) fn gradients(img: &GrayImage) -> Gradients {
    let (w, h) = (img.width(), img.height());
    let mut magnitude = Vec::with_capacity(w * h);
    let mut angle = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi);
            let gy = img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1);
            magnitude.push(gx.hypot(gy));
            angle.push(gy.atan2(gx));
        }
    }
    Gradients { magnitude, angle }
}

/// Scales `v` to unit L2 norm; an all-zero vector stays zero.
pub(crate) fn l2_normalize(v: &mut [f64], eps: f64) {
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    if norm2 > 0.0 {
        let n = (norm2 + eps * eps).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }
}

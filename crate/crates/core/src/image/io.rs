use std::path::Path;

use super::{GrayImage, ImageError};

/// ITU-R BT.601 luma from 8-bit RGB.
pub fn luminance_bt601(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Loads a PGM or PNG file as luminance. Colour inputs are converted with
/// BT.601 weights; 16-bit inputs are rescaled to `[0, 255]`.
pub fn load_image(path: &Path) -> Result<GrayImage, ImageError> {
    let decode_err = |message: String| ImageError::Decode {
        path: path.display().to_string(),
        message,
    };
    let dynamic = image::open(path).map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = match dynamic {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 * 255.0 / 65535.0)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance_bt601(p[0], p[1], p[2]).clamp(0.0, 255.0))
            .collect(),
    };
    GrayImage::new(w, h, data)
}

/// Writes an 8-bit binary PGM (P5), rounding to the nearest level.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<(), ImageError> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, bytes).map_err(|e| ImageError::Encode {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

//! Handcrafted descriptors over landmark-centred patches, and PCA.

mod config;
mod gradient;
mod hog;
mod lbp;
mod pca;
mod sift;

pub use config::{DescriptorConfig, DescriptorKind, PatchSize, PAPER_CELLS, PAPER_HOG_ORIENTATIONS, PAPER_LBP_RADII, PAPER_PATCH_SIZES};
pub use hog::hog;
pub use lbp::{lbp_hist, uniform_lbp_bin, LBP_BINS};
pub use pca::{pca_fit, PcaModel, PCA_TARGET_DIM};
pub use sift::{dense_sift, SIFT_DIM};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::{extract_square, patch_side, FacePatch, GrayImage, ImageError};
use crate::Point;

#[derive(Debug, thiserror::Error)]
pub enum DescriptorError {
    #[error("descriptor {expected} called with a {got} configuration")]
    ConfigMismatch { expected: &'static str, got: &'static str },
    #[error("patch of side {side} too small for {what}")]
    PatchTooSmall { side: usize, what: String },
    #[error("no descriptor configurations given")]
    EmptyConfig,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { got: usize, required: usize },
    #[error("landmark ({x:.2}, {y:.2}) lies outside the face square")]
    LandmarkOutsideFace { x: f64, y: f64 },
    #[error("invalid descriptor configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl DescriptorError {
    pub fn kind(&self) -> &'static str {
        match self {
            DescriptorError::ConfigMismatch { .. } => "ConfigMismatch",
            DescriptorError::PatchTooSmall { .. } => "PatchTooSmall",
            DescriptorError::EmptyConfig => "EmptyConfig",
            DescriptorError::DimensionMismatch { .. } => "DimensionMismatch",
            DescriptorError::TooFewSamples { .. } => "TooFewSamples",
            DescriptorError::LandmarkOutsideFace { .. } => "LandmarkOutsideFace",
            DescriptorError::InvalidConfig(_) => "InvalidConfig",
            DescriptorError::NonFinite => "NonFinite",
            DescriptorError::Image(e) => e.kind(),
        }
    }
}

type Result<T> = std::result::Result<T, DescriptorError>;

/// A descriptor output tagged with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, fingerprint: String) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite);
        }
        Ok(Self { values, fingerprint })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Stable identifier of a descriptor list plus an optional PCA model.
pub fn fingerprint(configs: &[DescriptorConfig], pca: Option<&PcaModel>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(configs).expect("configs serialise"));
    if let Some(p) = pca {
        h.update(b"|pca:");
        h.update(p.fingerprint().as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Total raw dimension of a descriptor list.
pub fn raw_dim(configs: &[DescriptorConfig]) -> usize {
    configs.iter().map(DescriptorConfig::dim).sum()
}

/// Runs one descriptor on an already extracted patch.
pub fn describe(patch: &GrayImage, cfg: &DescriptorConfig) -> Result<Vec<f64>> {
    match cfg.kind {
        DescriptorKind::Hog { .. } => hog(patch, cfg),
        DescriptorKind::Lbp { .. } => lbp_hist(patch, cfg),
        DescriptorKind::Sift => dense_sift(patch, cfg),
    }
}

/// Raw concatenated descriptors around a canvas position, without PCA.
/// LBP patches carry an extra `radius` margin so that every pixel of the
/// nominal patch gets a full neighbourhood.
pub fn extract_raw(face: &FacePatch, landmark: Point, configs: &[DescriptorConfig]) -> Result<Vec<f64>> {
    if configs.is_empty() {
        return Err(DescriptorError::EmptyConfig);
    }
    if !face.in_face_rect(landmark) {
        return Err(DescriptorError::LandmarkOutsideFace {
            x: landmark.x,
            y: landmark.y,
        });
    }
    let mut out = Vec::with_capacity(raw_dim(configs));
    for cfg in configs {
        cfg.validate()?;
        let margin = match cfg.kind {
            DescriptorKind::Lbp { radius } => 2 * radius,
            _ => 0,
        };
        let patch = extract_square(&face.canvas, landmark, patch_side(cfg.patch_size.fraction()) + margin)?;
        out.extend(describe(&patch, cfg)?);
    }
    Ok(out)
}

/// Concatenated descriptors in configuration order; projected through `pca`
/// when the raw dimension exceeds [`PCA_TARGET_DIM`] and a model is given.
pub fn extract_landmark_features(
    face: &FacePatch,
    landmark: Point,
    configs: &[DescriptorConfig],
    pca: Option<&PcaModel>,
) -> Result<FeatureVector> {
    let raw = extract_raw(face, landmark, configs)?;
    match pca {
        Some(p) if raw.len() > PCA_TARGET_DIM => {
            let projected = p.project(&raw)?;
            FeatureVector::new(projected, fingerprint(configs, Some(p)))
        }
        _ => FeatureVector::new(raw, fingerprint(configs, None)),
    }
}

/// Writes feature vectors as a little-endian f64 blob (`<stem>.bin`) and a
/// JSON sidecar (`<stem>.json`) carrying count, dimension and fingerprint.
pub fn write_feature_vectors(stem: &std::path::Path, vectors: &[FeatureVector]) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        count: usize,
        dim: usize,
        fingerprint: &'a str,
        encoding: &'static str,
    }
    let dim = vectors.first().map_or(0, FeatureVector::len);
    let fp = vectors.first().map_or("", |v| v.fingerprint.as_str());
    if vectors.iter().any(|v| v.len() != dim || v.fingerprint != fp) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "feature vectors differ in dimension or fingerprint",
        ));
    }
    let mut bytes = Vec::with_capacity(vectors.len() * dim * 8);
    for v in vectors {
        for x in &v.values {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;
    let sidecar = Sidecar {
        count: vectors.len(),
        dim,
        fingerprint: fp,
        encoding: "f64-le",
    };
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serialises"),
    )
}

/// Reads vectors written by [`write_feature_vectors`].
pub fn read_feature_vectors(stem: &std::path::Path) -> std::io::Result<Vec<FeatureVector>> {
    #[derive(Deserialize)]
    struct Sidecar {
        count: usize,
        dim: usize,
        fingerprint: String,
    }
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)
        .map_err(|e| invalid(e.to_string()))?;
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    if sidecar.count.checked_mul(sidecar.dim).and_then(|n| n.checked_mul(8)) != Some(bytes.len()) {
        return Err(invalid(format!(
            "blob has {} bytes, sidecar declares {}x{} f64",
            bytes.len(),
            sidecar.count,
            sidecar.dim
        )));
    }
    Ok(bytes
        .chunks_exact(8 * sidecar.dim.max(1))
        .take(sidecar.count)
        .map(|row| FeatureVector {
            values: row
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            fingerprint: sidecar.fingerprint.clone(),
        })
        .collect())
}

/// Cell boundaries `[start, end)` splitting `len` pixels into `n` cells.
pub(crate) fn cell_bounds(len: usize, n: usize, i: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

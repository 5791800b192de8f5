use sha2::{Digest, Sha256};

use super::{build_samples, clamp_confidence, fit_regressor, normalize_by, project, raw_features, ConfidencePredictor, ImageSource, TrainOptions};
use crate::dataio::AnnotationRecord;
use crate::descriptors::{DescriptorConfig, PcaModel};
use crate::image::GrayImage;
use crate::metrics::ConfidenceScore;
use crate::svm::{GridCell, KernelModel};
use crate::{Error, Landmark, LandmarkSet, Result};

/// Face-level confidence from the concatenated features of several
/// landmarks. The concatenation order is `parts` order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub parts: Vec<(Landmark, Vec<DescriptorConfig>)>,
    pub pca: Option<PcaModel>,
    pub regressor: KernelModel,
    pub sigma_fraction: f64,
    pub trained_on: Vec<String>,
    pub cv_table: Vec<GridCell>,
}

impl JointModel {
    pub fn landmarks(&self) -> Vec<Landmark> {
        self.parts.iter().map(|(l, _)| *l).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (l, cfgs) in &self.parts {
            h.update(l.name().as_bytes());
            h.update(serde_json::to_vec(cfgs).expect("configs serialise"));
        }
        if let Some(p) = &self.pca {
            h.update(p.fingerprint().as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// The default three-landmark subset: nose, image-left mouth corner, left eye.
pub const DEFAULT_JOINT_SUBSET: [Landmark; 3] = [Landmark::NoseC, Landmark::MouthL, Landmark::EyeL];

impl ConfidencePredictor for JointModel {
    fn target_landmarks(&self) -> Vec<Landmark> {
        self.landmarks()
    }

    fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<ConfidenceScore> {
        let face = normalize_by(image, landmarks)
            .ok_or_else(|| Error::InvalidArgument("cannot normalise face: eyes missing, coincident or off-image".into()))?;
        let raw = raw_features(&face, landmarks, &self.parts)?
            .ok_or_else(|| Error::InvalidArgument("a landmark of the joint subset is missing".into()))?;
        let x = project(self.pca.as_ref(), raw)?;
        Ok(clamp_confidence(self.regressor.predict(&x)?))
    }
}

/// Trains a joint model; labels are the confidence of the MAE over the
/// subset, so `opts.perturb` is normally superposed.
pub fn train_joint(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    parts: &[(Landmark, Vec<DescriptorConfig>)],
    opts: &TrainOptions,
) -> Result<JointModel> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("joint model needs at least one landmark".into()));
    }
    let mut seen = Vec::new();
    for (l, cfgs) in parts {
        if seen.contains(l) {
            return Err(Error::InvalidArgument(format!("landmark {l} listed twice")));
        }
        if cfgs.is_empty() {
            return Err(crate::descriptors::DescriptorError::EmptyConfig.into());
        }
        seen.push(*l);
    }
    let samples = build_samples(records, images, parts, &seen, &opts.perturb, opts.sigma_fraction, opts.max_faces)?;
    log::info!("joint {:?}: {} samples from {} faces", seen, samples.len(), samples.n_faces());
    let fitted = fit_regressor(&samples, opts)?;
    let mut trained_on = samples.face_ids.clone();
    trained_on.dedup();
    Ok(JointModel {
        parts: parts.to_vec(),
        pca: fitted.pca,
        regressor: fitted.regressor,
        sigma_fraction: opts.sigma_fraction,
        trained_on,
        cv_table: fitted.search.cells,
    })
}

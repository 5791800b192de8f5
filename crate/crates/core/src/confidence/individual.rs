
use super::{build_samples, canvas_position, clamp_confidence, fit_regressor, normalize_by, project, ConfidencePredictor, ImageSource, TrainOptions};
use crate::dataio::AnnotationRecord;
use crate::descriptors::{self, DescriptorConfig, PcaModel};
use crate::image::{FacePatch, GrayImage};
use crate::metrics::ConfidenceScore;
use crate::svm::{GridCell, KernelModel};
use crate::{Error, Landmark, LandmarkSet, Point, Result};

/// Confidence of a single landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualModel {
    pub landmark: Landmark,
    pub configs: Vec<DescriptorConfig>,
    pub pca: Option<PcaModel>,
    pub regressor: KernelModel,
    pub sigma_fraction: f64,
    /// Face ids of the training faces.
    pub trained_on: Vec<String>,
    pub cv_table: Vec<GridCell>,
}

impl IndividualModel {
    pub fn fingerprint(&self) -> String {
        descriptors::fingerprint(&self.configs, self.pca.as_ref())
    }

    /// Confidence for the landmark sitting at `canvas_pos` on `face`.
    pub fn predict_at(&self, face: &FacePatch, canvas_pos: Point) -> Result<ConfidenceScore> {
        let raw = descriptors::extract_raw(face, face.clamp_to_face(canvas_pos), &self.configs)?;
        let x = project(self.pca.as_ref(), raw)?;
        Ok(clamp_confidence(self.regressor.predict(&x)?))
    }

    /// Uses the landmark's source position from `landmarks` on an already
    /// normalised face.
    pub fn predict_on_face(&self, face: &FacePatch, landmarks: &LandmarkSet) -> Result<ConfidenceScore> {
        let p = landmarks.get(self.landmark).ok_or_else(|| Error::MissingVariant {
            face_id: String::new(),
            variant: self.landmark.name(),
        })?;
        self.predict_at(face, canvas_position(face, p))
    }
}

impl ConfidencePredictor for IndividualModel {
    fn target_landmarks(&self) -> Vec<Landmark> {
        vec![self.landmark]
    }

    fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<ConfidenceScore> {
        let face = normalize_by(image, landmarks)
            .ok_or_else(|| Error::InvalidArgument("cannot normalise face: eyes missing, coincident or off-image".into()))?;
        self.predict_on_face(&face, landmarks)
    }
}

/// Trains a per-landmark confidence regressor on perturbed copies of the
/// training faces. Faces lacking the landmark or either eye are skipped.
pub fn train_individual(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    landmark: Landmark,
    configs: &[DescriptorConfig],
    opts: &TrainOptions,
) -> Result<IndividualModel> {
    if configs.is_empty() {
        return Err(descriptors::DescriptorError::EmptyConfig.into());
    }
    let parts = [(landmark, configs.to_vec())];
    let samples = build_samples(records, images, &parts, &[landmark], &opts.perturb, opts.sigma_fraction, opts.max_faces)?;
    log::info!("{landmark}: {} samples from {} faces", samples.len(), samples.n_faces());
    let fitted = fit_regressor(&samples, opts)?;
    let mut trained_on = samples.face_ids.clone();
    trained_on.dedup();
    Ok(IndividualModel {
        landmark,
        configs: configs.to_vec(),
        pca: fitted.pca,
        regressor: fitted.regressor,
        sigma_fraction: opts.sigma_fraction,
        trained_on,
        cv_table: fitted.search.cells,
    })
}

use rayon::prelude::*;

use super::{check_disjoint, clamp_confidence, face_size, fit_regressor, label, normalize_by, replicas, ConfidencePredictor, ImageSource, IndividualModel, Samples, TrainOptions};
use crate::dataio::AnnotationRecord;
use crate::image::GrayImage;
use crate::metrics::ConfidenceScore;
use crate::svm::{GridCell, KernelModel};
use crate::perturb::PerturbSpec;
use crate::{rng, Error, Landmark, LandmarkSet, Result};

/// Second-stage regressor over first-stage per-landmark confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadedModel {
    pub stage1: Vec<IndividualModel>,
    pub stage2: KernelModel,
    pub sigma_fraction: f64,
    /// Validation faces the second stage was fitted on.
    pub trained_on: Vec<String>,
    pub cv_table: Vec<GridCell>,
}

impl CascadedModel {
    pub fn landmarks(&self) -> Vec<Landmark> {
        self.stage1.iter().map(|m| m.landmark).collect()
    }
}

fn stage1_features(stage1: &[IndividualModel], image: &GrayImage, landmarks: &LandmarkSet) -> Result<Option<Vec<f64>>> {
    let Some(face) = normalize_by(image, landmarks) else { return Ok(None) };
    stage1
        .iter()
        .map(|m| Ok(m.predict_on_face(&face, landmarks)?.value()))
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

impl ConfidencePredictor for CascadedModel {
    fn target_landmarks(&self) -> Vec<Landmark> {
        self.landmarks()
    }

    fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<ConfidenceScore> {
        let x = stage1_features(&self.stage1, image, landmarks)?
            .ok_or_else(|| Error::InvalidArgument("cannot normalise face: eyes missing, coincident or off-image".into()))?;
        Ok(clamp_confidence(self.stage2.predict(&x)?))
    }
}

/// Fits the second stage on the validation faces. The first-stage models
/// must not have seen any of them.
pub fn train_cascaded(
    stage1: Vec<IndividualModel>,
    validation: &[AnnotationRecord],
    images: &dyn ImageSource,
    opts: &TrainOptions,
) -> Result<CascadedModel> {
    if stage1.is_empty() {
        return Err(Error::InvalidArgument("cascade needs at least one first-stage model".into()));
    }
    let val_ids: Vec<String> = validation.iter().map(|r| r.face_id.clone()).collect();
    for m in &stage1 {
        check_disjoint(&m.trained_on, &val_ids)?;
    }
    let targets: Vec<Landmark> = stage1.iter().map(|m| m.landmark).collect();
    let usable: Vec<(usize, &AnnotationRecord)> = validation
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.landmarks.eyes().is_some() && targets.iter().all(|&l| r.landmarks.contains(l)) && face_size(&r.landmarks).is_some()
        })
        .take(opts.max_faces.unwrap_or(usize::MAX))
        .collect();
    let spec = opts.perturb;
    let per_face: Vec<Samples> = usable
        .par_iter()
        .map(|&(idx, rec)| -> Result<Samples> {
            let image = images.image(rec)?;
            let gt = &rec.landmarks;
            let fs = face_size(gt).expect("filtered");
            let face_spec = PerturbSpec {
                seed: rng::id_seed(spec.seed, &rec.face_id),
                ..spec
            };
            let mut s = Samples::default();
            for pert in replicas(gt, &face_spec, fs) {
                let Some(x) = stage1_features(&stage1, &image, &pert)? else { continue };
                s.x.push(x);
                s.y.push(label(&pert, gt, &targets, opts.sigma_fraction * fs)?);
                s.groups.push(idx as u64);
                s.face_ids.push(rec.face_id.clone());
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut samples = Samples::default();
    for s in per_face {
        samples.extend(s);
    }
    let fitted = fit_regressor(&samples, opts)?;
    debug_assert!(fitted.pca.is_none());
    let mut trained_on = samples.face_ids;
    trained_on.dedup();
    Ok(CascadedModel {
        stage1,
        stage2: fitted.regressor,
        sigma_fraction: opts.sigma_fraction,
        trained_on,
        cv_table: fitted.search.cells,
    })
}

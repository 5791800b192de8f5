//! Confidence predictors: one SVR per landmark, one SVR over concatenated
//! multi-landmark features, and a two-stage cascade.
//!
//! Training data comes from ground-truth annotations displaced by the
//! generators in [`crate::perturb`]. Features are always extracted at the
//! displaced positions, after normalising the face by the displaced eyes, so
//! the regressor sees what a detector with that error would produce.

mod cascaded;
mod individual;
mod joint;
pub(crate) mod persist;
pub mod presets;
mod search;

pub use cascaded::{train_cascaded, CascadedModel};
pub use individual::{train_individual, IndividualModel};
pub use joint::{train_joint, JointModel, DEFAULT_JOINT_SUBSET};
pub use persist::{load_model, save_model, AnyModel};
pub use search::{cardinality_means, feature_search, subset_search, FeatureSearchRow, SearchEval, SubsetRow};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::AnnotationRecord;
use crate::descriptors::{self, DescriptorConfig, PcaModel, PCA_TARGET_DIM};
use crate::image::{load_image, normalize_face, FacePatch, GrayImage};
use crate::metrics::{self, ConfidenceScore, EvaluationReport, OperatingPoint};
use crate::perturb::{self, PerturbMode, PerturbSpec};
use crate::svm::{self, GridResult, KernelModel, Scaling, SearchGrid, SolverParams, SvmError, Task};
use crate::{rng, Error, Landmark, LandmarkSet, Result};

/// Lower clamp for predicted confidences.
pub const CONFIDENCE_FLOOR: f64 = 1e-6;
/// Minimum number of usable faces for training.
pub const MIN_TRAINING_FACES: usize = 50;

/// Supplies the image for an annotation record.
pub trait ImageSource: Sync {
    fn image(&self, record: &AnnotationRecord) -> Result<GrayImage>;
}

/// Images on disk; relative record paths are resolved against `root`.
#[derive(Debug, Clone)]
pub struct DiskImages {
    pub root: PathBuf,
}

impl ImageSource for DiskImages {
    fn image(&self, record: &AnnotationRecord) -> Result<GrayImage> {
        Ok(load_image(&self.root.join(&record.image_path))?)
    }
}

/// Anything that maps an image plus detected landmarks to a confidence.
pub trait ConfidencePredictor: Sync {
    /// Landmarks whose error the prediction describes.
    fn target_landmarks(&self) -> Vec<Landmark>;

    /// Confidence for `landmarks` detected on `image` (source coordinates).
    fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<ConfidenceScore>;
}

/// Knobs shared by all training entry points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub perturb: PerturbSpec,
    pub grid: SearchGrid,
    /// σ of the confidence transform as a fraction of the face size.
    pub sigma_fraction: f64,
    /// Use at most this many faces (in record order).
    pub max_faces: Option<usize>,
    pub min_faces: usize,
    pub cv_seed: u64,
    pub solver: SolverParams,
    /// Dimension above which features are reduced by PCA.
    pub pca_dim: usize,
}

impl TrainOptions {
    pub fn individual(seed: u64) -> Self {
        Self {
            perturb: PerturbSpec::individual(seed),
            grid: SearchGrid::paper_svr(),
            sigma_fraction: metrics::DEFAULT_SIGMA_FRACTION,
            max_faces: None,
            min_faces: MIN_TRAINING_FACES,
            cv_seed: seed,
            solver: SolverParams::default(),
            pca_dim: PCA_TARGET_DIM,
        }
    }

    pub fn superposed(seed: u64) -> Self {
        Self {
            perturb: PerturbSpec::superposed(seed),
            ..Self::individual(seed)
        }
    }
}

/// A design matrix with labels and the face each row came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Index of the source face within the record list.
    pub groups: Vec<u64>,
    pub face_ids: Vec<String>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_faces(&self) -> usize {
        let mut g = self.groups.clone();
        g.dedup();
        g.len()
    }

    fn extend(&mut self, other: Samples) {
        self.x.extend(other.x);
        self.y.extend(other.y);
        self.groups.extend(other.groups);
        self.face_ids.extend(other.face_ids);
    }
}

/// Source-pixel face size implied by the ground-truth eyes.
pub fn face_size(gt: &LandmarkSet) -> Option<f64> {
    let (l, r) = gt.eyes()?;
    let s = perturb::face_size_from_eyes(l, r);
    (s > 0.0).then_some(s)
}

/// Normalises by the eyes of `landmarks`; `None` when that is impossible
/// (missing, coincident or off-image eyes).
pub fn normalize_by(image: &GrayImage, landmarks: &LandmarkSet) -> Option<FacePatch> {
    let (l, r) = landmarks.eyes()?;
    normalize_face(image, l, r).ok()
}

/// Canvas position of a source landmark, clamped into the face square.
pub(crate) fn canvas_position(face: &FacePatch, p: crate::Point) -> crate::Point {
    face.clamp_to_face(face.to_canvas(p))
}

/// Concatenated raw features for several landmarks on one normalised face.
pub(crate) fn raw_features(face: &FacePatch, landmarks: &LandmarkSet, parts: &[(Landmark, Vec<DescriptorConfig>)]) -> Result<Option<Vec<f64>>> {
    let mut out = Vec::new();
    for (l, cfgs) in parts {
        let Some(p) = landmarks.get(*l) else { return Ok(None) };
        out.extend(descriptors::extract_raw(face, canvas_position(face, p), cfgs)?);
    }
    Ok(Some(out))
}

pub(crate) fn project(pca: Option<&PcaModel>, raw: Vec<f64>) -> Result<Vec<f64>> {
    Ok(match pca {
        Some(p) => p.project(&raw)?,
        None => raw,
    })
}

pub(crate) fn clamp_confidence(v: f64) -> ConfidenceScore {
    ConfidenceScore::clamped(v, CONFIDENCE_FLOOR)
}

/// Perturbed replicas of one face in the configured mode.
pub(crate) fn replicas(gt: &LandmarkSet, spec: &PerturbSpec, face_size: f64) -> Vec<LandmarkSet> {
    match spec.mode {
        PerturbMode::Individual => perturb::perturb_individual(gt, spec, face_size)
            .into_iter()
            .map(|r| r.landmarks)
            .collect(),
        PerturbMode::Superposed => perturb::perturb_superposed(gt, spec, face_size)
            .into_iter()
            .map(|r| r.landmarks)
            .collect(),
    }
}

/// Ground-truth confidence of `pred` over the `label_set` landmarks.
pub(crate) fn label(pred: &LandmarkSet, gt: &LandmarkSet, label_set: &[Landmark], sigma_px: f64) -> Result<f64> {
    let d = metrics::mae(&pred.subset(label_set), &gt.subset(label_set))?;
    Ok(metrics::confidence(d, sigma_px)?.value())
}

fn required(parts: &[(Landmark, Vec<DescriptorConfig>)], label_set: &[Landmark]) -> Vec<Landmark> {
    let mut req = vec![Landmark::EyeL, Landmark::EyeR];
    req.extend(parts.iter().map(|(l, _)| *l));
    req.extend_from_slice(label_set);
    req.sort();
    req.dedup();
    req
}

fn usable_records<'r>(records: &'r [AnnotationRecord], req: &[Landmark], max_faces: Option<usize>) -> Vec<(usize, &'r AnnotationRecord)> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| req.iter().all(|&l| r.landmarks.contains(l)) && face_size(&r.landmarks).is_some())
        .take(max_faces.unwrap_or(usize::MAX))
        .collect()
}

/// Perturbs every usable face, extracts raw features at the displaced
/// landmarks and labels each replica with the confidence of its error over
/// `label_set`. Per-face randomness is derived from the face id.
pub fn build_samples(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    parts: &[(Landmark, Vec<DescriptorConfig>)],
    label_set: &[Landmark],
    spec: &PerturbSpec,
    sigma_fraction: f64,
    max_faces: Option<usize>,
) -> Result<Samples> {
    let req = required(parts, label_set);
    let usable = usable_records(records, &req, max_faces);
    let per_face: Vec<Samples> = usable
        .par_iter()
        .map(|&(idx, rec)| -> Result<Samples> {
            let image = images.image(rec)?;
            let gt = &rec.landmarks;
            let fs = face_size(gt).expect("filtered");
            let face_spec = PerturbSpec {
                seed: rng::id_seed(spec.seed, &rec.face_id),
                ..*spec
            };
            let mut s = Samples::default();
            for pert in replicas(gt, &face_spec, fs) {
                let Some(face) = normalize_by(&image, &pert) else {
                    log::debug!("{}: replica skipped, eyes unusable", rec.face_id);
                    continue;
                };
                let Some(raw) = raw_features(&face, &pert, parts)? else { continue };
                s.x.push(raw);
                s.y.push(label(&pert, gt, label_set, sigma_fraction * fs)?);
                s.groups.push(idx as u64);
                s.face_ids.push(rec.face_id.clone());
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut out = Samples::default();
    for s in per_face {
        out.extend(s);
    }
    Ok(out)
}

/// Everything a fitted regressor needs besides its own parameters.
pub(crate) struct Fitted {
    pub pca: Option<PcaModel>,
    pub regressor: KernelModel,
    pub search: GridResult,
}

/// PCA (when the raw dimension exceeds the limit), grid search and refit.
pub(crate) fn fit_regressor(samples: &Samples, opts: &TrainOptions) -> Result<Fitted> {
    let n_faces = samples.n_faces();
    if n_faces < opts.min_faces {
        return Err(Error::InsufficientData {
            usable: n_faces,
            required: opts.min_faces,
        });
    }
    let first = samples.y[0];
    if samples.y.iter().all(|&v| v == first) {
        return Err(Error::DegenerateLabels(format!("all {} training labels equal {first}", samples.len())));
    }
    let dim = samples.x[0].len();
    let pca = if dim > opts.pca_dim {
        log::info!("reducing {dim}-d features to {} with PCA", opts.pca_dim);
        Some(descriptors::pca_fit(&samples.x, opts.pca_dim)?)
    } else {
        None
    };
    let x: Vec<Vec<f64>> = match &pca {
        Some(p) => samples.x.iter().map(|r| p.project(r)).collect::<std::result::Result<_, _>>()?,
        None => samples.x.clone(),
    };
    // PCA scores keep their relative variances
    let solver = SolverParams {
        scaling: if pca.is_some() { Scaling::Shared } else { opts.solver.scaling },
        ..opts.solver
    };
    let search = svm::grid_search_cv(&x, &samples.y, Some(&samples.groups), &opts.grid, Task::Svr, opts.cv_seed, &solver)?;
    let best = search.best_cell().clone();
    log::info!(
        "best cell C={} eps={:?} kernel={} cv R2={:.4}",
        best.c,
        best.epsilon,
        best.kernel,
        best.score
    );
    let mut regressor = match svm::svr_fit(&x, &samples.y, best.c, best.epsilon.unwrap_or(0.0), &best.kernel, &solver) {
        Err(SvmError::NoConvergence { iterations, gap, model }) => {
            log::warn!("final fit stopped after {iterations} iterations (gap {gap:.2e})");
            *model
        }
        other => other?,
    };
    regressor.meta.cv_score = Some(best.score);
    regressor.meta.cv_folds = Some(search.folds);
    regressor.meta.cv_seed = Some(search.seed);
    Ok(Fitted { pca, regressor, search })
}

/// Predicted and ground-truth confidences for perturbed evaluation faces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub face_ids: Vec<String>,
    pub predicted: Vec<f64>,
    pub ground_truth: Vec<f64>,
}

/// Scores `model` on perturbed copies of `records` (errors drawn from
/// `spec`, labels from the MAE over the model's target landmarks).
pub fn score_perturbed(
    model: &dyn ConfidencePredictor,
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    spec: &PerturbSpec,
    sigma_fraction: f64,
) -> Result<Scored> {
    let targets = model.target_landmarks();
    let req = required(&[], &targets);
    let usable = usable_records(records, &req, None);
    let per_face: Vec<Scored> = usable
        .par_iter()
        .map(|&(_, rec)| -> Result<Scored> {
            let image = images.image(rec)?;
            let gt = &rec.landmarks;
            let fs = face_size(gt).expect("filtered");
            let face_spec = PerturbSpec {
                seed: rng::id_seed(spec.seed, &rec.face_id),
                ..*spec
            };
            let mut s = Scored::default();
            for pert in replicas(gt, &face_spec, fs) {
                if normalize_by(&image, &pert).is_none() {
                    continue;
                }
                s.predicted.push(model.predict(&image, &pert)?.value());
                s.ground_truth.push(label(&pert, gt, &targets, sigma_fraction * fs)?);
                s.face_ids.push(rec.face_id.clone());
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut out = Scored::default();
    for s in per_face {
        out.face_ids.extend(s.face_ids);
        out.predicted.extend(s.predicted);
        out.ground_truth.extend(s.ground_truth);
    }
    Ok(out)
}

/// Scores `model` on detector output: `detected[i]` are the landmarks a
/// detector found on `records[i]`.
pub fn score_detections(
    model: &dyn ConfidencePredictor,
    records: &[AnnotationRecord],
    detected: &[LandmarkSet],
    images: &dyn ImageSource,
    sigma_fraction: f64,
) -> Result<Scored> {
    if records.len() != detected.len() {
        return Err(Error::InvalidArgument(format!(
            "{} records but {} detections",
            records.len(),
            detected.len()
        )));
    }
    let targets = model.target_landmarks();
    let rows: Vec<Option<(String, f64, f64)>> = records
        .par_iter()
        .zip(detected.par_iter())
        .map(|(rec, det)| -> Result<Option<(String, f64, f64)>> {
            let Some(fs) = face_size(&rec.landmarks) else { return Ok(None) };
            if !targets.iter().all(|&l| rec.landmarks.contains(l) && det.contains(l)) {
                return Ok(None);
            }
            let image = images.image(rec)?;
            if normalize_by(&image, det).is_none() {
                return Ok(None);
            }
            let pred = model.predict(&image, det)?.value();
            let gt = label(det, &rec.landmarks, &targets, sigma_fraction * fs)?;
            Ok(Some((rec.face_id.clone(), pred, gt)))
        })
        .collect::<Result<_>>()?;
    let mut out = Scored::default();
    for (id, p, g) in rows.into_iter().flatten() {
        out.face_ids.push(id);
        out.predicted.push(p);
        out.ground_truth.push(g);
    }
    Ok(out)
}

/// TrueCorrect95 report for scored samples.
pub fn evaluate(scored: &Scored, op: &OperatingPoint, tune_frac: f64, seed: u64) -> Result<EvaluationReport> {
    Ok(metrics::true_correct95(&scored.predicted, &scored.ground_truth, op, tune_frac, seed)?)
}

/// Fails with [`Error::SplitOverlap`] if any id in `a` also occurs in `b`.
pub fn check_disjoint(a: &[String], b: &[String]) -> Result<()> {
    let set: std::collections::HashSet<&String> = a.iter().collect();
    match b.iter().find(|id| set.contains(id)) {
        Some(id) => Err(Error::SplitOverlap(id.clone())),
        None => Ok(()),
    }
}

/// Records whose face ids are listed in `ids`, in `ids` order.
pub fn select_records(records: &[AnnotationRecord], ids: &[String]) -> Vec<AnnotationRecord> {
    let by_id: std::collections::HashMap<&str, &AnnotationRecord> =
        records.iter().map(|r| (r.face_id.as_str(), r)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone())).collect()
}

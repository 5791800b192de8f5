use serde::{Deserialize, Serialize};

use super::{evaluate, score_perturbed, train_individual, train_joint, ImageSource, TrainOptions};
use crate::dataio::AnnotationRecord;
use crate::descriptors::DescriptorConfig;
use crate::metrics::{self, OperatingPoint};
use crate::perturb::PerturbSpec;
use crate::{Error, Landmark, Result};

/// Validation outcome for one landmark subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub landmarks: Vec<Landmark>,
    pub cardinality: usize,
    /// `None` when the validation labels were degenerate.
    pub true_correct95: Option<f64>,
    pub r2: Option<f64>,
}

/// Shared evaluation settings for the searches.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchEval<'a> {
    pub validation: &'a [AnnotationRecord],
    pub spec: PerturbSpec,
    pub op: OperatingPoint,
    pub tune_fraction: f64,
    pub seed: u64,
}

fn score_row(model: &dyn super::ConfidencePredictor, images: &dyn ImageSource, eval: &SearchEval, sigma: f64) -> Result<(Option<f64>, Option<f64>)> {
    let scored = score_perturbed(model, eval.validation, images, &eval.spec, sigma)?;
    let tc = match evaluate(&scored, &eval.op, eval.tune_fraction, eval.seed) {
        Ok(r) => Some(r.true_correct95),
        Err(Error::Metrics(e)) if e.kind() == "DegenerateLabels" => None,
        Err(e) => return Err(e),
    };
    let r2 = metrics::r2(&scored.ground_truth, &scored.predicted).ok();
    Ok((tc, r2))
}

/// Trains a joint model for every non-empty subset of `landmarks` and
/// scores it on the validation faces. Rows are ordered by subset bitmask.
pub fn subset_search(
    train: &[AnnotationRecord],
    images: &dyn ImageSource,
    landmarks: &[Landmark],
    configs: &dyn Fn(Landmark) -> Vec<DescriptorConfig>,
    opts: &TrainOptions,
    eval: &SearchEval,
) -> Result<Vec<SubsetRow>> {
    if landmarks.is_empty() || landmarks.len() > 7 {
        return Err(Error::InvalidArgument(format!("subset search needs 1..=7 landmarks, got {}", landmarks.len())));
    }
    let mut rows = Vec::new();
    for mask in 1u32..(1 << landmarks.len()) {
        let subset: Vec<Landmark> = (0..landmarks.len()).filter(|i| mask & (1 << i) != 0).map(|i| landmarks[i]).collect();
        let parts: Vec<(Landmark, Vec<DescriptorConfig>)> = subset.iter().map(|&l| (l, configs(l))).collect();
        let model = train_joint(train, images, &parts, opts)?;
        let (tc, r2) = score_row(&model, images, eval, opts.sigma_fraction)?;
        log::info!("subset {subset:?}: TC95 {tc:?}");
        rows.push(SubsetRow {
            cardinality: subset.len(),
            landmarks: subset,
            true_correct95: tc,
            r2,
        });
    }
    Ok(rows)
}

/// Mean TrueCorrect95 per subset size: `(cardinality, mean, rows)`.
pub fn cardinality_means(rows: &[SubsetRow]) -> Vec<(usize, f64, usize)> {
    let max = rows.iter().map(|r| r.cardinality).max().unwrap_or(0);
    (1..=max)
        .filter_map(|k| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.cardinality == k).filter_map(|r| r.true_correct95).collect();
            let n = rows.iter().filter(|r| r.cardinality == k).count();
            (n > 0).then(|| {
                let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
                (k, mean, n)
            })
        })
        .collect()
}

/// Validation outcome for one descriptor combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSearchRow {
    pub configs: Vec<DescriptorConfig>,
    pub true_correct95: Option<f64>,
    pub r2: Option<f64>,
    pub cv_score: Option<f64>,
}

/// Trains an individual model per candidate descriptor list.
pub fn feature_search(
    train: &[AnnotationRecord],
    images: &dyn ImageSource,
    landmark: Landmark,
    candidates: &[Vec<DescriptorConfig>],
    opts: &TrainOptions,
    eval: &SearchEval,
) -> Result<Vec<FeatureSearchRow>> {
    candidates
        .iter()
        .map(|cfgs| {
            let model = train_individual(train, images, landmark, cfgs, opts)?;
            let (tc, r2) = score_row(&model, images, eval, opts.sigma_fraction)?;
            Ok(FeatureSearchRow {
                configs: cfgs.clone(),
                true_correct95: tc,
                r2,
                cv_score: model.regressor.meta.cv_score,
            })
        })
        .collect()
}

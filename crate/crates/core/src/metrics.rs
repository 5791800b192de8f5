//! Error and confidence measures, and the TrueCorrect95 operating point.
//!
//! A sample is a *failure* when its ground-truth confidence is below the
//! ground-truth threshold. It is *flagged* when its predicted confidence is
//! below the prediction threshold; a threshold of 1 or more flags every
//! sample, so the two sentinels 0 and 1 mean "never" and "always".

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Landmark, LandmarkSet};

/// Correct samples that must stay unflagged at the operating point, percent.
pub const RETENTION_TARGET_PERCENT: usize = 95;
/// Ground-truth threshold separating correct detections from failures.
pub const DEFAULT_GT_THRESHOLD: f64 = 0.65;
/// Width of the confidence Gaussian as a fraction of the face size.
pub const DEFAULT_SIGMA_FRACTION: f64 = 0.10;
/// Share of an evaluation set held out to tune the prediction threshold.
pub const DEFAULT_TUNE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction and ground truth share no landmarks")]
    NoCommonLandmarks,
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("distance must be finite and >= 0, got {0}")]
    InvalidDistance(f64),
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { got: usize, required: usize },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("confidence {0} outside (0, 1]")]
    InvalidConfidence(f64),
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::NoCommonLandmarks => "NoCommonLandmarks",
            MetricsError::NonPositiveSigma(_) => "NonPositiveSigma",
            MetricsError::InvalidDistance(_) => "InvalidDistance",
            MetricsError::ZeroVariance => "ZeroVariance",
            MetricsError::LengthMismatch(..) => "LengthMismatch",
            MetricsError::TooFewSamples { .. } => "TooFewSamples",
            MetricsError::DegenerateLabels(_) => "DegenerateLabels",
            MetricsError::InvalidConfidence(_) => "InvalidConfidence",
        }
    }
}

type Result<T> = std::result::Result<T, MetricsError>;

/// A confidence value in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(MetricsError::InvalidConfidence(value))
        }
    }

    /// Clamps any real into `[floor, 1]`; NaN maps to `floor`.
    pub fn clamped(value: f64, floor: f64) -> Self {
        debug_assert!(floor > 0.0 && floor <= 1.0);
        if value.is_nan() {
            Self(floor)
        } else {
            Self(value.clamp(floor, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConfidenceScore {
    type Error = MetricsError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConfidenceScore> for f64 {
    fn from(c: ConfidenceScore) -> f64 {
        c.0
    }
}

/// Thresholds that define failure labels and the flagging rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub gt_threshold: f64,
    pub pred_threshold: f64,
    /// Fraction of the face size.
    pub sigma: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self {
            gt_threshold: DEFAULT_GT_THRESHOLD,
            pred_threshold: DEFAULT_GT_THRESHOLD,
            sigma: DEFAULT_SIGMA_FRACTION,
        }
    }
}

/// Mean Euclidean distance over the landmarks present in both sets.
pub fn mae(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    let dists: Vec<f64> = Landmark::ALL
        .into_iter()
        .filter_map(|l| Some(pred.get(l)?.distance(gt.get(l)?)))
        .collect();
    if dists.is_empty() {
        return Err(MetricsError::NoCommonLandmarks);
    }
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// `C = exp(-d² / 2σ²)`, floored at the smallest positive double so that it
/// never leaves `(0, 1]`.
pub fn confidence(distance: f64, sigma: f64) -> Result<ConfidenceScore> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(MetricsError::NonPositiveSigma(sigma));
    }
    if !(distance >= 0.0) || !distance.is_finite() {
        return Err(MetricsError::InvalidDistance(distance));
    }
    let r = distance / sigma;
    Ok(ConfidenceScore((-0.5 * r * r).exp().max(f64::MIN_POSITIVE)))
}

/// Distance at which the confidence equals `c`.
pub fn distance_for_confidence(c: ConfidenceScore, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(MetricsError::NonPositiveSigma(sigma));
    }
    Ok(sigma * (-2.0 * c.value().ln()).sqrt())
}

/// Coefficient of determination; may be negative.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < 2 {
        return Err(MetricsError::TooFewSamples {
            got: y.len(),
            required: 2,
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Whether a predicted confidence is flagged as a failure at `threshold`.
#[inline]
pub fn is_flagged(pred: f64, threshold: f64) -> bool {
    threshold >= 1.0 || pred < threshold
}

#[inline]
pub fn is_failure(gt: f64, gt_threshold: f64) -> bool {
    gt < gt_threshold
}

/// One point of a failure-rate curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub detection_rate: f64,
    pub retention_rate: f64,
}

/// Outcome of tuning and reporting TrueCorrect95.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub gt_threshold: f64,
    pub true_correct95: f64,
    pub tuned_pred_threshold: f64,
    /// Retention on the tuning split; at least 0.95 by construction.
    pub correct_marked_correct_rate: f64,
    /// Retention of correct samples on the reporting split.
    pub eval_retention_rate: f64,
    pub n_tune: usize,
    pub n_eval: usize,
    pub n_eval_failures: usize,
    /// Prediction-threshold sweep on the reporting split.
    pub curve: Vec<CurvePoint>,
}

/// Seeded split of `0..n` into a tuning part of `round(frac * n)` indices and
/// the rest, both returned in ascending order.
pub fn tune_split(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_tune = ((frac * n as f64).round() as usize).min(n);
    let mut tune = idx[..n_tune].to_vec();
    let mut rest = idx[n_tune..].to_vec();
    tune.sort_unstable();
    rest.sort_unstable();
    (tune, rest)
}

/// Candidate prediction thresholds: 0, midpoints of consecutive distinct
/// values, 1. Ascending.
pub fn candidate_thresholds(preds: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = preds.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(0.0);
    out.extend(v.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(1.0);
    out.dedup();
    out
}

fn check_inputs(pred: &[f64], gt: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.len() < min_len {
        return Err(MetricsError::TooFewSamples {
            got: pred.len(),
            required: min_len,
        });
    }
    Ok(())
}

/// Sorted predictions of correct samples, for fast retention counting.
struct RetentionCounter {
    sorted: Vec<f64>,
}

impl RetentionCounter {
    fn new(mut correct_preds: Vec<f64>) -> Self {
        correct_preds.sort_by(f64::total_cmp);
        Self { sorted: correct_preds }
    }

    fn retained(&self, t: f64) -> usize {
        if t >= 1.0 {
            return 0;
        }
        self.sorted.len() - self.sorted.partition_point(|&p| p < t)
    }

    fn meets_target(&self, t: f64) -> bool {
        self.retained(t) * 100 >= RETENTION_TARGET_PERCENT * self.sorted.len()
    }
}

/// Tunes the prediction threshold on a seeded `tune_frac` split and reports
/// the failure-detection rate on the remainder.
///
/// The tuned threshold is the largest candidate that keeps at least 95% of
/// the correct tuning samples unflagged.
pub fn true_correct95(
    pred: &[f64],
    gt: &[f64],
    op: &OperatingPoint,
    tune_frac: f64,
    seed: u64,
) -> Result<EvaluationReport> {
    check_inputs(pred, gt, 10)?;
    let (tune, eval) = tune_split(pred.len(), tune_frac, seed);
    let gt_t = op.gt_threshold;

    let (mut tune_correct, mut tune_fail) = (Vec::new(), 0usize);
    for &i in &tune {
        if is_failure(gt[i], gt_t) {
            tune_fail += 1;
        } else {
            tune_correct.push(pred[i]);
        }
    }
    if tune_correct.is_empty() || tune_fail == 0 {
        return Err(MetricsError::DegenerateLabels(format!(
            "tuning split has {} correct and {} failed samples",
            tune_correct.len(),
            tune_fail
        )));
    }
    let candidates = candidate_thresholds(tune.iter().map(|&i| pred[i]));
    let counter = RetentionCounter::new(tune_correct);
    // retention is non-increasing in the threshold and holds at 0
    let n_ok = candidates.partition_point(|&t| counter.meets_target(t));
    let threshold = candidates[n_ok - 1];
    let tune_retention = counter.retained(threshold) as f64 / counter.sorted.len() as f64;

    let eval_pred: Vec<f64> = eval.iter().map(|&i| pred[i]).collect();
    let eval_gt: Vec<f64> = eval.iter().map(|&i| gt[i]).collect();
    let (det, ret, n_fail) = rates_at(&eval_pred, &eval_gt, gt_t, threshold);
    if n_fail == 0 || n_fail == eval.len() {
        return Err(MetricsError::DegenerateLabels(format!(
            "reporting split has {} failed of {} samples",
            n_fail,
            eval.len()
        )));
    }
    let curve = (0..=100)
        .map(|k| {
            let t = k as f64 / 100.0;
            let (d, r, _) = rates_at(&eval_pred, &eval_gt, gt_t, t);
            CurvePoint {
                x: t,
                detection_rate: d,
                retention_rate: r,
            }
        })
        .collect();
    Ok(EvaluationReport {
        gt_threshold: gt_t,
        true_correct95: det,
        tuned_pred_threshold: threshold,
        correct_marked_correct_rate: tune_retention,
        eval_retention_rate: ret,
        n_tune: tune.len(),
        n_eval: eval.len(),
        n_eval_failures: n_fail,
        curve,
    })
}

/// `(detection_rate, retention_rate, n_failures)` by direct counting.
/// Rates over an empty class are reported as 0 (detection) and 1 (retention).
pub fn rates_at(pred: &[f64], gt: &[f64], gt_threshold: f64, threshold: f64) -> (f64, f64, usize) {
    let (mut fail, mut fail_flagged, mut ok, mut ok_kept) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let flagged = is_flagged(p, threshold);
        if is_failure(g, gt_threshold) {
            fail += 1;
            fail_flagged += flagged as usize;
        } else {
            ok += 1;
            ok_kept += (!flagged) as usize;
        }
    }
    let det = if fail == 0 { 0.0 } else { fail_flagged as f64 / fail as f64 };
    let ret = if ok == 0 { 1.0 } else { ok_kept as f64 / ok as f64 };
    (det, ret, fail)
}

/// Sweep of the prediction threshold at a fixed ground-truth threshold, over
/// the whole set.
pub fn prediction_threshold_curve(
    pred: &[f64],
    gt: &[f64],
    gt_threshold: f64,
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    check_inputs(pred, gt, 1)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (d, r, _) = rates_at(pred, gt, gt_threshold, t);
            CurvePoint {
                x: t,
                detection_rate: d,
                retention_rate: r,
            }
        })
        .collect())
}

/// Sweep of the ground-truth threshold (confidence units). Each point re-tunes
/// TrueCorrect95; thresholds where a split lacks a class are skipped.
pub fn gt_threshold_curve(
    pred: &[f64],
    gt: &[f64],
    gt_thresholds: &[f64],
    tune_frac: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    check_inputs(pred, gt, 10)?;
    let mut out = Vec::new();
    for &g in gt_thresholds {
        let op = OperatingPoint {
            gt_threshold: g,
            ..OperatingPoint::default()
        };
        match true_correct95(pred, gt, &op, tune_frac, seed) {
            Ok(rep) => out.push(CurvePoint {
                x: g,
                detection_rate: rep.true_correct95,
                retention_rate: rep.eval_retention_rate,
            }),
            Err(MetricsError::DegenerateLabels(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// The same sweep parameterised by distance as a fraction of the face size;
/// each distance `d` maps to the threshold `exp(-(d/σ)²/2)`.
pub fn gt_distance_curve(
    pred: &[f64],
    gt: &[f64],
    distance_fractions: &[f64],
    sigma_fraction: f64,
    tune_frac: f64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &d in distance_fractions {
        let c = confidence(d, sigma_fraction)?.value();
        if let Some(mut p) = gt_threshold_curve(pred, gt, &[c], tune_frac, seed)?.pop() {
            p.x = d;
            out.push(p);
        }
    }
    Ok(out)
}

/// CSV with header `x,detection_rate,retention_rate`.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("x,detection_rate,retention_rate\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.x, p.detection_rate, p.retention_rate));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Point;

    #[test]
    fn mae_examples() {
        let a = LandmarkSet::from_pairs([(Landmark::EyeL, Point::new(0.0, 0.0))]);
        let b = LandmarkSet::from_pairs([(Landmark::EyeL, Point::new(3.0, 4.0))]);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 5.0);
        let mut a2 = a;
        a2.set(Landmark::NoseC, Point::new(1.0, 1.0));
        let mut b2 = b;
        b2.set(Landmark::NoseC, Point::new(1.0, 1.0));
        assert_eq!(mae(&a2, &b2).unwrap(), 2.5);
        let c = LandmarkSet::from_pairs([(Landmark::ChinC, Point::new(0.0, 0.0))]);
        assert_eq!(mae(&a, &c), Err(MetricsError::NoCommonLandmarks));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(0.0, 3.0).unwrap().value(), 1.0);
        assert!((confidence(2.0, 2.0).unwrap().value() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((confidence(2.0, 2.0).unwrap().value() - 0.60653).abs() < 1e-5);
        assert_eq!(confidence(1.0, 0.0), Err(MetricsError::NonPositiveSigma(0.0)));
        assert!(confidence(1e6, 1.0).unwrap().value() > 0.0);
    }

    #[test]
    fn threshold_065_is_about_nine_percent_of_face() {
        let d = distance_for_confidence(ConfidenceScore::new(0.65).unwrap(), 12.8).unwrap();
        assert!((d - 11.88).abs() < 0.01, "{d}");
        assert!((d / 128.0 - 0.0928).abs() < 1e-3);
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(r2(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance));
    }

    #[test]
    fn candidates_include_sentinels() {
        assert_eq!(candidate_thresholds([0.5, 0.2, 0.5]), vec![0.0, 0.35, 1.0]);
    }

    fn separable(n: usize) -> (Vec<f64>, Vec<f64>) {
        let gt: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.2 + 0.001 * i as f64 } else { 0.8 + 0.0005 * i as f64 }).collect();
        (gt.clone(), gt)
    }

    #[test]
    fn perfect_predictor_detects_everything() {
        let (pred, gt) = separable(100);
        let rep = true_correct95(&pred, &gt, &OperatingPoint::default(), 0.2, 1).unwrap();
        assert_eq!(rep.true_correct95, 1.0);
        assert!(rep.correct_marked_correct_rate >= 0.95);
    }

    #[test]
    fn constant_predictor_detects_nothing() {
        let (_, gt) = separable(100);
        let pred = vec![0.7; 100];
        let rep = true_correct95(&pred, &gt, &OperatingPoint::default(), 0.2, 1).unwrap();
        assert_eq!(rep.tuned_pred_threshold, 0.0);
        assert_eq!(rep.true_correct95, 0.0);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let pred = vec![0.5; 20];
        let gt = vec![0.9; 20];
        assert!(matches!(
            true_correct95(&pred, &gt, &OperatingPoint::default(), 0.2, 0),
            Err(MetricsError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn curve_boundaries() {
        let (pred, gt) = separable(30);
        let c = prediction_threshold_curve(&pred, &gt, 0.65, &[0.0, 1.0]).unwrap();
        assert_eq!((c[0].detection_rate, c[0].retention_rate), (0.0, 1.0));
        assert_eq!((c[1].detection_rate, c[1].retention_rate), (1.0, 0.0));
        let csv = curve_to_csv(&c);
        assert!(csv.starts_with("x,detection_rate,retention_rate\n0,0,1\n"));
    }
}

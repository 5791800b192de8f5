//! Fast/robust landmark acquisition with confidence-gated fallback.
//!
//! A cheap method runs on every image; images whose predicted confidence
//! falls below a threshold are recomputed with an expensive method. The
//! expected cost per image is `t_fast + f * t_robust` for a recompute
//! fraction `f`.

mod gender;
mod providers;

pub use gender::{train_gender, train_gender_with_pca, GenderFeatures, GenderModel};
pub use providers::{LandmarkProvider, SyntheticProvider};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{normalize_by, ConfidencePredictor, ImageSource};
use crate::dataio::AnnotationRecord;
use crate::metrics::{self, EvaluationReport};
use crate::{Error, Result};

/// Landmark-detection runtime per image of the fast method.
pub const FAST_RUNTIME_S: f64 = 2.67;
/// Face-detection time per image of the fast method.
pub const FAST_FACE_DETECTION_S: f64 = 0.147;
/// Total fast-path time per image used by the cost model.
pub const FAST_TOTAL_S: f64 = 2.92;
/// Landmark-detection runtime per image of the robust method.
pub const ROBUST_RUNTIME_S: f64 = 20.1;
/// Total robust-path time per image used by the cost model.
pub const ROBUST_TOTAL_S: f64 = 20.3;
/// σ of face-level error of the synthetic fast and robust providers.
pub const SYNTH_FAST_SIGMA: f64 = 0.12;
pub const SYNTH_ROBUST_SIGMA: f64 = 0.06;

pub const TRADEOFF_CSV_HEADER: &str = "threshold,recompute_fraction,time_s,mae_px,accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Fast,
    Robust,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Fast => "fast",
            MethodName::Robust => "robust",
        }
    }
}

/// A landmark method with its per-image cost.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodProfile {
    pub name: MethodName,
    pub time_per_image: f64,
    pub provider: LandmarkProvider,
}

impl MethodProfile {
    pub fn new(name: MethodName, time_per_image: f64, provider: LandmarkProvider) -> Result<Self> {
        if !(time_per_image > 0.0 && time_per_image.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{} method time per image must be > 0, got {time_per_image}",
                name.as_str()
            )));
        }
        Ok(Self {
            name,
            time_per_image,
            provider,
        })
    }

    pub fn synthetic_fast(seed: u64) -> Self {
        let p = LandmarkProvider::Synthetic(SyntheticProvider::new(SYNTH_FAST_SIGMA, seed));
        Self::new(MethodName::Fast, FAST_TOTAL_S, p).expect("positive constant")
    }

    pub fn synthetic_robust(seed: u64) -> Self {
        let p = LandmarkProvider::Synthetic(SyntheticProvider::new(SYNTH_ROBUST_SIGMA, seed));
        Self::new(MethodName::Robust, ROBUST_TOTAL_S, p).expect("positive constant")
    }
}

/// Expected time per image when a fraction `f` is recomputed.
pub fn expected_time(t_fast: f64, t_robust: f64, f: f64) -> f64 {
    t_fast + f * t_robust
}

/// Speed-up of the gated pipeline over running the robust method alone.
pub fn speedup(t_fast: f64, t_robust: f64, f: f64) -> f64 {
    t_robust / expected_time(t_fast, t_robust, f)
}

/// The prediction threshold tuned for TrueCorrect95 on a tuning set.
pub fn select_operating_threshold(report: &EvaluationReport) -> f64 {
    report.tuned_pred_threshold
}

/// One point of the trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub threshold: f64,
    pub recompute_fraction: f64,
    pub time_s: f64,
    pub mae_px: f64,
    /// Gender accuracy, when a classifier was supplied.
    pub accuracy: Option<f64>,
}

impl TradeoffRow {
    pub fn csv_line(&self) -> String {
        let acc = self.accuracy.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.threshold, self.recompute_fraction, self.time_s, self.mae_px, acc)
    }
}

/// Per-face inputs of the sweep, in face-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSample {
    pub face_id: String,
    pub confidence: f64,
    pub fast_mae: f64,
    pub robust_mae: f64,
    pub fast_correct: Option<bool>,
    pub robust_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub t_fast: f64,
    pub t_robust: f64,
    pub samples: Vec<TradeoffSample>,
    pub curve: Vec<TradeoffRow>,
}

impl TradeoffReport {
    /// Recomputes the row at an arbitrary threshold from the samples.
    pub fn at(&self, threshold: f64) -> TradeoffRow {
        row_at(&self.samples, self.t_fast, self.t_robust, threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRADEOFF_CSV_HEADER);
        s.push('\n');
        for r in &self.curve {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

fn row_at(samples: &[TradeoffSample], t_fast: f64, t_robust: f64, threshold: f64) -> TradeoffRow {
    let n = samples.len().max(1) as f64;
    let (mut recomputed, mut mae) = (0usize, 0.0);
    let (mut correct, mut labelled) = (0usize, 0usize);
    for s in samples {
        let fallback = metrics::is_flagged(s.confidence, threshold);
        recomputed += fallback as usize;
        mae += if fallback { s.robust_mae } else { s.fast_mae };
        if let Some(c) = if fallback { s.robust_correct } else { s.fast_correct } {
            labelled += 1;
            correct += c as usize;
        }
    }
    let f = recomputed as f64 / n;
    TradeoffRow {
        threshold,
        recompute_fraction: f,
        time_s: expected_time(t_fast, t_robust, f),
        mae_px: mae / n,
        accuracy: (labelled > 0).then(|| correct as f64 / labelled as f64),
    }
}

/// Evenly spaced thresholds `0, 1/steps, ..., 1`.
pub fn threshold_grid(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// Runs both methods on every record, predicts confidence on the fast
/// landmarks and sweeps the fallback threshold.
pub fn run_tradeoff(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    model: &dyn ConfidencePredictor,
    fast: &MethodProfile,
    robust: &MethodProfile,
    thresholds: &[f64],
    gender: Option<&GenderModel>,
) -> Result<TradeoffReport> {
    let mut samples: Vec<TradeoffSample> = records
        .par_iter()
        .map(|rec| -> Result<TradeoffSample> {
            let missing = |variant| Error::MissingVariant {
                face_id: rec.face_id.clone(),
                variant,
            };
            let f_lms = fast.provider.landmarks(rec).ok_or_else(|| missing("fast"))?;
            let r_lms = robust.provider.landmarks(rec).ok_or_else(|| missing("robust"))?;
            let image = images.image(rec)?;
            // a face that cannot be normalised is always recomputed
            let confidence = match normalize_by(&image, &f_lms) {
                Some(_) => model.predict(&image, &f_lms)?.value(),
                None => 0.0,
            };
            let correct = |lms| -> Result<Option<bool>> {
                match (gender, rec.gender) {
                    (Some(g), Some(truth)) => Ok(g.predict(&image, lms)?.map(|p| p == truth)),
                    _ => Ok(None),
                }
            };
            Ok(TradeoffSample {
                face_id: rec.face_id.clone(),
                confidence,
                fast_mae: metrics::mae(&f_lms, &rec.landmarks)?,
                robust_mae: metrics::mae(&r_lms, &rec.landmarks)?,
                fast_correct: correct(&f_lms)?,
                robust_correct: correct(&r_lms)?,
            })
        })
        .collect::<Result<_>>()?;
    samples.sort_by(|a, b| a.face_id.cmp(&b.face_id));
    let curve = thresholds.iter().map(|&t| row_at(&samples, fast.time_per_image, robust.time_per_image, t)).collect();
    Ok(TradeoffReport {
        t_fast: fast.time_per_image,
        t_robust: robust.time_per_image,
        samples,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, c: f64, fm: f64, rm: f64) -> TradeoffSample {
        TradeoffSample {
            face_id: id.into(),
            confidence: c,
            fast_mae: fm,
            robust_mae: rm,
            fast_correct: Some(false),
            robust_correct: Some(true),
        }
    }

    #[test]
    fn cost_model_arithmetic() {
        let t = expected_time(FAST_TOTAL_S, ROBUST_TOTAL_S, 0.154);
        assert!((t - 6.0462).abs() < 1e-9);
        assert!((speedup(FAST_TOTAL_S, ROBUST_TOTAL_S, 0.154) - 20.3 / 6.0462).abs() < 1e-9);
    }

    #[test]
    fn endpoints() {
        let s = vec![sample("a", 0.2, 4.0, 1.0), sample("b", 0.9, 2.0, 3.0)];
        let r0 = row_at(&s, 2.0, 10.0, 0.0);
        assert_eq!((r0.recompute_fraction, r0.time_s, r0.mae_px, r0.accuracy), (0.0, 2.0, 3.0, Some(0.0)));
        let r1 = row_at(&s, 2.0, 10.0, 1.0);
        assert_eq!((r1.recompute_fraction, r1.time_s, r1.mae_px, r1.accuracy), (1.0, 12.0, 2.0, Some(1.0)));
        let mid = row_at(&s, 2.0, 10.0, 0.5);
        assert_eq!((mid.recompute_fraction, mid.mae_px), (0.5, 1.5));
    }

    #[test]
    fn csv_layout() {
        let r = TradeoffReport {
            t_fast: 1.0,
            t_robust: 2.0,
            samples: vec![sample("a", 0.5, 1.0, 1.0)],
            curve: vec![row_at(&[sample("a", 0.5, 1.0, 1.0)], 1.0, 2.0, 1.0)],
        };
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRADEOFF_CSV_HEADER));
        assert_eq!(lines.next(), Some("1,1,3,1,1"));
    }

    #[test]
    fn profiles_reject_nonpositive_time() {
        let p = LandmarkProvider::Synthetic(SyntheticProvider::new(0.1, 0));
        assert!(MethodProfile::new(MethodName::Fast, 0.0, p).is_err());
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::confidence::face_size;
use crate::dataio::AnnotationRecord;
use crate::perturb::{self, PerturbMode, PerturbSpec};
use crate::rng;
use crate::LandmarkSet;

/// Simulated detector: ground truth plus a superposed error with a
/// face-level σ and a per-landmark σ of `0.7` times that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvider {
    pub sigma_face: f64,
    pub sigma_landmark: f64,
    pub seed: u64,
}

impl SyntheticProvider {
    pub const LANDMARK_RATIO: f64 = 0.7;

    pub fn new(sigma_face: f64, seed: u64) -> Self {
        Self {
            sigma_face,
            sigma_landmark: Self::LANDMARK_RATIO * sigma_face,
            seed,
        }
    }

    pub fn landmarks(&self, record: &AnnotationRecord) -> Option<LandmarkSet> {
        let fs = face_size(&record.landmarks)?;
        let spec = PerturbSpec {
            mode: PerturbMode::Superposed,
            sigma_landmark: self.sigma_landmark,
            sigma_face: self.sigma_face,
            replicas_per_face: 1,
            seed: rng::id_seed(self.seed, &record.face_id),
        };
        perturb::perturb_superposed(&record.landmarks, &spec, fs).into_iter().next().map(|r| r.landmarks)
    }
}

/// Where a method's landmarks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LandmarkProvider {
    /// Detector output read from files, keyed by face id.
    Ingested(HashMap<String, LandmarkSet>),
    Synthetic(SyntheticProvider),
}

impl LandmarkProvider {
    pub fn from_records(records: &[AnnotationRecord]) -> Self {
        Self::Ingested(records.iter().map(|r| (r.face_id.clone(), r.landmarks)).collect())
    }

    pub fn landmarks(&self, record: &AnnotationRecord) -> Option<LandmarkSet> {
        match self {
            LandmarkProvider::Ingested(m) => m.get(&record.face_id).cloned(),
            LandmarkProvider::Synthetic(s) => s.landmarks(record),
        }
    }
}

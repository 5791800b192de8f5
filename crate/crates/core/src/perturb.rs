//! Synthetic annotation errors for training confidence models.
//!
//! Displacements are radial: a half-normal magnitude `|N(0, σ)|` in a
//! uniformly random direction.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::rng::{self, Rng};
use crate::{Landmark, LandmarkSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Independent error per landmark.
    Individual,
    /// One shared face-level error plus an independent per-landmark error.
    Superposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    /// Per-landmark σ as a fraction of the face size.
    pub sigma_landmark: f64,
    /// Face-level σ as a fraction of the face size (superposed mode only).
    pub sigma_face: f64,
    pub replicas_per_face: usize,
    pub seed: u64,
}

impl PerturbSpec {
    /// 10% radial error per landmark, five replicas per face.
    pub fn individual(seed: u64) -> Self {
        Self {
            mode: PerturbMode::Individual,
            sigma_landmark: 0.10,
            sigma_face: 0.0,
            replicas_per_face: 5,
            seed,
        }
    }

    /// 7% per landmark on top of a shared 10% face shift, five replicas.
    pub fn superposed(seed: u64) -> Self {
        Self {
            mode: PerturbMode::Superposed,
            sigma_landmark: 0.07,
            sigma_face: 0.10,
            replicas_per_face: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_landmark >= 0.0 && self.sigma_face >= 0.0) {
            return Err("perturbation sigmas must be >= 0".into());
        }
        if self.replicas_per_face == 0 {
            return Err("replicas_per_face must be >= 1".into());
        }
        Ok(())
    }

    /// The same spec with its seed mixed with a face index.
    pub fn for_face(&self, index: u64) -> Self {
        Self {
            seed: rng::sub_seed(self.seed, index),
            ..*self
        }
    }
}

/// Draws one radial displacement with half-normal magnitude.
pub fn radial_draw(rng: &mut Rng, sigma: f64) -> (f64, f64) {
    let magnitude = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma > 0").sample(rng).abs()
    } else {
        0.0
    };
    let angle = rng.random_range(0.0..TAU);
    (magnitude, angle)
}

fn offset(magnitude: f64, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(magnitude * c, magnitude * s)
}

/// A perturbed annotation and the displacement of each landmark, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualReplica {
    pub landmarks: LandmarkSet,
    pub distances: [Option<f64>; 7],
}

impl IndividualReplica {
    pub fn distance(&self, l: Landmark) -> Option<f64> {
        self.distances[l.index()]
    }
}

/// Independently displaces every present landmark, `replicas_per_face` times.
pub fn perturb_individual(gt: &LandmarkSet, spec: &PerturbSpec, face_size: f64) -> Vec<IndividualReplica> {
    debug_assert_eq!(spec.mode, PerturbMode::Individual);
    let sigma = spec.sigma_landmark * face_size;
    let mut rng = rng::seeded(spec.seed);
    (0..spec.replicas_per_face)
        .map(|_| {
            let mut out = *gt;
            let mut distances = [None; 7];
            for (l, p) in gt.iter() {
                let (m, a) = radial_draw(&mut rng, sigma);
                if m == 0.0 {
                    out.set(l, p);
                } else {
                    out.set(l, p + offset(m, a));
                }
                distances[l.index()] = Some(m);
            }
            IndividualReplica {
                landmarks: out,
                distances,
            }
        })
        .collect()
}

/// A face-level perturbation and its MAE against ground truth, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperposedReplica {
    pub landmarks: LandmarkSet,
    pub mae: f64,
}

/// One shared face shift per replica plus independent per-landmark errors.
pub fn perturb_superposed(gt: &LandmarkSet, spec: &PerturbSpec, face_size: f64) -> Vec<SuperposedReplica> {
    debug_assert_eq!(spec.mode, PerturbMode::Superposed);
    let sigma_face = spec.sigma_face * face_size;
    let sigma_lm = spec.sigma_landmark * face_size;
    let mut rng = rng::seeded(spec.seed);
    (0..spec.replicas_per_face)
        .map(|_| {
            let (fm, fa) = radial_draw(&mut rng, sigma_face);
            let shift = offset(fm, fa);
            let landmarks = gt.map(|_, p| {
                let (m, a) = radial_draw(&mut rng, sigma_lm);
                if fm == 0.0 && m == 0.0 {
                    p
                } else {
                    p + shift + offset(m, a)
                }
            });
            let mae = if gt.is_empty() {
                0.0
            } else {
                metrics::mae(&landmarks, gt).expect("same landmark support")
            };
            SuperposedReplica { landmarks, mae }
        })
        .collect()
}

/// Face size in source pixels implied by the eye distance: the canonical
/// face is 128px wide with the eyes 40% of its width apart.
pub fn face_size_from_eyes(eye_left: Point, eye_right: Point) -> f64 {
    eye_left.distance(eye_right) / 0.4
}

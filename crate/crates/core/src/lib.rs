//! Confidence prediction and failure detection for facial landmark detectors.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: grayscale images, eye-based face normalisation, patch
//!   extraction and augmentation distortions.
//! - [`descriptors`]: dense HoG, uniform LBP and grid SIFT over
//!   landmark-centred patches, plus PCA reduction.
//! - [`metrics`]: MAE, the Gaussian confidence transform, R², and the
//!   TrueCorrect95 operating point with its failure-rate curves.
//! - [`perturb`]: synthetic annotation-error generators.
//! - [`svm`]: ε-SVR and C-SVC trained with an SMO dual solver, k-fold
//!   cross-validation and exhaustive grid search.
//! - [`confidence`]: individual, joint and cascaded confidence predictors.
//! - [`pipeline`]: the fast/robust fallback simulation and the gender head.
//! - [`dataio`]: annotation schemas, splits, group averaging and the model
//!   container.
//! - [`synth`]: a procedural face corpus with known ground truth.

pub mod confidence;
pub mod dataio;
pub mod descriptors;
pub mod image;
pub mod landmarks;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod rng;
pub mod svm;
pub mod synth;

mod error;

pub use error::{Error, Result};
pub use landmarks::{Landmark, LandmarkSet, Point};

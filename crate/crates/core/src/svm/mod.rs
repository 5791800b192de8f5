//! ε-SVR and C-SVC trained with a pairwise (SMO) dual solver, k-fold
//! cross-validation and exhaustive grid search.
//!
//! Inputs are z-scored per dimension with statistics stored in the model.
//! Training rows are put into a canonical order before anything else, so a
//! fit does not depend on the order rows were supplied in.

mod cv;
mod kernel;
mod smo;

pub use cv::{fold_assignment, grid_search_cv, GridCell, GridResult, SearchGrid, Task};
pub use kernel::{default_gamma, kernel_matrix, KernelSpec};

use serde::{Deserialize, Serialize};

use smo::{KernelRows, Problem};

/// Default stopping tolerance on the maximal KKT violation.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum SvmError {
    #[error("non-finite value in training input")]
    NonFiniteInput,
    #[error("solver stopped after {iterations} iterations with KKT gap {gap:.3e}")]
    NoConvergence {
        iterations: usize,
        gap: f64,
        /// The last iterate, usable but not optimal.
        model: Box<KernelModel>,
    },
    #[error("classifier training data contains a single class")]
    SingleClass,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { got: usize, required: usize },
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(f64),
}

impl SvmError {
    pub fn kind(&self) -> &'static str {
        match self {
            SvmError::NonFiniteInput => "NonFiniteInput",
            SvmError::NoConvergence { .. } => "NoConvergence",
            SvmError::SingleClass => "SingleClass",
            SvmError::InvalidParameter(_) => "InvalidParameter",
            SvmError::DimensionMismatch { .. } => "DimensionMismatch",
            SvmError::TooFewSamples { .. } => "TooFewSamples",
            SvmError::InvalidLabel(_) => "InvalidLabel",
        }
    }
}

type Result<T> = std::result::Result<T, SvmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Regressor,
    Classifier,
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub tolerance: f64,
    /// Pair updates before giving up; `None` means `10 · l²` for `l` dual
    /// variables.
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub scaling: Scaling,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: None,
            scaling: Scaling::PerDimension,
        }
    }
}

/// How inputs are scaled before the kernel is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// z-score every dimension.
    #[default]
    PerDimension,
    /// Centre every dimension and divide all by one common deviation,
    /// keeping relative variances (suited to PCA scores).
    Shared,
}

/// Per-dimension centring and scaling. Constant dimensions get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit_with(x: &[Vec<f64>], scaling: Scaling) -> Self {
        let mut s = Self::fit(x);
        if scaling == Scaling::Shared {
            let d = s.mean.len().max(1) as f64;
            let n = x.len().max(1) as f64;
            let total: f64 = x
                .iter()
                .map(|row| row.iter().zip(&s.mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
                .sum();
            let sd = (total / (n * d)).sqrt();
            let sd = if sd > 1e-12 { sd } else { 1.0 };
            s.std.iter_mut().for_each(|v| *v = sd);
        }
        s
    }

    /// z-scoring.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Training provenance kept with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub c: f64,
    pub epsilon: Option<f64>,
    pub n_train: usize,
    pub iterations: usize,
    pub kkt_gap: f64,
    /// Dual objective in minimisation form.
    pub dual_objective: f64,
    /// Mean CV score of the chosen grid cell, when selected by search.
    pub cv_score: Option<f64>,
    pub cv_folds: Option<usize>,
    pub cv_seed: Option<u64>,
}

/// A trained kernel machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub kind: ModelKind,
    /// Kernel with gamma resolved.
    pub kernel: KernelSpec,
    pub scaler: Standardizer,
    /// Standardised support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// αᵢ − αᵢ* for regression, αᵢyᵢ for classification.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub meta: TrainMeta,
}

impl KernelModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Σ coefᵢ K(svᵢ, x) + b on the raw (unstandardised) input.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let z = self.scaler.apply(x);
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.kernel.eval(sv, &z))
            .sum();
        Ok(s + self.bias)
    }

    /// Regression output, or ±1 for a classifier.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let v = self.decision(x)?;
        Ok(match self.kind {
            ModelKind::Regressor => v,
            ModelKind::Classifier => {
                if v >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        })
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

pub(crate) fn check_inputs(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<usize> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(SvmError::TooFewSamples { got: x.len(), required: 2 });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::InvalidParameter(format!("C must be > 0, got {c}")));
    }
    let d = x[0].len();
    for row in x {
        if row.len() != d {
            return Err(SvmError::DimensionMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteInput);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SvmError::NonFiniteInput);
    }
    Ok(d)
}

/// Row order used for training: lexicographic on features, then target.
fn canonical_order(x: &[Vec<f64>], y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    idx
}

/// Training rows in canonical order, standardised, with their default
/// gamma and (for moderate sizes) the Gram matrix, shared by every kernel
/// and hyperparameter fitted on the same rows.
pub(crate) struct TrainSet {
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    scaler: Standardizer,
    gamma: f64,
    gram: Option<Vec<f64>>,
}

impl TrainSet {
    pub(crate) fn new(x: &[Vec<f64>], y: &[f64], scaling: Scaling) -> Self {
        let order = canonical_order(x, y);
        let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let scaler = Standardizer::fit_with(&xs, scaling);
        let z: Vec<Vec<f64>> = xs.iter().map(|r| scaler.apply(r)).collect();
        let gamma = default_gamma(&z);
        let gram = (z.len() <= smo::PRECOMPUTE_LIMIT).then(|| kernel::gram_matrix(&z));
        Self { z, y: ys, scaler, gamma, gram }
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    pub(crate) fn resolve(&self, kernel: &KernelSpec) -> KernelSpec {
        kernel.with_default_gamma(self.gamma)
    }

    /// Kernel rows for an already resolved kernel.
    pub(crate) fn rows(&self, kernel: &KernelSpec) -> KernelRows<'_> {
        match &self.gram {
            Some(g) => KernelRows::Dense {
                n: self.len(),
                k: kernel::kernel_from_gram(kernel, g, self.len()),
            },
            None => KernelRows::OnDemand { kernel: *kernel, x: &self.z },
        }
    }

    fn is_single_class(&self) -> bool {
        self.y.iter().all(|&v| v == self.y[0])
    }

    fn finish(
        &self,
        kind: ModelKind,
        kernel: KernelSpec,
        coefs: Vec<f64>,
        sol: &smo::Solution,
        c: f64,
        epsilon: Option<f64>,
    ) -> Result<KernelModel> {
        let (support_vectors, dual_coefs): (Vec<_>, Vec<_>) =
            self.z.iter().zip(coefs).filter(|(_, c)| *c != 0.0).map(|(z, c)| (z.clone(), c)).unzip();
        let model = KernelModel {
            kind,
            kernel,
            scaler: self.scaler.clone(),
            support_vectors,
            dual_coefs,
            bias: -sol.rho,
            meta: TrainMeta {
                c,
                epsilon,
                n_train: self.len(),
                iterations: sol.iterations,
                kkt_gap: sol.gap,
                dual_objective: sol.objective,
                cv_score: None,
                cv_folds: None,
                cv_seed: None,
            },
        };
        if sol.converged {
            Ok(model)
        } else {
            Err(SvmError::NoConvergence {
                iterations: sol.iterations,
                gap: sol.gap,
                model: Box::new(model),
            })
        }
    }

    /// ε-SVR with 2n dual variables `[α; α*]`.
    pub(crate) fn svr(&self, rows: &KernelRows, kernel: KernelSpec, c: f64, epsilon: f64, params: &SolverParams) -> Result<KernelModel> {
        let n = self.len();
        let mut sign = vec![1.0; n];
        sign.extend(std::iter::repeat_n(-1.0, n));
        let p: Vec<f64> = self.y.iter().map(|t| epsilon - t).chain(self.y.iter().map(|t| epsilon + t)).collect();
        let problem = Problem {
            rows,
            map: (0..n).chain(0..n).collect(),
            y: sign,
            p,
            c,
        };
        let sol = problem.solve(params.tolerance, max_iter(params, 2 * n));
        let coefs = (0..n).map(|i| sol.alpha[i] - sol.alpha[i + n]).collect();
        self.finish(ModelKind::Regressor, kernel, coefs, &sol, c, Some(epsilon))
    }

    pub(crate) fn svc(&self, rows: &KernelRows, kernel: KernelSpec, c: f64, params: &SolverParams) -> Result<KernelModel> {
        if self.is_single_class() {
            return Err(SvmError::SingleClass);
        }
        let n = self.len();
        let problem = Problem {
            rows,
            map: (0..n).collect(),
            y: self.y.clone(),
            p: vec![-1.0; n],
            c,
        };
        let sol = problem.solve(params.tolerance, max_iter(params, n));
        let coefs = sol.alpha.iter().zip(&self.y).map(|(a, y)| a * y).collect();
        self.finish(ModelKind::Classifier, kernel, coefs, &sol, c, None)
    }
}

fn max_iter(params: &SolverParams, l: usize) -> usize {
    params.max_iter.unwrap_or_else(|| 10usize.saturating_mul(l).saturating_mul(l).max(10_000))
}

/// ε-insensitive support vector regression.
pub fn svr_fit(x: &[Vec<f64>], y: &[f64], c: f64, epsilon: f64, kernel: &KernelSpec, params: &SolverParams) -> Result<KernelModel> {
    check_inputs(x, y, c)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SvmError::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    kernel.validate()?;
    let ts = TrainSet::new(x, y, params.scaling);
    let k = ts.resolve(kernel);
    ts.svr(&ts.rows(&k), k, c, epsilon, params)
}

/// Soft-margin support vector classification with labels ±1.
pub fn svc_fit(x: &[Vec<f64>], y: &[f64], c: f64, kernel: &KernelSpec, params: &SolverParams) -> Result<KernelModel> {
    check_inputs(x, y, c)?;
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(SvmError::SingleClass);
    }
    kernel.validate()?;
    let ts = TrainSet::new(x, y, params.scaling);
    let k = ts.resolve(kernel);
    ts.svc(&ts.rows(&k), k, c, params)
}

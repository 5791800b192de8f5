use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, KernelModel, KernelSpec, SolverParams, SvmError, TrainSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Svr,
    Svc,
}

/// Hyperparameter axes for exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub c_values: Vec<f64>,
    /// Ignored for classification.
    pub epsilon_values: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
    pub folds: usize,
}

impl SearchGrid {
    /// C ∈ {0.3, 0.5, 0.7}, ε ∈ {0.01, 0.05, 0.1}, RBF and linear, 5 folds.
    pub fn paper_svr() -> Self {
        Self {
            c_values: vec![0.3, 0.5, 0.7],
            epsilon_values: vec![0.01, 0.05, 0.1],
            kernels: vec![KernelSpec::rbf(), KernelSpec::Linear],
            folds: 5,
        }
    }

    /// C ∈ {0.1, 0.3, 0.5, 0.7}; linear, cubic polynomial, RBF and sigmoid.
    pub fn paper_svc() -> Self {
        Self {
            c_values: vec![0.1, 0.3, 0.5, 0.7],
            epsilon_values: vec![],
            kernels: vec![KernelSpec::Linear, KernelSpec::poly3(), KernelSpec::rbf(), KernelSpec::sigmoid()],
            folds: 5,
        }
    }

    pub fn validate(&self, task: Task) -> Result<(), SvmError> {
        if self.c_values.is_empty() || self.kernels.is_empty() || (task == Task::Svr && self.epsilon_values.is_empty()) {
            return Err(SvmError::InvalidParameter("search grid has an empty axis".into()));
        }
        if self.folds < 2 {
            return Err(SvmError::InvalidParameter(format!("need >= 2 folds, got {}", self.folds)));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        Ok(())
    }

    /// Cells in evaluation order: C ascending, then ε ascending, then the
    /// kernel list order.
    pub fn cells(&self, task: Task) -> Vec<(f64, Option<f64>, KernelSpec)> {
        let mut cs = self.c_values.clone();
        cs.sort_by(f64::total_cmp);
        let eps: Vec<Option<f64>> = match task {
            Task::Svr => {
                let mut e = self.epsilon_values.clone();
                e.sort_by(f64::total_cmp);
                e.into_iter().map(Some).collect()
            }
            Task::Svc => vec![None],
        };
        let mut out = Vec::new();
        for &c in &cs {
            for &e in &eps {
                for &k in &self.kernels {
                    out.push((c, e, k));
                }
            }
        }
        out
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub c: f64,
    pub epsilon: Option<f64>,
    pub kernel: KernelSpec,
    /// Mean held-out R² (regression) or accuracy (classification).
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub folds: usize,
    pub seed: u64,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Fold index per sample. Distinct groups are shuffled with `seed` and dealt
/// into contiguous blocks, so all samples of a group share a fold.
pub fn fold_assignment(groups: &[u64], folds: usize, seed: u64) -> Result<Vec<usize>, SvmError> {
    let mut distinct = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < folds {
        return Err(SvmError::TooFewSamples {
            got: distinct.len(),
            required: folds,
        });
    }
    distinct.shuffle(&mut rng::seeded(seed));
    let g = distinct.len();
    let fold_of: std::collections::HashMap<u64, usize> =
        distinct.iter().enumerate().map(|(pos, &id)| (id, pos * folds / g)).collect();
    Ok(groups.iter().map(|id| fold_of[id]).collect())
}

/// Scores every cell on one fold. The training rows are prepared once and
/// each kernel matrix is shared by all `(C, ε)` pairs.
fn fold_scores(
    task: Task,
    cells: &[(f64, Option<f64>, KernelSpec)],
    kernels: &[KernelSpec],
    split: &(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>),
    params: &SolverParams,
) -> Result<Vec<Option<f64>>, SvmError> {
    let (xt, yt, xh, yh) = split;
    let mut scores = vec![None; cells.len()];
    let ts = TrainSet::new(xt, yt, params.scaling);
    for kernel in kernels {
        let k = ts.resolve(kernel);
        let rows = ts.rows(&k);
        for (ci, &(c, eps, cell_kernel)) in cells.iter().enumerate() {
            if cell_kernel != *kernel {
                continue;
            }
            let fitted = match task {
                Task::Svr => ts.svr(&rows, k, c, eps.unwrap_or(0.0), params),
                Task::Svc => ts.svc(&rows, k, c, params),
            };
            let model = match fitted {
                Err(SvmError::NoConvergence { iterations, gap, model }) => {
                    log::warn!("C={c} {k}: no convergence after {iterations} iterations (gap {gap:.2e}); using last iterate");
                    *model
                }
                Err(SvmError::SingleClass) => return Ok(scores),
                other => other?,
            };
            scores[ci] = fold_score(task, &model, xh, yh)?;
        }
    }
    Ok(scores)
}

fn fold_score(task: Task, model: &KernelModel, x: &[Vec<f64>], y: &[f64]) -> Result<Option<f64>, SvmError> {
    let pred = model.predict_many(x)?;
    Ok(match task {
        Task::Svr => crate::metrics::r2(y, &pred).ok(),
        Task::Svc => {
            let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
            Some(hits as f64 / y.len() as f64)
        }
    })
}

/// Exhaustive k-fold search. `groups` keeps related samples (e.g. replicas
/// of one face) in the same fold; `None` treats every sample as its own
/// group. Ties go to the earliest cell in [`SearchGrid::cells`] order.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[f64],
    groups: Option<&[u64]>,
    grid: &SearchGrid,
    task: Task,
    seed: u64,
    params: &SolverParams,
) -> Result<GridResult, SvmError> {
    grid.validate(task)?;
    check_inputs(x, y, 1.0)?;
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let own: Vec<u64>;
    let groups = match groups {
        Some(g) => {
            if g.len() != x.len() {
                return Err(SvmError::DimensionMismatch {
                    expected: x.len(),
                    got: g.len(),
                });
            }
            g
        }
        None => {
            own = (0..x.len() as u64).collect();
            &own
        }
    };
    let fold = fold_assignment(groups, grid.folds, seed)?;
    let splits: Vec<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> = (0..grid.folds)
        .map(|f| {
            let (mut xt, mut yt, mut xh, mut yh) = (vec![], vec![], vec![], vec![]);
            for i in 0..x.len() {
                if fold[i] == f {
                    xh.push(x[i].clone());
                    yh.push(y[i]);
                } else {
                    xt.push(x[i].clone());
                    yt.push(y[i]);
                }
            }
            (xt, yt, xh, yh)
        })
        .collect();

    let cells = grid.cells(task);
    let mut kernels: Vec<KernelSpec> = Vec::new();
    for k in &grid.kernels {
        if !kernels.contains(k) {
            kernels.push(*k);
        }
    }
    let per_fold: Vec<Vec<Option<f64>>> = splits
        .par_iter()
        .map(|split| fold_scores(task, &cells, &kernels, split, params))
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(cells.len());
    for (ci, &(c, epsilon, kernel)) in cells.iter().enumerate() {
        let fold_scores: Vec<f64> = per_fold.iter().filter_map(|f| f[ci]).collect();
        let score = if fold_scores.is_empty() {
            f64::NEG_INFINITY
        } else {
            fold_scores.iter().sum::<f64>() / fold_scores.len() as f64
        };
        out.push(GridCell {
            c,
            epsilon,
            kernel,
            score,
            fold_scores,
        });
    }
    let mut best = 0;
    for (i, cell) in out.iter().enumerate() {
        if cell.score > out[best].score {
            best = i;
        }
    }
    Ok(GridResult {
        cells: out,
        best,
        folds: grid.folds,
        seed,
    })
}

//! Pairwise dual solver for problems of the form
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C,   Q_st = y_s y_t K(x_s, x_t)
//! ```
//!
//! The first working index is the maximal KKT violator; the second is
//! chosen by second-order gain. No shrinking.

use std::borrow::Cow;

use super::KernelSpec;

const TAU: f64 = 1e-12;
/// Above this many samples kernel rows are computed on demand.
pub(crate) const PRECOMPUTE_LIMIT: usize = 4096;

pub(crate) enum KernelRows<'a> {
    /// Row-major `n x n` matrix.
    Dense { n: usize, k: Vec<f64> },
    OnDemand { kernel: KernelSpec, x: &'a [Vec<f64>] },
}

impl KernelRows<'_> {
    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        match self {
            KernelRows::Dense { n, k } => Cow::Borrowed(&k[i * n..(i + 1) * n]),
            KernelRows::OnDemand { kernel, x } => Cow::Owned(x.iter().map(|b| kernel.eval(&x[i], b)).collect()),
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            KernelRows::Dense { n, k } => k[i * n + i],
            KernelRows::OnDemand { kernel, x } => kernel.eval(&x[i], &x[i]),
        }
    }
}

pub(crate) struct Solution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct Problem<'a> {
    pub rows: &'a KernelRows<'a>,
    /// Sample index of each dual variable.
    pub map: Vec<usize>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub c: f64,
}

impl Problem<'_> {
    fn is_up(&self, t: usize, a: f64) -> bool {
        if self.y[t] > 0.0 {
            a < self.c
        } else {
            a > 0.0
        }
    }

    fn is_low(&self, t: usize, a: f64) -> bool {
        if self.y[t] > 0.0 {
            a > 0.0
        } else {
            a < self.c
        }
    }

    /// Maximal violator in the "up" set: `(index, -y_i g_i)`.
    fn select_i(&self, alpha: &[f64], g: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..alpha.len() {
            if self.is_up(t, alpha[t]) {
                let v = -self.y[t] * g[t];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((t, v));
                }
            }
        }
        best
    }

    /// Second index by largest second-order decrease, and the KKT gap.
    fn select_j(&self, alpha: &[f64], g: &[f64], i: usize, gmax: f64, ki: &[f64], kd: &[f64]) -> (Option<usize>, f64) {
        let mut gmin = f64::INFINITY;
        let mut best: Option<(usize, f64)> = None;
        let kii = kd[self.map[i]];
        for t in 0..alpha.len() {
            if !self.is_low(t, alpha[t]) {
                continue;
            }
            let v = -self.y[t] * g[t];
            if v < gmin {
                gmin = v;
            }
            let diff = gmax - v;
            if diff > 0.0 {
                let mt = self.map[t];
                let mut quad = kii + kd[mt] - 2.0 * ki[mt];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -diff * diff / quad;
                if best.is_none_or(|(_, b)| obj < b) {
                    best = Some((t, obj));
                }
            }
        }
        (best.map(|(t, _)| t), gmax - gmin)
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Solution {
        let l = self.y.len();
        let c = self.c;
        let n_samples = self.map.iter().max().map_or(0, |m| m + 1);
        let kd: Vec<f64> = (0..n_samples).map(|s| self.rows.diag(s)).collect();
        let mut alpha = vec![0.0; l];
        let mut g = self.p.clone();
        let mut iterations = 0;
        let (gap, converged) = loop {
            let Some((i, gmax)) = self.select_i(&alpha, &g) else { break (0.0, true) };
            let ki = self.rows.row(self.map[i]);
            let (j, gap) = self.select_j(&alpha, &g, i, gmax, &ki, &kd);
            let Some(j) = j else { break (gap.max(0.0), true) };
            if gap < tol {
                break (gap, true);
            }
            if iterations >= max_iter {
                break (gap, false);
            }
            iterations += 1;

            let kj = self.rows.row(self.map[j]);
            let (mi, mj) = (self.map[i], self.map[j]);
            let mut quad = kd[mi] + kd[mj] - 2.0 * ki[mj];
            if quad <= 0.0 {
                quad = TAU;
            }
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (mut ai, mut aj) = (old_i, old_j);
            if self.y[i] != self.y[j] {
                let delta = (-g[i] - g[j]) / quad;
                let diff = ai - aj;
                ai += delta;
                aj += delta;
                if diff > 0.0 {
                    if aj < 0.0 {
                        aj = 0.0;
                        ai = diff;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = -diff;
                }
                if diff > 0.0 {
                    if ai > c {
                        ai = c;
                        aj = c - diff;
                    }
                } else if aj > c {
                    aj = c;
                    ai = c + diff;
                }
            } else {
                let delta = (g[i] - g[j]) / quad;
                let sum = ai + aj;
                ai -= delta;
                aj += delta;
                if sum > c {
                    if ai > c {
                        ai = c;
                        aj = sum - c;
                    }
                } else if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if sum > c {
                    if aj > c {
                        aj = c;
                        ai = sum - c;
                    }
                } else if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
            alpha[i] = ai;
            alpha[j] = aj;
            let di = self.y[i] * (ai - old_i);
            let dj = self.y[j] * (aj - old_j);
            for t in 0..l {
                let mt = self.map[t];
                g[t] += self.y[t] * (ki[mt] * di + kj[mt] * dj);
            }
        };
        let rho = self.rho(&alpha, &g);
        let objective = 0.5 * alpha.iter().zip(g.iter().zip(&self.p)).map(|(a, (gt, pt))| a * (gt + pt)).sum::<f64>();
        Solution {
            alpha,
            rho,
            objective,
            gap,
            iterations,
            converged,
        }
    }

    fn rho(&self, alpha: &[f64], g: &[f64]) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        // clipping can leave round-off residue next to a bound
        let eps = 1e-12 * self.c;
        for t in 0..alpha.len() {
            let yg = self.y[t] * g[t];
            if alpha[t] >= self.c - eps {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= eps {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        }
    }
}

use serde::{Deserialize, Serialize};

use super::SvmError;

/// Kernel function. A `None` gamma resolves at fit time to `1 / (d · Var(X))`
/// over the standardised training matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: Option<f64> },
    Poly { degree: u32, gamma: Option<f64>, coef0: f64 },
    Sigmoid { gamma: Option<f64>, coef0: f64 },
}

impl KernelSpec {
    pub const fn rbf() -> Self {
        KernelSpec::Rbf { gamma: None }
    }

    /// Cubic polynomial with zero offset.
    pub const fn poly3() -> Self {
        KernelSpec::Poly {
            degree: 3,
            gamma: None,
            coef0: 0.0,
        }
    }

    pub const fn sigmoid() -> Self {
        KernelSpec::Sigmoid { gamma: None, coef0: 0.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Poly { .. } => "poly",
            KernelSpec::Sigmoid { .. } => "sigmoid",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Rbf { gamma } | KernelSpec::Poly { gamma, .. } | KernelSpec::Sigmoid { gamma, .. } => gamma,
        }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        if let Some(g) = self.gamma() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(SvmError::InvalidParameter(format!("kernel gamma must be > 0, got {g}")));
            }
        }
        if let KernelSpec::Poly { degree: 0, .. } = self {
            return Err(SvmError::InvalidParameter("polynomial degree must be >= 1".into()));
        }
        Ok(())
    }

    /// Fills in a missing gamma from the training matrix.
    pub fn resolve(&self, x: &[Vec<f64>]) -> KernelSpec {
        self.with_default_gamma(default_gamma(x))
    }

    /// Fills an unset gamma with `g`.
    pub fn with_default_gamma(&self, g: f64) -> KernelSpec {
        match *self {
            KernelSpec::Linear => KernelSpec::Linear,
            KernelSpec::Rbf { gamma } => KernelSpec::Rbf {
                gamma: Some(gamma.unwrap_or(g)),
            },
            KernelSpec::Poly { degree, gamma, coef0 } => KernelSpec::Poly {
                degree,
                gamma: Some(gamma.unwrap_or(g)),
                coef0,
            },
            KernelSpec::Sigmoid { gamma, coef0 } => KernelSpec::Sigmoid {
                gamma: Some(gamma.unwrap_or(g)),
                coef0,
            },
        }
    }

    /// Kernel value from the inner products `<a,b>`, `<a,a>`, `<b,b>`.
    fn from_inner(&self, ab: f64, aa: f64, bb: f64) -> f64 {
        match *self {
            KernelSpec::Linear => ab,
            KernelSpec::Rbf { gamma } => (-gamma.unwrap_or(1.0) * (aa + bb - 2.0 * ab).max(0.0)).exp(),
            KernelSpec::Poly { degree, gamma, coef0 } => (gamma.unwrap_or(1.0) * ab + coef0).powi(degree as i32),
            KernelSpec::Sigmoid { gamma, coef0 } => (gamma.unwrap_or(1.0) * ab + coef0).tanh(),
        }
    }

    /// Evaluates the kernel. An unresolved gamma is treated as 1.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.unwrap_or(1.0) * d2).exp()
            }
            KernelSpec::Poly { degree, gamma, coef0 } => {
                (gamma.unwrap_or(1.0) * dot(a, b) + coef0).powi(degree as i32)
            }
            KernelSpec::Sigmoid { gamma, coef0 } => (gamma.unwrap_or(1.0) * dot(a, b) + coef0).tanh(),
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.gamma() {
            Some(g) => write!(f, "{}(gamma={g})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 / (d · Var(X))` over all entries; 1 when the variance vanishes.
pub fn default_gamma(x: &[Vec<f64>]) -> f64 {
    let d = x.first().map_or(0, Vec::len);
    let count = (x.len() * d) as f64;
    if count == 0.0 {
        return 1.0;
    }
    let mean = x.iter().flatten().sum::<f64>() / count;
    let var = x.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

/// Row-major Gram matrix `X Xᵀ`, exactly symmetric.
pub(crate) fn gram_matrix(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let m = nalgebra::DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let g = &m * m.transpose();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = g[(i, j)];
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

/// Row-major kernel matrix derived from a Gram matrix of side `n`.
pub(crate) fn kernel_from_gram(kernel: &KernelSpec, gram: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let aa = gram[i * n + i];
        for j in 0..n {
            out[i * n + j] = kernel.from_inner(gram[i * n + j], aa, gram[j * n + j]);
        }
    }
    out
}

/// Dense symmetric kernel matrix.
pub fn kernel_matrix(kernel: &KernelSpec, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    kernel_from_gram(kernel, &gram_matrix(x), n).chunks(n).map(<[f64]>::to_vec).collect()
}

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::{DescriptorError, FeatureVector};

/// Default reduced dimension for concatenated descriptors.
pub const PCA_TARGET_DIM: usize = 1500;

/// Principal components of a training population.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k×d row-major, rows orthonormal.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Above this many samples and dimensions, PCA eigendecomposes the smaller
/// Gram matrix instead of running a thin SVD.
const SVD_LIMIT: usize = 512;

/// `(unit direction, squared singular value)` pairs, descending.
fn svd_basis(x: DMatrix<f64>, k: usize) -> Vec<(Vec<f64>, f64)> {
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|r| (v_t.row(r).iter().copied().collect(), svd.singular_values[r].powi(2)))
        .collect()
}

/// Same as [`svd_basis`] through the eigenvectors of `XᵀX` or `XXᵀ`,
/// whichever is smaller. Directions with negligible variance are dropped.
fn gram_basis(x: DMatrix<f64>, k: usize) -> Vec<(Vec<f64>, f64)> {
    let (n, d) = x.shape();
    let xt = x.transpose();
    let wide = n < d;
    let g = if wide { &x * &xt } else { &xt * &x };
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    order
        .into_iter()
        .take(k)
        .filter(|&r| eig.eigenvalues[r] > top * 1e-12)
        .map(|r| {
            let lambda = eig.eigenvalues[r];
            let u = eig.eigenvectors.column(r);
            let dir: Vec<f64> = if wide {
                let v = &xt * u;
                v.iter().map(|e| e / lambda.sqrt()).collect()
            } else {
                u.iter().copied().collect()
            };
            (dir, lambda)
        })
        .collect()
}

/// Fits `min(target_dim, d, n - 1)` components of the centred sample
/// covariance from the centred data matrix.
///
/// Components are ordered by descending variance and signed so that the
/// largest-magnitude entry of each is positive.
pub fn pca_fit<S: AsRef<[f64]>>(samples: &[S], target_dim: usize) -> Result<PcaModel, DescriptorError> {
    let n = samples.len();
    if n < 2 {
        return Err(DescriptorError::TooFewSamples { got: n, required: 2 });
    }
    let d = samples[0].as_ref().len();
    for s in samples {
        if s.as_ref().len() != d {
            return Err(DescriptorError::DimensionMismatch {
                expected: d,
                got: s.as_ref().len(),
            });
        }
    }
    if d == 0 || target_dim == 0 {
        return Err(DescriptorError::InvalidConfig("PCA needs d >= 1 and target_dim >= 1".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let x = DMatrix::from_fn(n, d, |i, j| samples[i].as_ref()[j] - mean[j]);
    let k_max = target_dim.min(d).min(n - 1);
    let basis = if n.min(d) <= SVD_LIMIT { svd_basis(x, k_max) } else { gram_basis(x, k_max) };
    let mut components = Vec::with_capacity(basis.len() * d);
    let mut explained_variance = Vec::with_capacity(basis.len());
    for (mut row, s2) in basis {
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(row);
        explained_variance.push(s2 / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    /// Rebuilds a model from stored parts.
    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, explained_variance: Vec<f64>) -> Result<Self, DescriptorError> {
        let d = mean.len();
        let k = explained_variance.len();
        if components.len() != k * d {
            return Err(DescriptorError::DimensionMismatch {
                expected: k * d,
                got: components.len(),
            });
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major k×d component matrix.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.k());
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..k * self.input_dim()].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
        }
    }

    /// Hex digest identifying the model contents.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self.mean.iter().chain(&self.components).chain(&self.explained_variance) {
            h.update(v.to_le_bytes());
        }
        h.update((self.k() as u64).to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(DescriptorError::DimensionMismatch { expected: d, got: x.len() });
        }
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .components
            .chunks_exact(d)
            .map(|row| row.iter().zip(&centred).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>, DescriptorError> {
        if z.len() != self.k() {
            return Err(DescriptorError::DimensionMismatch {
                expected: self.k(),
                got: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (row, &c) in self.components.chunks_exact(self.input_dim()).zip(z) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        Ok(out)
    }
}

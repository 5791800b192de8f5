//! Model bundles for the confidence predictors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CascadedModel, ConfidencePredictor, IndividualModel, JointModel};
use crate::dataio::{self, DataError, ModelBundle, Section};
use crate::descriptors::{DescriptorConfig, PcaModel};
use crate::image::GrayImage;
use crate::metrics::ConfidenceScore;
use crate::svm::{GridCell, KernelModel, KernelSpec, ModelKind, Standardizer, TrainMeta};
use crate::{Landmark, LandmarkSet, Result};

pub(crate) fn malformed(m: impl Into<String>) -> crate::Error {
    DataError::MalformedContainer(m.into()).into()
}

pub(crate) fn field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    serde_json::from_value(meta.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| malformed(format!("metadata field `{key}`: {e}")))
}

#[derive(Serialize, Deserialize)]
struct KernelHeader {
    kind: ModelKind,
    kernel: KernelSpec,
    meta: TrainMeta,
}

/// Writes a kernel model's arrays under `prefix` and returns its header.
pub(crate) fn kernel_to_sections(prefix: &str, m: &KernelModel, out: &mut Vec<Section>) -> Value {
    let d = m.dim();
    out.push(Section::new(
        format!("{prefix}.sv"),
        vec![m.support_vectors.len(), d],
        m.support_vectors.iter().flatten().copied().collect(),
    ));
    out.push(Section::vector(format!("{prefix}.coef"), m.dual_coefs.clone()));
    out.push(Section::vector(format!("{prefix}.bias"), vec![m.bias]));
    out.push(Section::vector(format!("{prefix}.mean"), m.scaler.mean.clone()));
    out.push(Section::vector(format!("{prefix}.std"), m.scaler.std.clone()));
    serde_json::to_value(KernelHeader {
        kind: m.kind,
        kernel: m.kernel,
        meta: m.meta.clone(),
    })
    .expect("kernel header serialises")
}

pub(crate) fn kernel_from_sections(prefix: &str, header: &Value, b: &ModelBundle) -> Result<KernelModel> {
    let h: KernelHeader =
        serde_json::from_value(header.clone()).map_err(|e| malformed(format!("kernel header `{prefix}`: {e}")))?;
    let sv = b.section(&format!("{prefix}.sv"))?.rows()?;
    let coef = b.section(&format!("{prefix}.coef"))?.data.clone();
    let bias = b.section(&format!("{prefix}.bias"))?.data.first().copied().ok_or_else(|| malformed("empty bias"))?;
    let mean = b.section(&format!("{prefix}.mean"))?.data.clone();
    let std = b.section(&format!("{prefix}.std"))?.data.clone();
    if sv.len() != coef.len() || mean.len() != std.len() || sv.iter().any(|r| r.len() != mean.len()) {
        return Err(malformed(format!("inconsistent kernel model sections under `{prefix}`")));
    }
    Ok(KernelModel {
        kind: h.kind,
        kernel: h.kernel,
        scaler: Standardizer { mean, std },
        support_vectors: sv,
        dual_coefs: coef,
        bias,
        meta: h.meta,
    })
}

pub(crate) fn pca_to_sections(prefix: &str, p: &PcaModel, out: &mut Vec<Section>) {
    out.push(Section::vector(format!("{prefix}.pca.mean"), p.mean().to_vec()));
    out.push(Section::new(
        format!("{prefix}.pca.components"),
        vec![p.k(), p.input_dim()],
        p.components().to_vec(),
    ));
    out.push(Section::vector(format!("{prefix}.pca.var"), p.explained_variance().to_vec()));
}

pub(crate) fn pca_from_sections(prefix: &str, b: &ModelBundle) -> Result<Option<PcaModel>> {
    let Ok(mean) = b.section(&format!("{prefix}.pca.mean")) else { return Ok(None) };
    let comps = b.section(&format!("{prefix}.pca.components"))?;
    let var = b.section(&format!("{prefix}.pca.var"))?;
    Ok(Some(PcaModel::from_parts(mean.data.clone(), comps.data.clone(), var.data.clone())?))
}

fn individual_parts(prefix: &str, m: &IndividualModel, sections: &mut Vec<Section>) -> Value {
    if let Some(p) = &m.pca {
        pca_to_sections(prefix, p, sections);
    }
    json!({
        "landmark": m.landmark,
        "configs": m.configs,
        "fingerprint": m.fingerprint(),
        "sigma_fraction": m.sigma_fraction,
        "trained_on": m.trained_on,
        "cv_table": m.cv_table,
        "regressor": kernel_to_sections(&format!("{prefix}.svr"), &m.regressor, sections),
    })
}

fn individual_from(prefix: &str, meta: &Value, b: &ModelBundle) -> Result<IndividualModel> {
    let m = IndividualModel {
        landmark: field(meta, "landmark")?,
        configs: field(meta, "configs")?,
        pca: pca_from_sections(prefix, b)?,
        regressor: kernel_from_sections(&format!("{prefix}.svr"), meta.get("regressor").unwrap_or(&Value::Null), b)?,
        sigma_fraction: field(meta, "sigma_fraction")?,
        trained_on: field(meta, "trained_on")?,
        cv_table: field::<Option<Vec<GridCell>>>(meta, "cv_table")?.unwrap_or_default(),
    };
    let stored: String = field(meta, "fingerprint")?;
    if stored != m.fingerprint() {
        return Err(malformed(format!("feature fingerprint {stored} does not match {}", m.fingerprint())));
    }
    Ok(m)
}

/// Any of the three confidence architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Individual(IndividualModel),
    Joint(JointModel),
    Cascaded(CascadedModel),
}

impl AnyModel {
    pub fn architecture(&self) -> &'static str {
        match self {
            AnyModel::Individual(_) => "individual",
            AnyModel::Joint(_) => "joint",
            AnyModel::Cascaded(_) => "cascaded",
        }
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut sections = Vec::new();
        let metadata = match self {
            AnyModel::Individual(m) => individual_parts("m", m, &mut sections),
            AnyModel::Joint(m) => {
                if let Some(p) = &m.pca {
                    pca_to_sections("m", p, &mut sections);
                }
                json!({
                    "parts": m.parts,
                    "fingerprint": m.fingerprint(),
                    "sigma_fraction": m.sigma_fraction,
                    "trained_on": m.trained_on,
                    "cv_table": m.cv_table,
                    "regressor": kernel_to_sections("m.svr", &m.regressor, &mut sections),
                })
            }
            AnyModel::Cascaded(m) => {
                let stage1: Vec<Value> = m
                    .stage1
                    .iter()
                    .enumerate()
                    .map(|(i, s)| individual_parts(&format!("s{i}"), s, &mut sections))
                    .collect();
                json!({
                    "stage1": stage1,
                    "sigma_fraction": m.sigma_fraction,
                    "trained_on": m.trained_on,
                    "cv_table": m.cv_table,
                    "stage2": kernel_to_sections("stage2", &m.stage2, &mut sections),
                })
            }
        };
        ModelBundle {
            architecture: self.architecture().into(),
            metadata,
            sections,
        }
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        let meta = &b.metadata;
        match b.architecture.as_str() {
            "individual" => Ok(AnyModel::Individual(individual_from("m", meta, b)?)),
            "joint" => {
                let m = JointModel {
                    parts: field::<Vec<(Landmark, Vec<DescriptorConfig>)>>(meta, "parts")?,
                    pca: pca_from_sections("m", b)?,
                    regressor: kernel_from_sections("m.svr", meta.get("regressor").unwrap_or(&Value::Null), b)?,
                    sigma_fraction: field(meta, "sigma_fraction")?,
                    trained_on: field(meta, "trained_on")?,
                    cv_table: field::<Option<Vec<GridCell>>>(meta, "cv_table")?.unwrap_or_default(),
                };
                let stored: String = field(meta, "fingerprint")?;
                if stored != m.fingerprint() {
                    return Err(malformed("joint feature fingerprint mismatch"));
                }
                Ok(AnyModel::Joint(m))
            }
            "cascaded" => {
                let stage1_meta: Vec<Value> = field(meta, "stage1")?;
                let stage1 = stage1_meta
                    .iter()
                    .enumerate()
                    .map(|(i, m)| individual_from(&format!("s{i}"), m, b))
                    .collect::<Result<Vec<_>>>()?;
                let stage2 = kernel_from_sections("stage2", meta.get("stage2").unwrap_or(&Value::Null), b)?;
                if stage2.dim() != stage1.len() {
                    return Err(malformed("second-stage input dimension differs from the number of first-stage models"));
                }
                Ok(AnyModel::Cascaded(CascadedModel {
                    stage1,
                    stage2,
                    sigma_fraction: field(meta, "sigma_fraction")?,
                    trained_on: field(meta, "trained_on")?,
                    cv_table: field::<Option<Vec<GridCell>>>(meta, "cv_table")?.unwrap_or_default(),
                }))
            }
            other => Err(malformed(format!("unknown architecture `{other}`"))),
        }
    }

    pub fn predictor(&self) -> &dyn ConfidencePredictor {
        match self {
            AnyModel::Individual(m) => m,
            AnyModel::Joint(m) => m,
            AnyModel::Cascaded(m) => m,
        }
    }

    pub fn trained_on(&self) -> &[String] {
        match self {
            AnyModel::Individual(m) => &m.trained_on,
            AnyModel::Joint(m) => &m.trained_on,
            AnyModel::Cascaded(m) => &m.trained_on,
        }
    }
}

impl ConfidencePredictor for AnyModel {
    fn target_landmarks(&self) -> Vec<Landmark> {
        self.predictor().target_landmarks()
    }

    fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<ConfidenceScore> {
        self.predictor().predict(image, landmarks)
    }
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    Ok(dataio::save_bundle(path, &model.to_bundle())?)
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    AnyModel::from_bundle(&dataio::load_bundle(path)?)
}

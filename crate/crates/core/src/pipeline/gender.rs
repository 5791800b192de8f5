use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::confidence::persist::{field, kernel_from_sections, kernel_to_sections, malformed, pca_from_sections, pca_to_sections};
use crate::confidence::{canvas_position, normalize_by, ImageSource};
use crate::dataio::{self, AnnotationRecord, Gender, ModelBundle};
use crate::descriptors::{self, DescriptorConfig, PatchSize, PcaModel, PCA_TARGET_DIM};
use crate::image::{FacePatch, GrayImage, CANVAS_SIZE};
use crate::svm::{self, GridCell, KernelModel, Scaling, SearchGrid, SolverParams, SvmError, Task};
use crate::{Landmark, LandmarkSet, Point, Result};

/// Feature layout of the gender classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderFeatures {
    pub landmarks: Vec<Landmark>,
    pub per_landmark: Vec<DescriptorConfig>,
    /// SIFT grid over the whole face square.
    pub whole_face_cells: usize,
}

impl Default for GenderFeatures {
    fn default() -> Self {
        Self {
            landmarks: Landmark::ALL.to_vec(),
            per_landmark: vec![
                DescriptorConfig::sift(PatchSize::eighths(2), 4),
                DescriptorConfig::lbp(PatchSize::eighths(2), 4, 2),
            ],
            whole_face_cells: 8,
        }
    }
}

impl GenderFeatures {
    fn whole_face(&self) -> DescriptorConfig {
        DescriptorConfig::sift(PatchSize::eighths(8), self.whole_face_cells)
    }

    pub fn dim(&self) -> usize {
        self.landmarks.len() * descriptors::raw_dim(&self.per_landmark) + self.whole_face().dim()
    }

    /// Features on a normalised face; `None` if a landmark is missing.
    pub fn extract_on_face(&self, face: &FacePatch, landmarks: &LandmarkSet) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.dim());
        for &l in &self.landmarks {
            let Some(p) = landmarks.get(l) else { return Ok(None) };
            out.extend(descriptors::extract_raw(face, canvas_position(face, p), &self.per_landmark)?);
        }
        let centre = Point::new(CANVAS_SIZE as f64 / 2.0, CANVAS_SIZE as f64 / 2.0);
        out.extend(descriptors::extract_raw(face, centre, &[self.whole_face()])?);
        Ok(Some(out))
    }

    pub fn extract(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<Option<Vec<f64>>> {
        match normalize_by(image, landmarks) {
            Some(face) => self.extract_on_face(&face, landmarks),
            None => Ok(None),
        }
    }
}

/// SVC over grid descriptors at the landmarks plus a whole-face grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GenderModel {
    pub features: GenderFeatures,
    pub pca: Option<PcaModel>,
    pub classifier: KernelModel,
    pub trained_on: Vec<String>,
    pub cv_table: Vec<GridCell>,
}

impl GenderModel {
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.features).expect("features serialise"));
        if let Some(p) = &self.pca {
            h.update(b"|pca:");
            h.update(p.fingerprint().as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// `None` when the face cannot be normalised from `landmarks`.
    pub fn predict(&self, image: &GrayImage, landmarks: &LandmarkSet) -> Result<Option<Gender>> {
        let Some(raw) = self.features.extract(image, landmarks)? else { return Ok(None) };
        let x = match &self.pca {
            Some(p) => p.project(&raw)?,
            None => raw,
        };
        Ok(Some(if self.classifier.predict(&x)? > 0.0 { Gender::Male } else { Gender::Female }))
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut sections = Vec::new();
        if let Some(p) = &self.pca {
            pca_to_sections("g", p, &mut sections);
        }
        let metadata = json!({
            "features": self.features,
            "fingerprint": self.fingerprint(),
            "trained_on": self.trained_on,
            "cv_table": self.cv_table,
            "classifier": kernel_to_sections("g.svc", &self.classifier, &mut sections),
        });
        ModelBundle {
            architecture: "gender".into(),
            metadata,
            sections,
        }
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        if b.architecture != "gender" {
            return Err(malformed(format!("expected a gender model, found `{}`", b.architecture)));
        }
        let meta = &b.metadata;
        let m = Self {
            features: field(meta, "features")?,
            pca: pca_from_sections("g", b)?,
            classifier: kernel_from_sections("g.svc", meta.get("classifier").unwrap_or(&Value::Null), b)?,
            trained_on: field(meta, "trained_on")?,
            cv_table: field::<Option<Vec<GridCell>>>(meta, "cv_table")?.unwrap_or_default(),
        };
        let stored: String = field(meta, "fingerprint")?;
        if stored != m.fingerprint() {
            return Err(malformed("gender feature fingerprint mismatch"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(dataio::save_bundle(path, &self.to_bundle())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&dataio::load_bundle(path)?)
    }
}

/// Fits the gender SVC on faces with a gender label, using their annotated
/// landmarks. Features above `pca_dim` dimensions are reduced by PCA first.
pub fn train_gender(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    features: &GenderFeatures,
    grid: &SearchGrid,
    seed: u64,
    params: &SolverParams,
) -> Result<GenderModel> {
    train_gender_with_pca(records, images, features, grid, seed, params, PCA_TARGET_DIM)
}

pub fn train_gender_with_pca(
    records: &[AnnotationRecord],
    images: &dyn ImageSource,
    features: &GenderFeatures,
    grid: &SearchGrid,
    seed: u64,
    params: &SolverParams,
    pca_dim: usize,
) -> Result<GenderModel> {
    let rows: Vec<Option<(String, Vec<f64>, f64)>> = records
        .par_iter()
        .map(|rec| -> Result<Option<(String, Vec<f64>, f64)>> {
            let Some(g) = rec.gender else { return Ok(None) };
            let image = images.image(rec)?;
            Ok(features.extract(&image, &rec.landmarks)?.map(|x| (rec.face_id.clone(), x, g.label())))
        })
        .collect::<Result<_>>()?;
    let (mut ids, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (id, xi, yi) in rows.into_iter().flatten() {
        ids.push(id);
        x.push(xi);
        y.push(yi);
    }
    if y.is_empty() || y.iter().all(|&v| v == y[0]) {
        return Err(SvmError::SingleClass.into());
    }
    let pca = if x[0].len() > pca_dim {
        Some(descriptors::pca_fit(&x, pca_dim)?)
    } else {
        None
    };
    if let Some(p) = &pca {
        x = x.iter().map(|r| p.project(r)).collect::<std::result::Result<_, _>>()?;
    }
    let params = &SolverParams {
        scaling: if pca.is_some() { Scaling::Shared } else { params.scaling },
        ..*params
    };
    let search = svm::grid_search_cv(&x, &y, None, grid, Task::Svc, seed, params)?;
    let best = search.best_cell().clone();
    log::info!("gender: best C={} kernel={} cv accuracy {:.4}", best.c, best.kernel, best.score);
    let mut classifier = match svm::svc_fit(&x, &y, best.c, &best.kernel, params) {
        Err(SvmError::NoConvergence { model, .. }) => *model,
        other => other?,
    };
    classifier.meta.cv_score = Some(best.score);
    classifier.meta.cv_folds = Some(search.folds);
    classifier.meta.cv_seed = Some(search.seed);
    Ok(GenderModel {
        features: features.clone(),
        pca,
        classifier,
        trained_on: ids,
        cv_table: search.cells,
    })
}

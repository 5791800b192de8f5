//! One function per subcommand. Each reads its inputs through the resolved
//! [`RunConfig`] and writes only below the output directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use lmconf_core::confidence::{
    self, cardinality_means, load_model, save_model, select_records, subset_search, train_cascaded, train_individual,
    train_joint, AnyModel, DiskImages, ImageSource, IndividualModel, Scored, SearchEval,
};
use lmconf_core::dataio::{
    load_annotations, make_splits, split_from_partition, AnnotationRecord, SplitManifest,
};
use lmconf_core::descriptors::{self, FeatureVector};
use lmconf_core::metrics::{self, EvaluationReport};
use lmconf_core::pipeline::{
    self, GenderModel, LandmarkProvider, MethodName, MethodProfile, SyntheticProvider,
};
use lmconf_core::synth::SynthCorpus;
use lmconf_core::{Landmark, LandmarkSet};
use serde::Serialize;

use crate::config::{Part, RunConfig};
use crate::error::{CliError, Result};

/// Output directory; every artifact goes through here.
pub struct Out {
    pub dir: PathBuf,
}

impl Out {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("report serialises");
        text.push('\n');
        self.write(name, text)
    }
}

struct Dataset {
    records: Vec<AnnotationRecord>,
    images: DiskImages,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .data
        .annotations
        .as_ref()
        .ok_or_else(|| CliError::MissingInput("data.annotations (or --annotations) is not set".into()))?;
    let records = load_annotations(path, &cfg.schema()?)?;
    info!("loaded {} records from {}", records.len(), path.display());
    let root = cfg.data.images.clone().unwrap_or_default();
    Ok(Dataset {
        records,
        images: DiskImages { root },
    })
}

fn load_split(cfg: &RunConfig) -> Result<SplitManifest> {
    let path = cfg
        .data
        .split
        .as_ref()
        .ok_or_else(|| CliError::MissingInput("data.split (or --split) is not set".into()))?;
    Ok(SplitManifest::load(path)?)
}

fn part_ids(split: &SplitManifest, part: Part) -> Vec<String> {
    match part {
        Part::Train => split.train_ids.clone(),
        Part::Val => split.val_ids.clone(),
        Part::Test => split.test_ids.clone(),
        Part::Held => split.val_ids.iter().chain(&split.test_ids).cloned().collect(),
    }
}

fn part_records(ds: &Dataset, split: &SplitManifest, part: Part) -> Result<Vec<AnnotationRecord>> {
    let ids = part_ids(split, part);
    let recs = select_records(&ds.records, &ids);
    if recs.len() != ids.len() {
        warn!("{} of {} split ids have no annotation record", ids.len() - recs.len(), ids.len());
    }
    if recs.is_empty() {
        return Err(CliError::MissingInput(format!("no records in the {part:?} part")));
    }
    Ok(recs)
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::MissingInput(format!("{what} is not set")))
}

fn landmark_list(ls: &[Landmark]) -> String {
    ls.iter().map(|l| l.name()).collect::<Vec<_>>().join("+")
}

pub fn synth(cfg: &RunConfig, out: &Out) -> Result<()> {
    let corpus = SynthCorpus::generate(&cfg.synth)?;
    corpus.write(&out.dir)?;
    info!("wrote {} synthetic faces to {}", corpus.faces.len(), out.dir.display());
    Ok(())
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn split(cfg: &RunConfig, out: &Out) -> Result<()> {
    let manifest = match (&cfg.split.train_list, &cfg.split.test_list) {
        (Some(tr), Some(te)) => split_from_partition(&read_id_list(tr)?, &read_id_list(te)?, cfg.seed)?,
        (None, None) => {
            let ds = load_dataset(cfg)?;
            make_splits(&ds.records, cfg.seed, cfg.split.filter.filter().as_ref())?
        }
        _ => return Err(CliError::Config("split.train_list and split.test_list must be set together".into())),
    };
    manifest.save(&out.path("split.json"))?;
    info!(
        "split: {} train, {} val, {} test",
        manifest.train_ids.len(),
        manifest.val_ids.len(),
        manifest.test_ids.len()
    );
    Ok(())
}

pub fn extract(cfg: &RunConfig, out: &Out) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let records = part_records(&ds, &split, cfg.extract.part)?;
    let table = cfg.descriptors.table()?;
    for &l in &cfg.train.landmarks {
        let configs = &table[&l];
        let mut ids = String::new();
        let mut vectors: Vec<FeatureVector> = Vec::new();
        for rec in &records {
            let Some(p) = rec.landmarks.get(l) else { continue };
            let image = ds.images.image(rec)?;
            let Some(face) = confidence::normalize_by(&image, &rec.landmarks) else { continue };
            let pos = face.clamp_to_face(face.to_canvas(p));
            vectors.push(descriptors::extract_landmark_features(&face, pos, configs, None)?);
            ids.push_str(&rec.face_id);
            ids.push('\n');
        }
        let stem = out.path(&format!("features_{}", l.name()));
        descriptors::write_feature_vectors(&stem, &vectors).map_err(|e| CliError::io(&stem, e))?;
        out.write(&format!("features_{}_ids.txt", l.name()), ids)?;
        info!("{}: {} feature vectors of dim {}", l, vectors.len(), descriptors::raw_dim(configs));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    architecture: &'static str,
    landmarks: Vec<Landmark>,
    model_file: String,
    n_trained_on: usize,
    meta: &'a lmconf_core::svm::TrainMeta,
    kernel: String,
    cv_table: &'a [lmconf_core::svm::GridCell],
}

fn write_model(out: &Out, stem: &str, model: AnyModel) -> Result<()> {
    let file = format!("{stem}.lmc");
    save_model(&out.path(&file), &model)?;
    let (reg, cv): (&lmconf_core::svm::KernelModel, &[_]) = match &model {
        AnyModel::Individual(m) => (&m.regressor, &m.cv_table),
        AnyModel::Joint(m) => (&m.regressor, &m.cv_table),
        AnyModel::Cascaded(m) => (&m.stage2, &m.cv_table),
    };
    let summary = TrainSummary {
        architecture: model.architecture(),
        landmarks: model.predictor().target_landmarks(),
        model_file: file,
        n_trained_on: model.trained_on().len(),
        meta: &reg.meta,
        kernel: reg.kernel.to_string(),
        cv_table: cv,
    };
    out.write_json(&format!("{stem}.json"), &summary)?;
    info!(
        "{} model {}: C={} eps={:?} kernel={} cv={:?}",
        summary.architecture,
        landmark_list(&summary.landmarks),
        reg.meta.c,
        reg.meta.epsilon,
        reg.kernel,
        reg.meta.cv_score
    );
    Ok(())
}

pub fn train_individual_cmd(cfg: &RunConfig, out: &Out) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let train = part_records(&ds, &split, Part::Train)?;
    let table = cfg.descriptors.table()?;
    let opts = cfg.train_options()?;
    for &l in &cfg.train.landmarks {
        let m = train_individual(&train, &ds.images, l, &table[&l], &opts)?;
        write_model(out, &format!("model_{}", l.name()), AnyModel::Individual(m))?;
    }
    Ok(())
}

pub fn train_joint_cmd(cfg: &RunConfig, out: &Out) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let train = part_records(&ds, &split, Part::Train)?;
    let table = cfg.descriptors.table()?;
    let parts: Vec<_> = cfg.train.joint_landmarks.iter().map(|l| (*l, table[l].clone())).collect();
    let m = train_joint(&train, &ds.images, &parts, &cfg.train_options()?)?;
    write_model(out, "model_joint", AnyModel::Joint(m))
}

pub fn train_cascaded_cmd(cfg: &RunConfig, out: &Out) -> Result<()> {
    if cfg.train.stage1.is_empty() {
        return Err(CliError::MissingInput("train.stage1 (or --stage1) lists no models".into()));
    }
    let mut stage1: Vec<IndividualModel> = Vec::new();
    for p in &cfg.train.stage1 {
        match load_model(p)? {
            AnyModel::Individual(m) => stage1.push(m),
            other => {
                return Err(CliError::Config(format!(
                    "{} holds a {} model; the cascade needs individual models",
                    p.display(),
                    other.architecture()
                )))
            }
        }
    }
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let val = part_records(&ds, &split, Part::Val)?;
    let m = train_cascaded(stage1, &val, &ds.images, &cfg.train_options()?)?;
    write_model(out, "model_cascaded", AnyModel::Cascaded(m))
}

fn load_detections(cfg: &RunConfig, path: &Path) -> Result<HashMap<String, LandmarkSet>> {
    let recs = load_annotations(path, &cfg.schema()?)?;
    Ok(recs.into_iter().map(|r| (r.face_id, r.landmarks)).collect())
}

fn fig5_csv(scored: &Scored, cfg: &RunConfig) -> Result<String> {
    let ev = &cfg.eval;
    let op = &cfg.operating;
    let steps = ev.distance_steps.max(1);
    let mut s = String::from("distance_fraction,gt_threshold,failure_rate,true_correct95,retention_rate\n");
    for k in 0..=steps {
        let d = ev.distance_max * k as f64 / steps as f64;
        let c = metrics::confidence(d, op.sigma)?.value();
        let n = scored.ground_truth.len().max(1) as f64;
        let failure_rate = scored.ground_truth.iter().filter(|&&g| g < c).count() as f64 / n;
        let point = metrics::gt_threshold_curve(&scored.predicted, &scored.ground_truth, &[c], op.tune_fraction, cfg.seed)?
            .pop();
        let (tc, ret) = match point {
            Some(p) => (p.detection_rate.to_string(), p.retention_rate.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(s, "{d},{c},{failure_rate},{tc},{ret}").unwrap();
    }
    Ok(s)
}

fn scatter_csv(scored: &Scored) -> String {
    let mut s = String::from("face_id,ground_truth,predicted\n");
    for ((id, g), p) in scored.face_ids.iter().zip(&scored.ground_truth).zip(&scored.predicted) {
        writeln!(s, "{id},{g},{p}").unwrap();
    }
    s
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: String,
    architecture: &'static str,
    landmarks: Vec<Landmark>,
    n_scored: usize,
    r2: Option<f64>,
    report: &'a EvaluationReport,
}

/// Scores a saved model on a split part and tunes the operating point.
pub fn eval(cfg: &RunConfig, out: &Out) -> Result<()> {
    let model_path = require(&cfg.eval.model, "eval.model (or --model)")?;
    let model = load_model(model_path)?;
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let records = part_records(&ds, &split, cfg.eval.part)?;
    confidence::check_disjoint(model.trained_on(), &part_ids(&split, cfg.eval.part))?;
    let scored = match &cfg.eval.detections {
        Some(p) => {
            let det = load_detections(cfg, p)?;
            let (recs, sets): (Vec<_>, Vec<_>) = records
                .iter()
                .filter_map(|r| det.get(&r.face_id).map(|d| (r.clone(), *d)))
                .unzip();
            confidence::score_detections(model.predictor(), &recs, &sets, &ds.images, cfg.operating.sigma)?
        }
        None => confidence::score_perturbed(
            model.predictor(),
            &records,
            &ds.images,
            &cfg.perturb.eval_spec(cfg.seed),
            cfg.operating.sigma,
        )?,
    };
    let report = confidence::evaluate(&scored, &cfg.operating.point(), cfg.operating.tune_fraction, cfg.seed)?;
    let r2 = metrics::r2(&scored.ground_truth, &scored.predicted).ok();
    out.write_json(
        "eval_report.json",
        &EvalOutput {
            model: model_path.display().to_string(),
            architecture: model.architecture(),
            landmarks: model.predictor().target_landmarks(),
            n_scored: scored.predicted.len(),
            r2,
            report: &report,
        },
    )?;
    let thresholds = pipeline::threshold_grid(cfg.eval.threshold_steps);
    let (_, eval_idx) = metrics::tune_split(scored.predicted.len(), cfg.operating.tune_fraction, cfg.seed);
    let pick = |v: &[f64]| eval_idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let fig6 = metrics::prediction_threshold_curve(
        &pick(&scored.predicted),
        &pick(&scored.ground_truth),
        cfg.operating.gt_threshold,
        &thresholds,
    )?;
    out.write("fig5_gt_threshold.csv", fig5_csv(&scored, cfg)?)?;
    out.write("fig6_pred_threshold.csv", metrics::curve_to_csv(&fig6))?;
    out.write("predictions.csv", scatter_csv(&scored))?;
    info!(
        "TrueCorrect95 {:.4} at threshold {:.4} ({} eval samples, {} failures)",
        report.true_correct95, report.tuned_pred_threshold, report.n_eval, report.n_eval_failures
    );
    Ok(())
}

pub fn subset_search_cmd(cfg: &RunConfig, out: &Out) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let train = part_records(&ds, &split, Part::Train)?;
    let val = part_records(&ds, &split, cfg.subset_search.part)?;
    let table = cfg.descriptors.table()?;
    let eval = SearchEval {
        validation: &val,
        spec: cfg.perturb.eval_spec(cfg.seed),
        op: cfg.operating.point(),
        tune_fraction: cfg.operating.tune_fraction,
        seed: cfg.seed,
    };
    let configs = |l: Landmark| table[&l].clone();
    let rows = subset_search(&train, &ds.images, &cfg.subset_search.landmarks, &configs, &cfg.train_options()?, &eval)?;
    let means = cardinality_means(&rows);
    let mean_of = |k: usize| means.iter().find(|m| m.0 == k).map(|m| m.1.to_string()).unwrap_or_default();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("landmarks,cardinality,true_correct95,r2,cardinality_mean\n");
    for r in &rows {
        writeln!(
            s,
            "{},{},{},{},{}",
            landmark_list(&r.landmarks),
            r.cardinality,
            opt(r.true_correct95),
            opt(r.r2),
            mean_of(r.cardinality)
        )
        .unwrap();
    }
    out.write("fig7_scatter.csv", s)?;
    let mut m = String::from("cardinality,mean_true_correct95,rows\n");
    for (k, mean, n) in &means {
        writeln!(m, "{k},{mean},{n}").unwrap();
    }
    out.write("subset_means.csv", m)?;
    Ok(())
}

#[derive(Serialize)]
struct GenderSummary<'a> {
    model_file: &'static str,
    n_trained_on: usize,
    feature_dim: usize,
    pca_dim: Option<usize>,
    meta: &'a lmconf_core::svm::TrainMeta,
    kernel: String,
    cv_table: &'a [lmconf_core::svm::GridCell],
}

pub fn train_gender_cmd(cfg: &RunConfig, out: &Out) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let records = part_records(&ds, &split, cfg.gender.part)?;
    let m: GenderModel = pipeline::train_gender_with_pca(
        &records,
        &ds.images,
        &cfg.gender.features,
        &cfg.svc.grid()?,
        cfg.seed,
        &cfg.train.solver(),
        cfg.gender.pca_dim,
    )?;
    m.save(&out.path("gender.lmc"))?;
    out.write_json(
        "gender.json",
        &GenderSummary {
            model_file: "gender.lmc",
            n_trained_on: m.trained_on.len(),
            feature_dim: cfg.gender.features.dim(),
            pca_dim: m.pca.as_ref().map(|p| p.k()),
            meta: &m.classifier.meta,
            kernel: m.classifier.kernel.to_string(),
            cv_table: &m.cv_table,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ForcedCost {
    t_fast: f64,
    t_robust: f64,
    recompute_fraction: f64,
    time_s: f64,
    speedup: f64,
}

fn provider(detections: &Option<PathBuf>, cfg: &RunConfig, sigma: f64, seed: u64) -> Result<LandmarkProvider> {
    Ok(match detections {
        Some(p) => LandmarkProvider::Ingested(load_detections(cfg, p)?),
        None => LandmarkProvider::Synthetic(SyntheticProvider::new(sigma, seed)),
    })
}

/// Fast/robust trade-off sweep. With `force_fraction` set, only the cost
/// model is evaluated at that fraction and no data is read.
pub fn tradeoff(cfg: &RunConfig, out: &Out) -> Result<()> {
    let t = &cfg.tradeoff;
    if let Some(f) = t.force_fraction {
        let forced = ForcedCost {
            t_fast: t.t_fast,
            t_robust: t.t_robust,
            recompute_fraction: f,
            time_s: pipeline::expected_time(t.t_fast, t.t_robust, f),
            speedup: pipeline::speedup(t.t_fast, t.t_robust, f),
        };
        let mut s = String::from(pipeline::TRADEOFF_CSV_HEADER);
        writeln!(s, "\n,{},{},,", forced.recompute_fraction, forced.time_s).unwrap();
        out.write("fig8_tradeoff.csv", s)?;
        out.write_json("tradeoff_summary.json", &forced)?;
        info!("time per image {:.4} s, speedup {:.4}x", forced.time_s, forced.speedup);
        return Ok(());
    }
    let model = load_model(require(&t.model, "tradeoff.model (or --model)")?)?;
    let gender = match &t.gender_model {
        Some(p) => Some(GenderModel::load(p)?),
        None => None,
    };
    let ds = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let records = part_records(&ds, &split, t.part)?;
    let fast = MethodProfile::new(
        MethodName::Fast,
        t.t_fast,
        provider(&t.fast_detections, cfg, t.fast_sigma, cfg.seed)?,
    )?;
    let robust = MethodProfile::new(
        MethodName::Robust,
        t.t_robust,
        provider(&t.robust_detections, cfg, t.robust_sigma, cfg.seed.wrapping_add(1))?,
    )?;
    let thresholds = pipeline::threshold_grid(t.threshold_steps);
    let report = pipeline::run_tradeoff(
        &records,
        &ds.images,
        model.predictor(),
        &fast,
        &robust,
        &thresholds,
        gender.as_ref(),
    )?;
    out.write("fig8_tradeoff.csv", report.to_csv())?;
    let mut s = String::from("face_id,confidence,fast_mae,robust_mae,fast_correct,robust_correct\n");
    let b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
    for x in &report.samples {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            x.face_id,
            x.confidence,
            x.fast_mae,
            x.robust_mae,
            b(x.fast_correct),
            b(x.robust_correct)
        )
        .unwrap();
    }
    out.write("tradeoff_samples.csv", s)?;
    info!("trade-off over {} faces and {} thresholds", report.samples.len(), thresholds.len());
    Ok(())
}

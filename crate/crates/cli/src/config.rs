//! Run configuration: a TOML document whose resolved form is written next to
//! every command's outputs.
//!
//! Resolution fills every optional knob with its effective value and makes
//! all paths absolute, so re-running a command from the written file
//! reproduces the run. Thread count and output directory are deliberately
//! not part of it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lmconf_core::confidence::presets::{self, Preset};
use lmconf_core::confidence::{TrainOptions, DEFAULT_JOINT_SUBSET, MIN_TRAINING_FACES};
use lmconf_core::dataio::{GroupSpec, PoseFilter, Schema};
use lmconf_core::descriptors::{DescriptorConfig, PCA_TARGET_DIM};
use lmconf_core::metrics::{self, OperatingPoint};
use lmconf_core::perturb::{PerturbMode, PerturbSpec};
use lmconf_core::pipeline::{self, GenderFeatures};
use lmconf_core::svm::{KernelSpec, SearchGrid, SolverParams, DEFAULT_TOLERANCE};
use lmconf_core::synth::SynthConfig;
use lmconf_core::Landmark;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub perturb: PerturbConfig,
    pub operating: OperatingConfig,
    pub descriptors: DescriptorsConfig,
    pub svr: GridConfig,
    pub svc: GridConfig,
    pub extract: ExtractConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub subset_search: SubsetConfig,
    pub gender: GenderConfig,
    pub tradeoff: TradeoffConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            perturb: PerturbConfig::default(),
            operating: OperatingConfig::default(),
            descriptors: DescriptorsConfig::default(),
            svr: GridConfig::from_grid(&SearchGrid::paper_svr()),
            svc: GridConfig::from_grid(&SearchGrid::paper_svc()),
            extract: ExtractConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            subset_search: SubsetConfig::default(),
            gender: GenderConfig::default(),
            tradeoff: TradeoffConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaName {
    #[default]
    CanonicalJson,
    PointsCsv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub annotations: Option<PathBuf>,
    pub schema: SchemaName,
    /// Group spec for `points_csv`; the built-in 194-point grouping otherwise.
    pub groups: Option<PathBuf>,
    /// Root for relative image paths; defaults to the annotations' directory.
    pub images: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterName {
    #[default]
    None,
    Frontal,
    Roll60,
}

impl FilterName {
    pub fn filter(self) -> Option<PoseFilter> {
        match self {
            FilterName::None => None,
            FilterName::Frontal => Some(PoseFilter::frontal()),
            FilterName::Roll60 => Some(PoseFilter::roll60()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub filter: FilterName,
    /// Fixed partition given as files with one face id per line; the
    /// validation set is then drawn from the training partition.
    pub train_list: Option<PathBuf>,
    pub test_list: Option<PathBuf>,
}

/// Perturbation settings; unset fields take the defaults of the mode, and an
/// unset mode takes the command's default (individual for single-landmark
/// models, superposed otherwise).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub mode: Option<PerturbMode>,
    pub sigma_landmark: Option<f64>,
    pub sigma_face: Option<f64>,
    pub replicas_per_face: Option<usize>,
    /// Seed of the evaluation perturbations; defaults to `seed + 1`.
    pub eval_seed: Option<u64>,
}

impl PerturbConfig {
    fn resolve(&mut self, default_mode: PerturbMode, seed: u64) {
        let mode = *self.mode.get_or_insert(default_mode);
        let base = match mode {
            PerturbMode::Individual => PerturbSpec::individual(0),
            PerturbMode::Superposed => PerturbSpec::superposed(0),
        };
        self.sigma_landmark.get_or_insert(base.sigma_landmark);
        self.sigma_face.get_or_insert(base.sigma_face);
        self.replicas_per_face.get_or_insert(base.replicas_per_face);
        self.eval_seed.get_or_insert(seed.wrapping_add(1));
    }

    fn spec(&self, seed: u64) -> PerturbSpec {
        let mode = self.mode.unwrap_or(PerturbMode::Individual);
        let mut s = match mode {
            PerturbMode::Individual => PerturbSpec::individual(seed),
            PerturbMode::Superposed => PerturbSpec::superposed(seed),
        };
        if let Some(v) = self.sigma_landmark {
            s.sigma_landmark = v;
        }
        if let Some(v) = self.sigma_face {
            s.sigma_face = v;
        }
        if let Some(v) = self.replicas_per_face {
            s.replicas_per_face = v;
        }
        s
    }

    pub fn train_spec(&self, seed: u64) -> PerturbSpec {
        self.spec(seed)
    }

    pub fn eval_spec(&self, seed: u64) -> PerturbSpec {
        self.spec(self.eval_seed.unwrap_or(seed.wrapping_add(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingConfig {
    /// σ of the confidence transform, as a fraction of the face size.
    pub sigma: f64,
    pub gt_threshold: f64,
    /// Share of the reporting set used to tune the prediction threshold.
    pub tune_fraction: f64,
}

impl Default for OperatingConfig {
    fn default() -> Self {
        let op = OperatingPoint::default();
        Self {
            sigma: op.sigma,
            gt_threshold: op.gt_threshold,
            tune_fraction: metrics::DEFAULT_TUNE_FRACTION,
        }
    }
}

impl OperatingConfig {
    pub fn point(&self) -> OperatingPoint {
        OperatingPoint {
            gt_threshold: self.gt_threshold,
            sigma: self.sigma,
            ..OperatingPoint::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorsConfig {
    pub preset: String,
    /// Per-landmark replacement lists, e.g. `eyeL = ["sift:1/8:4"]`.
    pub overrides: BTreeMap<Landmark, Vec<String>>,
}

impl Default for DescriptorsConfig {
    fn default() -> Self {
        Self {
            preset: "sift-small".into(),
            overrides: BTreeMap::new(),
        }
    }
}

impl DescriptorsConfig {
    pub fn table(&self) -> Result<Preset> {
        let mut p = presets::by_name(&self.preset)?;
        for (l, cfgs) in &self.overrides {
            if cfgs.is_empty() {
                return Err(CliError::Config(format!("descriptor override for {l} is empty")));
            }
            let parsed = cfgs
                .iter()
                .map(|c| c.parse::<DescriptorConfig>().map_err(|e| CliError::Config(format!("descriptor `{c}` for {l}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            p.insert(*l, parsed);
        }
        Ok(p)
    }
}

/// Search grid with kernels written as `linear`, `rbf`, `rbf:<gamma>`,
/// `poly` or `sigmoid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub c_values: Vec<f64>,
    pub epsilon_values: Vec<f64>,
    pub kernels: Vec<String>,
    pub folds: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::from_grid(&SearchGrid::paper_svr())
    }
}

impl GridConfig {
    pub fn from_grid(g: &SearchGrid) -> Self {
        Self {
            c_values: g.c_values.clone(),
            epsilon_values: g.epsilon_values.clone(),
            kernels: g.kernels.iter().map(kernel_name).collect(),
            folds: g.folds,
        }
    }

    pub fn grid(&self) -> Result<SearchGrid> {
        Ok(SearchGrid {
            c_values: self.c_values.clone(),
            epsilon_values: self.epsilon_values.clone(),
            kernels: self.kernels.iter().map(|k| parse_kernel(k)).collect::<Result<_>>()?,
            folds: self.folds,
        })
    }
}

fn kernel_name(k: &KernelSpec) -> String {
    match k.gamma() {
        Some(g) => format!("{}:{g}", k.name()),
        None => k.name().to_string(),
    }
}

pub fn parse_kernel(s: &str) -> Result<KernelSpec> {
    let (name, gamma) = match s.split_once(':') {
        Some((n, g)) => {
            let g: f64 = g
                .parse()
                .map_err(|_| CliError::Config(format!("bad kernel gamma in `{s}`")))?;
            (n, Some(g))
        }
        None => (s, None),
    };
    Ok(match name {
        "linear" if gamma.is_none() => KernelSpec::Linear,
        "rbf" => KernelSpec::Rbf { gamma },
        "poly" => KernelSpec::Poly {
            degree: 3,
            gamma,
            coef0: 0.0,
        },
        "sigmoid" => KernelSpec::Sigmoid { gamma, coef0: 0.0 },
        _ => return Err(CliError::Config(format!("unknown kernel `{s}`"))),
    })
}

/// Ground-truth feature dump for the `train.landmarks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub part: Part,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { part: Part::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Landmarks for `train-individual` and `extract`.
    pub landmarks: Vec<Landmark>,
    /// Landmarks for `train-joint`.
    pub joint_landmarks: Vec<Landmark>,
    /// First-stage model files for `train-cascaded`.
    pub stage1: Vec<PathBuf>,
    pub max_faces: Option<usize>,
    pub min_faces: usize,
    pub pca_dim: usize,
    pub tolerance: f64,
    pub max_iter: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            landmarks: vec![Landmark::EyeL],
            joint_landmarks: DEFAULT_JOINT_SUBSET.to_vec(),
            stage1: Vec::new(),
            max_faces: None,
            min_faces: MIN_TRAINING_FACES,
            pca_dim: PCA_TARGET_DIM,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: None,
        }
    }
}

impl TrainConfig {
    pub fn solver(&self) -> SolverParams {
        SolverParams {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            ..SolverParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    #[default]
    Test,
    /// Validation and test together.
    Held,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: Option<PathBuf>,
    pub part: Part,
    /// Detector output to score instead of synthetic perturbations.
    pub detections: Option<PathBuf>,
    /// Ground-truth distance sweep, as fractions of the face size.
    pub distance_max: f64,
    pub distance_steps: usize,
    pub threshold_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: None,
            part: Part::Test,
            detections: None,
            distance_max: 0.40,
            distance_steps: 40,
            threshold_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetConfig {
    pub landmarks: Vec<Landmark>,
    /// Reporting set; the regressors are trained on the training part.
    pub part: Part,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            landmarks: Landmark::ALL.to_vec(),
            part: Part::Val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenderConfig {
    pub features: GenderFeatures,
    pub pca_dim: usize,
    pub part: Part,
}

impl Default for GenderConfig {
    fn default() -> Self {
        Self {
            features: GenderFeatures::default(),
            pca_dim: PCA_TARGET_DIM,
            part: Part::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffConfig {
    pub model: Option<PathBuf>,
    pub gender_model: Option<PathBuf>,
    pub part: Part,
    pub t_fast: f64,
    pub t_robust: f64,
    /// Face-level error σ of the simulated methods, used when no detections
    /// are given.
    pub fast_sigma: f64,
    pub robust_sigma: f64,
    pub fast_detections: Option<PathBuf>,
    pub robust_detections: Option<PathBuf>,
    pub threshold_steps: usize,
    /// Reports the cost at this recompute fraction instead of sweeping.
    pub force_fraction: Option<f64>,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self {
            model: None,
            gender_model: None,
            part: Part::Test,
            t_fast: pipeline::FAST_TOTAL_S,
            t_robust: pipeline::ROBUST_TOTAL_S,
            fast_sigma: pipeline::SYNTH_FAST_SIGMA,
            robust_sigma: pipeline::SYNTH_ROBUST_SIGMA,
            fast_detections: None,
            robust_detections: None,
            threshold_steps: 100,
            force_fraction: None,
        }
    }
}

/// Which subcommand a configuration is being resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Synth,
    Split,
    Extract,
    TrainIndividual,
    TrainJoint,
    TrainCascaded,
    Eval,
    SubsetSearch,
    TrainGender,
    Tradeoff,
}

impl CommandKind {
    fn default_perturb_mode(self) -> PerturbMode {
        match self {
            CommandKind::TrainJoint | CommandKind::TrainCascaded => PerturbMode::Superposed,
            CommandKind::SubsetSearch => PerturbMode::Superposed,
            _ => PerturbMode::Individual,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut out: Vec<&mut PathBuf> = Vec::new();
        let d = &mut self.data;
        out.extend([&mut d.annotations, &mut d.groups, &mut d.images, &mut d.split].into_iter().flatten());
        out.extend([&mut self.split.train_list, &mut self.split.test_list].into_iter().flatten());
        out.extend(self.train.stage1.iter_mut());
        out.extend([&mut self.eval.model, &mut self.eval.detections].into_iter().flatten());
        let t = &mut self.tradeoff;
        out.extend(
            [&mut t.model, &mut t.gender_model, &mut t.fast_detections, &mut t.robust_detections]
                .into_iter()
                .flatten(),
        );
        out
    }

    /// Joins every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Makes paths absolute, fills command-dependent defaults and validates.
    pub fn resolve(&mut self, cmd: CommandKind) -> Result<()> {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
        self.rebase(&cwd);
        for p in self.paths_mut() {
            *p = normalize_path(p);
        }
        if let Some(a) = &self.data.annotations {
            if self.data.images.is_none() {
                self.data.images = Some(a.parent().map(Path::to_path_buf).unwrap_or_default());
            }
        }
        self.synth.seed = self.seed;
        self.perturb.resolve(cmd.default_perturb_mode(), self.seed);
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.synth.validate()?;
        self.perturb
            .train_spec(self.seed)
            .validate()
            .map_err(CliError::Config)?;
        let op = &self.operating;
        if !(op.sigma > 0.0) || !(0.0..=1.0).contains(&op.gt_threshold) || !(op.tune_fraction > 0.0 && op.tune_fraction < 1.0) {
            return Err(CliError::Config(
                "operating: need sigma > 0, gt_threshold in [0, 1] and tune_fraction in (0, 1)".into(),
            ));
        }
        self.descriptors.table()?;
        self.svr.grid()?;
        self.svc.grid()?;
        if let Some(f) = self.tradeoff.force_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Config(format!("tradeoff.force_fraction must lie in [0, 1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Ok(match self.data.schema {
            SchemaName::CanonicalJson => Schema::CanonicalJson,
            SchemaName::PointsCsv => Schema::PointsCsv(match &self.data.groups {
                Some(p) => GroupSpec::load(p)?,
                None => GroupSpec::helen_default(),
            }),
        })
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        Ok(TrainOptions {
            perturb: self.perturb.train_spec(self.seed),
            grid: self.svr.grid()?,
            sigma_fraction: self.operating.sigma,
            max_faces: self.train.max_faces,
            min_faces: self.train.min_faces,
            cv_seed: self.seed,
            solver: self.train.solver(),
            pca_dim: self.train.pca_dim,
        })
    }
}

/// Removes `.` and `..` components without touching the file system.
fn normalize_path(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

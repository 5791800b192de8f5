//! `lmconf`: trains, evaluates and sweeps landmark confidence predictors.
//!
//! Every run writes its resolved configuration to `run_config.toml` in the
//! output directory; passing that file back with `--config` reproduces the
//! run. Failures print a JSON error report to stderr, write it to
//! `error.json` and exit with status 1. `LS_LOG` sets the log filter.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmconf_core::Landmark;

use crate::commands::Out;
use crate::config::{CommandKind, FilterName, RunConfig, RUN_CONFIG_FILE};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lmconf", version, about = "Landmark confidence prediction and failure detection")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Annotation file; overrides `data.annotations`.
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    /// Image root; overrides `data.images`.
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    /// Split manifest; overrides `data.split`.
    #[arg(long, global = true)]
    split: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_landmark(s: &str) -> Result<Landmark, String> {
    s.parse::<Landmark>().map_err(|e| e.to_string())
}

fn parse_filter(s: &str) -> Result<FilterName, String> {
    match s {
        "none" => Ok(FilterName::None),
        "frontal" => Ok(FilterName::Frontal),
        "roll60" => Ok(FilterName::Roll60),
        _ => Err(format!("unknown filter `{s}` (none, frontal, roll60)")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic face corpus.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise_chin: bool,
        #[arg(long)]
        gender_cue: bool,
    },
    /// Write an 80/10/10 split manifest.
    Split {
        #[arg(long, value_parser = parse_filter)]
        filter: Option<FilterName>,
    },
    /// Dump ground-truth descriptors for the configured landmarks.
    Extract {
        #[arg(long, value_delimiter = ',', value_parser = parse_landmark)]
        landmarks: Vec<Landmark>,
    },
    /// Train one confidence model per landmark.
    TrainIndividual {
        #[arg(long, value_delimiter = ',', value_parser = parse_landmark)]
        landmarks: Vec<Landmark>,
    },
    /// Train one model over concatenated landmark features.
    TrainJoint {
        #[arg(long, value_delimiter = ',', value_parser = parse_landmark)]
        landmarks: Vec<Landmark>,
    },
    /// Train the second stage on validation-set first-stage outputs.
    TrainCascaded {
        /// First-stage individual model files.
        #[arg(long, value_delimiter = ',')]
        stage1: Vec<PathBuf>,
    },
    /// Evaluate a saved model and emit the threshold curves.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train and score a joint model for every landmark subset.
    SubsetSearch {
        #[arg(long, value_delimiter = ',', value_parser = parse_landmark)]
        landmarks: Vec<Landmark>,
    },
    /// Train the gender classifier.
    TrainGender,
    /// Sweep the fast/robust fallback threshold.
    Tradeoff {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        gender_model: Option<PathBuf>,
        /// Evaluate the cost model at this recompute fraction only.
        #[arg(long)]
        force_fraction: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Split { .. } => "split",
            Command::Extract { .. } => "extract",
            Command::TrainIndividual { .. } => "train-individual",
            Command::TrainJoint { .. } => "train-joint",
            Command::TrainCascaded { .. } => "train-cascaded",
            Command::Eval { .. } => "eval",
            Command::SubsetSearch { .. } => "subset-search",
            Command::TrainGender => "train-gender",
            Command::Tradeoff { .. } => "tradeoff",
        }
    }

    fn kind(&self) -> CommandKind {
        match self {
            Command::Synth { .. } => CommandKind::Synth,
            Command::Split { .. } => CommandKind::Split,
            Command::Extract { .. } => CommandKind::Extract,
            Command::TrainIndividual { .. } => CommandKind::TrainIndividual,
            Command::TrainJoint { .. } => CommandKind::TrainJoint,
            Command::TrainCascaded { .. } => CommandKind::TrainCascaded,
            Command::Eval { .. } => CommandKind::Eval,
            Command::SubsetSearch { .. } => CommandKind::SubsetSearch,
            Command::TrainGender => CommandKind::TrainGender,
            Command::Tradeoff { .. } => CommandKind::Tradeoff,
        }
    }

    /// Folds subcommand flags into the configuration.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Synth { n, noise_chin, gender_cue } => {
                if let Some(n) = n {
                    cfg.synth.n_faces = *n;
                }
                cfg.synth.noise_chin |= noise_chin;
                cfg.synth.gender_cue |= gender_cue;
            }
            Command::Split { filter } => {
                if let Some(f) = filter {
                    cfg.split.filter = *f;
                }
            }
            Command::Extract { landmarks } | Command::TrainIndividual { landmarks } => {
                if !landmarks.is_empty() {
                    cfg.train.landmarks = landmarks.clone();
                }
            }
            Command::TrainJoint { landmarks } => {
                if !landmarks.is_empty() {
                    cfg.train.joint_landmarks = landmarks.clone();
                }
            }
            Command::TrainCascaded { stage1 } => {
                if !stage1.is_empty() {
                    cfg.train.stage1 = stage1.clone();
                }
            }
            Command::Eval { model } => {
                if model.is_some() {
                    cfg.eval.model = model.clone();
                }
            }
            Command::SubsetSearch { landmarks } => {
                if !landmarks.is_empty() {
                    cfg.subset_search.landmarks = landmarks.clone();
                }
            }
            Command::TrainGender => {}
            Command::Tradeoff {
                model,
                gender_model,
                force_fraction,
            } => {
                if model.is_some() {
                    cfg.tradeoff.model = model.clone();
                }
                if gender_model.is_some() {
                    cfg.tradeoff.gender_model = gender_model.clone();
                }
                if force_fraction.is_some() {
                    cfg.tradeoff.force_fraction = *force_fraction;
                }
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.annotations.is_some() {
        cfg.data.annotations = cli.annotations.clone();
    }
    if cli.images.is_some() {
        cfg.data.images = cli.images.clone();
    }
    if cli.split.is_some() {
        cfg.data.split = cli.split.clone();
    }
    cli.command.apply(&mut cfg);
    cfg.resolve(cli.command.kind())?;
    Ok(cfg)
}

fn run(cli: &Cli, out: &Out) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = resolve_config(cli)?;
    out.write(RUN_CONFIG_FILE, cfg.to_toml())?;
    match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg, out),
        Command::Split { .. } => commands::split(&cfg, out),
        Command::Extract { .. } => commands::extract(&cfg, out),
        Command::TrainIndividual { .. } => commands::train_individual_cmd(&cfg, out),
        Command::TrainJoint { .. } => commands::train_joint_cmd(&cfg, out),
        Command::TrainCascaded { .. } => commands::train_cascaded_cmd(&cfg, out),
        Command::Eval { .. } => commands::eval(&cfg, out),
        Command::SubsetSearch { .. } => commands::subset_search_cmd(&cfg, out),
        Command::TrainGender => commands::train_gender_cmd(&cfg, out),
        Command::Tradeoff { .. } => commands::tradeoff(&cfg, out),
    }
}

fn fail(cli: &Cli, e: CliError, out: Option<&Out>) -> ExitCode {
    let report = e.report(cli.command.name());
    if let Some(out) = out {
        let _ = out.write_json("error.json", &report);
    }
    eprintln!("{}", serde_json::to_string(&report).expect("report serialises"));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LS_LOG", "info")).init();
    let cli = Cli::parse();
    let out = match Out::create(&cli.out) {
        Ok(o) => o,
        Err(e) => return fail(&cli, e, None),
    };
    match run(&cli, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&cli, e, Some(&out)),
    }
}

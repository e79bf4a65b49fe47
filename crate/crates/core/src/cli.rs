//! The `funit` command line: dataset curation and expansion, training,
//! fine-tuning, translation and evaluation as separate subcommands.
//!
//! Every option can also come from a flat TOML file given with `--config`
//! (keys are the long option names with `_` for `-`); flags win. Each run
//! writes its resolved configuration as `run_config.toml` next to its
//! outputs. Exit codes: 0 on success, 2 for usage errors and missing
//! inputs, 1 for failures while running.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    expand_dataset, load_keep_list, normalize_class_name, object_keep_list, DatasetManifest, DetectorErrorPolicy,
    ExpansionConfig, ImageRecord, StubDetector,
};
use crate::evaluation::{run_protocol, write_report, ConvBackbone, ConvClassifier, EvalProtocol, Metrics, Translator};
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::objective::{fine_tune, Checkpoint, FileImageSource, FineTuneConfig, TrainConfig, TrainOptions, Trainer};
use crate::variants::{translate_with, MergeConfig, Variant};
use crate::{Error, ImageTensor};

/// Version of the `run_config.toml` layout.
pub const RUN_CONFIG_VERSION: u32 = 1;
pub const DATA_ROOT_ENV: &str = "FUNIT_DATA_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "funit", version, about = "Few-shot image-to-image translation")]
pub struct Cli {
    /// Flat TOML file with default option values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root that manifest paths are relative to.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    pub data_root: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a manifest into train/test classes and optionally balance it.
    Curate(CurateArgs),
    /// Add object classes by cropping detections.
    Expand(ExpandArgs),
    /// Train from scratch or resume.
    Train(TrainArgs),
    /// Continue training a checkpoint on new data with a lower learning rate.
    Finetune(FinetuneArgs),
    /// Translate content images with a style set.
    Translate(TranslateArgs),
    /// Run the few-shot evaluation protocol.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated classes held out for testing.
    #[arg(long, value_delimiter = ',')]
    pub test_classes: Vec<String>,
    /// Subsample every training class to at most this many images.
    #[arg(long)]
    pub balance: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    pub out: PathBuf,
    /// Detection fixture (tab separated: path, label, confidence, box).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep only the object classes listed in this file.
    #[arg(long, conflicts_with = "standard_keep_list")]
    pub keep_list: Option<PathBuf>,
    /// Keep only the bundled list of 97 street-scene object classes.
    #[arg(long)]
    pub standard_keep_list: bool,
    #[arg(long)]
    pub include_whole_images: bool,
    #[arg(long)]
    pub min_box_side: Option<usize>,
    /// Crop directory, relative to the data root.
    #[arg(long)]
    pub crop_dir: Option<PathBuf>,
    /// Skip images the detector fails on instead of aborting.
    #[arg(long)]
    pub skip_detector_errors: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainingFlags {
    /// Total iteration count to stop at.
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Style images per training sample.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub lambda_f: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Additional iterations.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Defaults to a tenth of the checkpoint's learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Replace the discriminator heads (needed when the class count changes).
    #[arg(long)]
    pub reinit_heads: bool,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum VariantArg {
    None,
    Paste,
    Latent,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::None => Variant::None,
            VariantArg::Paste => Variant::Paste,
            VariantArg::Latent => Variant::Latent,
        }
    }
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub content: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub style: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Use only the first K style images.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Detection fixture keyed by the content paths as given.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub feather_width: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "constant_baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a model that always outputs mid-grey instead of a checkpoint.
    #[arg(long)]
    pub constant_baseline: bool,
    #[arg(long)]
    pub content_manifest: PathBuf,
    #[arg(long)]
    pub style_manifest: PathBuf,
    #[arg(long)]
    pub target_class: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Style set sizes; one report each.
    #[arg(long, num_args = 1..)]
    pub k: Vec<usize>,
    #[arg(long)]
    pub n_content: Option<usize>,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub is_splits: Option<usize>,
    /// Image size for the constant baseline.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub test_classes: Vec<String>,
    pub balance: Option<usize>,
}

/// Resolved settings of one run, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub paths: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curation: Option<CurationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ExpansionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<DiscriminatorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_tune: Option<FineTuneConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalProtocol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeConfig>,
}

impl RunConfig {
    fn new(command: &str, seed: u64) -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            command: command.into(),
            seed,
            paths: BTreeMap::new(),
            curation: None,
            expansion: None,
            generator: None,
            discriminator: None,
            train: None,
            fine_tune: None,
            evaluation: None,
            merge: None,
        }
    }

    fn path(mut self, key: &str, value: &Path) -> Self {
        self.paths.insert(key.into(), value.display().to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> crate::Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_config.toml");
        let text = toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Option defaults read from `--config`.
#[derive(Debug, Default)]
struct FileDefaults(toml::Table);

impl FileDefaults {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(Self(table))
    }

    /// `flag` if given, else the config value under `key`.
    fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn flag(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.get(None, key)?.unwrap_or(false))
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    require_file(path, "manifest")?;
    Ok(DatasetManifest::load(path)?)
}

/// Manifest paths resolve against `--data-root`, else the manifest's folder.
fn image_root(data_root: Option<&Path>, manifest: &Path) -> PathBuf {
    data_root
        .map(Path::to_path_buf)
        .or_else(|| manifest.parent().map(Path::to_path_buf))
        .unwrap_or_default()
}

fn print_counts(label: &str, m: &DatasetManifest) {
    println!("{label}: {} records in {} classes", m.len(), m.class_index().len());
    for (class, n) in m.class_counts() {
        println!("  {class}\t{n}");
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let defaults = FileDefaults::load(cli.config.as_deref())?;
    let root = cli.data_root.as_deref();
    match &cli.command {
        Command::Curate(a) => cmd_curate(a, &defaults),
        Command::Expand(a) => cmd_expand(a, root, &defaults),
        Command::Train(a) => cmd_train(a, root, &defaults),
        Command::Finetune(a) => cmd_finetune(a, root, &defaults),
        Command::Translate(a) => cmd_translate(a, &defaults),
        Command::Evaluate(a) => cmd_evaluate(a, root, &defaults),
    }
}

fn cmd_curate(a: &CurateArgs, d: &FileDefaults) -> CliResult<()> {
    let manifest = load_manifest(&a.manifest)?;
    let seed = d.or(a.seed, "seed", manifest.seed())?;
    let test_classes: Vec<String> = if a.test_classes.is_empty() {
        d.or(None, "test_classes", Vec::new())?
    } else {
        a.test_classes.clone()
    };
    let curation = CurationConfig {
        test_classes: test_classes.iter().map(|c| normalize_class_name(c)).collect(),
        balance: d.get(a.balance, "balance")?,
    };
    let manifest = manifest.with_seed(seed);
    let set: BTreeSet<String> = curation.test_classes.iter().cloned().collect();
    let (mut train, test) = manifest.split_by_class(&set)?;
    if let Some(k) = curation.balance {
        train = train.balance_classes(k)?;
    }
    train.save(&a.out_dir.join("train.tsv"))?;
    if !test.is_empty() {
        test.save(&a.out_dir.join("test.tsv"))?;
    }
    print_counts("train", &train);
    print_counts("test", &test);
    let mut rc = RunConfig::new("curate", seed).path("manifest", &a.manifest);
    rc.curation = Some(curation);
    rc.write(&a.out_dir)?;
    Ok(())
}

fn cmd_expand(a: &ExpandArgs, root: Option<&Path>, d: &FileDefaults) -> CliResult<()> {
    let manifest = load_manifest(&a.manifest)?;
    let seed = d.or(a.seed, "seed", manifest.seed())?;
    let detections = d.get(a.detections.clone(), "detections")?;
    let detector = match &detections {
        Some(path) => {
            require_file(path, "detection fixture")?;
            StubDetector::load(path)?
        }
        None => StubDetector::new(),
    };
    let keep_path: Option<PathBuf> = d.get(a.keep_list.clone(), "keep_list")?;
    let keep_list = if d.flag(a.standard_keep_list, "standard_keep_list")? {
        Some(object_keep_list())
    } else if let Some(path) = keep_path {
        require_file(&path, "keep list")?;
        Some(load_keep_list(&path)?)
    } else {
        None
    };
    let defaults = ExpansionConfig::default();
    let cfg = ExpansionConfig {
        confidence_threshold: d.or(a.threshold, "threshold", defaults.confidence_threshold)?,
        keep_list,
        include_whole_images: d.flag(a.include_whole_images, "include_whole_images")?,
        min_box_side: d.or(a.min_box_side, "min_box_side", defaults.min_box_side)?,
        on_detector_error: if d.flag(a.skip_detector_errors, "skip_detector_errors")? {
            DetectorErrorPolicy::Skip
        } else {
            DetectorErrorPolicy::Abort
        },
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let crop_dir = d.or(a.crop_dir.clone(), "crop_dir", PathBuf::from("crops"))?;
    let image_root = image_root(root, &a.manifest);
    println!("input: {} classes", manifest.class_index().len());
    let expanded = expand_dataset(&manifest, &detector, &cfg, &image_root, &crop_dir)?.with_seed(seed);
    let objects = expanded
        .records()
        .iter()
        .filter(|r| manifest.class_index().get(&r.class_name).is_none())
        .count();
    println!(
        "expanded: {} records, {} object crops, {} classes",
        expanded.len(),
        objects,
        expanded.class_index().len()
    );
    for (class, n) in expanded.class_counts() {
        println!("  {class}\t{n}");
    }
    expanded.save(&a.out)?;
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rc = RunConfig::new("expand", seed)
        .path("manifest", &a.manifest)
        .path("out", &a.out)
        .path("image_root", &image_root)
        .path("crop_dir", &crop_dir);
    if let Some(p) = &detections {
        rc = rc.path("detections", p);
    }
    rc.expansion = Some(cfg);
    rc.write(&out_dir)?;
    Ok(())
}

fn train_config(flags: &TrainingFlags, d: &FileDefaults, base: TrainConfig) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        learning_rate: d.or(flags.lr, "lr", base.learning_rate)?,
        lambda_r: d.or(flags.lambda_r, "lambda_r", base.lambda_r)?,
        lambda_f: d.or(flags.lambda_f, "lambda_f", base.lambda_f)?,
        batch_size: d.or(flags.batch_size, "batch_size", base.batch_size)?,
        k: d.or(flags.k, "k", base.k)?,
        max_iterations: d.or(flags.iterations, "iterations", base.max_iterations)?,
        seed: d.or(flags.seed, "seed", base.seed)?,
        ..base
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn echo_hyperparameters(cfg: &TrainConfig) {
    println!(
        "lr={} lambda_r={} lambda_f={} batch_size={} k={} iterations={} seed={}",
        cfg.learning_rate, cfg.lambda_r, cfg.lambda_f, cfg.batch_size, cfg.k, cfg.max_iterations, cfg.seed
    );
}

fn cmd_train(a: &TrainArgs, root: Option<&Path>, d: &FileDefaults) -> CliResult<()> {
    let manifest = load_manifest(&a.manifest)?;
    if manifest.class_index().len() < 2 {
        return Err(CliError::Usage("training needs at least two classes".into()));
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            let cfg = train_config(&a.training, d, t.config().clone())?;
            *t.config_mut() = cfg;
            t
        }
        None => {
            let size = d.or(a.image_size, "image_size", 64)?;
            let mut gcfg = GeneratorConfig::for_image_size(size);
            let mut dcfg = DiscriminatorConfig::new(size, manifest.class_index().len());
            if let Some(b) = d.get(a.base_channels, "base_channels")? {
                gcfg.base_channels = b;
                dcfg.base_channels = b;
            }
            let base = TrainConfig {
                seed: manifest.seed(),
                ..TrainConfig::default()
            };
            let cfg = train_config(&a.training, d, base)?;
            let classes = manifest.classes().iter().map(|c| c.to_string()).collect();
            Trainer::new(gcfg, dcfg, cfg, classes)?
        }
    };
    echo_hyperparameters(trainer.config());
    let options = TrainOptions {
        checkpoint_dir: Some(a.out_dir.clone()),
        checkpoint_every: d.or(a.training.checkpoint_every, "checkpoint_every", 0)?,
        log_path: Some(a.out_dir.join("train_log.jsonl")),
    };
    let size = trainer.generator().config().image_size;
    let source = FileImageSource::new(image_root(root, &a.manifest), size);
    let mut rc = RunConfig::new("train", trainer.config().seed)
        .path("manifest", &a.manifest)
        .path("out_dir", &a.out_dir);
    if let Some(p) = &a.resume {
        rc = rc.path("resume", p);
    }
    rc.generator = Some(trainer.generator().config().clone());
    rc.discriminator = Some(trainer.discriminator().config().clone());
    rc.train = Some(trainer.config().clone());
    rc.write(&a.out_dir)?;
    let outcome = trainer.train(&manifest, &source, &options)?;
    println!(
        "finished at iteration {}; checkpoint {}",
        outcome.checkpoint.iteration,
        a.out_dir.join("latest.ckpt").display()
    );
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs, root: Option<&Path>, d: &FileDefaults) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let manifest = load_manifest(&a.manifest)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let defaults = FineTuneConfig::default();
    let cfg = FineTuneConfig {
        iterations: d.or(a.iterations, "iterations", defaults.iterations)?,
        learning_rate: d.get(a.lr, "lr")?,
        reinit_heads: d.flag(a.reinit_heads, "reinit_heads")?,
    };
    let lr = cfg.learning_rate.unwrap_or(ckpt.train_config.learning_rate / 10.0);
    println!(
        "lr={lr} iterations={} starting_iteration={} reinit_heads={}",
        cfg.iterations, ckpt.iteration, cfg.reinit_heads
    );
    let options = TrainOptions {
        checkpoint_dir: Some(a.out_dir.clone()),
        checkpoint_every: d.or(a.checkpoint_every, "checkpoint_every", 0)?,
        log_path: Some(a.out_dir.join("train_log.jsonl")),
    };
    let mut rc = RunConfig::new("finetune", ckpt.train_config.seed)
        .path("checkpoint", &a.checkpoint)
        .path("manifest", &a.manifest)
        .path("out_dir", &a.out_dir);
    rc.generator = Some(ckpt.generator_config.clone());
    rc.discriminator = Some(ckpt.discriminator_config.clone());
    rc.train = Some(ckpt.train_config.clone());
    rc.fine_tune = Some(cfg.clone());
    rc.write(&a.out_dir)?;
    let source = FileImageSource::new(image_root(root, &a.manifest), ckpt.generator_config.image_size);
    let outcome = fine_tune(&ckpt, &manifest, &source, &cfg, &options)?;
    println!("finished at iteration {}", outcome.checkpoint.iteration);
    Ok(())
}

fn load_generator(path: &Path) -> CliResult<(crate::model::Generator, Checkpoint)> {
    require_file(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let mut g = crate::model::Generator::new(ckpt.generator_config.clone(), 0)?;
    g.load_params(ckpt.generator.clone())?;
    Ok((g, ckpt))
}

fn cmd_translate(a: &TranslateArgs, d: &FileDefaults) -> CliResult<()> {
    let (g, ckpt) = load_generator(&a.checkpoint)?;
    for p in a.content.iter().chain(&a.style) {
        require_file(p, "image")?;
    }
    let k = d.or(a.k, "k", a.style.len())?;
    if k == 0 || k > a.style.len() {
        return Err(CliError::Usage(format!(
            "--k {k} needs between 1 and {} style images",
            a.style.len()
        )));
    }
    let variant: Variant = d.or(a.variant.map(Variant::from), "variant", Variant::None)?;
    let defaults = MergeConfig::default();
    let merge = MergeConfig {
        feather_width: d.or(a.feather_width, "feather_width", defaults.feather_width)?,
        max_objects: d.or(a.max_objects, "max_objects", defaults.max_objects)?,
    };
    let fixture = match d.get(a.detections.clone(), "detections")? {
        Some(p) => {
            require_file(&p, "detection fixture")?;
            Some((StubDetector::load(&p)?, p))
        }
        None => None,
    };
    let size = g.config().image_size;
    let styles = a.style[..k]
        .iter()
        .map(|p| ImageTensor::load_square(p, size))
        .collect::<crate::Result<Vec<_>>>()?;
    for path in &a.content {
        let x = ImageTensor::load_square(path, size)?;
        let record = ImageRecord::new(path.display().to_string(), "content", size as u32, size as u32)?;
        let detector = match &fixture {
            Some((stub, _)) => StubDetector::fixed(crate::dataset::detect_record(stub, &record, &x)?),
            None => StubDetector::new(),
        };
        let out = translate_with(variant, &x, &styles, Some(&detector), &g, &merge)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let dest = a.out_dir.join(format!("{stem}.png"));
        out.save_png(&dest)?;
        println!("{}", dest.display());
    }
    let mut rc = RunConfig::new("translate", ckpt.train_config.seed)
        .path("checkpoint", &a.checkpoint)
        .path("out_dir", &a.out_dir);
    if let Some((_, p)) = &fixture {
        rc = rc.path("detections", p);
    }
    rc.generator = Some(ckpt.generator_config.clone());
    rc.merge = Some(merge);
    rc.write(&a.out_dir)?;
    Ok(())
}

/// Reference model that ignores its inputs.
struct ConstantModel {
    image: ImageTensor,
}

impl Translator for ConstantModel {
    fn translate(&self, _x: &ImageTensor, _ys: &[ImageTensor]) -> crate::Result<ImageTensor> {
        Ok(self.image.clone())
    }
}

fn cmd_evaluate(a: &EvaluateArgs, root: Option<&Path>, d: &FileDefaults) -> CliResult<()> {
    let content = load_manifest(&a.content_manifest)?;
    let styles = load_manifest(&a.style_manifest)?;
    let target: String = d
        .get(a.target_class.clone(), "target_class")?
        .ok_or_else(|| CliError::Usage("--target-class is required".into()))?;
    if styles.class_position(&normalize_class_name(&target)).is_none() {
        return Err(CliError::Usage(format!(
            "target class {target:?} not in the style manifest"
        )));
    }
    let (model, size, model_id, seed_default): (Box<dyn Translator>, usize, String, u64) =
        if d.flag(a.constant_baseline, "constant_baseline")? {
            let size = d.or(a.image_size, "image_size", 64)?;
            let image = ImageTensor::filled(3, size, size, 0.0);
            (Box::new(ConstantModel { image }), size, "constant".into(), 0)
        } else {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
            let (g, ckpt) = load_generator(path)?;
            let size = g.config().image_size;
            let id = format!("{}@{}", path.display(), ckpt.iteration);
            (Box::new(g), size, id, ckpt.train_config.seed)
        };
    let ks: Vec<usize> = if a.k.is_empty() {
        d.or(None, "k", vec![2])?
    } else {
        a.k.clone()
    };
    let defaults = EvalProtocol::default();
    let base = EvalProtocol {
        n_content_per_class: d.or(a.n_content, "n_content", defaults.n_content_per_class)?,
        n_pairs: d.or(a.n_pairs, "n_pairs", defaults.n_pairs)?,
        k_style: defaults.k_style,
        target_class: target,
        seed: d.or(a.seed, "seed", seed_default)?,
        is_splits: d.or(a.is_splits, "is_splits", defaults.is_splits)?,
        model_id,
    };
    let source = FileImageSource::new(image_root(root, &a.content_manifest), size);
    let backbone = ConvBackbone::standard();
    let classifier = ConvClassifier::standard();
    let metrics = Metrics {
        backbone: &backbone,
        classifier: &classifier,
    };
    for &k in &ks {
        let protocol = EvalProtocol {
            k_style: k,
            ..base.clone()
        };
        protocol.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let report = run_protocol(model.as_ref(), &content, &styles, &source, &metrics, &protocol)?;
        let path = a.out_dir.join(format!("report_k{k}.json"));
        write_report(&report, &path)?;
        print!("{}", crate::evaluation::render_table(&report));
        println!("wrote {}", path.display());
    }
    let mut rc = RunConfig::new("evaluate", base.seed)
        .path("content_manifest", &a.content_manifest)
        .path("style_manifest", &a.style_manifest)
        .path("out_dir", &a.out_dir);
    if let Some(p) = &a.checkpoint {
        rc = rc.path("checkpoint", p);
    }
    rc.evaluation = Some(base);
    rc.write(&a.out_dir)?;
    Ok(())
}

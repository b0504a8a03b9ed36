//! Command-line interface. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error |
//! | 3 | invalid configuration |
//! | 4 | I/O error |
//! | 5 | bad data or file format |
//! | 6 | numerical failure (divergence, non-finite values) |
//! | 7 | gradient check failed |
//!
//! Failures print one line to stderr: `error[<class>]: <message>`, where the
//! class is one of `usage`, `config`, `io`, `data`, `numeric`, `gradcheck`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{
    fixed_split, format_manifest, make_folds, read_manifest, segment_clip, Bucket, ClipEntry, DatasetError, LabelMap,
    Segment, SplitPlan,
};
use crate::error::Error;
use crate::features::{apply_zscore, fit_zscore, read_features, read_wav, write_features, FeatureError, FeatureMatrix};
use crate::layers::{FrameBlock, LayerError};
use crate::mask::{generate_mask, MaskSpec};
use crate::model::{frame_plan, load_model, save_model, segment_size, ModelError, TrainedModel};
use crate::training::{evaluate, grad_check, predict_clip, train, ClipSegments, TrainError};
use crate::Matrix;

/// Environment variable naming the default root for `--out` directories.
pub const OUT_ROOT_ENV: &str = "MCLNN_OUT_ROOT";
/// Manifest written next to extracted features.
pub const FEATURE_MANIFEST: &str = "manifest.tsv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_DATA: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;
pub const EXIT_GRADCHECK: i32 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "mclnn",
    version,
    about = "Masked conditional neural networks for audio classification"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Log-mel feature extraction.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Dataset split planning.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Band masks.
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Model architecture.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Per-clip accuracy and confusion matrix of a saved model.
    Eval(EvalArgs),
    /// Classify one clip.
    Predict(PredictArgs),
    /// Compare analytic gradients with finite differences on a random segment.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Subcommand)]
enum FeaturesCommand {
    /// Extract features for every WAV file under a directory.
    Extract(ExtractArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Assign clips to stratified folds or to a fixed train/validation/test split.
    Plan(PlanArgs),
}

#[derive(Debug, Subcommand)]
enum MaskCommand {
    /// Print a mask grid and its active (row, column) positions.
    Dump(DumpArgs),
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    /// Print the architecture, frame plan and parameter counts.
    Describe(DescribeArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: table3, small or gradcheck.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, default_preset: &str) -> Result<ExperimentConfig, CliError> {
        Ok(match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset(default_preset)?,
        })
    }
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Audio directory. Without --manifest, every `.wav` below it is used and
    /// its first sub-directory names the class.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory (default: $MCLNN_OUT_ROOT/features).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clip list (`clip_id<TAB>class`), ids relative to --in.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    rate: Option<u32>,
    #[arg(long)]
    fft: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    mel_bins: Option<usize>,
    /// Centred excerpt length; 0 keeps whole clips.
    #[arg(long)]
    chunk_seconds: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of folds (default from the config).
    #[arg(long, conflicts_with = "test_list")]
    folds: Option<usize>,
    /// File of test clip ids, one per line; the rest become train/validation.
    #[arg(long)]
    test_list: Option<PathBuf>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct DumpArgs {
    /// Feature vector length (mask rows).
    #[arg(long)]
    feature_length: usize,
    /// Hidden width (mask columns).
    #[arg(long)]
    hidden_width: usize,
    #[arg(long)]
    bandwidth: usize,
    #[arg(long, allow_hyphen_values = true)]
    overlap: i64,
    /// Write `mask.txt` and `positions.txt` here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory written by `features extract`.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Clip list (default: the manifest inside the features directory).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split plan written by `dataset plan`.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Test fold, required for a k-fold plan.
    #[arg(long)]
    fold: Option<usize>,
}

impl DataArgs {
    /// Applies command-line paths over the config's `[paths]`.
    fn merge_into(&self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.paths;
        if self.features.is_some() {
            p.features = self.features.clone();
        }
        if self.manifest.is_some() {
            p.manifest = self.manifest.clone();
        }
        if self.plan.is_some() {
            p.plan = self.plan.clone();
        }
        if self.fold.is_some() {
            p.fold = self.fold;
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory (default: $MCLNN_OUT_ROOT/run).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Which split to score: train, validation or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Segment hop (default: training.eval_segment_hop).
    #[arg(long)]
    hop: Option<usize>,
    /// Also write the report to `eval.txt` in this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// WAV input; features are extracted with the config's pipeline.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    wav: Option<PathBuf>,
    /// Feature file input.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    hop: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Preset name or TOML config whose model section is checked.
    #[arg(long, default_value = "gradcheck")]
    spec: String,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Usage(String),
    GradCheckFailed(f64),
}

macro_rules! lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Lib(e.into())
            }
        }
    )*};
}

lib_error!(
    Error,
    ConfigError,
    DatasetError,
    FeatureError,
    LayerError,
    ModelError,
    TrainError
);

impl CliError {
    fn classify(&self) -> (&'static str, i32) {
        match self {
            CliError::Usage(_) => ("usage", EXIT_USAGE),
            CliError::GradCheckFailed(_) => ("gradcheck", EXIT_GRADCHECK),
            CliError::Lib(e) => match e {
                Error::Io { .. } => ("io", EXIT_IO),
                Error::Config(_) | Error::Train(TrainError::InvalidConfig(_)) => ("config", EXIT_CONFIG),
                Error::Train(TrainError::Divergence { .. }) | Error::Feature(FeatureError::NonFinite(_)) => {
                    ("numeric", EXIT_NUMERIC)
                }
                _ => ("data", EXIT_DATA),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
            CliError::GradCheckFailed(worst) => format!("gradient check failed (max relative error {worst:.3e})"),
        }
    }
}

/// Runs the CLI with `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (class, code) = e.classify();
            eprintln!("error[{class}]: {}", e.message());
            code
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Features(FeaturesCommand::Extract(a)) => cmd_extract(&a),
        Command::Dataset(DatasetCommand::Plan(a)) => cmd_plan(&a),
        Command::Mask(MaskCommand::Dump(a)) => cmd_dump(&a),
        Command::Model(ModelCommand::Describe(a)) => {
            print!("{}", describe(&a.config.resolve("table3")?, a.classes)?);
            Ok(())
        }
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn default_out(sub: &str) -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map_or_else(|| PathBuf::from("mclnn-out"), PathBuf::from)
        .join(sub)
}

/// Feature file name for a clip id; path separators become `__`.
pub fn feature_file_name(clip_id: &str) -> String {
    format!("{}.fea", clip_id.replace(['/', '\\'], "__"))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if is_wav(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Clips under `root` as (clip id, class, audio path). The id is the path
/// relative to `root` without extension, using `/` separators.
fn scan_audio(root: &Path) -> Result<Vec<(ClipEntry, PathBuf)>, CliError> {
    let mut paths = Vec::new();
    collect_wavs(root, &mut paths)?;
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let rel = path.strip_prefix(root).expect("found under root").with_extension("");
        let parts: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        if parts.len() < 2 {
            return Err(CliError::Usage(format!(
                "{} is not inside a class directory; pass --manifest",
                path.display()
            )));
        }
        out.push((
            ClipEntry {
                id: parts.join("/"),
                class: parts[0].clone(),
            },
            path,
        ));
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no .wav files under {}", root.display())));
    }
    Ok(out)
}

fn cmd_extract(a: &ExtractArgs) -> Result<(), CliError> {
    let mut cfg = a.config.resolve("table3")?;
    let f = &mut cfg.features;
    if let Some(v) = a.rate {
        f.sample_rate = v;
    }
    if let Some(v) = a.fft {
        f.fft_size = v;
    }
    if let Some(v) = a.hop {
        f.hop = v;
    }
    if let Some(v) = a.mel_bins {
        f.mel_bins = v;
    }
    if let Some(v) = a.chunk_seconds {
        f.chunk_seconds = v;
    }
    cfg.validate()?;
    let clips: Vec<(ClipEntry, PathBuf)> = match &a.manifest {
        Some(m) => read_manifest(m)?
            .into_iter()
            .map(|c| {
                let direct = a.input.join(&c.id);
                let path = if direct.is_file() {
                    direct
                } else {
                    a.input.join(format!("{}.wav", c.id))
                };
                (c, path)
            })
            .collect(),
        None => scan_audio(&a.input)?,
    };
    let entries: Vec<ClipEntry> = clips.iter().map(|(c, _)| c.clone()).collect();
    let labels = LabelMap::from_clips(&entries);
    let pipeline = cfg.features.pipeline()?;
    let out = a.out.clone().unwrap_or_else(|| default_out("features"));
    create_dir(&out)?;
    for (clip, path) in &clips {
        let fm = pipeline.extract(&read_wav(path)?, &clip.id, labels.id(&clip.class))?;
        write_features(&fm, out.join(feature_file_name(&clip.id)))?;
        log::info!("{}: {} frames", clip.id, fm.frame_count());
    }
    write_file(&out.join(FEATURE_MANIFEST), &format_manifest(&entries))?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    println!("extracted {} clips into {}", clips.len(), out.display());
    Ok(())
}

fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let mut cfg = a.config.resolve("table3")?;
    if let Some(f) = a.folds {
        cfg.training.folds = f;
    }
    if let Some(v) = a.validation_fraction {
        cfg.training.validation_fraction = v;
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    let clips = read_manifest(&a.manifest)?;
    let seed = cfg.training.seed;
    let plan = match &a.test_list {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let ids: BTreeSet<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
            let (test, train): (Vec<ClipEntry>, Vec<ClipEntry>) =
                clips.into_iter().partition(|c| ids.contains(c.id.as_str()));
            fixed_split(&train, &test, cfg.training.validation_fraction, seed)?
        }
        None => make_folds(&clips, cfg.training.folds, seed)?,
    };
    plan.save(&a.out)?;
    println!("wrote plan for {} clips to {}", plan.len(), a.out.display());
    Ok(())
}

fn cmd_dump(a: &DumpArgs) -> Result<(), CliError> {
    let spec = MaskSpec::new(a.feature_length, a.hidden_width, a.bandwidth, a.overlap).map_err(Error::from)?;
    let mask = generate_mask(&spec);
    let grid = mask.to_grid_string();
    let positions: String = mask.positions().iter().map(|(r, c)| format!("{r} {c}\n")).collect();
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("mask.txt"), &grid)?;
            write_file(&dir.join("positions.txt"), &positions)?;
        }
        None => print!("{grid}\n# positions (row column)\n{positions}"),
    }
    Ok(())
}

fn describe(cfg: &ExperimentConfig, classes: usize) -> Result<String, CliError> {
    let spec = cfg.model_spec(classes)?;
    let model = TrainedModel::build(&spec, cfg.training.seed)?;
    let plan = frame_plan(&spec)?;
    let mut s = String::new();
    let _ = writeln!(s, "feature_length = {}", spec.feature_length);
    for (i, layer) in model.layers().iter().enumerate() {
        let mask = match layer.mask() {
            Some(m) => format!(
                "mask {}x{} bandwidth {} overlap {} density {:.4}",
                layer.input_width(),
                layer.hidden_width(),
                m.spec().bandwidth(),
                m.spec().overlap(),
                m.density()
            ),
            None => "unmasked".into(),
        };
        let _ = writeln!(
            s,
            "layer {i}: {} -> {} order {} parameters {} ({mask})",
            layer.input_width(),
            layer.hidden_width(),
            layer.order(),
            layer.parameter_count()
        );
    }
    let _ = writeln!(s, "extra_frames = {}", spec.extra_frames);
    let _ = writeln!(
        s,
        "dense: {} -> {} parameters {}",
        spec.final_width(),
        spec.dense_width,
        model.dense().parameter_count()
    );
    let _ = writeln!(
        s,
        "output: {} -> {} parameters {}",
        spec.dense_width,
        spec.class_count,
        model.output_layer().parameter_count()
    );
    let _ = writeln!(s, "activation = {}", spec.activation.name());
    let _ = writeln!(s, "segment_size = {}", segment_size(&spec));
    let plan: Vec<String> = plan.iter().map(usize::to_string).collect();
    let _ = writeln!(s, "frame_plan = [{}]", plan.join(", "));
    let _ = writeln!(s, "parameters = {}", model.parameter_count());
    Ok(s)
}

/// Clips, labels and the (possibly fold-restricted) plan named by the config.
struct Dataset {
    features_dir: PathBuf,
    clips: Vec<ClipEntry>,
    plan: SplitPlan,
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (or the matching [paths] entry)")))
}

fn open_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let features_dir = required(&cfg.paths.features, "--features")?.clone();
    let manifest = cfg
        .paths
        .manifest
        .clone()
        .unwrap_or_else(|| features_dir.join(FEATURE_MANIFEST));
    let plan = SplitPlan::load(required(&cfg.paths.plan, "--plan")?)?;
    let plan = match (plan.folds, cfg.paths.fold) {
        (0, None) => plan,
        (0, Some(_)) => return Err(CliError::Usage("--fold given but the plan is not k-fold".into())),
        (n, None) => return Err(CliError::Usage(format!("the plan has {n} folds; pass --fold"))),
        (_, Some(k)) => plan.fold_view(k, cfg.training.validation_fraction)?,
    };
    Ok(Dataset {
        features_dir,
        clips: read_manifest(&manifest)?,
        plan,
    })
}

/// Reads every clip's features, tagging label and split.
fn load_features(
    data: &Dataset,
    labels: &LabelMap,
    feature_length: usize,
) -> Result<Vec<(Bucket, FeatureMatrix)>, CliError> {
    let mut out = Vec::with_capacity(data.clips.len());
    for clip in &data.clips {
        let bucket = data
            .plan
            .bucket(&clip.id)
            .ok_or_else(|| TrainError::UnknownClip(clip.id.clone()))?;
        let mut fm = read_features(data.features_dir.join(feature_file_name(&clip.id)))?;
        if fm.feature_length() != feature_length {
            return Err(FeatureError::Format(format!(
                "{}: {} features per frame, expected {feature_length}",
                clip.id,
                fm.feature_length()
            ))
            .into());
        }
        fm.label = Some(
            labels
                .id(&clip.class)
                .ok_or_else(|| FeatureError::Format(format!("clip {:?}: unknown class {:?}", clip.id, clip.class)))?,
        );
        fm.split = bucket.split_tag();
        out.push((bucket, fm));
    }
    Ok(out)
}

/// Normalizes and segments the clips whose bucket `hop_for` accepts.
fn to_clip_segments(
    features: &[(Bucket, FeatureMatrix)],
    model: &TrainedModel,
    hop_for: impl Fn(Bucket) -> Option<usize>,
) -> Result<Vec<ClipSegments>, CliError> {
    let stats = model.norm.as_ref().ok_or(FeatureError::Unfitted)?;
    let q = model.segment_size();
    let mut out = Vec::new();
    for (bucket, fm) in features {
        let Some(hop) = hop_for(*bucket) else { continue };
        let seg = segment_clip(&apply_zscore(fm, stats)?, q, hop)?;
        if let Some(w) = &seg.warning {
            log::warn!("{w}");
        }
        out.push(ClipSegments {
            clip_id: fm.clip_id.clone(),
            label: fm.label.expect("labels assigned on load"),
            segments: seg.segments,
        });
    }
    Ok(out)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = a.config.resolve("table3")?;
    a.data.merge_into(&mut cfg);
    let t = &mut cfg.training;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    cfg.validate()?;
    let out = a.out.clone().unwrap_or_else(|| default_out("run"));

    let data = open_dataset(&cfg)?;
    let labels = LabelMap::from_clips(&data.clips);
    let spec = cfg.model_spec(labels.len())?;
    let q = segment_size(&spec);
    let mut train_config = cfg.train_config()?;
    train_config.hop = cfg.segment_hop(q);
    let features = load_features(&data, &labels, spec.feature_length)?;
    let training: Vec<FeatureMatrix> = features
        .iter()
        .filter(|(b, _)| *b == Bucket::Train)
        .map(|(_, f)| f.clone())
        .collect();

    let mut model = TrainedModel::build(&spec, train_config.seed)?;
    model.norm = Some(fit_zscore(&training)?);
    model.labels = labels.names().to_vec();
    let (train_hop, eval_hop) = (train_config.hop, cfg.training.eval_segment_hop);
    let segments = to_clip_segments(&features, &model, |b| {
        Some(if b == Bucket::Train { train_hop } else { eval_hop })
    })?;
    let (mut best, report) = train(&model, &segments, &data.plan, &train_config)?;
    best.norm = model.norm.clone();
    best.labels = model.labels.clone();

    create_dir(&out)?;
    save_model(&best, out.join("model.bin"))?;
    write_file(&out.join("report.txt"), &report.to_text())?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(
        &out.join("timing.txt"),
        &format!("wall_clock_seconds = {}\n", report.wall_clock_seconds),
    )?;
    match &report.test {
        Some(t) => println!(
            "best epoch {} of {}; test accuracy {:.4} ({}/{})",
            report.best_epoch,
            report.epochs.len(),
            t.accuracy,
            t.correct,
            t.clips
        ),
        None => println!(
            "best epoch {} of {}; no test clips",
            report.best_epoch,
            report.epochs.len()
        ),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = a.config.resolve("table3")?;
    a.data.merge_into(&mut cfg);
    let bucket = match a.split.as_str() {
        "train" => Bucket::Train,
        "validation" => Bucket::Validation,
        "test" => Bucket::Test,
        other => return Err(CliError::Usage(format!("unknown split {other:?}"))),
    };
    let hop = a.hop.unwrap_or(cfg.training.eval_segment_hop);
    if hop == 0 {
        return Err(CliError::Usage("--hop must be >= 1".into()));
    }
    let model = load_model(&a.model)?;
    if model.labels.len() != model.class_count() {
        return Err(FeatureError::Format("model file has no usable label names".into()).into());
    }
    let labels = LabelMap::from_names(model.labels.iter().cloned());
    let data = open_dataset(&cfg)?;
    let features = load_features(&data, &labels, model.spec().feature_length)?;
    let segments = to_clip_segments(&features, &model, |b| (b == bucket).then_some(hop))?;
    let report = evaluate(&model, &segments)?;
    let mut s = String::new();
    let _ = writeln!(s, "split = {}", a.split);
    let _ = writeln!(s, "clips = {}", report.clips);
    let _ = writeln!(s, "correct = {}", report.correct);
    let _ = writeln!(s, "accuracy = {:?}", report.accuracy);
    let _ = writeln!(s, "# classes: {}", model.labels.join(" "));
    s.push_str("# rows: true class, columns: predicted class, last column: no prediction\n");
    s.push_str(&report.confusion.to_text());
    for w in &report.warnings {
        let _ = writeln!(s, "# warning: {w}");
    }
    print!("{s}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("eval.txt"), &s)?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    if a.hop == 0 {
        return Err(CliError::Usage("--hop must be >= 1".into()));
    }
    let model = load_model(&a.model)?;
    let fm = match (&a.wav, &a.features) {
        (Some(path), _) => {
            let pipeline = a.config.resolve("table3")?.features.pipeline()?;
            let name = path
                .file_stem()
                .map_or("clip".into(), |s| s.to_string_lossy().into_owned());
            pipeline.extract(&read_wav(path)?, &name, None)?
        }
        (None, Some(path)) => read_features(path)?,
        (None, None) => return Err(CliError::Usage("give --wav or --features".into())),
    };
    let l = model.spec().feature_length;
    if fm.feature_length() != l {
        return Err(
            FeatureError::Format(format!("{} features per frame, model expects {l}", fm.feature_length())).into(),
        );
    }
    let fm = match &model.norm {
        Some(stats) => apply_zscore(&fm, stats)?,
        None => fm,
    };
    let q = model.segment_size();
    let count = crate::dataset::segment_count(fm.frame_count(), q, a.hop);
    let segments: Vec<Segment> = (0..count)
        .map(|i| Segment {
            frames: FrameBlock::new(fm.frames.slice_rows(i * a.hop, q)).expect("q >= 1"),
            label: 0,
            clip_id: fm.clip_id.clone(),
            start: i * a.hop,
        })
        .collect();
    let pred = predict_clip(&model, &segments)?;
    let name = |c: usize| model.labels.get(c).cloned().unwrap_or_else(|| c.to_string());
    println!("class = {}", name(pred.class));
    println!("segments = {count}");
    for (c, (p, v)) in pred.mean_probabilities.iter().zip(&pred.votes).enumerate() {
        println!("{}\tvotes {v}\tmean_probability {p:.6}", name(c));
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = match ExperimentConfig::preset(&a.spec) {
        Ok(c) => c,
        Err(ConfigError::UnknownPreset(_)) if Path::new(&a.spec).is_file() => ExperimentConfig::load(&a.spec)?,
        Err(e) => return Err(e.into()),
    };
    if a.classes == 0 {
        return Err(CliError::Usage("--classes must be >= 1".into()));
    }
    let spec = cfg.model_spec(a.classes)?;
    let model = TrainedModel::build(&spec, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed);
    let segment = FrameBlock::new(Matrix::from_fn(model.segment_size(), spec.feature_length, |_, _| {
        rng.random_range(-1.0..1.0)
    }))?;
    let target = rng.random_range(0..a.classes);
    let report = grad_check(&model, &segment, target, a.tolerance)?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed(report.max_relative_error()))
    }
}

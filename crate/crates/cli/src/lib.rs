//! The `lift` command line: synthetic data generation, motion-image encoding,
//! training, evaluation, scoring, single-video prediction and format
//! conversion.
//!
//! Configuration is layered: built-in defaults, then the `--config` JSON file,
//! then command-line flags. Every run that writes to an output directory also
//! writes the effective configuration there as `run_config.json`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lift_core::labels::{
    read_manifest, CategoryTable, ManifestRecord, QaOptions, Split, Task, TemplateSet, ZeroTargetPolicy,
    LABEL_PLACEHOLDER,
};
use lift_core::metrics::{build_report, evaluate, read_records, write_records, write_report, MetricsReport};
use lift_core::model::{
    predict_count, predict_detection, read_checkpoint, tokenize, write_checkpoint, Checkpoint, Model, ModelConfig,
    PredictionDistribution,
};
use lift_core::motion_image::{encode, EncoderConfig, PipelineOrder};
use lift_core::pipeline::{by_split, encode_record, encode_videos, load_skeleton, RunMetadata, TaskSpace};
use lift_core::plot::line_chart;
use lift_core::skeleton::{load_mediapipe, mediapipe_to_h36m, save_sequence, SequenceFormat};
use lift_core::synthgen::{gen_dataset, SynthSpec};
use lift_core::training::{history_csv, split_dataset, train, EpochStats, StopReason, TrainConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const CHECKPOINT_FILE: &str = "model.liftckpt";
pub const LOSS_CSV_FILE: &str = "loss.csv";
pub const LOSS_PLOT_FILE: &str = "loss.png";
pub const VOCAB_FILE: &str = "vocab.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const IMAGE_EXT: &str = "liftimg";

/// Failure of a subcommand; the variant decides the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or malformed configuration: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while doing the work: exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn rt(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lift", version, about = "Skeletal motion to language: encode, train, evaluate, predict")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Seed propagated to every module (synthesis, initialization, batching, QA draws).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with optional `seed`, `encoder`, `model`, `train`, `synth` and `qa` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (output file for `convert`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic labeled dataset with a manifest.
    GenSynth(GenSynthArgs),
    /// Encode every manifest video into a motion-image file.
    Encode(EncodeArgs),
    /// Train a model; writes the best checkpoint, loss CSV and loss plot.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split; writes records and a report.
    Eval(EvalArgs),
    /// Answer one question about one skeleton file.
    Predict(PredictArgs),
    /// Recompute a report from saved records at a new threshold.
    Score(ScoreArgs),
    /// Convert a Mediapipe skeleton file to the 17-joint layout.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenSynthArgs {
    /// SynthSpec JSON; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "h36m", value_parser = parse_format)]
    pub hpe_source: SequenceFormat,
    #[command(flatten)]
    pub encoder: EncoderFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "h36m", value_parser = parse_format)]
    pub hpe_source: SequenceFormat,
    /// Question templates JSON (`counting` and `detection` lists).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Reassign video splits using the split fractions instead of the manifest's.
    #[arg(long)]
    pub resplit: bool,
    #[command(flatten)]
    pub encoder: EncoderFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub qa: QaFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = lift_core::model::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value = "h36m", value_parser = parse_format)]
    pub hpe_source: SequenceFormat,
    /// Keep the first image-width columns of over-long videos.
    #[arg(long)]
    pub truncate: bool,
    #[command(flatten)]
    pub qa: QaFlags,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub skeleton: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub question: String,
    /// detection or counting; inferred from the question when omitted.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long, default_value_t = lift_core::model::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value = "h36m", value_parser = parse_format)]
    pub hpe_source: SequenceFormat,
    #[arg(long)]
    pub truncate: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = lift_core::model::DEFAULT_TAU)]
    pub tau: f64,
    /// Vocabulary JSON; defaults to `vocab.json` next to the records.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output h36m-jsonl file; `--out` is accepted as well.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EncoderFlags {
    #[arg(long)]
    pub smooth_window: Option<usize>,
    #[arg(long)]
    pub points_per_chain: Option<usize>,
    #[arg(long)]
    pub downsample_factor: Option<usize>,
    #[arg(long)]
    pub image_height: Option<usize>,
    #[arg(long)]
    pub image_width: Option<usize>,
    #[arg(long)]
    pub norm_scale: Option<f64>,
    #[arg(long)]
    pub truncate: bool,
    /// smooth_then_downsample or downsample_then_smooth.
    #[arg(long, value_parser = parse_order)]
    pub order: Option<PipelineOrder>,
}

impl EncoderFlags {
    fn apply(&self, c: &mut EncoderConfig) {
        set(&mut c.smooth_window, self.smooth_window);
        set(&mut c.points_per_chain, self.points_per_chain);
        set(&mut c.downsample_factor, self.downsample_factor);
        set(&mut c.image_height, self.image_height);
        set(&mut c.image_width, self.image_width);
        set(&mut c.norm_scale, self.norm_scale);
        set(&mut c.order, self.order);
        c.truncate |= self.truncate;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 192-wide, 4 layers.
    Default,
    /// 64-wide, 2 layers; trains in minutes on one core.
    Small,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Architecture preset, applied before the individual model flags.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub max_text_len: Option<usize>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, c: &mut ModelConfig) {
        if let Some(p) = self.preset {
            let base = match p {
                Preset::Default => ModelConfig::default(),
                Preset::Small => ModelConfig::small(),
            };
            c.embed_dim = base.embed_dim;
            c.num_layers = base.num_layers;
            c.num_heads = base.num_heads;
            c.patch_size = base.patch_size;
        }
        set(&mut c.embed_dim, self.embed_dim);
        set(&mut c.num_layers, self.num_layers);
        set(&mut c.num_heads, self.num_heads);
        set(&mut c.patch_size, self.patch_size);
        set(&mut c.max_text_len, self.max_text_len);
        set(&mut c.ffn_mult, self.ffn_mult);
        set(&mut c.init_std, self.init_std);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Train,val,test fractions used with `--resplit`.
    #[arg(long, value_parser = parse_fractions)]
    pub split_fractions: Option<[f64; 3]>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        set(&mut c.learning_rate, self.learning_rate);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.adam_beta1, self.adam_beta1);
        set(&mut c.adam_beta2, self.adam_beta2);
        set(&mut c.adam_eps, self.adam_eps);
        set(&mut c.patience, self.patience);
        set(&mut c.max_epochs, self.max_epochs);
        set(&mut c.split_fractions, self.split_fractions);
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthFlags {
    /// Comma-separated primitive names.
    #[arg(long, value_delimiter = ',')]
    pub primitives: Option<Vec<String>>,
    /// Inclusive count range as `min,max`.
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<[u32; 2]>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub rest_secs: Option<f64>,
    #[arg(long, value_parser = parse_fractions)]
    pub split_fractions: Option<[f64; 3]>,
    /// Also write Mediapipe-format copies.
    #[arg(long)]
    pub mediapipe: bool,
}

impl SynthFlags {
    fn apply(&self, s: &mut SynthSpec) {
        set(&mut s.primitives, self.primitives.clone());
        set(&mut s.counts, self.counts);
        set(&mut s.fps, self.fps);
        set(&mut s.noise_std, self.noise_std);
        set(&mut s.subjects, self.subjects);
        set(&mut s.rest_secs, self.rest_secs);
        set(&mut s.split_fractions, self.split_fractions);
        s.mediapipe |= self.mediapipe;
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct QaFlags {
    /// Draw this many templates per task and video instead of all of them.
    #[arg(long)]
    pub qa_per_task: Option<usize>,
    /// Skip samples whose target vector is all zero.
    #[arg(long)]
    pub drop_zero_targets: bool,
}

impl QaFlags {
    fn apply(&self, q: &mut QaOptions) {
        if self.qa_per_task.is_some() {
            q.per_task = self.qa_per_task;
        }
        if self.drop_zero_targets {
            q.zero_targets = ZeroTargetPolicy::Drop;
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_format(s: &str) -> Result<SequenceFormat, String> {
    s.parse()
}

fn parse_list<T: std::str::FromStr, const N: usize>(s: &str) -> Result<[T; N], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("cannot parse '{p}'")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected {N} comma-separated values, got '{s}'"))
}

fn parse_counts(s: &str) -> Result<[u32; 2], String> {
    parse_list(s)
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    parse_list(s)
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "detection" => Ok(Task::Detection),
        "counting" => Ok(Task::Counting),
        other => Err(format!("unknown task '{other}' (expected detection or counting)")),
    }
}

fn parse_order(s: &str) -> Result<PipelineOrder, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown pipeline order '{s}'"))
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub qa: QaOptions,
}

/// The effective configuration of one run, echoed as `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub paths: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub qa: QaOptions,
}

impl RunConfig {
    /// Defaults overlaid with the config file, with the run seed pushed
    /// into every module.
    pub fn resolve(subcommand: &str, global: &GlobalArgs) -> CliResult<Self> {
        let file = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let mut cfg = RunConfig {
            subcommand: subcommand.to_string(),
            paths: BTreeMap::new(),
            seed: global.seed.or(file.seed),
            encoder: file.encoder,
            model: file.model,
            train: file.train,
            synth: file.synth,
            qa: file.qa,
        };
        if let Some(out) = &global.out {
            cfg.path("out", out);
        }
        cfg.propagate_seed();
        Ok(cfg)
    }

    fn propagate_seed(&mut self) {
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.synth.seed = s;
        }
    }

    fn path(&mut self, key: &str, p: &Path) {
        self.paths.insert(key.to_string(), p.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).map_err(rt)?;
        fs::write(dir.join(RUN_CONFIG_FILE), json + "\n").map_err(rt)
    }
}

fn out_dir(global: &GlobalArgs) -> CliResult<PathBuf> {
    let dir = global.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_manifest(path: &Path) -> CliResult<(Vec<ManifestRecord>, PathBuf)> {
    require_file(path, "manifest")?;
    let records = read_manifest(path).map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::Usage(format!("manifest {} is empty", path.display())));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((records, base))
}

/// A checkpoint with everything needed to run it.
pub struct LoadedModel {
    pub model: Model,
    pub space: TaskSpace,
    pub encoder: EncoderConfig,
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    require_file(path, "checkpoint")?;
    let ckpt = read_checkpoint(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let meta = RunMetadata::from_value(&ckpt.metadata).map_err(rt)?;
    let space = TaskSpace::from_metadata(&meta).map_err(rt)?;
    let model = Model::from_parts(ckpt.config, ckpt.params).map_err(rt)?;
    Ok(LoadedModel { model, space, encoder: meta.encoder })
}

pub fn cmd_gen_synth(global: &GlobalArgs, args: &GenSynthArgs) -> CliResult<Vec<ManifestRecord>> {
    let mut cfg = RunConfig::resolve("gen-synth", global)?;
    if let Some(path) = &args.spec {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
        cfg.synth =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", path.display())))?;
        cfg.path("spec", path);
        cfg.propagate_seed();
    }
    args.synth.apply(&mut cfg.synth);
    cfg.synth.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = out_dir(global)?;
    let records = gen_dataset(&cfg.synth, &out).map_err(rt)?;
    cfg.write(&out)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeSummary {
    pub written: Vec<PathBuf>,
    /// `id: reason` for every video that could not be encoded.
    pub failed: Vec<String>,
}

pub fn cmd_encode(global: &GlobalArgs, args: &EncodeArgs) -> CliResult<EncodeSummary> {
    let mut cfg = RunConfig::resolve("encode", global)?;
    args.encoder.apply(&mut cfg.encoder);
    cfg.encoder.check().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.path("manifest", &args.manifest);
    let (records, base) = load_manifest(&args.manifest)?;
    let out = out_dir(global)?;
    use rayon::prelude::*;
    let results: Vec<Result<PathBuf, String>> = records
        .par_iter()
        .map(|r| {
            let image = encode_record(r, &base, args.hpe_source, &cfg.encoder).map_err(|e| e.to_string())?;
            let path = out.join(format!("{}.{IMAGE_EXT}", r.id));
            image.save(&path).map_err(|e| format!("{}: {e}", r.id))?;
            Ok(path)
        })
        .collect();
    let mut summary = EncodeSummary { written: Vec::new(), failed: Vec::new() };
    for r in results {
        match r {
            Ok(p) => summary.written.push(p),
            Err(e) => summary.failed.push(e),
        }
    }
    cfg.write(&out)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

pub fn cmd_train(global: &GlobalArgs, args: &TrainArgs) -> CliResult<TrainSummary> {
    let mut cfg = RunConfig::resolve("train", global)?;
    args.encoder.apply(&mut cfg.encoder);
    args.model.apply(&mut cfg.model);
    args.train.apply(&mut cfg.train);
    args.qa.apply(&mut cfg.qa);
    cfg.encoder.check().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.train.check().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.path("manifest", &args.manifest);

    let templates = match &args.templates {
        Some(p) => {
            require_file(p, "templates")?;
            cfg.path("templates", p);
            TemplateSet::load(p).map_err(|e| CliError::Usage(format!("invalid templates {}: {e}", p.display())))?
        }
        None => TemplateSet::default(),
    };
    let (mut records, base) = load_manifest(&args.manifest)?;
    if args.resplit {
        records = split_dataset(&records, cfg.train.split_fractions, cfg.train.seed).map_err(rt)?;
    }
    let space = TaskSpace::build(&records, templates, &CategoryTable::default());
    cfg.model = space.fit_model_config(cfg.model.clone(), &cfg.encoder);
    cfg.model.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = out_dir(global)?;
    cfg.write(&out)?;

    let (videos, failed) = encode_videos(&records, &base, args.hpe_source, &cfg.encoder, &cfg.model);
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(ToString::to_string).collect();
        return Err(CliError::Runtime(format!("{} videos failed to encode:\n  {}", list.len(), list.join("\n  "))));
    }
    let samples = |split| space.samples(&by_split(&videos, split), cfg.qa, cfg.train.seed, cfg.model.max_text_len);
    let train_set = samples(Split::Train).map_err(rt)?;
    let val_set = samples(Split::Val).map_err(rt)?;
    log::info!("{} training and {} validation samples", train_set.len(), val_set.len());

    let mut meta = space.to_metadata(&cfg.encoder).map_err(rt)?;
    let model = Model::new(cfg.model.clone()).map_err(rt)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut history = Vec::new();
    let mut failure = None;
    let outcome = train(model, &train_set, &val_set, &cfg.train, |r| {
        history.push(r.stats);
        let mut step = || -> CliResult<()> {
            if r.is_best {
                meta.extra = serde_json::json!({
                    "epoch": r.stats.epoch,
                    "val_loss": r.stats.val_loss,
                    "train": cfg.train,
                    "qa": cfg.qa,
                });
                let ckpt = Checkpoint {
                    config: r.model.config.clone(),
                    metadata: serde_json::to_value(&meta).map_err(rt)?,
                    params: r.model.params.clone(),
                };
                write_checkpoint(&ckpt_path, &ckpt).map_err(rt)?;
            }
            fs::write(out.join(LOSS_CSV_FILE), history_csv(&history)).map_err(rt)
        };
        match step() {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    })
    .map_err(rt)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let curve = |f: fn(&EpochStats) -> f64| outcome.history.iter().map(|s| (s.epoch as f64, f(s))).collect();
    line_chart(&[curve(|s| s.train_loss), curve(|s| s.val_loss)], &out.join(LOSS_PLOT_FILE)).map_err(rt)?;
    space.vocab.save(&out.join(VOCAB_FILE)).map_err(rt)?;
    Ok(TrainSummary {
        checkpoint: ckpt_path,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stop_reason: outcome.stop_reason,
    })
}

pub fn cmd_eval(global: &GlobalArgs, args: &EvalArgs) -> CliResult<MetricsReport> {
    let mut cfg = RunConfig::resolve("eval", global)?;
    args.qa.apply(&mut cfg.qa);
    check_tau(args.tau)?;
    let split = match args.split.as_str() {
        "all" => None,
        s => Some(s.parse::<Split>().map_err(CliError::Usage)?),
    };
    cfg.path("manifest", &args.manifest);
    cfg.path("checkpoint", &args.checkpoint);
    let (records, base) = load_manifest(&args.manifest)?;
    let loaded = load_model(&args.checkpoint)?;
    cfg.encoder = loaded.encoder.clone();
    cfg.encoder.truncate |= args.truncate;
    cfg.model = loaded.model.config.clone();
    let out = out_dir(global)?;
    cfg.write(&out)?;

    let records: Vec<ManifestRecord> = records.into_iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
    if records.is_empty() {
        return Err(CliError::Usage(format!("no videos in split '{}'", args.split)));
    }
    let (videos, failed) = encode_videos(&records, &base, args.hpe_source, &cfg.encoder, &cfg.model);
    for f in &failed {
        log::warn!("skipped {f}");
    }
    let space = &loaded.space;
    let samples = space.samples(&videos, cfg.qa, cfg.seed.unwrap_or(0), cfg.model.max_text_len).map_err(rt)?;
    let eval_records = evaluate(&loaded.model, &samples, &space.vocab, args.tau).map_err(rt)?;
    write_records(&out.join(RECORDS_FILE), &eval_records).map_err(rt)?;
    space.vocab.save(&out.join(VOCAB_FILE)).map_err(rt)?;
    let report = build_report(&eval_records, &space.vocab, args.tau).map_err(rt)?;
    write_report(&report, &out).map_err(rt)?;
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!("{} videos failed to encode; report covers the rest", failed.len())));
    }
    Ok(report)
}

fn check_tau(tau: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("tau must be in [0, 1], got {tau}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Count(u32),
    /// Classes at or above the threshold, most confident first.
    Words(Vec<(String, f64)>),
}

impl Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prediction::Count(n) => write!(f, "{n}"),
            Prediction::Words(words) => {
                for (i, (w, p)) in words.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{w}\t{p:.4}")?;
                }
                Ok(())
            }
        }
    }
}

/// Matches the question against the templates, then falls back to keywords.
pub fn infer_task(question: &str, templates: &TemplateSet) -> Task {
    let q = question.trim().to_lowercase();
    let matches = |t: &String| {
        let t = t.to_lowercase();
        match t.split_once(LABEL_PLACEHOLDER) {
            Some((pre, post)) => q.starts_with(pre.trim()) && q.ends_with(post.trim()),
            None => q == t.trim(),
        }
    };
    if templates.counting.iter().any(matches) {
        return Task::Counting;
    }
    if templates.detection.iter().any(matches) {
        return Task::Detection;
    }
    const COUNT_WORDS: [&str; 6] = ["how many", "count", "number of", "times", "reps", "repetitions"];
    if COUNT_WORDS.iter().any(|w| q.contains(w)) {
        Task::Counting
    } else {
        Task::Detection
    }
}

pub fn cmd_predict(global: &GlobalArgs, args: &PredictArgs) -> CliResult<Prediction> {
    let mut cfg = RunConfig::resolve("predict", global)?;
    check_tau(args.tau)?;
    require_file(&args.skeleton, "skeleton")?;
    cfg.path("skeleton", &args.skeleton);
    cfg.path("checkpoint", &args.checkpoint);
    let loaded = load_model(&args.checkpoint)?;
    let mut enc = loaded.encoder.clone();
    enc.truncate |= args.truncate;
    let seq = load_skeleton(&args.skeleton, args.hpe_source).map_err(rt)?;
    let image = encode(&seq, &enc).map_err(rt)?;
    let patches = loaded.model.patches(&image).map_err(rt)?;
    let tokens = tokenize(&args.question, &loaded.space.lexicon, loaded.model.config.max_text_len);
    let logits = loaded.model.forward(&patches, &tokens).map_err(rt)?;
    let dist = PredictionDistribution::from_logits(&logits);
    let task = args.task.unwrap_or_else(|| infer_task(&args.question, &loaded.space.templates));
    log::info!("answering as a {task} question");
    if let Some(out) = &global.out {
        cfg.encoder = enc;
        cfg.model = loaded.model.config.clone();
        fs::create_dir_all(out).map_err(rt)?;
        cfg.write(out)?;
    }
    Ok(match task {
        Task::Counting => Prediction::Count(predict_count(&dist, &loaded.space.vocab)),
        Task::Detection => Prediction::Words(predict_detection(&dist, &loaded.space.vocab, args.tau)),
    })
}

pub fn cmd_score(global: &GlobalArgs, args: &ScoreArgs) -> CliResult<MetricsReport> {
    let mut cfg = RunConfig::resolve("score", global)?;
    check_tau(args.tau)?;
    require_file(&args.records, "records")?;
    let vocab_path = match &args.vocab {
        Some(p) => p.clone(),
        None => args.records.with_file_name(VOCAB_FILE),
    };
    require_file(&vocab_path, "vocabulary")?;
    cfg.path("records", &args.records);
    cfg.path("vocab", &vocab_path);
    let vocab = lift_core::labels::Vocabulary::load(&vocab_path).map_err(rt)?;
    let mut records = read_records(&args.records).map_err(rt)?;
    for r in &mut records {
        if r.probs.len() != vocab.len() {
            return Err(CliError::Runtime(format!(
                "record {} has {} probabilities, vocabulary has {} classes",
                r.sample_id,
                r.probs.len(),
                vocab.len()
            )));
        }
        r.rescore(&vocab, args.tau);
    }
    let report = build_report(&records, &vocab, args.tau).map_err(rt)?;
    if let Some(out) = &global.out {
        fs::create_dir_all(out).map_err(rt)?;
        write_records(&out.join(RECORDS_FILE), &records).map_err(rt)?;
        write_report(&report, out).map_err(rt)?;
        cfg.write(out)?;
    }
    Ok(report)
}

pub fn cmd_convert(global: &GlobalArgs, args: &ConvertArgs) -> CliResult<PathBuf> {
    require_file(&args.input, "input")?;
    let output = args
        .output
        .clone()
        .or_else(|| global.out.clone())
        .ok_or_else(|| CliError::Usage("--output (or --out) is required".into()))?;
    let mp = load_mediapipe(&args.input).map_err(rt)?;
    let seq = mediapipe_to_h36m(&mp).map_err(rt)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(rt)?;
    }
    save_sequence(&seq, &output).map_err(rt)?;
    Ok(output)
}

/// Runs one parsed command line, printing results to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenSynth(a) => {
            let records = cmd_gen_synth(g, a)?;
            println!("wrote {} videos", records.len());
        }
        Command::Encode(a) => {
            let s = cmd_encode(g, a)?;
            println!("encoded {} videos", s.written.len());
            if !s.failed.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{} videos failed:\n  {}",
                    s.failed.len(),
                    s.failed.join("\n  ")
                )));
            }
        }
        Command::Train(a) => {
            let s = cmd_train(g, a)?;
            println!(
                "trained {} epochs ({:?}); best epoch {} with loss {:.6}; checkpoint {}",
                s.history.len(),
                s.stop_reason,
                s.best_epoch,
                s.best_val_loss,
                s.checkpoint.display()
            );
        }
        Command::Eval(a) => print_report(&cmd_eval(g, a)?)?,
        Command::Score(a) => print_report(&cmd_score(g, a)?)?,
        Command::Predict(a) => match cmd_predict(g, a)? {
            Prediction::Words(w) if w.is_empty() => eprintln!("no class reached tau {}", a.tau),
            p => println!("{p}"),
        },
        Command::Convert(a) => {
            let path = cmd_convert(g, a)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_report(report: &MetricsReport) -> CliResult<()> {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "records {}  detection {}  obo {}  mae {}  task consistency {:.4}",
        report.num_records,
        fmt(report.detection_accuracy),
        fmt(report.obo),
        fmt(report.mae),
        report.task_consistency
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_inference_uses_templates_then_keywords() {
        let t = TemplateSet::default();
        let counting = t.counting[0].replace(LABEL_PLACEHOLDER, "left lunge");
        assert_eq!(infer_task(&counting, &t), Task::Counting);
        assert_eq!(infer_task(&t.detection[0], &t), Task::Detection);
        assert_eq!(infer_task("how many squats?", &t), Task::Counting);
        assert_eq!(infer_task("which movement is this", &t), Task::Detection);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 4, "train": {"patience": 9, "batch_size": 8}}"#).unwrap();
        let global = GlobalArgs { seed: None, config: Some(path.clone()), out: None };
        let mut cfg = RunConfig::resolve("train", &global).unwrap();
        TrainFlags { batch_size: Some(16), ..Default::default() }.apply(&mut cfg.train);
        assert_eq!((cfg.train.patience, cfg.train.batch_size), (9, 16));
        assert_eq!((cfg.train.seed, cfg.model.seed, cfg.synth.seed), (4, 4, 4));
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);

        let global = GlobalArgs { seed: Some(7), config: Some(path), out: None };
        assert_eq!(RunConfig::resolve("train", &global).unwrap().model.seed, 7);
    }

    #[test]
    fn config_errors_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = GlobalArgs { config: Some(dir.path().join("nope.json")), ..Default::default() };
        assert_eq!(RunConfig::resolve("x", &missing).unwrap_err().exit_code(), 2);
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"trian": {}}"#).unwrap();
        let typo = GlobalArgs { config: Some(bad), ..Default::default() };
        assert_eq!(RunConfig::resolve("x", &typo).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn preset_then_individual_flags() {
        let mut c = ModelConfig::default();
        ModelFlags { preset: Some(Preset::Small), num_layers: Some(3), ..Default::default() }.apply(&mut c);
        assert_eq!((c.embed_dim, c.num_layers, c.num_heads), (64, 3, 4));
    }

    #[test]
    fn prediction_display() {
        assert_eq!(Prediction::Count(7).to_string(), "7");
        let w = Prediction::Words(vec![("squat".into(), 0.9), ("slow".into(), 0.06)]);
        assert_eq!(w.to_string(), "squat\t0.9000\nslow\t0.0600");
    }
}

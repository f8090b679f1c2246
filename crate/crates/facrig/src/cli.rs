//! Command-line verbs.
//!
//! `--config FILE` (TOML, or JSON by extension) is applied after the flags:
//! its keys, named like the long flags with underscores, replace the flag
//! values. Exit status is 0 on success, 2 on invalid arguments or
//! configuration and 1 on any other failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facrig_core::io::{read_mesh, write_mesh};
use facrig_core::rig::store::read_rig;
use facrig_core::rig::{generate_scanlike_dataset, sample_random_au_dataset, AugmentationConfig};
use facrig_model::ablation::{run_ablation, AblationData, ABLATION_CONFIGS};
use facrig_model::checkpoint::{self, Manifest};
use facrig_model::data::{FrameSet, PreparedSet};
use facrig_model::eval::{eval_inverse_rigging, eval_reconstruction, eval_triangulation_invariance, facs_mae, Table, TableRow};
use facrig_model::model::ModelConfig;
use facrig_model::seol::inverse_rig_seol;
use facrig_model::train::{train_stage1, train_stage2, EpochMetrics, MetricsLog, TrainConfig, TrainRun};
use facrig_model::{Model, ModelError, NfrModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{self, DataDir, GenSpec};

#[derive(Debug, Parser)]
#[command(name = "facrig", version, about = "Neural face rig tools")]
pub struct Cli {
    /// Report errors as one JSON object on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    /// TOML or JSON file whose keys override the flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic rig and its labeled and scan-like datasets.
    GenData(GenDataArgs),
    /// Train stage 1 (labeled frames) or stage 2 (labeled plus scan-like).
    Train(TrainArgs),
    /// Transfer the expression of one mesh onto another identity.
    Retarget(RetargetArgs),
    /// Recover AU activations from a mesh.
    Invrig(InvrigArgs),
    /// Run an evaluation protocol and print its table.
    Eval(EvalArgs),
    /// Start the editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Template vertex count.
    #[arg(long, default_value_t = 1000)]
    pub vertices: usize,
    /// Training identities.
    #[arg(long, default_value_t = 8)]
    pub identities: usize,
    /// Frames per training identity.
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Identities in each held-out split.
    #[arg(long, default_value_t = 2)]
    pub test_identities: usize,
    /// Frames per held-out identity.
    #[arg(long, default_value_t = 20)]
    pub test_frames: usize,
    /// Scan-like training identities.
    #[arg(long, default_value_t = 4)]
    pub scan_identities: usize,
    /// Frames per scan-like training identity.
    #[arg(long, default_value_t = 50)]
    pub scan_frames: usize,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// 1: labeled frames with teacher-forced warm-up; 2: mixed batches from a stage-1 checkpoint.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Tiny model and generated data; finishes in a few minutes.
    #[arg(long)]
    pub smoke: bool,
    /// Dataset directory from `gen-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write; metrics go next to it as `.metrics.jsonl`.
    #[arg(long, default_value = "model.frck")]
    pub out: PathBuf,
    /// Checkpoint to start from (required for stage 2 unless `--smoke`).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stage-1 epochs after the warm-up, or the stage-2 epoch limit.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Full training configuration; only settable from `--config`.
    #[arg(skip)]
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetargetArgs {
    /// Mesh carrying the expression.
    #[arg(long)]
    pub source: PathBuf,
    /// Neutral mesh of the target identity.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, env = "FACRIG_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Output mesh (`.ply` or `.obj`).
    #[arg(long, default_value = "retargeted.ply")]
    pub out: PathBuf,
    /// Report JSON; defaults to the output path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvrigMethod {
    Encoder,
    Seol,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvrigArgs {
    #[arg(long, value_enum)]
    pub method: InvrigMethod,
    /// Mesh to invert.
    #[arg(long)]
    pub input: PathBuf,
    /// Model checkpoint (encoder method).
    #[arg(long, env = "FACRIG_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// `rig.bin` supplying the AU deltas (seol method).
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Neutral of the subject; the rig template when omitted (seol method).
    #[arg(long)]
    pub neutral: Option<PathBuf>,
    /// Coordinate-descent sweep limit (seol method).
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Reconstruction error on the held-out labeled and scan-like splits.
    Recon,
    /// Seol, encoder-through-rig and decoder errors on the test split.
    Invrig,
    /// Test-split reconstruction on the template and on a 1.5x remeshing.
    Triinv,
    /// Train and compare the ablation variants.
    Ablation,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Dataset directory from `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint (all protocols except ablation).
    #[arg(long, env = "FACRIG_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Labeled split to score.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Seol sweep limit.
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Ablation variants; all of them when omitted.
    #[arg(long, value_delimiter = ',')]
    pub configs: Vec<String>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training configuration for the ablation variants; only settable from `--config`.
    #[arg(skip)]
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long, env = "FACRIG_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "FACRIG_PORT", default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 2,
            Self::Failed(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Invalid(_) => "validation",
            Self::Failed(_) => "runtime",
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownConfig(_)
            | ModelError::DimensionMismatch { .. }
            | ModelError::CorrespondenceMismatch(_)
            | ModelError::MissingLabel(_)
            | ModelError::DatasetEmpty(_)
            | ModelError::Core(facrig_core::Error::InvalidConfig(_) | facrig_core::Error::Parse(_)) => Self::Invalid(e.to_string()),
            e => Self::Failed(e.into()),
        }
    }
}

impl From<facrig_core::Error> for CliError {
    fn from(e: facrig_core::Error) -> Self {
        ModelError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failed(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn read_config(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| invalid(e.to_string()))
    }
}

/// `args` with the keys of the config file applied on top.
pub fn apply_config<A: Serialize + DeserializeOwned>(args: A, config: Option<&Path>) -> CliResult<A> {
    let Some(path) = config else { return Ok(args) };
    let mut base = serde_json::to_value(&args).map_err(|e| CliError::Failed(e.into()))?;
    merge(&mut base, read_config(path)?);
    serde_json::from_value(base).map_err(|e| invalid(format!("config {}: {e}", path.display())))
}

fn emit(value: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.into()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(Model, Manifest)> {
    checkpoint::load::<f32>(path).map_err(|e| match e {
        ModelError::Io(io) => invalid(format!("checkpoint {}: {io}", path.display())),
        e => invalid(format!("checkpoint {}: {e}", path.display())),
    })
}

fn open_data(path: &Path) -> CliResult<DataDir> {
    DataDir::open(path).map_err(|e| invalid(format!("dataset {}: {e}", path.display())))
}

fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let spec = GenSpec {
        seed: args.seed,
        vertices: args.vertices,
        identities: args.identities,
        frames: args.frames,
        test_identities: args.test_identities,
        test_frames: args.test_frames,
        scan_identities: args.scan_identities,
        scan_frames: args.scan_frames,
    };
    let data = dataset::generate(&spec)?;
    dataset::write(&args.out, &spec, &data)?;
    let counts: serde_json::Map<String, Value> = data.splits.iter().map(|(n, s)| (n.to_string(), json!(s.len()))).collect();
    tracing::info!(out = %args.out.display(), "dataset written");
    emit(&json!({ "out": args.out, "splits": counts }), None)
}

/// Model and schedule used by `train --smoke` and the smoke-scale ablation.
pub fn smoke_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            render_resolution: 32,
            cnn_channels: vec![4, 8, 8, 8],
            view_code: 16,
            identity_code: 12,
            ext_dims: 8,
            encoder_width: 16,
            expression_blocks: 2,
            identity_blocks: 1,
            spectral_k: 24,
            decoder_width: 32,
            decoder_layers: 4,
            ..ModelConfig::default()
        },
        augmentation: Some(AugmentationConfig::training(0)),
        augmented_copies: 1,
        ..Default::default()
    };
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.stage1_epochs = 2;
    cfg.schedule.stage2_max_epochs = 2;
    cfg.schedule.lr0 = 1e-3;
    cfg
}

fn smoke_frames(labeled: bool, seed: u64) -> CliResult<FrameSet> {
    let rig = facrig_core::build_synthetic_rig(seed, 500)?;
    Ok(if labeled {
        FrameSet::from_rig_samples(&rig, &sample_random_au_dataset(&rig, 2, 8, seed)?)?
    } else {
        FrameSet::from_scanlike(&generate_scanlike_dataset(&rig, 1, 8, seed + 1)?, None)?
    })
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = match (&args.train, args.smoke) {
        (Some(c), _) => c.clone(),
        (None, true) => smoke_config(),
        (None, false) => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(lr) = args.lr {
        cfg.schedule.lr0 = lr;
    }
    if let Some(e) = args.epochs {
        match args.stage {
            1 => cfg.schedule.stage1_epochs = e,
            _ => cfg.schedule.stage2_max_epochs = e,
        }
    }
    let init = match &args.init {
        Some(p) => {
            let (m, _) = load_model(p)?;
            cfg.model = m.config.clone();
            Some(m)
        }
        None => None,
    };
    cfg.validate()?;
    let data = match &args.data {
        Some(p) => Some(open_data(p)?),
        None if args.smoke => None,
        None => return Err(invalid("--data is required without --smoke")),
    };
    let frames = |split: &str, labeled: bool| -> CliResult<FrameSet> {
        match &data {
            Some(d) => Ok(d.frames(split)?),
            None => smoke_frames(labeled, cfg.seed),
        }
    };
    let aug = cfg.augmentation.as_ref().map(|a| (a, cfg.augmented_copies));
    let mut log = MetricsLog::open(args.out.with_extension("metrics.jsonl"))?;
    let started = Instant::now();
    let mut hook = |m: &EpochMetrics, _: &NfrModel<f32>| {
        tracing::info!(stage = m.stage, epoch = m.epoch, loss = m.loss, "epoch");
        log.append(m)
    };
    let labeled = PreparedSet::build(&cfg.model, &frames("train", true)?, aug)?;
    let val = match &data {
        Some(d) if d.root.join("val").is_dir() => Some(PreparedSet::build(&cfg.model, &d.frames("val")?, None)?),
        _ => None,
    };
    let run: TrainRun = match args.stage {
        1 => train_stage1(&cfg, &labeled, val.as_ref(), init, &mut hook)?,
        _ => {
            let init = match init {
                Some(m) => m,
                None if args.smoke => Model::new(cfg.model.clone())?,
                None => return Err(invalid("stage 2 needs --init with a stage-1 checkpoint")),
            };
            let scan = PreparedSet::build(&cfg.model, &frames("scan", false)?, aug)?;
            train_stage2(&cfg, init, &labeled, &scan, val.as_ref(), &mut hook)?
        }
    };
    let mut manifest = Manifest::new(&cfg.model, args.stage, vec![cfg.seed]);
    manifest.metrics = run.history.get(run.best_epoch).map(|m| serde_json::to_value(m).expect("metrics serialize"));
    checkpoint::save(&args.out, &run.model, &manifest)?;
    emit(
        &json!({
            "checkpoint": args.out,
            "stage": args.stage,
            "epochs": run.history.len(),
            "best_epoch": run.best_epoch,
            "final_loss": run.history.last().map(|m| m.loss),
            "seconds": started.elapsed().as_secs_f64(),
        }),
        None,
    )
}

fn retarget(args: RetargetArgs) -> CliResult<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let started = Instant::now();
    let source = read_mesh::<f64>(&args.source).map_err(|e| invalid(format!("source {}: {e}", args.source.display())))?;
    let target = read_mesh::<f64>(&args.target).map_err(|e| invalid(format!("target {}: {e}", args.target.display())))?;
    let source = model.prepare(&source)?;
    let target = model.prepare_identity(&target)?;
    let z = model.encode_expression(&source)?;
    let id = model.encode_identity(&target.prepared)?;
    let out = model.decode(&target, &z, &id)?;
    write_mesh(&args.out, &out)?;
    let k = model.config.facs_dims;
    let report = json!({
        "source": args.source,
        "target": args.target,
        "out": args.out,
        "vertex_count": out.vertex_count(),
        "au_names": &model.config.code_names()[..k],
        "z_facs": z[..k].iter().map(|&x| x as f64).collect::<Vec<_>>(),
        "z_ext": z[k..].iter().map(|&x| x as f64).collect::<Vec<_>>(),
        "seconds": started.elapsed().as_secs_f64(),
    });
    let path = args.report.clone().unwrap_or_else(|| args.out.with_extension("json"));
    emit(&report, Some(&path))
}

fn invrig(args: InvrigArgs) -> CliResult<()> {
    let input = read_mesh::<f64>(&args.input).map_err(|e| invalid(format!("input {}: {e}", args.input.display())))?;
    let names = facrig_core::rig::face::au_names();
    let value = match args.method {
        InvrigMethod::Encoder => {
            let path = args.checkpoint.as_ref().ok_or_else(|| invalid("--checkpoint is required for the encoder method"))?;
            let (model, _) = load_model(path)?;
            let z = model.encode_expression(&model.prepare(&input)?)?;
            let k = model.config.facs_dims;
            json!({
                "method": "encoder",
                "au_names": names,
                "weights": z[..k].iter().map(|&x| x as f64).collect::<Vec<_>>(),
                "z_ext": z[k..].iter().map(|&x| x as f64).collect::<Vec<_>>(),
            })
        }
        InvrigMethod::Seol => {
            let path = args.rig.as_ref().ok_or_else(|| invalid("--rig is required for the seol method"))?;
            let mut rig = read_rig(&std::fs::read(path)?).map_err(|e| invalid(format!("rig {}: {e}", path.display())))?;
            if let Some(n) = &args.neutral {
                let neutral = read_mesh::<f64>(n).map_err(|e| invalid(format!("neutral {}: {e}", n.display())))?;
                rig = rig.personalized(&neutral).map_err(|e| invalid(e.to_string()))?;
            }
            let r = inverse_rig_seol(&rig, &input, args.iters)?;
            json!({
                "method": "seol",
                "au_names": rig.au_names,
                "weights": r.weights,
                "sweeps": r.sweeps(),
                "converged": r.converged,
                "objective": r.objective.last(),
            })
        }
    };
    emit(&value, args.out.as_deref())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let data = open_data(&args.data)?;
    if args.protocol == Protocol::Ablation {
        let base = args.train.clone().unwrap_or_else(smoke_config);
        let names: Vec<&str> = if args.configs.is_empty() {
            ABLATION_CONFIGS.to_vec()
        } else {
            args.configs.iter().map(String::as_str).collect()
        };
        let ab = AblationData {
            labeled: data.frames("train")?,
            scanlike: data.frames("scan")?,
            test_labeled: data.frames(&args.split)?,
            test_scanlike: data.frames("scan_test")?,
        };
        let report = run_ablation(&names, &base, &ab)?;
        let value = json!({ "protocol": "ablation", "table": report.table(), "report": report });
        return emit(&value, args.out.as_deref());
    }
    let path = args.checkpoint.as_ref().ok_or_else(|| invalid("--checkpoint is required"))?;
    let (model, _) = load_model(path)?;
    let cfg = &model.config;
    let value = match args.protocol {
        Protocol::Recon => {
            let lab = PreparedSet::build(cfg, &data.frames(&args.split)?, None)?;
            let scan = PreparedSet::build(cfg, &data.frames("scan_test")?, None)?;
            let table = Table {
                rows: vec![
                    TableRow::new(args.split.as_str(), &eval_reconstruction(&model, &lab, 0)?),
                    TableRow::new("scan_test", &eval_reconstruction(&model, &scan, 0)?),
                ],
            };
            json!({ "protocol": "recon", "table": table, "facs_mae": facs_mae(&model, &lab)? })
        }
        Protocol::Invrig => {
            let set = PreparedSet::build(cfg, &data.frames(&args.split)?, None)?;
            let table = eval_inverse_rigging(&model, &data.rig, &set, args.iters)?;
            json!({ "protocol": "invrig", "table": table })
        }
        Protocol::Triinv => {
            let remeshed_rig = data.rig.remesh(
                (data.rig.vertex_count() as f64 * 1.5).round() as usize,
                facrig_core::rig::datasets::derive_seed(data.rig.seed, 0x7121, 0),
            )?;
            let a = PreparedSet::build(cfg, &data.frames(&args.split)?, None)?;
            let b = PreparedSet::build(cfg, &data.remeshed_frames(&args.split, &remeshed_rig)?, None)?;
            let r = eval_triangulation_invariance(&model, &a, &b)?;
            json!({ "protocol": "triinv", "table": r.table, "relative_gap": r.relative_gap })
        }
        Protocol::Ablation => unreachable!("handled above"),
    };
    emit(&value, args.out.as_deref())
}

fn serve(args: ServeArgs) -> CliResult<()> {
    let (model, manifest) = load_model(&args.checkpoint)?;
    tracing::info!(checkpoint = %args.checkpoint.display(), stage = manifest.stage, "model loaded");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(model, args.port)).map_err(CliError::Failed)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(apply_config(a, cfg)?),
        Command::Train(a) => train(apply_config(a, cfg)?),
        Command::Retarget(a) => retarget(apply_config(a, cfg)?),
        Command::Invrig(a) => invrig(apply_config(a, cfg)?),
        Command::Eval(a) => eval(apply_config(a, cfg)?),
        Command::Serve(a) => serve(apply_config(a, cfg)?),
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `args`, runs the verb and returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if json_errors && code != 0 {
                eprintln!("{}", json!({ "error": "validation", "message": e.kind().to_string(), "detail": e.to_string() }));
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    init_logging();
    let json_errors = cli.json;
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            if json_errors {
                eprintln!("{}", json!({ "error": e.kind(), "message": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            e.exit_code()
        }
    }
}

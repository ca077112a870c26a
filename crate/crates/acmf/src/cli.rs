//! The `acmf` command-line binary: dataset synthesis, training, evaluation
//! and attention-map visualization.
//!
//! Every command is a pure function of its on-disk inputs, configuration and
//! seed: rerunning with the same arguments reproduces outputs byte for byte.
//! Output files are written atomically (temp file + rename).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-format error,
//! 4 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attention::{binarize_top, encode_pgm, gradcam_map, AttentionError};
use crate::config::{parse_config_text, parse_override, ConfigError, RunConfig};
use crate::model::{
    encode_checkpoint, load_checkpoint, Checkpoint, CheckpointError, ModelError,
};
use crate::pipeline::dataset::write_atomic;
use crate::pipeline::{
    compute_reference_map, evaluate, load_split, synth_dataset, train_mfr_with_progress,
    write_dataset, EvalOptions, PipelineError, Split,
};
use crate::spectral::SpectralError;
use crate::tensor::io::{read_tensor, TensorIoError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser)]
#[command(name = "acmf", version, about = "Frequency-masked forgery detector: synthesize data, train, refine, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forgery video dataset on disk
    Synth {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Configuration file (`key = value` lines)
        #[arg(long)]
        config: PathBuf,
        /// Inline overrides, e.g. `synth.frames_per_video=4`
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a detector on a dataset's train split
    Train {
        /// Dataset directory (as written by `synth`)
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint file
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset's test split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output report file (JSON)
        #[arg(long)]
        report: PathBuf,
        /// Optional config file; defaults come from the checkpoint's
        /// embedded configuration
        #[arg(long)]
        config: Option<PathBuf>,
        /// Refine a per-video model clone before predicting
        #[arg(long)]
        refine: bool,
        /// Refinement rounds (overrides refine.rounds)
        #[arg(long = "T", value_name = "N")]
        rounds: Option<usize>,
        /// Refinement learning rate (overrides refine.lr)
        #[arg(long = "refine-lr", value_name = "F")]
        refine_lr: Option<f64>,
        /// Reference frame count (overrides refine.reference_frames)
        #[arg(long = "nr", value_name = "N")]
        reference_frames: Option<usize>,
        /// Perturbations to evaluate: comma list, `all`, or `none`
        #[arg(long, value_name = "LIST")]
        perturb: Option<String>,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render a Grad-CAM attention map for one image tensor as a PGM
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image in the tensor format (C x H x W, f32)
        #[arg(long)]
        input: PathBuf,
        /// Output PGM file
        #[arg(long)]
        out: PathBuf,
        /// Binarize at the (1-q) quantile, e.g. 0.10 keeps the top tenth
        #[arg(long = "binarize-top", value_name = "Q")]
        binarize_top: Option<f64>,
    },
}

/// Error wrapper carrying the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TensorIoError> for CliError {
    fn from(e: TensorIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AttentionError> for CliError {
    fn from(e: AttentionError) -> Self {
        match e {
            AttentionError::InvalidClass(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            // shape/config disagreements are configuration problems
            ModelError::InvalidConfig(_) | ModelError::BatchMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::NonPowerOfTwo { .. }
            | SpectralError::CutoffOutOfRange { .. }
            | SpectralError::PatchSizeMismatch { .. }
            | SpectralError::RatioOutOfRange { .. } => CliError::Config(e.to_string()),
            SpectralError::SymmetryViolation { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Diverged { .. } => CliError::Numerical(e.to_string()),
            PipelineError::Spectral(s) => s.into(),
            PipelineError::Model(m) => m.into(),
            PipelineError::Checkpoint(c) => c.into(),
            PipelineError::TensorIo(t) => t.into(),
            PipelineError::MissingReference => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    init_thread_pool();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Cap internal parallelism via ACMF_THREADS (default: machine parallelism).
fn init_thread_pool() {
    if let Ok(value) = std::env::var("ACMF_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                // fails harmlessly if a pool already exists
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { out, config, overrides } => cmd_synth(&out, &config, &overrides),
        Command::Train { data, out, config, overrides } => cmd_train(&data, &out, &config, &overrides),
        Command::Eval {
            ckpt,
            data,
            report,
            config,
            refine,
            rounds,
            refine_lr,
            reference_frames,
            perturb,
            overrides,
        } => cmd_eval(EvalArgs {
            ckpt,
            data,
            report,
            config,
            refine,
            rounds,
            refine_lr,
            reference_frames,
            perturb,
            overrides,
        }),
        Command::Viz { ckpt, input, out, binarize_top } => cmd_viz(&ckpt, &input, &out, binarize_top),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let file_layer = parse_config_text(&text)?;
    let override_layer = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunConfig::resolve(&[file_layer, override_layer])?)
}

fn cmd_synth(out: &Path, config: &Path, overrides: &[String]) -> Result<(), CliError> {
    let rc = load_config(config, overrides)?;
    let dataset = synth_dataset(&rc.synth)?;
    write_dataset(&dataset, out, rc.echo.clone())?;
    println!(
        "wrote {} train and {} test videos to {}",
        dataset.train.len(),
        dataset.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(data: &Path, out: &Path, config: &Path, overrides: &[String]) -> Result<(), CliError> {
    let rc = load_config(config, overrides)?;
    let train = load_split(data, Split::Train)?;
    let outcome = train_mfr_with_progress(&train, &rc.model, &rc.train, rc.echo.clone(), |epoch, loss| {
        println!("epoch={epoch} loss={loss:.6}");
    })?;
    write_atomic(out, &encode_checkpoint(&outcome.checkpoint))?;
    Ok(())
}

struct EvalArgs {
    ckpt: PathBuf,
    data: PathBuf,
    report: PathBuf,
    config: Option<PathBuf>,
    refine: bool,
    rounds: Option<usize>,
    refine_lr: Option<f64>,
    reference_frames: Option<usize>,
    perturb: Option<String>,
    overrides: Vec<String>,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let checkpoint: Checkpoint = load_checkpoint(&args.ckpt)?;
    // configuration base: the checkpoint's embedded echo, then an optional
    // file, then inline overrides and flags
    let mut layers: Vec<Vec<(String, String)>> = Vec::new();
    layers.push(checkpoint.meta.config_echo.clone().into_iter().collect());
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        layers.push(parse_config_text(&text)?);
    }
    let mut flag_layer: Vec<(String, String)> = args
        .overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<_, _>>()?;
    if let Some(t) = args.rounds {
        flag_layer.push(("refine.rounds".into(), t.to_string()));
    }
    if let Some(lr) = args.refine_lr {
        flag_layer.push(("refine.lr".into(), lr.to_string()));
    }
    if let Some(nr) = args.reference_frames {
        flag_layer.push(("refine.reference_frames".into(), nr.to_string()));
    }
    if let Some(p) = &args.perturb {
        flag_layer.push(("eval.perturbations".into(), p.clone()));
    }
    layers.push(flag_layer);
    let rc = RunConfig::resolve(&layers)?;

    if checkpoint.config != rc.model {
        return Err(CliError::Config(format!(
            "checkpoint architecture {:?} is incompatible with the resolved configuration {:?}",
            checkpoint.config, rc.model
        )));
    }

    let model = checkpoint.model();
    let test = load_split(&args.data, Split::Test)?;
    let refine = if args.refine {
        let train = load_split(&args.data, Split::Train)?;
        let reference =
            compute_reference_map(&model, &train, rc.refine.reference_frames, rc.refine.seed)?;
        Some((rc.refine.clone(), reference, train))
    } else {
        None
    };

    let options = EvalOptions {
        refine: refine.as_ref().map(|(cfg, reference, _)| (cfg.clone(), reference.clone())),
        train_for_recompute: refine
            .as_ref()
            .filter(|(cfg, _, _)| cfg.recompute_reference)
            .map(|(_, _, train)| train.clone()),
        perturbations: rc.perturbations.clone(),
        noise_seed: rc.seed,
        config_echo: rc.echo.clone(),
    };
    let report = evaluate(&model, &test, &options)?;

    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    write_atomic(&args.report, &json)?;
    println!(
        "auc={:.6} videos={} wall_clock={:.2}s",
        report.auc, report.video_count, report.wall_clock_seconds
    );
    Ok(())
}

fn cmd_viz(ckpt: &Path, input: &Path, out: &Path, binarize: Option<f64>) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(ckpt)?;
    let image = read_tensor::<f32>(input)?;
    let model = checkpoint.model();
    let mut map = gradcam_map(&model, &image, 1)?;
    if let Some(q) = binarize {
        if !(0.0..=1.0).contains(&q) {
            return Err(CliError::Config(format!("binarize-top quantile {q} outside [0, 1]")));
        }
        map = binarize_top(&map, q);
    }
    write_atomic(out, &encode_pgm(&map))?;
    Ok(())
}

//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computation or data error occurs, 2 for
//! usage and configuration errors, including missing input files.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::aggregation::{
    aggregate, AggregatedTokens, AggregationError, AggregationMethod, MaskwiseIndex, DEFAULT_IOU_MIN,
};
use crate::dataio::{
    load_category_groups, load_embeddings, load_ground_truth, load_predictions, load_proposals,
    load_scene, save_aggregated, DataError, Report, ReportFormat, SceneBundle,
};
use crate::evaluation::{
    ap_evaluate, fixed_confidence_mode, oe_score, reassign_predictions, ApConfig, EvalError,
};
use crate::lifting::{load_field, save_field, FieldAccumulator, LiftConfig, LiftError};
use crate::synth::{generate, SceneSpec, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "oelift", version, about = "Lift 2D mask tokens to 3D, aggregate them per proposal, and score open-ended predictions")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "OELIFT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accumulate per-point token sums and counts over all frames of a scene.
    Lift(LiftArgs),
    /// Reduce the token field to one token matrix per 3D proposal.
    Aggregate(AggregateArgs),
    /// Score labeled predictions against ground truth (OE and AP).
    Eval(EvalArgs),
    /// Write a synthetic scene bundle with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    /// Scene manifest.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output field file.
    #[arg(long)]
    pub out: PathBuf,
    /// Depth tolerance in meters; overrides the manifest.
    #[arg(long)]
    pub tau_depth: Option<f64>,
    /// Single-threaded canonical-order accumulation.
    #[arg(long)]
    pub deterministic: bool,
    /// Accumulate in f64 and round once at the end.
    #[arg(long)]
    pub wide: bool,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Field file from `lift`; not needed for `maskwise`.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Proposal file.
    #[arg(long)]
    pub proposals: PathBuf,
    /// Output token blob; a `.jsonl` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "weighted", value_parser = parse_method)]
    pub method: AggregationMethod,
    /// Scene manifest, required for `maskwise`.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Minimum IoU for a 2D mask to count as a proposal's view (`maskwise`).
    #[arg(long, default_value_t = DEFAULT_IOU_MIN)]
    pub iou_min: f64,
    /// Base seed for `random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Depth tolerance in meters for `maskwise`; overrides the manifest.
    #[arg(long)]
    pub tau_depth: Option<f64>,
    /// Accepted for symmetry with `lift`; aggregation is always reproducible.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, JSON lines.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground truth, JSON lines.
    #[arg(long)]
    pub gt: PathBuf,
    /// Label embeddings, JSON lines.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Head/common/tail category groups, JSON.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Treat every prediction as fully confident.
    #[arg(long)]
    pub fixed_confidence: bool,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    pub format: ReportFormat,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene spec; the built-in five-object scene when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_method(s: &str) -> Result<AggregationMethod, String> {
    s.parse().map_err(|e: AggregationError| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: DataError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Self::Usage(e.to_string())
            }
            DataError::UnknownFormat(_) => Self::Usage(e.to_string()),
            _ => Self::Failure(e.to_string()),
        }
    }
}

impl From<LiftError> for CliError {
    fn from(e: LiftError) -> Self {
        match e {
            LiftError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Failure(e.to_string()),
        }
    }
}

impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> Self {
        match e {
            AggregationError::UnknownMethod(_) | AggregationError::IouMin(_) => Self::Usage(e.to_string()),
            AggregationError::Lift(e) => e.into(),
            _ => Self::Failure(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::Failure(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::Usage(e.to_string())
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Failure(format!("{}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} '{}' does not exist", path.display())))
    }
}

fn lift_config(bundle: &SceneBundle, tau_depth: Option<f64>) -> Result<LiftConfig, CliError> {
    let mut config = bundle.lift_config();
    if let Some(tau) = tau_depth {
        config.tau_depth = tau;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_lift(args: &LiftArgs) -> Result<(), CliError> {
    require_file(&args.scene, "scene manifest")?;
    let mut bundle = load_scene(&args.scene)?;
    let mut config = lift_config(&bundle, args.tau_depth)?;
    config.deterministic = args.deterministic;
    config.wide_accumulator = args.wide;
    let (rows, cols) = bundle.tokens.shape();
    log::info!(
        "lifting {} frames onto {} points (tau_depth {} m, tokens {rows}x{cols})",
        bundle.num_frames(),
        bundle.cloud.len(),
        config.tau_depth
    );
    let cloud = bundle.cloud.clone();
    let mut acc = FieldAccumulator::new(&cloud, rows, cols, &config)?;
    for t in 0..bundle.num_frames() {
        let frame = bundle.load_frame(t)?;
        log::debug!("frame {}: {} masks", frame.id, frame.masks.len());
        acc.add_frame(&frame)?;
    }
    let frames = acc.frames_added();
    let field = acc.finish();
    let touched = field.len();
    let mean_r = if touched == 0 {
        0.0
    } else {
        field.total_count() as f64 / touched as f64
    };
    log::info!("frames processed: {frames}, points touched: {touched}, mean r: {mean_r:.3}");
    create_parent(&args.out)?;
    save_field(&field, &args.out)?;
    Ok(())
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.iou_min) {
        return Err(AggregationError::IouMin(args.iou_min).into());
    }
    require_file(&args.proposals, "proposal file")?;
    let (num_points, proposals) = load_proposals(&args.proposals)?;
    let results: Vec<AggregatedTokens>;
    let shape;
    if args.method == AggregationMethod::Maskwise {
        let scene = args
            .scene
            .as_deref()
            .ok_or_else(|| CliError::Usage("--method maskwise needs --scene".into()))?;
        require_file(scene, "scene manifest")?;
        let mut bundle = load_scene(scene)?;
        if bundle.cloud.len() != num_points {
            return Err(CliError::Failure(format!(
                "proposals index a cloud of {num_points} points but the scene has {}",
                bundle.cloud.len()
            )));
        }
        let config = lift_config(&bundle, args.tau_depth)?;
        shape = bundle.tokens.shape();
        let frames = (0..bundle.num_frames())
            .map(|t| bundle.load_frame(t))
            .collect::<Result<Vec<_>, _>>()?;
        let index = MaskwiseIndex::new(&bundle.cloud, &frames, &config)?;
        results = proposals
            .par_iter()
            .map(|p| index.aggregate(p, args.iou_min))
            .collect::<Result<_, _>>()?;
    } else {
        let field_path = args
            .field
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--method {} needs --field", args.method)))?;
        require_file(field_path, "field file")?;
        let field = load_field(field_path)?;
        if field.num_points() != num_points {
            return Err(CliError::Failure(format!(
                "field covers {} points but proposals index a cloud of {num_points}",
                field.num_points()
            )));
        }
        shape = field.shape();
        results = proposals
            .par_iter()
            .enumerate()
            .map(|(k, p)| {
                let seed = crate::aggregation::split_seed(args.seed, k as u64);
                aggregate(args.method, p, &field, seed)
            })
            .collect::<Result<_, _>>()?;
    }
    let empty = results.iter().filter(|r| r.empty).count();
    log::info!(
        "aggregated {} proposals with {} ({empty} without support)",
        results.len(),
        args.method
    );
    create_parent(&args.out)?;
    save_aggregated(&args.out, shape, &results)?;
    Ok(())
}

/// Builds the evaluation report.
pub fn evaluate_files(args: &EvalArgs) -> Result<Report, CliError> {
    require_file(&args.predictions, "prediction file")?;
    require_file(&args.gt, "ground-truth file")?;
    require_file(&args.embeddings, "embedding file")?;
    let groups = match &args.groups {
        Some(path) => {
            require_file(path, "group file")?;
            Some(load_category_groups(path)?)
        }
        None => None,
    };
    let mut preds = load_predictions(&args.predictions, None)?;
    let gts = load_ground_truth(&args.gt, None)?;
    let table = load_embeddings(&args.embeddings)?;
    if args.fixed_confidence {
        preds = fixed_confidence_mode(&preds);
    }
    let oe = oe_score(&preds, &gts, &table)?;
    let relabeled = reassign_predictions(&preds, &gts, &table)?;
    let ap = ap_evaluate(&relabeled, &gts, &ApConfig::default(), groups.as_ref())?;
    let pred_labels: Vec<&str> = preds.iter().map(|p| p.label.as_str()).collect();
    let confidences: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    let gt_labels: Vec<&str> = gts.iter().map(|g| g.label.as_str()).collect();
    log::info!("OE {:.4}, AP {:.4} over {} ground-truth instances", oe.score, ap.ap, gts.len());
    Ok(Report::new(
        &oe,
        &pred_labels,
        &confidences,
        &gt_labels,
        args.fixed_confidence,
        Some(ap),
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let report = evaluate_files(args)?;
    let text = report.render(args.format);
    match &args.out {
        Some(path) => {
            create_parent(path)?;
            std::fs::write(path, text).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Failure(format!("stdout: {e}"))),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = match &args.spec {
        Some(path) => {
            require_file(path, "scene spec")?;
            SceneSpec::load(path)?
        }
        None => SceneSpec::default_scene(),
    };
    let scene = generate(&spec, args.seed)?;
    let manifest = scene.write_bundle(&args.out)?;
    log::info!(
        "wrote {} points, {} frames and {} objects to {}",
        scene.cloud.len(),
        scene.frames.len(),
        scene.objects.len(),
        manifest.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Failure(format!("failed to start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Lift(a) => cmd_lift(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            if let CliError::Usage(_) = e {
                eprintln!("For usage, try 'oelift --help'.");
            }
            e.exit_code()
        }
    }
}

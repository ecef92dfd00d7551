use std::fmt;
use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use eventcure::io;
use eventcure::pipeline::{self, Method, ModelSet, PipelineError};
use eventcure_core::fusion::FusionConfig;
use eventcure_core::metrics::remap_confusion;
use eventcure_core::predictors::{
    train_image_event, train_importance, train_sequence_event, PredictorError, TrainConfig,
};
use eventcure_core::synth::{generate, SynthConfig, SynthError};

#[derive(Parser)]
#[command(
    name = "eventcure",
    version,
    about = "Album event recognition and image curation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Train one predictor on a manifest's train split.
    Train(TrainArgs),
    /// Run the fusion loop over every album and write per-album results.
    Fuse(FuseArgs),
    /// Score an evaluation method on the test split and write a report CSV.
    Evaluate(EvaluateArgs),
    /// Pick fusion parameters by validation-split accuracy.
    Gridsearch(GridArgs),
    /// Recompute a confusion matrix under a class mapping.
    Remap(RemapArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Manifest output path; feature files land in `features/` next to it.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    albums_per_event: Option<usize>,
    #[arg(long)]
    album_size_min: Option<usize>,
    #[arg(long)]
    album_size_max: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    importance_noise: Option<f64>,
    #[arg(long)]
    feature_noise: Option<f64>,
    #[arg(long)]
    outlier_rate: Option<f64>,
    #[arg(long)]
    ambiguity: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Which predictor to train: image-event, sequence-event, or importance.
    #[arg(long)]
    which: String,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer width; 0 keeps the image model linear.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    reduced_dim: Option<usize>,
    #[arg(long)]
    margin_similar: Option<f64>,
    #[arg(long)]
    margin_different: Option<f64>,
    /// Ranked pairs drawn per album per epoch (importance only).
    #[arg(long, default_value_t = 8)]
    pairs_per_album: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    image_model: PathBuf,
    #[arg(long)]
    sequence_model: PathBuf,
    #[arg(long)]
    importance_model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    mask_fraction: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Per-album results output path (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// One of: cnn-recognition, cnn-lstm, cnn-iterative, cnn-lstm-iterative,
    /// noevent-test, gt-event, random.
    #[arg(long)]
    method: String,
    #[arg(long)]
    image_model: Option<PathBuf>,
    #[arg(long)]
    sequence_model: Option<PathBuf>,
    #[arg(long)]
    importance_model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    mask_fraction: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Cutoff percentages for the curation metrics.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    t_list: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the recognition confusion matrix (JSON).
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    image_model: PathBuf,
    #[arg(long)]
    sequence_model: PathBuf,
    #[arg(long)]
    importance_model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    mask_fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Score table CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RemapArgs {
    /// Confusion matrix JSON produced by `evaluate --confusion`.
    #[arg(long)]
    confusion: PathBuf,
    /// Class mapping JSON: target class names plus one target (or null) per
    /// source class.
    #[arg(long)]
    mapping: PathBuf,
    /// Remapped confusion matrix output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Failure {
        Failure::Data(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Failure {
        match e {
            PipelineError::Config(m) => Failure::Usage(m),
            PipelineError::Data(m) => Failure::Data(m),
            PipelineError::Internal(m) => Failure::Internal(m),
        }
    }
}

fn train_failure(e: PredictorError) -> Failure {
    match e {
        PredictorError::InvalidConfig(_) | PredictorError::InvalidMargins { .. } => {
            Failure::Usage(e.to_string())
        }
        _ => Failure::Data(e.to_string()),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(failure) = run(cli) {
        eprintln!("error: {failure}");
        process::exit(failure.code());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Fuse(args) => cmd_fuse(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
        Cmd::Gridsearch(args) => cmd_gridsearch(args),
        Cmd::Remap(args) => cmd_remap(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &args.config {
        io::load_synth_patch(path)?.apply(&mut cfg);
    }
    let flags = io::SynthPatch {
        events: args.events,
        albums_per_event: args.albums_per_event,
        album_size: match (args.album_size_min, args.album_size_max) {
            (None, None) => None,
            (min, max) => {
                Some((min.unwrap_or(cfg.album_size.0), max.unwrap_or(cfg.album_size.1)))
            }
        },
        feature_dim: args.feature_dim,
        importance_noise: args.importance_noise,
        feature_noise: args.feature_noise,
        outlier_rate: args.outlier_rate,
        ambiguity: args.ambiguity,
        workers: args.workers,
        seed: args.seed,
    };
    flags.apply(&mut cfg);
    let manifest = generate(&cfg).map_err(|e: SynthError| Failure::Usage(e.to_string()))?;
    io::save_manifest(&manifest, &args.out, args.force)?;
    println!("wrote {} albums to {}", manifest.albums.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    if !matches!(args.which.as_str(), "image-event" | "sequence-event" | "importance") {
        return Err(Failure::Usage(format!(
            "unknown predictor `{}`; expected image-event, sequence-event, or importance",
            args.which
        )));
    }
    let manifest = io::load_manifest(&args.manifest)?;
    let mut cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.reduced_dim {
        cfg.reduced_dim = v;
    }
    if let Some(v) = args.margin_similar {
        cfg.margin_similar = v;
    }
    if let Some(v) = args.margin_different {
        cfg.margin_different = v;
    }
    let losses = match args.which.as_str() {
        "image-event" => {
            let run = train_image_event(&manifest, &cfg).map_err(train_failure)?;
            io::save_image_event_model(&args.out, &run.model, args.force)?;
            run.epoch_losses
        }
        "sequence-event" => {
            let run = train_sequence_event(&manifest, &cfg).map_err(train_failure)?;
            io::save_sequence_event_model(&args.out, &run.model, args.force)?;
            run.epoch_losses
        }
        "importance" => {
            let run = train_importance(&manifest, &cfg, args.pairs_per_album)
                .map_err(train_failure)?;
            io::save_importance_model(&args.out, &run.model, args.force)?;
            run.epoch_losses
        }
        _ => unreachable!("checked above"),
    };
    let last = losses.last().copied().unwrap_or(f64::NAN);
    println!("wrote {} model to {} (final epoch loss {last:.6})", args.which, args.out.display());
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<(), Failure> {
    let manifest = io::load_manifest(&args.manifest)?;
    let image = io::load_image_event_model(&args.image_model)?;
    let sequence = io::load_sequence_event_model(&args.sequence_model)?;
    let importance = io::load_importance_model(&args.importance_model)?;
    let cfg = FusionConfig {
        alpha: args.alpha,
        mask_fraction: args.mask_fraction,
        max_iters: args.max_iters,
        tol: args.tol,
    };
    let results = pipeline::fuse_all(&manifest, &image, &sequence, &importance, &cfg)?;
    let converged = results.iter().filter(|(_, r)| r.converged).count();
    let records: Vec<io::FusionRecord> =
        results.into_iter().map(|(id, r)| io::FusionRecord::new(id, r)).collect();
    io::save_fusion_results(&args.out, &records, args.force)?;
    println!(
        "wrote {} fusion results to {} ({converged} converged)",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let method = Method::parse(&args.method).ok_or_else(|| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
        Failure::Usage(format!(
            "unknown method `{}`; expected one of {}",
            args.method,
            known.join(", ")
        ))
    })?;
    let manifest = io::load_manifest(&args.manifest)?;
    let models = ModelSet {
        image: args.image_model.as_deref().map(io::load_image_event_model).transpose()?,
        sequence: args.sequence_model.as_deref().map(io::load_sequence_event_model).transpose()?,
        importance: args.importance_model.as_deref().map(io::load_importance_model).transpose()?,
    };
    let cfg = FusionConfig {
        alpha: args.alpha,
        mask_fraction: args.mask_fraction,
        max_iters: args.max_iters,
        tol: args.tol,
    };
    let evaluation =
        pipeline::evaluate_method(&manifest, &models, method, &cfg, &args.t_list, args.seed)?;
    io::save_report(&args.out, &evaluation.report, args.force)?;
    if let Some(path) = &args.confusion {
        let cm = evaluation.confusion.as_ref().ok_or_else(|| {
            Failure::Usage(format!(
                "method `{}` does not produce a confusion matrix",
                method.as_str()
            ))
        })?;
        io::save_confusion(path, manifest.vocabulary.names(), cm, args.force)?;
    }
    println!("wrote {} report to {}", method.as_str(), args.out.display());
    Ok(())
}

fn cmd_gridsearch(args: GridArgs) -> Result<(), Failure> {
    let manifest = io::load_manifest(&args.manifest)?;
    let image = io::load_image_event_model(&args.image_model)?;
    let sequence = io::load_sequence_event_model(&args.sequence_model)?;
    let importance = io::load_importance_model(&args.importance_model)?;
    let template = FusionConfig { max_iters: args.max_iters, tol: args.tol, ..FusionConfig::default() };
    let outcome = pipeline::grid_search_validation(
        &manifest,
        &image,
        &sequence,
        &importance,
        &args.alphas,
        &args.mask_fractions,
        &template,
    )?;
    io::save_grid_table(&args.out, &outcome, args.force)?;
    let best = outcome
        .table
        .iter()
        .find(|s| s.alpha == outcome.alpha && s.mask_fraction == outcome.mask_fraction)
        .expect("winner is always in the table");
    println!(
        "best alpha={} mask-fraction={} (validation accuracy {:.6}); table at {}",
        outcome.alpha,
        outcome.mask_fraction,
        best.accuracy,
        args.out.display()
    );
    Ok(())
}

fn cmd_remap(args: RemapArgs) -> Result<(), Failure> {
    let (_, cm) = io::load_confusion(&args.confusion)?;
    let (target_classes, mapping) = io::load_mapping(&args.mapping)?;
    let (remapped, accuracy) =
        remap_confusion(&cm, &mapping).map_err(|e| Failure::Data(e.to_string()))?;
    io::save_confusion(&args.out, &target_classes, &remapped, args.force)?;
    println!("wrote remapped confusion to {} (accuracy {accuracy:.6})", args.out.display());
    Ok(())
}

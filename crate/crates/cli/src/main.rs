//! Operator surface for the bone-age stack. Every behavior wraps a library
//! operation; the binary only parses arguments, resolves paths and maps
//! errors to exit codes (0 success, 1 runtime/IO, 2 arguments, 3 divergence).

mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use simba_core::train::csv as report_csv;
use simba_core::{
    evaluate, generate_dataset, load_checkpoint, load_manifest, render_heatmap,
    run_ablation_matrix, save_checkpoint, split_deterministic, Checkpoint, LoadedDataset,
    SimbaModel, StatsError, TrainError,
};

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Args(String),
    #[error("{0}")]
    Io(String),
    #[error("degenerate variance: {0}")]
    Degenerate(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Args(_) => 2,
            CliError::NonFinite(_) => 3,
            _ => 1,
        }
    }
}

fn is_divergence(err: &TrainError) -> bool {
    match err {
        TrainError::NonFiniteGradient { .. } => true,
        TrainError::AblationRun { source, .. } => is_divergence(source),
        TrainError::Model(simba_core::ModelError::NonFiniteGradient) => true,
        _ => false,
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        if is_divergence(&err) {
            CliError::NonFinite(err.to_string())
        } else {
            CliError::Runtime(err.to_string())
        }
    }
}

impl From<StatsError> for CliError {
    fn from(err: StatsError) -> Self {
        match err {
            StatsError::DegenerateVariance { .. } => CliError::Degenerate(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Runtime(err.to_string())
            }
        }
    };
}
runtime_from!(simba_core::DatasetError);
runtime_from!(simba_core::SyntheticError);
runtime_from!(simba_core::HeatmapError);
runtime_from!(simba_core::CheckpointError);
runtime_from!(simba_core::ModelError);

#[derive(Parser)]
#[command(
    name = "simba",
    version,
    about = "Bone age regression with identity-marker fusion on synthetic radiographs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (JSON); defaults are used when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed override (dataset generation seed, or training/init seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Force single-threaded execution for byte-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Directory for reports, histories and checkpoints [default: .]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a known growth law.
    GenData(GenDataArgs),
    /// Train a model and keep the best-on-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest and write per-sample reports.
    Eval(EvalArgs),
    /// Run the five-configuration ablation matrix across seeds.
    Ablate(AblateArgs),
    /// Regress absolute error on relative age from an evaluation report.
    AnalyzeBias(AnalyzeBiasArgs),
    /// Render a record's RoI attention heatmap to an 8-bit PNG.
    RenderHeatmap(RenderHeatmapArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples to generate.
    #[arg(long)]
    n: usize,
    /// Output directory (receives images/ and manifest.json).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also split into train/val/test manifests, e.g. --split 0.7,0.15
    #[arg(long, value_name = "TRAIN,VAL")]
    split: Option<String>,
    /// Seed for the split permutation [default: the generation seed]
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (overrides paths.train_manifest from the config).
    #[arg(long, value_name = "FILE")]
    train_manifest: Option<PathBuf>,
    /// Validation manifest (overrides paths.val_manifest from the config).
    #[arg(long, value_name = "FILE")]
    val_manifest: Option<PathBuf>,
    /// Checkpoint output path [default: <out-dir>/best.smba]
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Manifest with ground-truth bone ages.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Training manifest.
    #[arg(long, value_name = "FILE")]
    train_manifest: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long, value_name = "FILE")]
    val_manifest: Option<PathBuf>,
    /// Comma-separated run seeds, e.g. --seeds 1,2,3
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Override the configured epoch count for every run.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct AnalyzeBiasArgs {
    /// Evaluation report CSV (needs relative_age and abs_error columns).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RenderHeatmapArgs {
    /// Manifest holding the record.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Record id to render.
    #[arg(long)]
    id: String,
    /// Output PNG path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Gaussian sigma in pixels [default: image_size / 16]
    #[arg(long)]
    sigma: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.paths.out_dir = Some(out_dir.clone());
    }
    if let Command::Ablate(args) = &cli.command {
        if let Some(epochs) = args.epochs {
            config.train.epochs = epochs;
        }
    }
    if cli.dump_config {
        print!("{}", config.to_json());
        return Ok(());
    }

    let seed_override = cli.seed;
    let deterministic = cli.deterministic;
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&config, seed_override, &args),
        Command::Train(args) => cmd_train(&config, &args),
        Command::Eval(args) => cmd_eval(&config, &args),
        Command::Ablate(args) => cmd_ablate(&config, deterministic, &args),
        Command::AnalyzeBias(args) => cmd_analyze_bias(&config, &args),
        Command::RenderHeatmap(args) => cmd_render_heatmap(&args),
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn resolve(
    flag: &Option<PathBuf>,
    configured: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::Args(format!("no {what} given (flag or config paths entry)")))
}

fn check_keypoints(
    manifest: &simba_core::Manifest,
    expected: usize,
    what: &str,
) -> Result<(), CliError> {
    let k = manifest.keypoint_count();
    if k != expected {
        return Err(CliError::Runtime(format!(
            "{what} manifest carries {k} keypoints per record but the model expects {expected}"
        )));
    }
    Ok(())
}

fn cmd_gen_data(
    config: &RunConfig,
    seed_override: Option<u64>,
    args: &GenDataArgs,
) -> Result<(), CliError> {
    let seed = seed_override.unwrap_or(config.train.seed);
    let manifest = generate_dataset(args.n, seed, &config.oracle, &args.out)?;
    let manifest_path = args.out.join("manifest.json");
    println!("{}", manifest_path.display());

    if let Some(spec) = &args.split {
        let parts: Vec<&str> = spec.split(',').collect();
        let parse = |s: &str| -> Result<f64, CliError> {
            s.trim()
                .parse()
                .map_err(|_| CliError::Args(format!("bad split fraction {s:?}")))
        };
        if parts.len() != 2 {
            return Err(CliError::Args(format!(
                "--split expects TRAIN,VAL fractions, got {spec:?}"
            )));
        }
        let fractions = (parse(parts[0])?, parse(parts[1])?);
        let split_seed = args.split_seed.unwrap_or(seed);
        let (train, val, test) = split_deterministic(&manifest, split_seed, fractions)?;
        for (m, name) in [
            (&train, "manifest_train.json"),
            (&val, "manifest_val.json"),
            (&test, "manifest_test.json"),
        ] {
            let path = args.out.join(name);
            simba_core::save_manifest(m, &path)?;
            println!("{} ({} records)", path.display(), m.len());
        }
    }
    Ok(())
}

fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let train_path = resolve(&args.train_manifest, &config.paths.train_manifest, "train manifest")?;
    let val_path = resolve(&args.val_manifest, &config.paths.val_manifest, "val manifest")?;
    let train_manifest = load_manifest(&train_path)?;
    let val_manifest = load_manifest(&val_path)?;
    check_keypoints(&train_manifest, config.model.keypoint_count, "train")?;
    check_keypoints(&val_manifest, config.model.keypoint_count, "val")?;

    let sigma = config.model.heatmap_sigma;
    let train_data = LoadedDataset::from_manifest(&train_manifest, sigma)?;
    let val_data = LoadedDataset::from_manifest(&val_manifest, sigma)?;

    let mut model = SimbaModel::<f32>::init(config.model.clone(), config.train.seed)?;
    let result = simba_core::train(&mut model, &train_data, &val_data, &config.train)?;

    let dir = out_dir(config)?;
    let history_path = dir.join("history.csv");
    report_csv::write_history_csv(&history_path, &result.history)?;
    let checkpoint_path = args
        .checkpoint
        .clone()
        .or_else(|| config.paths.checkpoint.clone())
        .unwrap_or_else(|| dir.join("best.smba"));
    save_checkpoint(&result.checkpoint, &checkpoint_path)?;

    match result.checkpoint.meta.best_val_mad {
        Some(mad) => println!(
            "best val MAD: {mad} months (epoch {})",
            result.checkpoint.meta.epoch
        ),
        None => println!("no training epochs ran; checkpoint holds the initialization"),
    }
    println!("checkpoint: {}", checkpoint_path.display());
    println!("history: {}", history_path.display());
    Ok(())
}

fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    let checkpoint_path = resolve(&args.checkpoint, &config.paths.checkpoint, "checkpoint")?;
    let manifest_path = resolve(&args.manifest, &config.paths.val_manifest, "manifest")?;
    let checkpoint: Checkpoint = load_checkpoint(&checkpoint_path)?;
    let sigma = checkpoint.config.heatmap_sigma;
    let expected_k = checkpoint.config.keypoint_count;
    let model = checkpoint.into_model()?;
    let manifest = load_manifest(&manifest_path)?;
    check_keypoints(&manifest, expected_k, "eval")?;
    let data = LoadedDataset::from_manifest(&manifest, sigma)?;
    let report = evaluate(&model, &data)?;

    let dir = out_dir(config)?;
    let report_path = config
        .paths
        .report
        .clone()
        .unwrap_or_else(|| dir.join("report.csv"));
    report_csv::write_report_csv(&report_path, &report)?;
    println!("MAD: {} months", report.mad);
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_ablate(config: &RunConfig, deterministic: bool, args: &AblateArgs) -> Result<(), CliError> {
    let train_path = resolve(&args.train_manifest, &config.paths.train_manifest, "train manifest")?;
    let val_path = resolve(&args.val_manifest, &config.paths.val_manifest, "val manifest")?;
    let train_manifest = load_manifest(&train_path)?;
    let val_manifest = load_manifest(&val_path)?;
    check_keypoints(&train_manifest, config.model.keypoint_count, "train")?;
    check_keypoints(&val_manifest, config.model.keypoint_count, "val")?;
    let sigma = config.model.heatmap_sigma;
    let train_data = LoadedDataset::from_manifest(&train_manifest, sigma)?;
    let val_data = LoadedDataset::from_manifest(&val_manifest, sigma)?;

    let table = run_ablation_matrix(
        &train_data,
        &val_data,
        &config.model,
        &config.train,
        &args.seeds,
        !deterministic,
    )?;

    let dir = out_dir(config)?;
    let rows_path = dir.join("ablation.csv");
    let summary_path = dir.join("ablation_summary.csv");
    report_csv::write_ablation_csv(&rows_path, &table)?;
    report_csv::write_ablation_summary_csv(&summary_path, &table)?;

    println!("gender chrono relative  median_val_mad");
    for (flags, median) in &table.medians {
        println!(
            "{:>6} {:>6} {:>8}  {median}",
            flags.use_gender, flags.use_chrono, flags.use_relative
        );
    }
    println!("rows: {}", rows_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn cmd_analyze_bias(config: &RunConfig, args: &AnalyzeBiasArgs) -> Result<(), CliError> {
    let dir = out_dir(config)?;
    let report_path = args
        .report
        .clone()
        .or_else(|| config.paths.report.clone())
        .unwrap_or_else(|| dir.join("report.csv"));
    let rows = report_csv::read_bias_rows(&report_path)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let stats = simba_core::pearson_ols(&xs, &ys)?;

    report_csv::write_bias_csv(&dir.join("bias.csv"), &rows)?;
    report_csv::write_bias_summary_csv(&dir.join("bias_summary.csv"), &stats)?;
    let svg = simba_core::plot::scatter_with_fit_svg(
        &xs.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>(),
        stats.slope,
        stats.intercept,
        "relative age (months)",
        "absolute error (months)",
        "absolute error vs relative age",
    );
    let svg_path = dir.join("bias_scatter.svg");
    std::fs::write(&svg_path, svg)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", svg_path.display())))?;

    println!("pearson_r: {}", stats.pearson_r);
    println!("slope: {}", stats.slope);
    println!("intercept: {}", stats.intercept);
    println!("scatter: {}", svg_path.display());
    Ok(())
}

fn cmd_render_heatmap(args: &RenderHeatmapArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let record = manifest
        .records
        .iter()
        .find(|r| r.id == args.id)
        .ok_or_else(|| CliError::Args(format!("record {:?} not found in manifest", args.id)))?;
    let sigma = args.sigma.unwrap_or(manifest.image_size as f64 / 16.0);
    let heatmap = render_heatmap(
        &record.keypoints,
        manifest.image_size,
        manifest.image_size,
        sigma,
    )?;
    simba_core::export_heatmap_png(&heatmap, &args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

//! Command-line driver: corpus synthesis, training, evaluation, scoring and
//! gradient checking.

pub mod commands;
pub mod config;
pub mod failure;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use deepquality::dataset::{BinningStrategy, SplitMode};
use deepquality::training::Precision;

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "deepquality", version, about = "No-reference image quality grading with a patch CNN")]
pub struct Cli {
    /// Worker threads (default: the config file's `workers`, else all cores).
    #[arg(long, global = true, env = "DEEPQUALITY_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the graded distortion ladders to a directory of clean images.
    Synth(SynthArgs),
    /// Train the patch network and fit the image aggregator.
    Train(TrainArgs),
    /// Evaluate a model on a labelled dataset.
    Eval(EvalArgs),
    /// Grade a single image.
    Score(ScoreArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Distortion kinds to use, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
}

#[derive(Debug, Args, Default)]
pub struct DatasetArgs {
    /// Corpus manifest written by `synth`.
    #[arg(long, conflicts_with = "csiq_root")]
    pub manifest: Option<PathBuf>,
    /// CSIQ tree containing `dst_imgs/`.
    #[arg(long)]
    pub csiq_root: Option<PathBuf>,
    /// DMOS table (default: `<csiq-root>/dmos.csv`).
    #[arg(long, requires = "csiq_root")]
    pub dmos: Option<PathBuf>,
    #[arg(long)]
    pub allow_partial: bool,
    #[arg(long, value_enum)]
    pub binning: Option<BinningArg>,
    /// Patch-pooling window stride.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Patches kept per image.
    #[arg(long)]
    pub patches_per_image: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BinningArg {
    Quantile,
    Uniform,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    PatchRandom,
    ImageDisjoint,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory of clean images.
    #[arg(long, conflicts_with = "procedural")]
    pub input: Option<PathBuf>,
    /// Generate this many procedural clean images instead of reading --input.
    #[arg(long)]
    pub procedural: Option<usize>,
    /// Side length of procedural images.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, requires = "test_patches")]
    pub train_patches: Option<usize>,
    #[arg(long, requires = "train_patches")]
    pub test_patches: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Conv channel widths, e.g. `16,32,64`.
    #[arg(long, value_delimiter = ',')]
    pub conv_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Do not fit an aggregator; grade images by mean patch scores.
    #[arg(long)]
    pub patch_only: bool,
    /// Use mean and standard deviation of patch scores as aggregator features.
    #[arg(long)]
    pub with_std: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// `split.json` from a training run: evaluate its held-out images only.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Also write per-patch locations, variances and probabilities as CSV.
    #[arg(long)]
    pub per_patch: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub patches_per_image: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check a random subset of this many entries per parameter group.
    #[arg(long)]
    pub max_per_group: Option<usize>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn apply_common(config: &mut RunConfig, common: &CommonArgs) {
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(kinds) = &common.kinds {
        config.distortions.kinds = kinds.clone();
    }
}

fn apply_dataset(config: &mut RunConfig, args: &DatasetArgs) {
    let d = &mut config.dataset;
    if let Some(m) = &args.manifest {
        d.manifest = Some(m.clone());
        d.csiq_root = None;
    }
    if let Some(r) = &args.csiq_root {
        d.csiq_root = Some(r.clone());
        d.manifest = None;
    }
    if let Some(p) = &args.dmos {
        d.dmos_csv = Some(p.clone());
    }
    d.allow_partial |= args.allow_partial;
    if let Some(b) = args.binning {
        d.binning = match b {
            BinningArg::Quantile => BinningStrategy::Quantile,
            BinningArg::Uniform => BinningStrategy::UniformRange,
        };
    }
    if let Some(s) = args.stride {
        config.pooling.stride = s;
    }
    if let Some(n) = args.patches_per_image {
        config.pooling.patches_per_image = n;
    }
}

/// File values overlaid with `train` flags.
pub fn train_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::load(args.common.config.as_deref())?;
    apply_common(&mut c, &args.common);
    apply_dataset(&mut c, &args.dataset);
    if let Some(s) = args.split {
        c.dataset.split_mode = match s {
            SplitArg::PatchRandom => SplitMode::PatchRandom,
            SplitArg::ImageDisjoint => SplitMode::ImageDisjoint,
        };
    }
    if let Some(f) = args.test_fraction {
        c.dataset.test_fraction = f;
        c.dataset.train_patches = None;
        c.dataset.test_patches = None;
    }
    if args.train_patches.is_some() {
        c.dataset.train_patches = args.train_patches;
        c.dataset.test_patches = args.test_patches;
    }
    let t = &mut c.training;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.l2_lambda {
        t.l2_lambda = v;
    }
    if let Some(v) = args.momentum {
        t.momentum = v;
    }
    if let Some(p) = args.precision {
        t.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(ch) = &args.conv_channels {
        c.network.conv_channels = ch
            .as_slice()
            .try_into()
            .map_err(|_| Failure::input(format!("--conv-channels needs three widths, got {ch:?}")))?;
    }
    if let Some(h) = args.hidden {
        c.network.hidden = h;
    }
    c.aggregator.patch_only |= args.patch_only;
    if args.with_std {
        c.aggregator.feature_dim = 2 * deepquality::NUM_GRADES;
    }
    Ok(c)
}

pub fn synth_config(args: &SynthArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::load(args.common.config.as_deref())?;
    apply_common(&mut c, &args.common);
    if let Some(i) = &args.input {
        c.synth.input_dir = Some(i.clone());
        c.synth.procedural_images = 0;
    }
    if let Some(n) = args.procedural {
        c.synth.procedural_images = n;
    }
    if let Some(s) = args.size {
        c.synth.procedural_size = s;
    }
    Ok(c)
}

pub fn eval_config(args: &EvalArgs) -> CliResult<RunConfig> {
    let mut c = RunConfig::load(args.common.config.as_deref())?;
    apply_common(&mut c, &args.common);
    apply_dataset(&mut c, &args.dataset);
    Ok(c)
}

/// Thread count: flag or environment, then config file, then all cores.
pub fn worker_count(flag: Option<usize>, config: Option<usize>) -> usize {
    flag.or(config)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::input(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Synth(args) => {
            let config = synth_config(&args)?;
            let out = with_workers(worker_count(cli.workers, config.workers), || commands::synth::run(&config))??;
            println!("{}", out.manifest.display());
            Ok(0)
        }
        Command::Train(args) => {
            let config = train_config(&args)?;
            let summary = with_workers(worker_count(cli.workers, config.workers), || commands::train::run(&config))??;
            print_json(&summary);
            Ok(0)
        }
        Command::Eval(args) => {
            let config = eval_config(&args)?;
            let request = commands::eval::EvalRequest {
                model: &args.model,
                split: args.split.as_deref(),
            };
            let (report, _) =
                with_workers(worker_count(cli.workers, config.workers), || commands::eval::run(&config, &request))??;
            print_json(&report);
            Ok(0)
        }
        Command::Score(args) => {
            let mut config = RunConfig::load(args.config.as_deref())?;
            if let Some(s) = args.stride {
                config.pooling.stride = s;
            }
            if let Some(n) = args.patches_per_image {
                config.pooling.patches_per_image = n;
            }
            let report = with_workers(worker_count(cli.workers, config.workers), || {
                commands::score::run(&config, &args.model, &args.image, args.per_patch.as_deref())
            })??;
            print_json(&report);
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let report = with_workers(worker_count(cli.workers, None), || {
                commands::gradcheck::run(args.seed, args.max_per_group)
            })??;
            for g in &report.groups {
                eprintln!(
                    "{:<14} {:>5} checked  max rel err {:.3e}  max abs diff {:.3e}  {}",
                    g.name,
                    g.checked,
                    g.max_rel_error,
                    g.max_abs_error,
                    if g.passed { "ok" } else { "FAIL" }
                );
            }
            if let Some(path) = &args.out {
                pipeline::write_json(path, &report)?;
            }
            print_json(&report);
            if report.passed() {
                Ok(0)
            } else {
                let w = report.worst();
                eprintln!(
                    "gradient check failed: worst group {} with relative error {:.3e} (tolerance {:.0e})",
                    w.name, w.max_rel_error, report.tolerance
                );
                Ok(failure::ExitKind::CheckFailed as i32)
            }
        }
    }
}

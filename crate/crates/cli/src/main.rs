//! Batch command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data/processing errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "chirpnet",
    version,
    about = "Bioacoustic classification via metric learning: three-channel Mel features, a multiscale CNN with dynamic-margin triplet training, embedding-space classification and Gaussian open-set rejection"
)]
struct Cli {
    /// Base seed for all random choices (splits, init, sampling, dropout).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Ablation mode: duplicate the Mel channel instead of computing
    /// harmonic/percussive channels.
    #[arg(long, global = true)]
    mel_only: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature store operations.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Stratified train/val/test split of a manifest.
    Split(SplitArgs),
    /// Model training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Open-set rejection models.
    #[command(subcommand)]
    Openset(OpensetCmd),
    /// Classify feature examples with a trained pipeline.
    Classify(ClassifyArgs),
    /// Full evaluation report on the test split.
    Eval(EvalArgs),
    /// Export embeddings as TSV.
    Embed(EmbedArgs),
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Extract three-channel Mel features for every manifest row.
    Extract(ExtractArgs),
    /// Check every feature-store invariant; exits nonzero on violations.
    Verify(StoreArg),
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Run a full store check after extraction.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct StoreArg {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV (example_id,split).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Triplet-loss metric training of the multiscale CNN.
    Metric(TrainMetricArgs),
    /// Cross-entropy training of the softmax variant.
    Baseline(TrainBaselineArgs),
    /// Train the embedding-space MLP classifier.
    Head(TrainHeadArgs),
}

#[derive(Args)]
struct TrainMetricArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    /// Output network checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration training log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainBaselineArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainHeadArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    /// Metric-head network checkpoint.
    #[arg(long)]
    network: PathBuf,
    /// Output MLP checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum OpensetCmd {
    /// Fit per-class Gaussian distance models for rejection.
    Fit(OpensetFitArgs),
}

#[derive(Args)]
struct OpensetFitArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    network: PathBuf,
    /// Output JSON file of per-class Gaussians.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    mlp: PathBuf,
    /// Gaussian models for rejection (required with --reject).
    #[arg(long)]
    gaussians: Option<PathBuf>,
    /// Reject out-of-set examples instead of force-labeling them.
    #[arg(long)]
    reject: bool,
    /// Restrict to one split of a split assignment.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Output CSV (example_id,label,probability).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    mlp: PathBuf,
    #[arg(long)]
    gaussians: Option<PathBuf>,
    #[arg(long)]
    reject: bool,
    /// Feature store of out-of-set examples for rejection accuracy.
    #[arg(long)]
    outlier_store: Option<PathBuf>,
    /// Output report (plain text).
    #[arg(long)]
    report: PathBuf,
    /// Optional confusion-matrix CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    network: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Restrict to one split (train|val|test).
    #[arg(long)]
    split: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let ctx = commands::Context::new(cli.seed, cli.config.as_deref(), cli.mel_only)?;
    match cli.command {
        Command::Features(FeaturesCmd::Extract(a)) => {
            commands::features_extract(&ctx, &a.manifest, &a.store, a.verify)
        }
        Command::Features(FeaturesCmd::Verify(a)) => commands::features_verify(&a.store),
        Command::Split(a) => commands::split(&ctx, &a.manifest, &a.out),
        Command::Train(TrainCmd::Metric(a)) => {
            commands::train_metric(&ctx, &a.store, &a.splits, &a.out, a.log.as_deref(), a.epochs)
        }
        Command::Train(TrainCmd::Baseline(a)) => {
            commands::train_baseline(&ctx, &a.store, &a.splits, &a.out, a.log.as_deref(), a.epochs)
        }
        Command::Train(TrainCmd::Head(a)) => {
            commands::train_head(&ctx, &a.store, &a.splits, &a.network, &a.out)
        }
        Command::Openset(OpensetCmd::Fit(a)) => {
            commands::openset_fit(&ctx, &a.store, &a.splits, &a.network, &a.out)
        }
        Command::Classify(a) => commands::classify(
            &ctx,
            &a.store,
            &a.network,
            &a.mlp,
            a.gaussians.as_deref(),
            a.reject,
            a.splits.as_deref(),
            a.split.as_deref(),
            &a.out,
        ),
        Command::Eval(a) => commands::eval(
            &ctx,
            &a.store,
            &a.splits,
            &a.network,
            &a.mlp,
            a.gaussians.as_deref(),
            a.reject,
            a.outlier_store.as_deref(),
            &a.report,
            a.confusion.as_deref(),
        ),
        Command::Embed(a) => commands::embed(
            &ctx,
            &a.store,
            &a.network,
            &a.out,
            a.splits.as_deref(),
            a.split.as_deref(),
        ),
    }
}

//! `jointreg`: corpus generation, training, registration, completion export and
//! experiment reports from one binary.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointreg::eval::ExperimentKind;

#[derive(Parser, Debug)]
#[command(name = "jointreg", version, about = "Joint shape completion and partial rigid registration")]
struct Cli {
    /// Root under which commands create their default output directories.
    #[arg(long, global = true, env = "JOINTREG_OUT", default_value = "runs")]
    out_root: PathBuf,

    /// Upper bound on worker threads. Defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Single-threaded, no timestamps: reruns produce identical bytes.
    #[arg(long, global = true)]
    reference: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural corpus of registration pairs.
    Generate(GenerateArgs),
    /// Train both decoders and the per-target latent codes on a corpus.
    Train(TrainArgs),
    /// Register one pair by optimizing a fresh latent code.
    Register(RegisterArgs),
    /// Optimize a latent code for one pair and export the completed target.
    Complete(CompleteArgs),
    /// Run one of the evaluation experiments and write its report.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Corpus config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: <out-root>/corpus].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Points sampled per source and full target.
    #[arg(long)]
    points: Option<usize>,
    /// Points kept in the partial target.
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    transforms_per_shape: Option<usize>,
    /// Add clipped Gaussian noise (std 0.01, clip 0.05) to both clouds.
    #[arg(long)]
    noise: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory written by `generate`.
    #[arg(long)]
    corpus: PathBuf,
    /// Training config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: <out-root>/train].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from this checkpoint; its config is used and only --epochs applies.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Weight of the completion loss.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_t: Option<f64>,
    #[arg(long)]
    sigma_prior: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_latent: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Rewrite the checkpoint every N optimizer steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct InferArgs {
    /// Inference config JSON; otherwise loss settings come from the checkpoint.
    #[arg(long)]
    infer_config: Option<PathBuf>,
    /// Adam steps on the latent code.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the completion loss during inference.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma_t: Option<f64>,
    #[arg(long)]
    sigma_prior: Option<f64>,
    /// Latent initializations tried; the lowest final loss wins.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long)]
    infer_seed: Option<u64>,
    /// Distance samples drawn per step instead of all of them.
    #[arg(long)]
    sdf_per_step: Option<usize>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair directory holding source.ply, target_partial.ply and sdf_samples.csv.
    #[arg(long)]
    pair: PathBuf,
    /// Output directory [default: <out-root>/register].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated steps at which to write the aligned source.
    #[arg(long, value_delimiter = ',')]
    snapshot_steps: Vec<usize>,
    /// Optimize completion first, then register to the extracted surface.
    #[arg(long)]
    two_step: bool,
    #[command(flatten)]
    infer: InferArgs,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pair: PathBuf,
    /// Output directory [default: <out-root>/complete].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid cells per axis for surface extraction.
    #[arg(long)]
    grid_res: Option<usize>,
    /// Cells with predicted distance below this are kept.
    #[arg(long)]
    iso_eps: Option<f64>,
    #[command(flatten)]
    infer: InferArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_parser = parse_experiment)]
    experiment: ExperimentKind,
    /// Trained checkpoint; not needed with --oracle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Checkpoint trained with lambda = 0, for the ablation.
    #[arg(long)]
    lambda0_checkpoint: Option<PathBuf>,
    /// Corpus whose shapes and pair settings define the evaluation pairs.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Experiment config JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: <out-root>/eval-<experiment>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of fresh evaluation pairs.
    #[arg(long)]
    count: Option<usize>,
    /// Seed of the evaluation pairs.
    #[arg(long)]
    seed: Option<u64>,
    /// Add an ICP row over the same pairs.
    #[arg(long, value_parser = ["icp"])]
    baseline: Option<String>,
    /// Use ground truth as the prediction; checks the harness itself.
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    infer: InferArgs,
}

fn parse_experiment(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: jointreg::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

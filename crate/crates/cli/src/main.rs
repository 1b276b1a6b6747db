//! `edgediff`: dataset generation, training, sampling, and evaluation for
//! joint node/edge-attributed graph diffusion.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 usage error,
//! 2 IO error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{RenderFormat, Suite};
use config::DatasetKind;
use edgediff::EdgeDiffError;

#[derive(Parser)]
#[command(
    name = "edgediff",
    version,
    about = "Score-based diffusion over graphs with multi-dimensional edge attributes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory (train/test JSONL + metadata).
    GenData {
        /// Which generator to run.
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        /// Total number of graphs before the 80/20 split.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a score network on a dataset directory.
    Train {
        /// JSON run config; omitted sections use the dataset defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints, the loss log, and the
        /// resolved config.
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint, continuing its epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write a checkpoint every this many epochs.
        #[arg(long, default_value_t = 100)]
        ckpt_every: usize,
    },
    /// Sample graphs from a trained checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of graphs to generate.
        #[arg(long)]
        num: usize,
        /// Reverse-time integration steps.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Langevin corrector signal-to-noise ratio.
        #[arg(long, default_value_t = 0.05)]
        snr: f64,
        /// Corrector step-size multiplier.
        #[arg(long, default_value_t = 0.7)]
        scale_eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
        /// Nodes per sample; defaults to the count recorded in the
        /// checkpoint.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Evaluate generated graphs against a reference dataset.
    Eval {
        /// Reference dataset directory (the train split is the baseline).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Generated graphs (JSONL).
        #[arg(long)]
        gen: PathBuf,
        /// Metric suite to run.
        #[arg(long, value_enum)]
        suite: Suite,
        /// Report JSON path; the table also prints to stdout.
        #[arg(long)]
        out: PathBuf,
        /// Tolerance for the MDP transition-value comparisons.
        #[arg(long, default_value_t = 0.01)]
        mdp_eps: f64,
        /// Gaussian kernel bandwidth for the MMD statistics.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Render a 5x5 maze graph as text glyphs or SVG on stdout.
    RenderMaze {
        /// JSONL file of graphs.
        #[arg(long = "in")]
        input: PathBuf,
        /// Which graph in the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = RenderFormat::Text)]
        format: RenderFormat,
    },
    /// Print the fully resolved run configuration as JSON.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        dataset: Option<DatasetKind>,
    },
}

fn dispatch(cli: Cli) -> edgediff::Result<()> {
    match cli.cmd {
        Cmd::GenData {
            dataset,
            count,
            seed,
            out,
        } => commands::gen_data(dataset, count, seed, &out),
        Cmd::Train {
            config,
            data,
            out,
            resume,
            ckpt_every,
        } => commands::train(config.as_deref(), &data, &out, resume.as_deref(), ckpt_every),
        Cmd::Sample {
            ckpt,
            num,
            steps,
            snr,
            scale_eps,
            seed,
            out,
            nodes,
        } => commands::sample(&ckpt, num, steps, snr, scale_eps, seed, &out, nodes),
        Cmd::Eval {
            reference,
            gen,
            suite,
            out,
            mdp_eps,
            sigma,
        } => commands::eval(&reference, &gen, suite, &out, mdp_eps, sigma),
        Cmd::RenderMaze {
            input,
            index,
            format,
        } => commands::render_maze(&input, index, format),
        Cmd::PrintConfig { config, dataset } => {
            commands::print_config(config.as_deref(), dataset)
        }
    }
}

fn exit_code(err: &EdgeDiffError) -> i32 {
    match err {
        EdgeDiffError::Io(_) => 2,
        EdgeDiffError::Numerical(_) => 3,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let requested = matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if requested { 0 } else { 1 });
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

//! Command-line front end: generate illusions, verify views, evaluate
//! outputs, build prompt datasets, render view animations.

pub mod commands;
pub mod config;
pub mod error;
pub mod png;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use anagram_core::guidance::Reduction;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "anagram", version, about = "Multi-view diffusion illusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an image that reads differently under each view.
    Generate(GenerateArgs),
    /// Check round-trip, linearity, orthogonality and noise preservation of a view.
    VerifyView(VerifyArgs),
    /// Score generated images with alignment and concealment metrics.
    Eval(EvalArgs),
    /// Write a prompt-pair file.
    Dataset(DatasetArgs),
    /// Render a PNG sequence morphing an image into its view.
    Frames(FramesArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `analytic`, `remote` or `remote:<url>`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long, value_parser = parse_reduction)]
    pub reduction: Option<Reduction>,
    #[arg(long)]
    pub allow_broken: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_reduction(s: &str) -> Result<Reduction, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// View specification, e.g. `flip:v`, `rotate:90+negate`, `perm:file.txt`.
    pub spec: String,
    #[arg(long, default_value = "3x8x8")]
    pub dims: String,
    /// Noise certification sample count.
    #[arg(long, short = 'n', default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random tensors for the round-trip and linearity checks.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = anagram_core::view::DEFAULT_DENSE_CAP)]
    pub dense_cap: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of generated runs (or images named by `--records`).
    #[arg(long)]
    pub images: PathBuf,
    /// Record file; without it every `manifest.toml` under `--images` is used.
    #[arg(long, alias = "prompts")]
    pub records: Option<PathBuf>,
    /// `toy`, `constant`, `remote` or `remote:<url>`.
    #[arg(long, default_value = "toy")]
    pub embedder: String,
    #[arg(long, default_value_t = anagram_core::metrics::DEFAULT_TEMPERATURE)]
    pub tau: f64,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Cifar,
    Sampled,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    pub kind: DatasetKind,
    /// One style per line (sampled only).
    #[arg(long)]
    pub styles: Option<PathBuf>,
    /// One subject per line (sampled only).
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of pairs; defaults to every combination.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value = "pairs.toml")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    /// Tensor (`.nten`) or PNG.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub view: String,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value = "frames")]
    pub out: PathBuf,
}

/// Runs a parsed command; the error carries its exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate::run(&a).map(|_| ()),
        Command::VerifyView(a) => commands::verify::run(&a),
        Command::Eval(a) => commands::eval::run(&a).map(|_| ()),
        Command::Dataset(a) => commands::dataset::run(&a),
        Command::Frames(a) => commands::frames::run(&a).map(|_| ()),
    }
}

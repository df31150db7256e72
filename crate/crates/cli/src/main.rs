//! `vlkit`: batch front end for the unified-vocabulary toolkit.

mod codec;
mod config;
mod decode;
mod eval;
mod io;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vlkit_core::depth::QuantSpec;
use vlkit_core::UnifiedVocab;

use config::FileConfig;
use io::Format;

#[derive(Debug, Parser)]
#[command(
    name = "vlkit",
    version,
    about = "Encode, decode, evaluate and train on a unified token vocabulary"
)]
struct Cli {
    /// Config file (versioned `key: value` text).
    #[arg(long, global = true, env = "YVL_CONFIG")]
    config: Option<PathBuf>,
    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Worker threads for item-level parallelism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Vocabulary layout.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Serialize JSON-line records into a structured token string.
    Emit(codec::EmitArgs),
    /// Parse a structured token string into JSON-line records.
    Parse(codec::ParseArgs),
    /// Run-length codec for label maps.
    #[command(subcommand)]
    Rle(codec::RleCmd),
    /// Depth quantization.
    #[command(subcommand)]
    Depth(codec::DepthCmd),
    /// Dense maps from vision-token logits.
    #[command(subcommand)]
    Decode(decode::DecodeCmd),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(eval::MetricsCmd),
    /// Reward for one prediction against its ground truth.
    Reward(eval::RewardArgs),
    /// Rollout-group utilities.
    #[command(subcommand)]
    Rollout(eval::RolloutCmd),
    /// Fit `loss = a * compute^-alpha` to measured points.
    FitScaling(eval::FitArgs),
    /// Toy model training.
    #[command(subcommand)]
    Train(train::TrainCmd),
}

#[derive(Debug, Subcommand)]
enum VocabCmd {
    /// Write the layout manifest.
    Build {
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Vocabulary selection shared by commands that map names to token ids.
#[derive(Debug, Clone, Args, Default)]
pub struct VocabArgs {
    /// Load the layout from a manifest instead of building it.
    #[arg(long, conflicts_with_all = ["text_vocab_size", "image_codes", "coords_per_axis", "depth_bins"])]
    vocab: Option<PathBuf>,
    #[arg(long)]
    text_vocab_size: Option<usize>,
    #[arg(long)]
    image_codes: Option<usize>,
    #[arg(long)]
    coords_per_axis: Option<usize>,
    #[arg(long)]
    depth_bins: Option<usize>,
}

/// Global settings after merging the config file.
pub struct Ctx {
    pub file: FileConfig,
    pub format: Format,
    pub jobs: usize,
    pub seed: u64,
}

impl Ctx {
    pub fn vocab(&self, args: &VocabArgs) -> Result<UnifiedVocab> {
        if let Some(path) = &args.vocab {
            let text = io::read_text(path)?;
            return UnifiedVocab::from_manifest(&text)
                .with_context(|| format!("loading manifest {}", path.display()));
        }
        let mut cfg = self.file.vocab_config();
        if let Some(v) = args.text_vocab_size {
            cfg.text_vocab_size = v;
        }
        if let Some(v) = args.image_codes {
            cfg.image_codebook_size = v;
        }
        if let Some(v) = args.coords_per_axis {
            cfg.coords_per_axis = v;
        }
        if let Some(v) = args.depth_bins {
            cfg.depth_bins = v;
        }
        Ok(UnifiedVocab::build(cfg)?)
    }

    /// Flag first, then the spec carried by the data, then the config file.
    pub fn depth_spec(&self, flag: Option<&str>, embedded: Option<QuantSpec>) -> Result<QuantSpec> {
        if let Some(s) = flag {
            return config::parse_spec(s);
        }
        embedded
            .or(self.file.depth_spec)
            .context("no depth spec: pass --spec, add a header line, or set depth_spec in the config")
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx { file, format: cli.format, jobs: cli.jobs as usize, seed: cli.seed };
    let out = match cli.command {
        Command::Vocab(VocabCmd::Build { vocab, output }) => {
            let v = ctx.vocab(&vocab)?;
            let mut out = io::Outputs::new();
            out.add(output.as_deref(), v.manifest());
            out
        }
        Command::Emit(a) => codec::emit(&ctx, a)?,
        Command::Parse(a) => codec::parse(&ctx, a)?,
        Command::Rle(c) => codec::rle(c)?,
        Command::Depth(c) => codec::depth(&ctx, c)?,
        Command::Decode(c) => decode::run(&ctx, c)?,
        Command::Metrics(c) => eval::metrics(&ctx, c)?,
        Command::Reward(a) => eval::reward(&ctx, a)?,
        Command::Rollout(c) => eval::rollout(&ctx, c)?,
        Command::FitScaling(a) => eval::fit(&ctx, a)?,
        Command::Train(c) => train::run(&ctx, c)?,
    };
    out.commit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vlkit: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use vlkit_core::decode::{
    decode_depth, decode_semseg, depth_bin_slice, fg_bg_slice, grounding_then_segment, DecodeConfig,
    GroundingConfig, LogitTensor,
};
use vlkit_core::UnifiedVocab;

use crate::codec::{parse_box, parse_dims};
use crate::io::{par_map, read_bytes, Outputs};
use crate::{Ctx, VocabArgs};

#[derive(Debug, Subcommand)]
pub enum DecodeCmd {
    /// Category label map from logits over the category-name tokens.
    Semseg(SemsegArgs),
    /// Metric depth map from logits over the depth-bin tokens.
    Depth(DepthArgs),
    /// Binary mask for a grounded box from `[BG, FG]` logits over its crop.
    Refseg(RefsegArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Logit tensor files; several inputs are decoded independently.
    #[arg(long, required = true, num_args = 1..)]
    logits: Vec<PathBuf>,
    /// Token grid as HxW.
    #[arg(long, value_parser = parse_dims)]
    grid: (usize, usize),
    /// Output size as HxW.
    #[arg(long, value_parser = parse_dims)]
    size: (usize, usize),
    /// Output file, or a directory when several logit files are given.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
}

#[derive(Debug, Args)]
pub struct SemsegArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated category names, in label order.
    #[arg(long, value_delimiter = ',', required = true)]
    cats: Vec<String>,
    /// Softmax temperature over categories.
    #[arg(long)]
    temperature: Option<f64>,
    /// Score categories with a sigmoid against a constant background; background pixels get label C.
    #[arg(long)]
    background: bool,
    #[arg(long, default_value_t = DecodeConfig::default().background_scale)]
    background_scale: f64,
    #[arg(long, default_value_t = DecodeConfig::default().background_score)]
    background_score: f64,
}

#[derive(Debug, Args)]
pub struct DepthArgs {
    #[command(flatten)]
    common: Common,
    /// Builtin name or `scheme d_min d_max bins`.
    #[arg(long)]
    spec: Option<String>,
}

#[derive(Debug, Args)]
pub struct RefsegArgs {
    #[command(flatten)]
    common: Common,
    /// Grounded box, `x1,y1,x2,y2` or a `<box>` token string.
    #[arg(long = "box")]
    bbox: String,
    #[arg(long, default_value_t = GroundingConfig::default().pad_ratio)]
    pad_ratio: f64,
    #[arg(long, default_value_t = GroundingConfig::default().shorter_side)]
    shorter_side: u32,
}

fn read_logits(path: &Path) -> Result<LogitTensor> {
    LogitTensor::read_from(read_bytes(path)?.as_slice()).with_context(|| format!("in {}", path.display()))
}

/// Narrows a full-vocabulary tensor to the columns a decoder expects.
fn narrow(
    z: LogitTensor,
    expected: usize,
    vocab: &UnifiedVocab,
    slice: fn(&LogitTensor, &UnifiedVocab) -> Result<LogitTensor, vlkit_core::decode::DecodeError>,
) -> Result<LogitTensor> {
    if z.columns() == expected {
        Ok(z)
    } else if z.columns() == vocab.total_size() {
        Ok(slice(&z, vocab)?)
    } else {
        bail!(
            "{} logit columns: expected {expected} or the full vocabulary of {}",
            z.columns(),
            vocab.total_size()
        )
    }
}

fn route(common: &Common, extension: &str, results: Vec<String>, out: &mut Outputs) -> Result<()> {
    if results.len() == 1 {
        out.add(common.output.as_deref(), results.into_iter().next().expect("one result"));
        return Ok(());
    }
    let dir =
        common.output.as_deref().context("--output must name a directory when decoding several files")?;
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    for (src, text) in common.logits.iter().zip(results) {
        let stem = src.file_stem().context("logit path has no file name")?;
        out.add(Some(&dir.join(stem).with_extension(extension)), text);
    }
    Ok(())
}

pub fn run(ctx: &Ctx, cmd: DecodeCmd) -> Result<Outputs> {
    let mut out = Outputs::new();
    match cmd {
        DecodeCmd::Semseg(a) => {
            let vocab = ctx.vocab(&a.common.vocab)?;
            let cats: Vec<_> = a.cats.iter().map(|c| vocab.category_token_ids(c.trim()).as_set()).collect();
            let cfg = DecodeConfig {
                temperature: a.temperature,
                background_mode: a.background,
                background_scale: a.background_scale,
                background_score: a.background_score,
            };
            let maps = par_map(ctx.jobs, &a.common.logits, |p| {
                let z = read_logits(p)?;
                let map = decode_semseg(&z, &cats, &cfg, a.common.grid, a.common.size)
                    .with_context(|| format!("decoding {}", p.display()))?;
                Ok(map.to_text())
            })?;
            route(&a.common, "map", maps, &mut out)?;
        }
        DecodeCmd::Depth(a) => {
            let vocab = ctx.vocab(&a.common.vocab)?;
            let spec = ctx.depth_spec(a.spec.as_deref(), None)?;
            let maps = par_map(ctx.jobs, &a.common.logits, |p| {
                let z = narrow(read_logits(p)?, spec.bins as usize, &vocab, depth_bin_slice)?;
                let map = decode_depth(&z, &spec, a.common.grid, a.common.size)
                    .with_context(|| format!("decoding {}", p.display()))?;
                Ok(map.to_text(Some(&spec)))
            })?;
            route(&a.common, "depth", maps, &mut out)?;
        }
        DecodeCmd::Refseg(a) => {
            let vocab = ctx.vocab(&a.common.vocab)?;
            let bbox = parse_box(&a.bbox, &vocab)?;
            let cfg = GroundingConfig { pad_ratio: a.pad_ratio, shorter_side: a.shorter_side };
            let maps = par_map(ctx.jobs, &a.common.logits, |p| {
                let z = narrow(read_logits(p)?, 2, &vocab, fg_bg_slice)?;
                let map = grounding_then_segment(&bbox, &z, a.common.grid, a.common.size, &cfg)
                    .with_context(|| format!("decoding {}", p.display()))?;
                Ok(map.to_text())
            })?;
            route(&a.common, "map", maps, &mut out)?;
        }
    }
    Ok(out)
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use vlkit_core::depth::{dequantize, quantize, DepthMap};
use vlkit_core::grammar::{
    emit_string, extract_structured, parse_records, parse_structured, records_from_value, value_from_records,
    EmitMode, StructuredKind,
};
use vlkit_core::mask::{rle_decode, rle_encode, unwrap_mask, wrap_mask, LabelMap};

use crate::io::{read_text, Outputs};
use crate::{Ctx, VocabArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    #[value(alias = "box")]
    Boxes,
    #[value(alias = "det")]
    Detections,
    #[value(alias = "polygon")]
    Poly,
    #[value(alias = "poses")]
    Pose,
}

impl From<Kind> for StructuredKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Boxes => StructuredKind::Box,
            Kind::Detections => StructuredKind::Detections,
            Kind::Poly => StructuredKind::Outline,
            Kind::Pose => StructuredKind::Poses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Mode {
    /// Reject coordinates outside the vocabulary.
    #[default]
    Strict,
    /// Clamp coordinates to the last coordinate token.
    Clamp,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// JSON-line records (`-` for stdin).
    #[arg(default_value = "-")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Strict)]
    mode: Mode,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// File holding the token string; stdin when omitted or `-`.
    #[arg(conflicts_with = "text")]
    input: Option<PathBuf>,
    /// Token string given inline.
    #[arg(long)]
    text: Option<String>,
    /// Take the first value embedded in surrounding free text.
    #[arg(long)]
    extract: bool,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RleCmd {
    /// Label map file to `H W` plus one run-length line.
    Encode {
        input: PathBuf,
        /// Wrap the runs in `<mask>` tags.
        #[arg(long)]
        wrap: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run-length file back to a label map file.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DepthCmd {
    /// Depth map file to a bin label map.
    Quantize {
        input: PathBuf,
        /// Builtin name or `scheme d_min d_max bins`; overrides the file header.
        #[arg(long)]
        spec: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Bin label map back to bin-centre depths.
    Dequantize {
        input: PathBuf,
        #[arg(long)]
        spec: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

pub fn emit(ctx: &Ctx, a: EmitArgs) -> Result<Outputs> {
    let vocab = ctx.vocab(&a.vocab)?;
    let records = parse_records(&read_text(&a.input)?)?;
    let value = value_from_records(a.kind.into(), &records)?;
    let mode = match a.mode {
        Mode::Strict => EmitMode::Strict,
        Mode::Clamp => EmitMode::Clamp,
    };
    let mut out = Outputs::new();
    out.add(a.output.as_deref(), emit_string(&value, &vocab, mode)? + "\n");
    Ok(out)
}

pub fn parse(ctx: &Ctx, a: ParseArgs) -> Result<Outputs> {
    let vocab = ctx.vocab(&a.vocab)?;
    let text = match (&a.text, &a.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => read_text(p)?,
        (None, None) => read_text(Path::new("-"))?,
    };
    let ids = vocab.tokenize(text.trim_end_matches(['\n', '\r']));
    let kind = a.kind.into();
    let value =
        if a.extract { extract_structured(&ids, kind, &vocab) } else { parse_structured(&ids, kind, &vocab) }
            .context("parsing token string")?;
    let lines: String = records_from_value(&value).iter().map(|r| r.to_line() + "\n").collect();
    let mut out = Outputs::new();
    out.add(a.output.as_deref(), lines);
    Ok(out)
}

pub fn rle(cmd: RleCmd) -> Result<Outputs> {
    let mut out = Outputs::new();
    match cmd {
        RleCmd::Encode { input, wrap, output } => {
            let map = LabelMap::from_text(&read_text(&input)?)
                .with_context(|| format!("in {}", input.display()))?;
            let runs = rle_encode(&map);
            let runs = if wrap { wrap_mask(&runs) } else { runs };
            out.add(output.as_deref(), format!("{} {}\n{runs}\n", map.height(), map.width()));
        }
        RleCmd::Decode { input, output } => {
            let text = read_text(&input)?;
            let mut lines = text.lines();
            let header = lines.next().unwrap_or_default();
            let dims: Vec<usize> = header
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .with_context(|| format!("{}: bad header {header:?}", input.display()))?;
            let [h, w] = dims[..] else {
                bail!("{}: expected `H W` header, got {header:?}", input.display());
            };
            let body = lines.next().unwrap_or_default().trim();
            if lines.any(|l| !l.trim().is_empty()) {
                bail!("{}: unexpected lines after the runs", input.display());
            }
            let runs = if body.starts_with('<') {
                unwrap_mask(body).context("malformed <mask> wrapper")?
            } else {
                body
            };
            let map = rle_decode(runs, h, w).with_context(|| format!("in {}", input.display()))?;
            out.add(output.as_deref(), map.to_text());
        }
    }
    Ok(out)
}

pub fn depth(ctx: &Ctx, cmd: DepthCmd) -> Result<Outputs> {
    let mut out = Outputs::new();
    match cmd {
        DepthCmd::Quantize { input, spec, output } => {
            let (map, embedded) = DepthMap::from_text(&read_text(&input)?)
                .with_context(|| format!("in {}", input.display()))?;
            let spec = ctx.depth_spec(spec.as_deref(), embedded)?;
            out.add(output.as_deref(), quantize(&map, &spec).to_text());
        }
        DepthCmd::Dequantize { input, spec, output } => {
            let labels = LabelMap::from_text(&read_text(&input)?)
                .with_context(|| format!("in {}", input.display()))?;
            let spec = ctx.depth_spec(spec.as_deref(), None)?;
            let map = dequantize(&labels, &spec)?;
            out.add(output.as_deref(), map.to_text(Some(&spec)));
        }
    }
    Ok(out)
}

/// `HxW`, as in `--grid 3x3`.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad dimension {t:?} in {s:?}"));
    Ok((n(h)?, n(w)?))
}

/// A box as `x1,y1,x2,y2` or as a `<box>...</box>` token string.
pub fn parse_box(s: &str, vocab: &vlkit_core::UnifiedVocab) -> Result<vlkit_core::grammar::BoundingBox> {
    use vlkit_core::grammar::{parse_str, BoundingBox, StructuredValue};
    let s = s.trim();
    if s.starts_with('<') {
        return match parse_str(s, StructuredKind::Box, vocab).with_context(|| format!("parsing box {s:?}"))? {
            StructuredValue::Box(b) => Ok(b),
            _ => unreachable!("box parser yields boxes"),
        };
    }
    let v: Vec<u32> = s
        .split(',')
        .map(|t| t.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad box {s:?}, expected x1,y1,x2,y2"))?;
    let [x1, y1, x2, y2] = v[..] else {
        bail!("bad box {s:?}, expected four coordinates");
    };
    Ok(BoundingBox::new(x1, y1, x2, y2)?)
}

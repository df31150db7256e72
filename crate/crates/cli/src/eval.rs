use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use vlkit_core::depth::DepthMap;
use vlkit_core::grammar::{
    parse_records, parse_str, value_from_records, PoseInstance, StructuredKind, StructuredRecord,
    StructuredValue,
};
use vlkit_core::mask::LabelMap;
use vlkit_core::metrics::{
    box_iou, ciou, dapo_objective, delta1, filter_rollout_groups, fit_power_law, map_coco,
    match_pose_by_center, miou, parse_count_answer, pckh, task_reward, FilterConfig, GroundingMode,
    LabeledBox, Payload, RewardConfig, RolloutGroup, ScoredBox, Task,
};
use vlkit_core::UnifiedVocab;

use crate::codec::{parse_box, parse_dims};
use crate::io::{par_map, read_text, Outputs, Report};
use crate::{Ctx, VocabArgs};

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// IoU of two boxes.
    Iou {
        /// `x1,y1,x2,y2` or a `<box>` token string.
        #[arg(long)]
        pred: String,
        #[arg(long)]
        gt: String,
        #[command(flatten)]
        vocab: VocabArgs,
    },
    /// COCO-style mAP over JSON-line detections grouped by their `image` field.
    Map {
        /// Predicted records; each needs `category`, `box` and `score`.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth records; each needs `category` and `box`.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Mean IoU over the classes present in each ground-truth label map.
    Miou {
        #[command(flatten)]
        pairs: Pairs,
        /// Number of classes; labels must be below it.
        #[arg(long)]
        classes: u32,
        /// Ground-truth label excluded from scoring.
        #[arg(long)]
        ignore: Option<u32>,
    },
    /// Cumulative IoU over binary mask pairs.
    Ciou {
        #[command(flatten)]
        pairs: Pairs,
    },
    /// PCKh over JSON-line poses; each ground-truth pose is matched by keypoint centre.
    Pckh {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Head segment length in pixels.
        #[arg(long)]
        head_len: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Fraction of valid pixels with max(pred/gt, gt/pred) < 1.25.
    Delta1 {
        #[command(flatten)]
        pairs: Pairs,
    },
}

#[derive(Debug, Args)]
pub struct Pairs {
    /// Prediction files, paired in order with `--gt`.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
}

impl Pairs {
    fn zipped(&self) -> Result<Vec<(&Path, &Path)>> {
        ensure!(
            self.pred.len() == self.gt.len(),
            "{} prediction files but {} ground-truth files",
            self.pred.len(),
            self.gt.len()
        );
        Ok(self.pred.iter().map(PathBuf::as_path).zip(self.gt.iter().map(PathBuf::as_path)).collect())
    }
}

fn label_map(path: &Path) -> Result<LabelMap> {
    LabelMap::from_text(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

fn depth_map(path: &Path) -> Result<DepthMap> {
    Ok(DepthMap::from_text(&read_text(path)?).with_context(|| format!("in {}", path.display()))?.0)
}

fn records(path: &Path) -> Result<Vec<StructuredRecord>> {
    parse_records(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

type PerImage<'a> = HashMap<&'a str, Vec<&'a StructuredRecord>>;

/// Image keys in first-seen order across both files, records grouped per key.
fn by_image<'a>(
    gt: &'a [StructuredRecord],
    pred: &'a [StructuredRecord],
) -> (Vec<&'a str>, PerImage<'a>, PerImage<'a>) {
    let key = |r: &'a StructuredRecord| r.image.as_deref().unwrap_or("");
    let mut order = Vec::new();
    let mut group = |rs: &'a [StructuredRecord]| {
        let mut m: HashMap<&str, Vec<&StructuredRecord>> = HashMap::new();
        for r in rs {
            if !m.contains_key(key(r)) && !order.contains(&key(r)) {
                order.push(key(r));
            }
            m.entry(key(r)).or_default().push(r);
        }
        m
    };
    let g = group(gt);
    let p = group(pred);
    (order, g, p)
}

fn scored_box(r: &StructuredRecord, i: usize, need_score: bool) -> Result<ScoredBox> {
    let score = match (r.score, need_score) {
        (Some(s), _) => s,
        (None, false) => 1.0,
        (None, true) => bail!("record {i}: prediction has no score"),
    };
    Ok(ScoredBox { category: r.category.clone().unwrap_or_default(), bbox: r.bounding_box(i)?, score })
}

fn poses(rs: &[&StructuredRecord]) -> Result<Vec<PoseInstance>> {
    let owned: Vec<StructuredRecord> = rs.iter().map(|r| (*r).clone()).collect();
    match value_from_records(StructuredKind::Poses, &owned)? {
        StructuredValue::Poses(p) => Ok(p),
        _ => unreachable!("pose records yield poses"),
    }
}

pub fn metrics(ctx: &Ctx, cmd: MetricsCmd) -> Result<Outputs> {
    let mut r = Report::new();
    match cmd {
        MetricsCmd::Iou { pred, gt, vocab } => {
            let vocab = ctx.vocab(&vocab)?;
            r.float("iou", box_iou(&parse_box(&pred, &vocab)?, &parse_box(&gt, &vocab)?));
        }
        MetricsCmd::Map { pred, gt } => {
            let (gt_recs, pred_recs) = (records(&gt)?, records(&pred)?);
            let (order, g, p) = by_image(&gt_recs, &pred_recs);
            let mut preds = Vec::with_capacity(order.len());
            let mut gts = Vec::with_capacity(order.len());
            for img in &order {
                let boxes = |m: &PerImage, need: bool| -> Result<Vec<ScoredBox>> {
                    m.get(img)
                        .map(|rs| rs.iter().enumerate().map(|(i, r)| scored_box(r, i, need)).collect())
                        .unwrap_or(Ok(Vec::new()))
                };
                preds.push(boxes(&p, true).with_context(|| format!("predictions for image {img:?}"))?);
                gts.push(
                    boxes(&g, false)
                        .with_context(|| format!("ground truth for image {img:?}"))?
                        .into_iter()
                        .map(|b| LabeledBox { category: b.category, bbox: b.bbox })
                        .collect(),
                );
            }
            r.float("map", map_coco(&preds, &gts))
                .put("images", order.len())
                .put("predictions", pred_recs.len())
                .put("ground_truth", gt_recs.len());
        }
        MetricsCmd::Miou { pairs, classes, ignore } => {
            let values = par_map(ctx.jobs, &pairs.zipped()?, |(p, g)| {
                miou(&label_map(p)?, &label_map(g)?, classes, ignore)
                    .with_context(|| format!("scoring {}", p.display()))
            })?;
            per_item(&mut r, "miou", &values);
        }
        MetricsCmd::Ciou { pairs } => {
            let maps = par_map(ctx.jobs, &pairs.zipped()?, |(p, g)| Ok((label_map(p)?, label_map(g)?)))?;
            r.float("ciou", ciou(&maps)?).put("items", maps.len());
        }
        MetricsCmd::Pckh { pred, gt, head_len, threshold } => {
            let (gt_recs, pred_recs) = (records(&gt)?, records(&pred)?);
            let (order, g, p) = by_image(&gt_recs, &pred_recs);
            let (mut hits, mut seen, mut instances) = (0usize, 0usize, 0usize);
            for img in &order {
                let Some(gs) = g.get(img) else { continue };
                let gposes = poses(gs).with_context(|| format!("ground truth for image {img:?}"))?;
                let pposes = match p.get(img) {
                    Some(ps) => poses(ps).with_context(|| format!("predictions for image {img:?}"))?,
                    None => Vec::new(),
                };
                for gp in &gposes {
                    instances += 1;
                    let visible = gp.keypoints.iter().filter(|k| k.visible).count();
                    if pposes.is_empty() {
                        seen += visible;
                        continue;
                    }
                    let best = &pposes[match_pose_by_center(&pposes, gp)?];
                    let res = pckh(best, gp, head_len, threshold)?;
                    seen += res.per_joint.iter().flatten().count();
                    hits += res.per_joint.iter().flatten().filter(|ok| **ok).count();
                }
            }
            r.maybe_float("pckh", (seen > 0).then(|| hits as f64 / seen as f64))
                .put("instances", instances)
                .put("visible_joints", seen)
                .put("correct_joints", hits);
        }
        MetricsCmd::Delta1 { pairs } => {
            let values = par_map(ctx.jobs, &pairs.zipped()?, |(p, g)| {
                delta1(&depth_map(p)?, &depth_map(g)?).with_context(|| format!("scoring {}", p.display()))
            })?;
            per_item(&mut r, "delta1", &values);
        }
    }
    let mut out = Outputs::new();
    out.print(r.render(ctx.format));
    Ok(out)
}

/// Mean under `key`, then one `key.i` entry per item when there are several.
fn per_item(r: &mut Report, key: &str, values: &[f64]) {
    r.float(key, values.iter().sum::<f64>() / values.len() as f64).put("items", values.len());
    if values.len() > 1 {
        for (i, v) in values.iter().enumerate() {
            r.float(format!("{key}.{i}"), *v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Grounding,
    Detection,
    Counting,
    #[value(alias = "semseg")]
    SegSemantic,
    #[value(alias = "refseg")]
    SegReferring,
    Parsing,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Grounding => Task::Grounding,
            TaskArg::Detection => Task::Detection,
            TaskArg::Counting => Task::Counting,
            TaskArg::SegSemantic => Task::SegSemantic,
            TaskArg::SegReferring => Task::SegReferring,
            TaskArg::Parsing => Task::Parsing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroundingArg {
    Scaled,
    RawIou,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(value_enum)]
    task: TaskArg,
    /// Prediction; `@path` reads it from a file.
    #[arg(long, allow_hyphen_values = true)]
    pred: String,
    /// Ground truth; `@path` reads it from a file.
    #[arg(long, allow_hyphen_values = true)]
    gt: String,
    #[arg(long, value_enum, default_value_t = GroundingArg::Scaled)]
    grounding_mode: GroundingArg,
    /// Number of classes for semantic segmentation.
    #[arg(long, default_value_t = RewardConfig::default().num_classes)]
    classes: u32,
    /// Ignored ground-truth label for semantic segmentation, or `none`.
    #[arg(long, default_value = "255")]
    ignore: String,
    /// Raster used to compare polygons, HxW.
    #[arg(long, value_parser = parse_dims, default_value = "1024x1024")]
    raster: (usize, usize),
    #[command(flatten)]
    vocab: VocabArgs,
}

fn load_arg(s: &str) -> Result<String> {
    match s.strip_prefix('@') {
        Some(path) => Ok(read_text(Path::new(path))?.trim_end_matches(['\n', '\r']).to_string()),
        None => Ok(s.to_string()),
    }
}

fn detections(text: &str, vocab: &UnifiedVocab, need_score: bool) -> Result<Vec<ScoredBox>> {
    if text.trim_start().starts_with('<') {
        let StructuredValue::Detections(dets) = parse_str(text.trim(), StructuredKind::Detections, vocab)?
        else {
            unreachable!("detection parser yields detections")
        };
        return Ok(dets
            .into_iter()
            .flat_map(|d| {
                d.boxes.into_iter().map(move |bbox| ScoredBox {
                    category: d.category.clone(),
                    bbox,
                    score: 1.0,
                })
            })
            .collect());
    }
    parse_records(text)?.iter().enumerate().map(|(i, r)| scored_box(r, i, need_score)).collect()
}

fn polygon_or_mask(text: &str, vocab: &UnifiedVocab) -> Result<Payload> {
    let t = text.trim();
    let parts = if t.starts_with('<') {
        match parse_str(t, StructuredKind::Outline, vocab)? {
            StructuredValue::Outline(o) => o.parts,
            _ => unreachable!("outline parser yields outlines"),
        }
    } else if t.starts_with('{') {
        match value_from_records(StructuredKind::Outline, &parse_records(t)?)? {
            StructuredValue::Outline(o) => o.parts,
            _ => unreachable!("outline records yield outlines"),
        }
    } else {
        return Ok(Payload::Mask(LabelMap::from_text(t)?));
    };
    ensure!(parts.len() == 1, "expected a single polygon, found {} parts", parts.len());
    Ok(Payload::Polygon(parts.into_iter().next().expect("one part")))
}

fn payload(task: Task, text: &str, vocab: &UnifiedVocab, is_pred: bool) -> Result<Option<Payload>> {
    Ok(Some(match task {
        Task::Grounding => Payload::Box(parse_box(text, vocab)?),
        Task::Detection => Payload::Detections(detections(text, vocab, is_pred)?),
        Task::Counting => {
            let t = text.trim();
            match t.parse::<u64>().ok().or_else(|| if is_pred { parse_count_answer(t) } else { None }) {
                Some(n) => Payload::Count(n),
                None if is_pred => return Ok(None),
                None => bail!("ground-truth count {t:?} is not an integer"),
            }
        }
        Task::SegSemantic => Payload::Labels(LabelMap::from_text(text)?),
        Task::SegReferring => polygon_or_mask(text, vocab)?,
        Task::Parsing => Payload::Text(text.to_string()),
    }))
}

pub fn reward(ctx: &Ctx, a: RewardArgs) -> Result<Outputs> {
    let vocab = ctx.vocab(&a.vocab)?;
    let task: Task = a.task.into();
    let cfg = RewardConfig {
        grounding: match a.grounding_mode {
            GroundingArg::Scaled => GroundingMode::Scaled,
            GroundingArg::RawIou => GroundingMode::RawIou,
        },
        num_classes: a.classes,
        ignore_label: match a.ignore.as_str() {
            "none" => None,
            s => Some(s.parse().with_context(|| format!("bad --ignore {s:?}"))?),
        },
        raster: a.raster,
        ..RewardConfig::default()
    };
    let gt = payload(task, &load_arg(&a.gt)?, &vocab, false)
        .context("reading ground truth")?
        .expect("ground truth is always present");
    let pred = payload(task, &load_arg(&a.pred)?, &vocab, true).context("reading prediction")?;
    let value = match &pred {
        Some(p) => task_reward(task, p, &gt, &cfg)?,
        None => 0.0,
    };
    let mut r = Report::new();
    r.put("task", a.task.to_possible_value().expect("named").get_name().to_string());
    r.float("reward", value);
    if pred.is_none() {
        r.put("note", "no answer found in prediction");
    }
    let mut out = Outputs::new();
    out.print(r.render(ctx.format));
    Ok(out)
}

#[derive(Debug, Subcommand)]
pub enum RolloutCmd {
    /// Keep the JSON-line rollout groups that pass the admission checks.
    Filter {
        /// One group per line: `{"rewards": [..], "ratios": [[..]], "advantages": [[..]]}`.
        input: PathBuf,
        /// Destination for the admitted groups.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = FilterConfig::default().tau_v)]
        tau_v: f64,
        #[arg(long, default_value_t = FilterConfig::default().tau_k)]
        tau_k: f64,
        #[arg(long, default_value_t = FilterConfig::default().eps_low)]
        eps_low: f64,
        #[arg(long, default_value_t = FilterConfig::default().eps_high)]
        eps_high: f64,
    },
}

pub fn rollout(ctx: &Ctx, cmd: RolloutCmd) -> Result<Outputs> {
    let RolloutCmd::Filter { input, output, tau_v, tau_k, eps_low, eps_high } = cmd;
    let cfg = FilterConfig { tau_v, tau_k, eps_low, eps_high };
    let groups: Vec<RolloutGroup> = read_text(&input)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", input.display(), i + 1)))
        .collect::<Result<_>>()?;
    let kept = filter_rollout_groups(&groups, &cfg)?;
    let objectives = kept.iter().map(|g| dapo_objective(g, &cfg)).collect::<Result<Vec<_>, _>>()?;
    let lines: String =
        kept.iter().map(|g| serde_json::to_string(g).expect("groups serialize") + "\n").collect();
    let mut r = Report::new();
    r.put("groups", groups.len()).put("kept", kept.len()).maybe_float(
        "mean_objective",
        (!objectives.is_empty()).then(|| objectives.iter().sum::<f64>() / objectives.len() as f64),
    );
    let mut out = Outputs::new();
    out.add(Some(&output), lines);
    out.print(r.render(ctx.format));
    Ok(out)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Text file with one `compute loss` pair per line; `#` starts a comment.
    input: PathBuf,
    /// Compute budgets to extrapolate to.
    #[arg(long, value_delimiter = ',')]
    predict: Vec<f64>,
}

pub fn fit(ctx: &Ctx, a: FitArgs) -> Result<Outputs> {
    let text = read_text(&a.input)?;
    let mut points = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", a.input.display(), n + 1))?;
        let [c, e] = v[..] else {
            bail!("{}:{}: expected `compute loss`", a.input.display(), n + 1);
        };
        points.push((c, e));
    }
    let fit = fit_power_law(&points)?;
    let mut r = Report::new();
    r.float("alpha", fit.alpha).float("log_a", fit.log_a).float("r2", fit.r2).put("points", points.len());
    for c in &a.predict {
        r.float(format!("predict.{c}"), fit.predict(*c));
    }
    let mut out = Outputs::new();
    out.print(r.render(ctx.format));
    Ok(out)
}

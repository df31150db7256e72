use std::collections::HashMap;

use super::{
    box_iou, ciou, map_coco, miou, polygon_iou, rasterize_polygon, LabeledBox, MetricError, ScoredBox,
};
use crate::grammar::{BoundingBox, Polygon};
use crate::mask::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Grounding,
    Detection,
    Counting,
    SegSemantic,
    SegReferring,
    Parsing,
}

impl std::str::FromStr for Task {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "grounding" => Task::Grounding,
            "detection" => Task::Detection,
            "counting" => Task::Counting,
            "seg_semantic" | "semseg" => Task::SegSemantic,
            "seg_referring" | "refseg" => Task::SegReferring,
            "parsing" => Task::Parsing,
            other => return Err(MetricError::Contract(format!("unknown task {other:?}"))),
        })
    }
}

/// What a model emitted, or what the ground truth holds, for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Box(BoundingBox),
    /// Scores are ignored on the ground-truth side.
    Detections(Vec<ScoredBox>),
    Count(u64),
    Labels(LabelMap),
    /// Binary mask, nonzero is foreground.
    Mask(LabelMap),
    Polygon(Polygon),
    Text(String),
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Box(_) => "box",
            Payload::Detections(_) => "detections",
            Payload::Count(_) => "count",
            Payload::Labels(_) => "labels",
            Payload::Mask(_) => "mask",
            Payload::Polygon(_) => "polygon",
            Payload::Text(_) => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundingMode {
    /// `min(1, IoU / 0.5)`.
    #[default]
    Scaled,
    /// 1 at IoU >= 0.5, raw IoU below.
    RawIou,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub grounding: GroundingMode,
    pub grounding_threshold: f64,
    /// Counts up to this value need an exact match.
    pub exact_count_limit: u64,
    pub num_classes: u32,
    pub ignore_label: Option<u32>,
    /// Raster for polygon comparison, `(H, W)`.
    pub raster: (usize, usize),
    pub polygon_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            grounding: GroundingMode::Scaled,
            grounding_threshold: 0.5,
            exact_count_limit: 10,
            num_classes: 150,
            ignore_label: Some(255),
            raster: (1024, 1024),
            polygon_threshold: 0.5,
        }
    }
}

pub fn grounding_reward(iou: f64, cfg: &RewardConfig) -> f64 {
    if iou >= cfg.grounding_threshold {
        return 1.0;
    }
    match cfg.grounding {
        GroundingMode::Scaled => iou / cfg.grounding_threshold,
        GroundingMode::RawIou => iou,
    }
}

pub fn counting_reward(pred: u64, gt: u64, cfg: &RewardConfig) -> f64 {
    if gt <= cfg.exact_count_limit {
        return (pred == gt) as u8 as f64;
    }
    let rel = (pred as f64 - gt as f64).abs() / gt as f64;
    (1.0 - rel).max(0.0)
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

fn edit_similarity(pred: &str, gt: &str) -> f64 {
    let n = pred.chars().count().max(gt.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - levenshtein(pred, gt) as f64 / n as f64
    }
}

fn ground_truth_boxes(gt: &[ScoredBox]) -> Vec<LabeledBox> {
    gt.iter().map(|b| LabeledBox { category: b.category.clone(), bbox: b.bbox }).collect()
}

/// Reward in `[0, 1]` for one prediction. The payload pair must fit the task;
/// referring segmentation accepts either masks (cIoU) or polygons (hit at
/// IoU >= `polygon_threshold`).
pub fn task_reward(task: Task, pred: &Payload, gt: &Payload, cfg: &RewardConfig) -> Result<f64, MetricError> {
    use Payload as P;
    let r = match (task, pred, gt) {
        (Task::Grounding, P::Box(p), P::Box(g)) => grounding_reward(box_iou(p, g), cfg),
        (Task::Detection, P::Detections(p), P::Detections(g)) => {
            map_coco(std::slice::from_ref(p), &[ground_truth_boxes(g)])
        }
        (Task::Counting, P::Count(p), P::Count(g)) => counting_reward(*p, *g, cfg),
        (Task::SegSemantic, P::Labels(p), P::Labels(g)) => miou(p, g, cfg.num_classes, cfg.ignore_label)?,
        (Task::SegReferring, P::Mask(p), P::Mask(g)) => ciou(&[(p.clone(), g.clone())])?,
        (Task::SegReferring, P::Polygon(p), P::Polygon(g)) => {
            rasterize_polygon(g, cfg.raster)?;
            // A degenerate prediction earns nothing rather than failing.
            let iou = polygon_iou(p, g, cfg.raster).unwrap_or(0.0);
            (iou >= cfg.polygon_threshold) as u8 as f64
        }
        (Task::Parsing, P::Text(p), P::Text(g)) => edit_similarity(p, g),
        _ => {
            return Err(MetricError::Contract(format!(
                "{task:?} with {} prediction and {} ground truth",
                pred.kind(),
                gt.kind()
            )))
        }
    };
    Ok(r.clamp(0.0, 1.0))
}

/// Reads the integer after the last "answer is" in a response.
pub fn parse_count_answer(text: &str) -> Option<u64> {
    let lower = text.to_lowercase();
    let idx = lower.rfind("answer is")?;
    let tail = &lower[idx + "answer is".len()..];
    let digits: String = tail
        .trim_start_matches(|c: char| c.is_whitespace() || c == ':')
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Script {
    Latin,
    Cyrillic,
    Greek,
    Arabic,
    Hebrew,
    Han,
    Kana,
    Hangul,
    Devanagari,
    Thai,
    Other,
}

impl std::str::FromStr for Script {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "latin" | "en" => Script::Latin,
            "cyrillic" | "ru" => Script::Cyrillic,
            "greek" => Script::Greek,
            "arabic" => Script::Arabic,
            "hebrew" => Script::Hebrew,
            "han" | "zh" => Script::Han,
            "kana" | "ja" => Script::Kana,
            "hangul" | "ko" => Script::Hangul,
            "devanagari" | "hi" => Script::Devanagari,
            "thai" | "th" => Script::Thai,
            other => return Err(MetricError::Domain(format!("unknown script {other:?}"))),
        })
    }
}

pub fn script_of(c: char) -> Script {
    match c as u32 {
        0x41..=0x5A | 0x61..=0x7A | 0xC0..=0x24F | 0x1E00..=0x1EFF => Script::Latin,
        0x370..=0x3FF | 0x1F00..=0x1FFF => Script::Greek,
        0x400..=0x52F => Script::Cyrillic,
        0x590..=0x5FF => Script::Hebrew,
        0x600..=0x6FF | 0x750..=0x77F => Script::Arabic,
        0x900..=0x97F => Script::Devanagari,
        0xE00..=0xE7F => Script::Thai,
        0x3040..=0x30FF => Script::Kana,
        0x1100..=0x11FF | 0xAC00..=0xD7AF => Script::Hangul,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FFFF => Script::Han,
        _ => Script::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxRewards {
    /// 1 minus the largest repeated n-gram mass for n in 2..=4.
    pub repetition: f64,
    /// Share of letters written in the target script.
    pub language: f64,
}

/// Units are whitespace-separated words when the text has at least two,
/// characters otherwise.
fn units(text: &str) -> Vec<&str> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() >= 2 {
        return words;
    }
    text.char_indices().map(|(i, c)| &text[i..i + c.len_utf8()]).filter(|s| !s.trim().is_empty()).collect()
}

/// Fraction of n-gram occurrences whose n-gram occurs more than once.
fn repeated_mass(units: &[&str], n: usize) -> f64 {
    if units.len() < n {
        return 0.0;
    }
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    for g in units.windows(n) {
        *counts.entry(g).or_default() += 1;
    }
    let total = units.len() + 1 - n;
    let repeated: usize = counts.values().filter(|&&c| c > 1).sum();
    repeated as f64 / total as f64
}

pub fn aux_rewards(text: &str, target: Script) -> AuxRewards {
    let u = units(text);
    let mass = (2..=4).map(|n| repeated_mass(&u, n)).fold(0.0, f64::max);
    let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    let language = if letters.is_empty() {
        1.0
    } else {
        letters.iter().filter(|&&c| script_of(c) == target).count() as f64 / letters.len() as f64
    };
    AuxRewards { repetition: 1.0 - mass, language }
}

/// Plug-in point for rewards that need a language-model judge.
pub trait ExternalJudge {
    fn judge(&self, prompt: &str, response: &str, reference: &str) -> Result<f64, MetricError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn grounding_and_counting() {
        let cfg = RewardConfig::default();
        let gt = Payload::Box(bx(0, 0, 10, 10));
        let at_06 = Payload::Box(bx(0, 0, 6, 10));
        assert_eq!(task_reward(Task::Grounding, &at_06, &gt, &cfg).unwrap(), 1.0);
        assert_eq!(grounding_reward(0.25, &cfg), 0.5);
        let at_02 = Payload::Box(bx(0, 0, 10, 2));
        assert!((task_reward(Task::Grounding, &at_02, &gt, &cfg).unwrap() - 0.4).abs() < 1e-12);
        let raw = RewardConfig { grounding: GroundingMode::RawIou, ..cfg.clone() };
        assert_eq!(grounding_reward(0.25, &raw), 0.25);
        assert_eq!(counting_reward(3, 3, &cfg), 1.0);
        assert_eq!(counting_reward(4, 3, &cfg), 0.0);
        assert!((counting_reward(90, 100, &cfg) - 0.9).abs() < 1e-12);
        assert_eq!(counting_reward(300, 100, &cfg), 0.0);
        assert!(task_reward(Task::Counting, &gt, &Payload::Count(3), &cfg).is_err());
    }

    #[test]
    fn parsing_reward_uses_edit_distance() {
        let cfg = RewardConfig::default();
        let t = |s: &str| Payload::Text(s.into());
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(task_reward(Task::Parsing, &t("abc"), &t("abc"), &cfg).unwrap(), 1.0);
        assert_eq!(task_reward(Task::Parsing, &t(""), &t(""), &cfg).unwrap(), 1.0);
        assert!(
            (task_reward(Task::Parsing, &t("kitten"), &t("sitting"), &cfg).unwrap() - 4.0 / 7.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn count_answers() {
        assert_eq!(parse_count_answer("There are cats. The answer is 12."), Some(12));
        assert_eq!(parse_count_answer("Answer is: 3"), Some(3));
        assert_eq!(parse_count_answer("no number here"), None);
    }

    #[test]
    fn auxiliary() {
        assert_eq!(aux_rewards("abcdefgh", Script::Latin).repetition, 1.0);
        assert!(aux_rewards("ababababab", Script::Latin).repetition <= 0.2);
        assert_eq!(aux_rewards("plain latin words", Script::Latin).language, 1.0);
        assert_eq!(aux_rewards("ab 中文", Script::Latin).language, 0.5);
        assert!(aux_rewards("go go go go go go", Script::Latin).repetition < 0.1);
    }
}

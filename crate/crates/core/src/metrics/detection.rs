use std::collections::BTreeSet;

use crate::grammar::BoundingBox;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const COCO_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub category: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub category: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let ih = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices of `dets` in descending score order, ties by position.
fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy per-category suppression: a box is dropped when its IoU with an
/// already kept, higher-ranked box of the same category exceeds `iou_thr`.
/// Survivors are returned in rank order.
pub fn nms(dets: &[ScoredBox], iou_thr: f64) -> Vec<ScoredBox> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let suppressed = kept.iter().any(|&k| {
            dets[k].category == dets[i].category && box_iou(&dets[k].bbox, &dets[i].bbox) > iou_thr
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Merges detections from several input scales, already mapped back to
/// original coordinates, using box area as the confidence score.
pub fn nms_multiscale(per_scale: &[Vec<LabeledBox>], iou_thr: f64) -> Vec<ScoredBox> {
    let all: Vec<ScoredBox> = per_scale
        .iter()
        .flatten()
        .map(|d| ScoredBox { category: d.category.clone(), bbox: d.bbox, score: d.bbox.area() })
        .collect();
    nms(&all, iou_thr)
}

/// All-point interpolated average precision of one ranked list.
fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

fn class_ap(preds: &[Vec<ScoredBox>], gts: &[Vec<LabeledBox>], class: &str, thr: f64) -> f64 {
    let mut ranked: Vec<(usize, &ScoredBox)> = preds
        .iter()
        .enumerate()
        .flat_map(|(img, ps)| ps.iter().filter(|p| p.category == class).map(move |p| (img, p)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let class_gt: Vec<Vec<&BoundingBox>> =
        gts.iter().map(|g| g.iter().filter(|b| b.category == class).map(|b| &b.bbox).collect()).collect();
    let n_gt = class_gt.iter().map(Vec::len).sum();
    let mut used: Vec<Vec<bool>> = class_gt.iter().map(|g| vec![false; g.len()]).collect();
    let tp: Vec<bool> = ranked
        .iter()
        .map(|&(img, p)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in class_gt[img].iter().enumerate() {
                if used[img][j] {
                    continue;
                }
                let iou = box_iou(&p.bbox, g);
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    used[img][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    average_precision(&tp, n_gt)
}

/// COCO-style mAP over [`COCO_THRESHOLDS`]. `preds[i]` and `gts[i]` belong
/// to image `i`. Classes are the union of ground-truth and predicted
/// categories, so predictions of a class absent from the ground truth score
/// as false positives. Empty ground truth with no predictions scores 1.
pub fn map_coco(preds: &[Vec<ScoredBox>], gts: &[Vec<LabeledBox>]) -> f64 {
    let classes: BTreeSet<&str> = gts
        .iter()
        .flatten()
        .map(|g| g.category.as_str())
        .chain(preds.iter().flatten().map(|p| p.category.as_str()))
        .collect();
    if classes.is_empty() {
        return 1.0;
    }
    let empty = Vec::new();
    let n_img = preds.len().max(gts.len());
    let preds: Vec<Vec<ScoredBox>> = (0..n_img).map(|i| preds.get(i).unwrap_or(&empty).clone()).collect();
    let gts: Vec<Vec<LabeledBox>> = (0..n_img).map(|i| gts.get(i).cloned().unwrap_or_default()).collect();
    let per_thr: Vec<f64> = COCO_THRESHOLDS
        .iter()
        .map(|&t| classes.iter().map(|c| class_ap(&preds, &gts, c, t)).sum::<f64>() / classes.len() as f64)
        .collect();
    per_thr.iter().sum::<f64>() / per_thr.len() as f64
}

use super::MetricError;
use crate::depth::DepthMap;
use crate::grammar::Polygon;
use crate::mask::LabelMap;

fn same_shape(a: &LabelMap, b: &LabelMap) -> Result<(), MetricError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(MetricError::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean IoU over the classes that occur in `gt`. Pixels whose ground truth
/// equals `ignore` are skipped entirely.
pub fn miou(
    pred: &LabelMap,
    gt: &LabelMap,
    num_classes: u32,
    ignore: Option<u32>,
) -> Result<f64, MetricError> {
    same_shape(pred, gt)?;
    let c = num_classes as usize;
    let mut inter = vec![0u64; c];
    let mut union = vec![0u64; c];
    let mut present = vec![false; c];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if Some(g) == ignore {
            continue;
        }
        if g >= num_classes {
            return Err(MetricError::Domain(format!("ground-truth label {g} >= {num_classes} classes")));
        }
        present[g as usize] = true;
        if p == g {
            inter[g as usize] += 1;
            union[g as usize] += 1;
        } else {
            union[g as usize] += 1;
            if p < num_classes {
                union[p as usize] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..c).filter(|&k| present[k]).map(|k| inter[k] as f64 / union[k] as f64).collect();
    if ious.is_empty() {
        return Err(MetricError::Empty("no labelled ground-truth pixels".into()));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Cumulative IoU over binary mask pairs `(pred, gt)`; nonzero is foreground.
/// An all-background dataset scores 0.
pub fn ciou(pairs: &[(LabelMap, LabelMap)]) -> Result<f64, MetricError> {
    let (mut inter, mut union) = (0u64, 0u64);
    for (p, g) in pairs {
        same_shape(p, g)?;
        for (&a, &b) in p.labels().iter().zip(g.labels()) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

fn shoelace(points: &[(u32, u32)]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 as f64 * y1 as f64 - x1 as f64 * y0 as f64
        })
        .sum::<f64>()
        / 2.0
}

/// Fills the pixels whose centres lie inside `poly` under the even-odd rule.
pub fn rasterize_polygon(poly: &Polygon, raster: (usize, usize)) -> Result<Vec<bool>, MetricError> {
    let (h, w) = raster;
    let pts = &poly.points;
    if pts.len() < 3 {
        return Err(MetricError::Shape(format!("polygon with {} points", pts.len())));
    }
    if shoelace(pts) == 0.0 {
        return Err(MetricError::Shape("polygon has zero area".into()));
    }
    if let Some(&(x, y)) = pts.iter().find(|&&(x, y)| x as usize > w || y as usize > h) {
        return Err(MetricError::Shape(format!("point ({x},{y}) outside {h}x{w} raster")));
    }
    let mut fill = vec![false; h * w];
    let mut crossings = Vec::new();
    for r in 0..h {
        let yc = r as f64 + 0.5;
        crossings.clear();
        for i in 0..pts.len() {
            let (x0, y0) = (pts[i].0 as f64, pts[i].1 as f64);
            let (x1, y1) = {
                let p = pts[(i + 1) % pts.len()];
                (p.0 as f64, p.1 as f64)
            };
            if (y0 <= yc) != (y1 <= yc) {
                crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let start = (span[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for c in start..end {
                fill[r * w + c] = true;
            }
        }
    }
    Ok(fill)
}

/// IoU of the two rasterized fills.
pub fn polygon_iou(a: &Polygon, b: &Polygon, raster: (usize, usize)) -> Result<f64, MetricError> {
    let fa = rasterize_polygon(a, raster)?;
    let fb = rasterize_polygon(b, raster)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &q) in fa.iter().zip(&fb) {
        inter += (p && q) as u64;
        union += (p || q) as u64;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Fraction of valid ground-truth pixels with `max(p/g, g/p) < 1.25`.
/// An invalid prediction at a valid pixel counts as a miss.
pub fn delta1(pred: &DepthMap, gt: &DepthMap) -> Result<f64, MetricError> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(MetricError::Shape(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.depths().iter().zip(gt.depths()) {
        if !DepthMap::is_valid(g) {
            continue;
        }
        total += 1;
        if DepthMap::is_valid(p) && (p / g).max(g / p) < 1.25 {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(MetricError::Empty("no valid ground-truth depth".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(p: &[(u32, u32)]) -> Polygon {
        Polygon { points: p.to_vec() }
    }

    #[test]
    fn seg_examples() {
        let gt = LabelMap::new(2, 2, vec![0, 1, 1, 2]).unwrap();
        assert_eq!(miou(&gt, &gt, 3, None).unwrap(), 1.0);
        let pred = LabelMap::new(2, 2, vec![0, 1, 2, 2]).unwrap();
        // class 0: 1/1, class 1: 1/2, class 2: 1/2
        assert!((miou(&pred, &gt, 3, None).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let a = LabelMap::new(1, 2, vec![1, 0]).unwrap();
        let b = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(ciou(&[(a.clone(), b)]).unwrap(), 0.0);
        assert_eq!(ciou(&[(a.clone(), a)]).unwrap(), 1.0);
        let all_ignored = LabelMap::filled(2, 2, 255);
        assert!(miou(&pred, &all_ignored, 3, Some(255)).is_err());
    }

    #[test]
    fn polygon_examples() {
        let sq = poly(&[(0, 0), (10, 0), (10, 10), (0, 10)]);
        assert_eq!(rasterize_polygon(&sq, (12, 12)).unwrap().iter().filter(|&&f| f).count(), 100);
        assert_eq!(polygon_iou(&sq, &sq, (12, 12)).unwrap(), 1.0);
        let t1 = poly(&[(0, 0), (4, 0), (0, 4)]);
        let t2 = poly(&[(8, 8), (12, 8), (12, 12)]);
        assert_eq!(polygon_iou(&t1, &t2, (12, 12)).unwrap(), 0.0);
        let half = poly(&[(5, 0), (15, 0), (15, 10), (5, 10)]);
        assert!((polygon_iou(&sq, &half, (16, 16)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(polygon_iou(&poly(&[(0, 0), (1, 1)]), &sq, (12, 12)).is_err());
        assert!(polygon_iou(&poly(&[(0, 0), (1, 1), (2, 2)]), &sq, (12, 12)).is_err());
    }

    #[test]
    fn delta1_examples() {
        let gt = DepthMap::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(delta1(&gt, &gt).unwrap(), 1.0);
        let scaled = DepthMap::new(1, 4, gt.depths().iter().map(|d| d * 1.3).collect()).unwrap();
        assert_eq!(delta1(&scaled, &gt).unwrap(), 0.0);
        let mixed = DepthMap::new(1, 4, vec![1.2, 2.4, 3.9, 5.2]).unwrap();
        assert_eq!(delta1(&mixed, &gt).unwrap(), 0.5);
    }
}

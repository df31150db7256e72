use super::{BoundingBox, GrammarError, Polygon};

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Effective Douglas–Peucker significance of every vertex of a closed ring:
/// a vertex survives tolerance `eps` iff its significance exceeds `eps`.
fn ring_significance(pts: &[(f64, f64)]) -> Vec<f64> {
    let n = pts.len();
    let mut sig = vec![0.0; n];
    let d0 = |i: usize| ((pts[i].0 - pts[0].0).powi(2) + (pts[i].1 - pts[0].1).powi(2)).sqrt();
    let mut far = 0;
    for i in 1..n {
        if d0(i) > d0(far) {
            far = i;
        }
    }
    if far == 0 {
        far = n / 2;
    }
    sig[0] = f64::INFINITY;
    sig[far] = f64::INFINITY;

    // Chains are index ranges over the ring; index n wraps to 0.
    let at = |i: usize| pts[i % n];
    let mut stack = vec![(0usize, far, f64::INFINITY), (far, n, f64::INFINITY)];
    while let Some((i, j, cap)) = stack.pop() {
        if j <= i + 1 {
            continue;
        }
        let (mut best, mut best_d) = (i + 1, -1.0);
        for m in i + 1..j {
            let d = dist_to_segment(at(m), at(i), at(j));
            if d > best_d {
                best = m;
                best_d = d;
            }
        }
        let eff = best_d.min(cap);
        sig[best] = eff;
        stack.push((i, best, eff));
        stack.push((best, j, eff));
    }
    sig
}

/// Reduces a closed polygon to at most `max_pts` vertices with
/// Douglas–Peucker, choosing the smallest tolerance that meets the budget.
/// The result is a subsequence of the input with at least three vertices.
pub fn compress_polygon(points: &[(u32, u32)], max_pts: usize) -> Result<Polygon, GrammarError> {
    if points.len() < 3 {
        return Err(GrammarError::Shape(format!("polygon needs at least 3 points, got {}", points.len())));
    }
    if max_pts < 3 {
        return Err(GrammarError::Shape(format!("point budget {max_pts} below 3")));
    }
    if points.len() <= max_pts {
        return Ok(Polygon { points: points.to_vec() });
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let sig = ring_significance(&pts);

    let mut tolerances: Vec<f64> = sig.iter().copied().filter(|s| s.is_finite()).collect();
    tolerances.push(0.0);
    tolerances.sort_by(|a, b| a.total_cmp(b));
    tolerances.dedup();
    let kept_at = |eps: f64| sig.iter().filter(|&&s| s > eps).count();
    let first_ok = tolerances.partition_point(|&eps| kept_at(eps) > max_pts);
    let eps = tolerances[first_ok.min(tolerances.len() - 1)];

    let mut keep: Vec<bool> = sig.iter().map(|&s| s > eps).collect();
    let mut count = keep.iter().filter(|&&k| k).count();
    while count < 3 {
        let (mut best, mut best_s) = (usize::MAX, f64::NEG_INFINITY);
        for (i, &s) in sig.iter().enumerate() {
            if !keep[i] && s > best_s {
                best = i;
                best_s = s;
            }
        }
        keep[best] = true;
        count += 1;
    }
    Ok(Polygon { points: points.iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).collect() })
}

/// Scales a box about its center by `ratio` and clamps it to the image.
/// `image_size` is `(width, height)`.
pub fn expand_box(b: &BoundingBox, ratio: f64, image_size: (u32, u32)) -> BoundingBox {
    const SNAP: f64 = 1e-9;
    let (cx, cy) = b.center();
    let hw = b.width() as f64 * ratio / 2.0;
    let hh = b.height() as f64 * ratio / 2.0;
    let lo = |c: f64, h: f64| (c - h + SNAP).floor().max(0.0) as u32;
    let hi = |c: f64, h: f64, limit: u32| ((c + h - SNAP).ceil().max(0.0) as u32).min(limit);
    BoundingBox {
        x1: lo(cx, hw).min(image_size.0),
        y1: lo(cy, hh).min(image_size.1),
        x2: hi(cx, hw, image_size.0),
        y2: hi(cy, hh, image_size.1),
    }
}

/// Crop of `source_rect` resized so its shorter side equals the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub source_rect: BoundingBox,
    pub scale: f64,
    /// `(width, height)` of the resized crop.
    pub target_size: (u32, u32),
}

impl CropTransform {
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.source_rect.x1 as f64) * self.scale, (y - self.source_rect.y1 as f64) * self.scale)
    }

    pub fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        (u / self.scale + self.source_rect.x1 as f64, v / self.scale + self.source_rect.y1 as f64)
    }
}

pub fn crop_transform(b: &BoundingBox, shorter_side: u32) -> Result<CropTransform, GrammarError> {
    let (w, h) = (b.width(), b.height());
    if w == 0 || h == 0 || shorter_side == 0 {
        return Err(GrammarError::Shape(format!("cannot crop degenerate box {b}")));
    }
    let scale = shorter_side as f64 / w.min(h) as f64;
    Ok(CropTransform {
        source_rect: *b,
        scale,
        target_size: (((w as f64 * scale).round() as u32).max(1), ((h as f64 * scale).round() as u32).max(1)),
    })
}

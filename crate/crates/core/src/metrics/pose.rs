use super::MetricError;
use crate::grammar::{PoseInstance, POSE_KEYPOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct PckhResult {
    /// `None` for joints not visible in the ground truth.
    pub per_joint: [Option<bool>; POSE_KEYPOINTS],
    /// Mean over visible joints; `None` when no joint is visible.
    pub mean: Option<f64>,
}

/// A joint is correct when its distance to the ground truth is at most
/// `t * head_len`, compared on squared integer offsets.
pub fn pckh(
    pred: &PoseInstance,
    gt: &PoseInstance,
    head_len: f64,
    t: f64,
) -> Result<PckhResult, MetricError> {
    if !(head_len > 0.0 && head_len.is_finite()) || t.is_nan() || t < 0.0 {
        return Err(MetricError::Domain(format!("head length {head_len}, threshold {t}")));
    }
    let radius = t * head_len;
    let mut per_joint = [None; POSE_KEYPOINTS];
    let (mut hits, mut seen) = (0usize, 0usize);
    for (j, (p, g)) in pred.keypoints.iter().zip(&gt.keypoints).enumerate() {
        if !g.visible {
            continue;
        }
        let dx = p.x as f64 - g.x as f64;
        let dy = p.y as f64 - g.y as f64;
        let ok = dx * dx + dy * dy <= radius * radius;
        per_joint[j] = Some(ok);
        seen += 1;
        hits += ok as usize;
    }
    Ok(PckhResult { per_joint, mean: (seen > 0).then(|| hits as f64 / seen as f64) })
}

/// Index of the prediction whose keypoint centre is nearest to the ground
/// truth's; the first one wins ties.
pub fn match_pose_by_center(preds: &[PoseInstance], gt: &PoseInstance) -> Result<usize, MetricError> {
    let (gx, gy) = gt.keypoint_center();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in preds.iter().enumerate() {
        let (px, py) = p.keypoint_center();
        let d = (px - gx).powi(2) + (py - gy).powi(2);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| MetricError::Empty("no predicted poses to match".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{BoundingBox, Keypoint};

    fn pose(x: u32, y: u32) -> PoseInstance {
        PoseInstance {
            bbox: BoundingBox::new(0, 0, 200, 200).unwrap(),
            keypoints: [Keypoint { x, y, visible: true }; POSE_KEYPOINTS],
        }
    }

    #[test]
    fn pckh_boundaries() {
        let gt = pose(50, 50);
        assert_eq!(pckh(&gt, &gt, 20.0, 0.5).unwrap().mean, Some(1.0));
        assert_eq!(pckh(&pose(60, 50), &gt, 20.0, 0.5).unwrap().mean, Some(1.0));
        assert_eq!(pckh(&pose(62, 50), &gt, 20.0, 0.5).unwrap().mean, Some(0.0));
        assert!(pckh(&gt, &gt, 0.0, 0.5).is_err());
    }

    #[test]
    fn center_matching() {
        let gt = pose(50, 50);
        assert_eq!(match_pose_by_center(&[pose(150, 50), pose(51, 50)], &gt).unwrap(), 1);
        assert_eq!(match_pose_by_center(&[pose(49, 50), pose(51, 50)], &gt).unwrap(), 0);
        assert!(match_pose_by_center(&[], &gt).is_err());
    }
}

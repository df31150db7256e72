//! Line-oriented JSON form of structured values, one object per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    BoundingBox, Detection, InstanceOutline, Keypoint, Polygon, PoseInstance, StructuredKind,
    StructuredValue, POSE_KEYPOINTS,
};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}")]
    Json { line: usize, source: serde_json::Error },
    #[error("record {index}: {msg}")]
    Invalid { index: usize, msg: String },
}

/// One JSON line. Which fields are required depends on the value kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[u32; 2]>>,
    /// `[x, y, visibility]` with visibility 0.0 or 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl StructuredRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }

    pub fn bounding_box(&self, index: usize) -> Result<BoundingBox, RecordError> {
        let [x1, y1, x2, y2] =
            self.bbox.ok_or_else(|| RecordError::Invalid { index, msg: "missing box".into() })?;
        BoundingBox::new(x1, y1, x2, y2).map_err(|e| RecordError::Invalid { index, msg: e.to_string() })
    }
}

/// Parses JSON lines, skipping blank lines.
pub fn parse_records(text: &str) -> Result<Vec<StructuredRecord>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| RecordError::Json { line: i + 1, source }))
        .collect()
}

fn box_array(b: &BoundingBox) -> [u32; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

pub fn records_from_value(value: &StructuredValue) -> Vec<StructuredRecord> {
    match value {
        StructuredValue::Box(b) => vec![StructuredRecord { bbox: Some(box_array(b)), ..Default::default() }],
        StructuredValue::Detections(dets) => dets
            .iter()
            .flat_map(|d| {
                d.boxes.iter().map(|b| StructuredRecord {
                    category: Some(d.category.clone()),
                    bbox: Some(box_array(b)),
                    ..Default::default()
                })
            })
            .collect(),
        StructuredValue::Outline(o) => o
            .parts
            .iter()
            .map(|p| StructuredRecord {
                points: Some(p.points.iter().map(|&(x, y)| [x, y]).collect()),
                ..Default::default()
            })
            .collect(),
        StructuredValue::Poses(poses) => poses
            .iter()
            .map(|p| StructuredRecord {
                bbox: Some(box_array(&p.bbox)),
                keypoints: Some(
                    p.keypoints
                        .iter()
                        .map(|k| [k.x as f64, k.y as f64, if k.visible { 1.0 } else { 0.0 }])
                        .collect(),
                ),
                ..Default::default()
            })
            .collect(),
    }
}

/// Assembles one value from its records. Consecutive detection records with
/// the same category share one `<ref>` block.
pub fn value_from_records(
    kind: StructuredKind,
    records: &[StructuredRecord],
) -> Result<StructuredValue, RecordError> {
    let invalid = |index: usize, msg: &str| RecordError::Invalid { index, msg: msg.to_string() };
    if records.is_empty() {
        return Err(invalid(0, "no records"));
    }
    Ok(match kind {
        StructuredKind::Box => {
            if records.len() != 1 {
                return Err(invalid(1, "a box value is a single record"));
            }
            StructuredValue::Box(records[0].bounding_box(0)?)
        }
        StructuredKind::Detections => {
            let mut dets: Vec<Detection> = Vec::new();
            for (i, r) in records.iter().enumerate() {
                let category = r
                    .category
                    .clone()
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| invalid(i, "missing category"))?;
                let b = r.bounding_box(i)?;
                match dets.last_mut() {
                    Some(d) if d.category == category => d.boxes.push(b),
                    _ => dets.push(Detection { category, boxes: vec![b] }),
                }
            }
            StructuredValue::Detections(dets)
        }
        StructuredKind::Outline => StructuredValue::Outline(InstanceOutline {
            parts: records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let pts = r.points.as_ref().ok_or_else(|| invalid(i, "missing points"))?;
                    Ok(Polygon { points: pts.iter().map(|p| (p[0], p[1])).collect() })
                })
                .collect::<Result<_, RecordError>>()?,
        }),
        StructuredKind::Poses => StructuredValue::Poses(
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let kps = r.keypoints.as_ref().ok_or_else(|| invalid(i, "missing keypoints"))?;
                    if kps.len() != POSE_KEYPOINTS {
                        return Err(invalid(i, "expected 16 keypoints"));
                    }
                    let mut keypoints = [Keypoint { x: 0, y: 0, visible: false }; POSE_KEYPOINTS];
                    for (k, &[x, y, v]) in keypoints.iter_mut().zip(kps) {
                        if x < 0.0 || y < 0.0 || x.fract() != 0.0 || y.fract() != 0.0 {
                            return Err(invalid(i, "keypoint coordinates must be pixel integers"));
                        }
                        *k = Keypoint { x: x as u32, y: y as u32, visible: v > 0.5 };
                    }
                    Ok(PoseInstance { bbox: r.bounding_box(i)?, keypoints })
                })
                .collect::<Result<_, _>>()?,
        ),
    })
}

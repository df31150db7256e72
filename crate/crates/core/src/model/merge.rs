use ndarray::Array2;
use rand::Rng;

use super::ModelError;
use crate::tokenizer::{FeatureGrid, Mlp};

/// Concatenates each 2x2 block of patch features in the order (2r, 2c),
/// (2r, 2c+1), (2r+1, 2c), (2r+1, 2c+1), giving an `h/2 x w/2` grid with
/// four times the channels.
pub fn spatial_merge(features: &FeatureGrid) -> Result<FeatureGrid, ModelError> {
    let (h, w, c) = (features.h, features.w, features.dim());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ModelError::Shape(format!("spatial merge needs even grid dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array2::zeros((oh * ow, 4 * c));
    for r in 0..oh {
        for col in 0..ow {
            let mut dst = out.row_mut(r * ow + col);
            let neighbours =
                [(2 * r, 2 * col), (2 * r, 2 * col + 1), (2 * r + 1, 2 * col), (2 * r + 1, 2 * col + 1)];
            for (slot, (y, x)) in neighbours.into_iter().enumerate() {
                dst.slice_mut(ndarray::s![slot * c..(slot + 1) * c]).assign(&features.data.row(y * w + x));
            }
        }
    }
    FeatureGrid::new(oh, ow, out).map_err(|e| ModelError::Shape(e.to_string()))
}

/// Two-layer MLP from merged patch features to the model width.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeProjector {
    pub mlp: Mlp,
}

impl MergeProjector {
    /// `patch_dim` is the channel count before merging.
    pub fn init(rng: &mut impl Rng, patch_dim: usize, hidden: usize, d_model: usize) -> Self {
        Self { mlp: Mlp::init(rng, 4 * patch_dim, hidden, d_model) }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.w2.ncols()
    }
}

pub fn spatial_merge_project(
    features: &FeatureGrid,
    projector: &MergeProjector,
) -> Result<FeatureGrid, ModelError> {
    let merged = spatial_merge(features)?;
    if merged.dim() != projector.mlp.w1.nrows() {
        return Err(ModelError::Shape(format!(
            "projector expects {} merged channels, got {}",
            projector.mlp.w1.nrows(),
            merged.dim()
        )));
    }
    let out = projector.mlp.forward(&merged.data);
    FeatureGrid::new(merged.h, merged.w, out).map_err(|e| ModelError::Shape(e.to_string()))
}

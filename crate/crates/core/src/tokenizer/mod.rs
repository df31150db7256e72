//! Vision tokenizer: cross-attention fusion of a geometric and a semantic
//! feature grid, an MLP projection, and index-backpropagation quantization
//! against a learnable codebook.
//!
//! Encoders are out of scope here; callers pass feature grids directly (the
//! tests use synthetic generators).

mod fusion;
mod quant;
mod train;

use ndarray::Array2;
use thiserror::Error;

use crate::vocab::{TokenId, UnifiedVocab, VocabError};

pub use fusion::{
    cross_attention_fuse, encode, encode_backward, gelu, gelu_grad, EncodeCache, FusionGrads, FusionWeights,
    Mlp,
};
pub use quant::{
    codebook_utilization, quantize_ibq, ste_backward, tokenizer_losses, Codebook, LossBreakdown,
    QuantizeResult, TokenizerLossConfig,
};
pub use train::{TokenizerTrainer, TrainReport};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("codebook file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// An `h x w` grid of `dim`-channel feature vectors, stored as an
/// `(h*w) x dim` matrix in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub data: Array2<f64>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, data: Array2<f64>) -> Result<Self, TokenizerError> {
        if h * w == 0 {
            return Err(TokenizerError::Shape("feature grid is empty".into()));
        }
        if data.nrows() != h * w {
            return Err(TokenizerError::Shape(format!("{} rows for a {h}x{w} grid", data.nrows())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TokenizerError::Shape("non-finite feature value".into()));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_vec(h: usize, w: usize, dim: usize, v: Vec<f64>) -> Result<Self, TokenizerError> {
        let data =
            Array2::from_shape_vec((h * w, dim), v).map_err(|e| TokenizerError::Shape(e.to_string()))?;
        Self::new(h, w, data)
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full pipeline from the two feature grids to image-range token ids.
pub fn tokenize_image(
    geo: &FeatureGrid,
    sem: &FeatureGrid,
    weights: &FusionWeights,
    book: &Codebook,
    vocab: &UnifiedVocab,
) -> Result<Vec<TokenId>, TokenizerError> {
    let (z, _) = encode(geo, sem, weights)?;
    let q = quantize_ibq(&z, book, 1.0)?;
    q.indices.iter().map(|&i| vocab.image_token(i).map_err(TokenizerError::from)).collect()
}

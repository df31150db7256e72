//! A small pre-norm decoder-only transformer over the unified vocabulary.
//!
//! Text positions embed token ids; vision positions take continuous vectors
//! of width `d_model` directly, while their targets are discrete image codes.
//! Parameters live in one flat `f64` vector described by a [`Layout`], and
//! gradients are computed by hand.

mod checkpoint;
mod demo;
mod merge;
mod train;
mod transformer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{LossError, Target};
use crate::vocab::{TokenId, UnifiedVocab};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use demo::{demo_model_config, run_demo, synthetic_batch, DemoConfig, DemoReport};
pub use merge::{spatial_merge, spatial_merge_project, MergeProjector};
pub use train::{generate, loss_and_grad, train_step, Adam, LossMode, StepLoss, TrainExample, TrainState};
pub use transformer::{backward, forward, ForwardCache};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds capacity {max}")]
    Capacity { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} outside a vocabulary of {vocab}")]
    Token { id: TokenId, vocab: usize },
    #[error("training aborted at step {step}: {msg}")]
    NonFinite { step: u64, msg: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn for_vocab(vocab: &UnifiedVocab) -> Self {
        Self {
            vocab_size: vocab.total_size(),
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_seq: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return bad("sizes must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One input position.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Token(TokenId),
    /// Continuous embedding of width `d_model`.
    Vision(Vec<f64>),
}

/// Inputs with one target per position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixedSequence {
    pub items: Vec<Item>,
    pub targets: Vec<Target>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Text-only sequence trained to predict each next token.
    pub fn next_token(ids: &[TokenId]) -> Self {
        let items = ids.iter().map(|&t| Item::Token(t)).collect();
        let mut targets: Vec<Target> = ids[1..].iter().map(|&t| Target::Text(t)).collect();
        targets.push(Target::None);
        Self { items, targets }
    }
}

/// Offsets of one transformer block's tensors in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape manifest of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<ParamEntry>,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = entries.last().map(|e: &ParamEntry| e.offset + e.len()).unwrap_or(0);
            entries.push(ParamEntry { name, shape, offset });
            offset
        };
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let pos_emb = push("pos_emb".into(), vec![cfg.max_seq, d]);
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let mut p = |n: &str, s: Vec<usize>| push(format!("blocks.{l}.{n}"), s);
                BlockOffsets {
                    ln1_g: p("ln1_g", vec![d]),
                    ln1_b: p("ln1_b", vec![d]),
                    w_qkv: p("w_qkv", vec![d, 3 * d]),
                    b_qkv: p("b_qkv", vec![3 * d]),
                    w_o: p("w_o", vec![d, d]),
                    b_o: p("b_o", vec![d]),
                    ln2_g: p("ln2_g", vec![d]),
                    ln2_b: p("ln2_b", vec![d]),
                    w_fc: p("w_fc", vec![d, f]),
                    b_fc: p("b_fc", vec![f]),
                    w_proj: p("w_proj", vec![f, d]),
                    b_proj: p("b_proj", vec![d]),
                }
            })
            .collect();
        let lnf_g = push("lnf_g".into(), vec![d]);
        let lnf_b = push("lnf_b".into(), vec![d]);
        let w_out = push("w_out".into(), vec![d, v]);
        let b_out = push("b_out".into(), vec![v]);
        let total = entries.last().map(|e| e.offset + e.len()).unwrap_or(0);
        Self { entries, tok_emb, pos_emb, blocks, lnf_g, lnf_b, w_out, b_out, total }
    }
}

/// Configuration, layout and flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl Model {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = vec![0.0; layout.total];
        for e in &layout.entries {
            let slot = &mut params[e.offset..e.offset + e.len()];
            let base = e.name.rsplit('.').next().unwrap_or(&e.name);
            if base.ends_with("_g") {
                slot.fill(1.0);
            } else if base.starts_with("b_") || base.ends_with("_b") {
                slot.fill(0.0);
            } else {
                let scale = if base.ends_with("emb") { 0.1 } else { 1.0 / (e.shape[0] as f64).sqrt() };
                slot.iter_mut().for_each(|p| *p = rng.random_range(-scale..scale));
            }
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(ModelError::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }
}

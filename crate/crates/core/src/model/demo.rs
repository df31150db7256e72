//! Fixed synthetic batch for exercising training end to end.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    train_step, Adam, Item, LossMode, MixedSequence, Model, ModelConfig, ModelError, TrainExample, TrainState,
};
use crate::losses::{MultiLabelBatch, Target, VluasConfig};

const TEXT_IDS: u32 = 24;
const IMAGE_IDS: u32 = 16;
const TAG_IDS: u32 = 8;
const VOCAB: usize = (TEXT_IDS + IMAGE_IDS + TAG_IDS) as usize;
const SEGMENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub ntp_weight: f64,
    pub k: usize,
    /// Window for the smoothed loss at each end of the run.
    pub window: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { seed: 0, steps: 200, batch: 4, lr: 1e-2, lambda: 0.5, ntp_weight: 1.0, k: 3, window: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub losses: Vec<f64>,
    pub smoothed_start: f64,
    pub smoothed_end: f64,
    /// `1 - smoothed_end / smoothed_start`.
    pub reduction: f64,
}

pub fn demo_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        max_seq: 3 * SEGMENT,
        seed,
    }
}

/// Text, then vision positions with image-code targets, then text again.
/// Vision positions also carry a multi-hot target of their image code plus
/// one tag id; only those rows are valid for the multi-label loss.
pub fn synthetic_batch(cfg: &DemoConfig) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let d = demo_model_config(cfg.seed).d_model;
    (0..cfg.batch)
        .map(|_| {
            let head: Vec<u32> = (0..SEGMENT).map(|_| rng.random_range(0..TEXT_IDS)).collect();
            let tail: Vec<u32> = (0..SEGMENT).map(|_| rng.random_range(0..TEXT_IDS)).collect();
            let codes: Vec<u32> = (0..SEGMENT).map(|_| TEXT_IDS + rng.random_range(0..IMAGE_IDS)).collect();
            let tags: Vec<u32> =
                (0..SEGMENT).map(|_| TEXT_IDS + IMAGE_IDS + rng.random_range(0..TAG_IDS)).collect();
            let mut items = Vec::with_capacity(3 * SEGMENT);
            let mut targets = Vec::with_capacity(3 * SEGMENT);
            for i in 0..SEGMENT {
                items.push(Item::Token(head[i]));
                targets.push(if i + 1 < SEGMENT { Target::Text(head[i + 1]) } else { Target::None });
            }
            for &c in &codes {
                items.push(Item::Vision((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()));
                targets.push(Target::Image(c));
            }
            for i in 0..SEGMENT {
                items.push(Item::Token(tail[i]));
                targets.push(if i + 1 < SEGMENT { Target::Text(tail[i + 1]) } else { Target::None });
            }
            let len = items.len();
            let mut labels = Array2::zeros((len, VOCAB));
            let mut valid = Array2::from_elem((len, VOCAB), false);
            for j in 0..SEGMENT {
                let row = SEGMENT + j;
                labels[[row, codes[j] as usize]] = 1;
                labels[[row, tags[j] as usize]] = 1;
                valid.row_mut(row).fill(true);
            }
            TrainExample {
                seq: MixedSequence { items, targets },
                multi: Some(MultiLabelBatch { labels, valid, k: cfg.k }),
            }
        })
        .collect()
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Trains a fresh model on [`synthetic_batch`] with the combined objective.
pub fn run_demo(cfg: &DemoConfig) -> Result<(Model, DemoReport), ModelError> {
    if cfg.steps == 0 || cfg.window == 0 || cfg.window > cfg.steps {
        return Err(ModelError::Config(format!("window {} must be in 1..={} steps", cfg.window, cfg.steps)));
    }
    let batch = synthetic_batch(cfg);
    let mut state = TrainState::new(Model::init(demo_model_config(cfg.seed))?);
    let mode = LossMode::Combined {
        vluas: VluasConfig { lambda: cfg.lambda, mean_per_modality: false },
        ntp_weight: cfg.ntp_weight,
    };
    let opt = Adam { lr: cfg.lr, ..Adam::default() };
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        losses.push(train_step(&mut state, &batch, &mode, &opt)?.total);
    }
    let smoothed_start = window_mean(&losses[..cfg.window]);
    let smoothed_end = window_mean(&losses[losses.len() - cfg.window..]);
    let report =
        DemoReport { reduction: 1.0 - smoothed_end / smoothed_start, losses, smoothed_start, smoothed_end };
    Ok((state.model, report))
}

use ndarray::Zip;

use super::{
    encode, encode_backward, quantize_ibq, tokenizer_losses, Codebook, FeatureGrid, FusionWeights,
    TokenizerError, TokenizerLossConfig,
};

/// Plain gradient descent on the fusion weights and the codebook, driven by
/// the VQ and entropy terms alone.
#[derive(Debug, Clone)]
pub struct TokenizerTrainer {
    pub weights: FusionWeights,
    pub book: Codebook,
    pub cfg: TokenizerLossConfig,
    pub lr: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub vq: f64,
    pub ent: f64,
    pub total: f64,
    pub indices: Vec<u32>,
}

impl TokenizerTrainer {
    pub fn new(weights: FusionWeights, book: Codebook, cfg: TokenizerLossConfig, lr: f64) -> Self {
        Self { weights, book, cfg, lr, steps: 0 }
    }

    pub fn step(&mut self, geo: &FeatureGrid, sem: &FeatureGrid) -> Result<TrainReport, TokenizerError> {
        let (z, cache) = encode(geo, sem, &self.weights)?;
        let q = quantize_ibq(&z, &self.book, self.cfg.temperature)?;
        let loss = tokenizer_losses(&z, &q, &self.book, &self.cfg)?;
        if !loss.total.is_finite() {
            return Err(TokenizerError::Config(format!("non-finite tokenizer loss at step {}", self.steps)));
        }
        let grads = encode_backward(geo, sem, &self.weights, &cache, &loss.grad_z);
        let lr = self.lr;
        for (p, g) in self.weights.tensors_mut().into_iter().zip(grads.tensors()) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        Zip::from(&mut self.book.prototypes).and(&loss.grad_codebook).for_each(|p, &g| *p -= lr * g);
        self.book.record_usage(&q.indices);
        self.steps += 1;
        Ok(TrainReport { vq: loss.vq, ent: loss.ent, total: loss.total, indices: q.indices })
    }

    /// Assigns every grid in a dataset pass and returns the fresh tallies.
    pub fn tally_pass<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a FeatureGrid, &'a FeatureGrid)>,
    ) -> Result<Vec<u64>, TokenizerError> {
        self.book.reset_usage();
        for (geo, sem) in pairs {
            let (z, _) = encode(geo, sem, &self.weights)?;
            let q = quantize_ibq(&z, &self.book, self.cfg.temperature)?;
            self.book.record_usage(&q.indices);
        }
        Ok(self.book.usage.clone())
    }
}

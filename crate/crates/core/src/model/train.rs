use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, Item, MixedSequence, Model, ModelError};
use crate::losses::{ntp_m_loss, vluas_loss, MultiLabelBatch, VluasConfig};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    Vluas(VluasConfig),
    NtpM,
    /// `L_vluas + ntp_weight * L_ntp_m`
    Combined {
        vluas: VluasConfig,
        ntp_weight: f64,
    },
}

/// One sequence with its single-id targets and, for multi-label modes, a
/// multi-hot target per position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub seq: MixedSequence,
    pub multi: Option<MultiLabelBatch>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let n = model.num_params();
        let rng = ChaCha8Rng::seed_from_u64(model.cfg.seed);
        Self { model, m: vec![0.0; n], v: vec![0.0; n], step: 0, rng }
    }
}

/// Loss values of one step, summed over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub vluas: f64,
    pub ntp_m: f64,
}

/// Loss and parameter gradient for a batch without updating anything.
pub fn loss_and_grad(
    model: &Model,
    batch: &[TrainExample],
    mode: &LossMode,
) -> Result<(StepLoss, Vec<f64>), ModelError> {
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = StepLoss { total: 0.0, vluas: 0.0, ntp_m: 0.0 };
    for ex in batch {
        if ex.seq.targets.len() != ex.seq.len() {
            return Err(ModelError::Shape(format!(
                "{} targets for {} items",
                ex.seq.targets.len(),
                ex.seq.len()
            )));
        }
        let (logits, cache) = forward(model, &ex.seq)?;
        let (vl, nw) = match mode {
            LossMode::Vluas(c) => (Some(c), 0.0),
            LossMode::NtpM => (None, 1.0),
            LossMode::Combined { vluas, ntp_weight } => (Some(vluas), *ntp_weight),
        };
        let mut dlogits = ndarray::Array2::zeros(logits.raw_dim());
        if let Some(c) = vl {
            let l = vluas_loss(&logits, &ex.seq.targets, c)?;
            loss.vluas += l.total;
            loss.total += l.total;
            dlogits += &l.grad;
        }
        if nw != 0.0 {
            let mb = ex
                .multi
                .as_ref()
                .ok_or_else(|| ModelError::Shape("multi-label mode needs multi-hot targets".into()))?;
            let l = ntp_m_loss(&logits, mb)?;
            loss.ntp_m += l.total;
            loss.total += nw * l.total;
            dlogits.scaled_add(nw, &l.grad);
        }
        let g = backward(model, &cache, &dlogits);
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// One Adam update on the batch loss.
pub fn train_step(
    state: &mut TrainState,
    batch: &[TrainExample],
    mode: &LossMode,
    opt: &Adam,
) -> Result<StepLoss, ModelError> {
    let (loss, grad) = loss_and_grad(&state.model, batch, mode)?;
    if !loss.total.is_finite() {
        return Err(ModelError::NonFinite {
            step: state.step,
            msg: format!("loss {} (vluas {}, ntp_m {})", loss.total, loss.vluas, loss.ntp_m),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite {
            step: state.step,
            msg: format!("gradient of parameter {i} is not finite"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (((p, m), v), g) in state.model.params.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(&grad) {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
        *p -= opt.lr * (*m / bc1) / ((*v / bc2).sqrt() + opt.eps);
    }
    Ok(loss)
}

/// Greedy continuation of `prefix` by `n` tokens.
pub fn generate(model: &Model, prefix: &[Item], n: usize) -> Result<Vec<TokenId>, ModelError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let needed = prefix.len() + n - 1;
    if prefix.is_empty() || needed > model.cfg.max_seq {
        return Err(ModelError::Capacity { len: needed.max(prefix.len()), max: model.cfg.max_seq });
    }
    let mut seq = MixedSequence { items: prefix.to_vec(), targets: Vec::new() };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (logits, _) = forward(model, &seq)?;
        let last = logits.row(logits.nrows() - 1);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in last.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        let id = best.0 as TokenId;
        out.push(id);
        seq.items.push(Item::Token(id));
    }
    Ok(out)
}

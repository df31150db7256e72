//! Unified cross-entropy over text and vision positions, and the multi-label
//! next-token loss with hard-negative mining. Both return analytic gradients
//! with respect to the logits.

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::vocab::TokenId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("target id {id} at position {pos} outside a vocabulary of {vocab}")]
    Range { pos: usize, id: TokenId, vocab: usize },
    #[error("non-finite logit at position {pos}, id {id}")]
    Numeric { pos: usize, id: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("hard-negative budget k must be at least 1")]
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Image,
}

/// Supervision target of one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Text(TokenId),
    Image(TokenId),
    /// Position carries no single-id loss.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VluasConfig {
    pub lambda: f64,
    /// Divide each modality's sum by its position count.
    pub mean_per_modality: bool,
}

impl Default for VluasConfig {
    fn default() -> Self {
        Self { lambda: 0.5, mean_per_modality: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Named components, e.g. `text` and `image`.
    pub terms: Vec<(&'static str, f64)>,
    pub grad: Array2<f64>,
}

impl LossBreakdown {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn check_finite(logits: &Array2<f64>) -> Result<(), LossError> {
    for ((pos, id), v) in logits.indexed_iter() {
        if !v.is_finite() {
            return Err(LossError::Numeric { pos, id });
        }
    }
    Ok(())
}

fn log_softmax(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// `L = L_text + lambda * L_image`, each a sum of per-position cross-entropy.
pub fn vluas_loss(
    logits: &Array2<f64>,
    targets: &[Target],
    cfg: &VluasConfig,
) -> Result<LossBreakdown, LossError> {
    let (len, vocab) = logits.dim();
    if targets.len() != len {
        return Err(LossError::Shape(format!("{} targets for {len} positions", targets.len())));
    }
    check_finite(logits)?;
    let count = |m: Modality| {
        targets
            .iter()
            .filter(|t| {
                matches!((t, m), (Target::Text(_), Modality::Text) | (Target::Image(_), Modality::Image))
            })
            .count()
    };
    let (n_text, n_image) = (count(Modality::Text), count(Modality::Image));
    let norm = |n: usize| {
        if cfg.mean_per_modality && n > 0 {
            1.0 / n as f64
        } else {
            1.0
        }
    };
    let (w_text, w_image) = (norm(n_text), cfg.lambda * norm(n_image));

    let mut grad = Array2::zeros((len, vocab));
    let (mut l_text, mut l_image) = (0.0, 0.0);
    for (pos, t) in targets.iter().enumerate() {
        let (id, weight, acc) = match *t {
            Target::Text(id) => (id, w_text, &mut l_text),
            Target::Image(id) => (id, w_image, &mut l_image),
            Target::None => continue,
        };
        if id as usize >= vocab {
            return Err(LossError::Range { pos, id, vocab });
        }
        let ls = log_softmax(logits.row(pos));
        *acc -= ls[id as usize];
        let mut g = grad.row_mut(pos);
        for (j, &l) in ls.iter().enumerate() {
            g[j] = weight * l.exp();
        }
        g[id as usize] -= weight;
    }
    let text = l_text * norm(n_text);
    let image = l_image * norm(n_image);
    Ok(LossBreakdown {
        total: text + cfg.lambda * image,
        terms: vec![("text", text), ("image", image)],
        grad,
    })
}

/// The `k` candidates with the highest probability, ties to the lowest id.
/// Returned in descending probability order.
pub fn select_hard_negatives(p: &[f64], candidates: &[TokenId], k: usize) -> Vec<TokenId> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| p[b as usize].total_cmp(&p[a as usize]).then_with(|| a.cmp(&b)));
    c.truncate(k);
    c
}

/// Multi-hot targets for the multi-label loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelBatch {
    /// `L x V` positives; nonzero marks a positive.
    pub labels: Array2<u8>,
    /// `L x V` validity mask; only valid ids are supervised.
    pub valid: Array2<bool>,
    /// Hard-negative budget per position.
    pub k: usize,
}

impl MultiLabelBatch {
    /// All ids valid.
    pub fn new(labels: Array2<u8>, k: usize) -> Self {
        let valid = Array2::from_elem(labels.raw_dim(), true);
        Self { labels, valid, k }
    }
}

/// `log sigmoid(z) = -softplus(-z)`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per position: mean positive log-likelihood plus mean hard-negative
/// log-likelihood, negated; summed over positions. Negatives are the `k`
/// valid non-positive ids with the highest `sigmoid(z)`. A term whose set is
/// empty contributes nothing; fewer than `k` candidates average over those
/// present.
pub fn ntp_m_loss(logits: &Array2<f64>, batch: &MultiLabelBatch) -> Result<LossBreakdown, LossError> {
    let (len, vocab) = logits.dim();
    if batch.labels.dim() != (len, vocab) || batch.valid.dim() != (len, vocab) {
        return Err(LossError::Shape(format!(
            "labels {:?} and mask {:?} must match logits {:?}",
            batch.labels.dim(),
            batch.valid.dim(),
            (len, vocab)
        )));
    }
    if batch.k == 0 {
        return Err(LossError::Budget);
    }
    check_finite(logits)?;
    let mut grad = Array2::zeros((len, vocab));
    let (mut pos_total, mut neg_total) = (0.0, 0.0);
    for i in 0..len {
        let z = logits.row(i);
        let mut positives = Vec::new();
        let mut candidates = Vec::new();
        for v in 0..vocab {
            if !batch.valid[[i, v]] {
                continue;
            }
            if batch.labels[[i, v]] != 0 {
                positives.push(v);
            } else {
                candidates.push(v as TokenId);
            }
        }
        if !positives.is_empty() {
            let n = positives.len() as f64;
            let mut s = 0.0;
            for &v in &positives {
                s -= log_sigmoid(z[v]);
                grad[[i, v]] = (sigmoid(z[v]) - 1.0) / n;
            }
            pos_total += s / n;
        }
        if !candidates.is_empty() {
            let p: Vec<f64> = z.iter().map(|&x| sigmoid(x)).collect();
            let hard = select_hard_negatives(&p, &candidates, batch.k);
            let n = hard.len() as f64;
            let mut s = 0.0;
            for &v in &hard {
                let v = v as usize;
                s -= log_sigmoid(-z[v]);
                grad[[i, v]] = sigmoid(z[v]) / n;
            }
            neg_total += s / n;
        }
    }
    Ok(LossBreakdown {
        total: pos_total + neg_total,
        terms: vec![("positive", pos_total), ("negative", neg_total)],
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_text_position() {
        let l = vluas_loss(&Array2::zeros((1, 4)), &[Target::Text(2)], &VluasConfig::default()).unwrap();
        assert!((l.total - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_targets_zero_loss() {
        let mut z = Array2::from_elem((2, 5), -1e4);
        z[[0, 1]] = 1e4;
        z[[1, 3]] = 1e4;
        let l = vluas_loss(&z, &[Target::Text(1), Target::Image(3)], &VluasConfig::default()).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn image_positions_scale_with_lambda() {
        let z = array![[0.3, -1.0, 2.0], [1.0, 0.5, -0.5]];
        let t = [Target::Text(0), Target::Image(2)];
        let a = vluas_loss(&z, &t, &VluasConfig { lambda: 0.5, mean_per_modality: false }).unwrap();
        let b = vluas_loss(&z, &t, &VluasConfig { lambda: 1.0, mean_per_modality: false }).unwrap();
        for j in 0..3 {
            assert_eq!(b.grad[[1, j]], 2.0 * a.grad[[1, j]]);
            assert_eq!(b.grad[[0, j]], a.grad[[0, j]]);
        }
    }

    #[test]
    fn out_of_range_target() {
        let r = vluas_loss(&Array2::zeros((1, 3)), &[Target::Image(3)], &VluasConfig::default());
        assert!(matches!(r, Err(LossError::Range { pos: 0, id: 3, .. })));
    }

    #[test]
    fn hard_negative_selection() {
        let mut p = vec![0.0; 10];
        p[2] = 0.9;
        p[7] = 0.1;
        p[9] = 0.5;
        assert_eq!(select_hard_negatives(&p, &[2, 7, 9], 2), vec![2, 9]);
        assert_eq!(select_hard_negatives(&p, &[2, 7, 9], 5).len(), 3);
        let flat = vec![0.3; 6];
        assert_eq!(select_hard_negatives(&flat, &[5, 1, 3, 0], 2), vec![0, 1]);
    }

    #[test]
    fn saturated_multi_label() {
        let mut z = Array2::from_elem((1, 6), -40.0);
        z[[0, 2]] = 40.0;
        let mut labels = Array2::zeros((1, 6));
        labels[[0, 2]] = 1;
        let l = ntp_m_loss(&z, &MultiLabelBatch::new(labels, 2)).unwrap();
        assert!(l.total <= 1e-15);
    }

    #[test]
    fn masked_ids_get_no_gradient() {
        let z = array![[0.5, 2.0, -1.0, 3.0]];
        let labels = array![[1u8, 0, 0, 0]];
        let valid = array![[true, true, true, false]];
        let l = ntp_m_loss(&z, &MultiLabelBatch { labels, valid, k: 3 }).unwrap();
        assert_eq!(l.grad[[0, 3]], 0.0);
        assert!(l.grad[[0, 1]] > 0.0);
    }

    #[test]
    fn nan_rejected() {
        let z = array![[0.0, f64::NAN]];
        let r = ntp_m_loss(&z, &MultiLabelBatch::new(Array2::zeros((1, 2)), 1));
        assert_eq!(r, Err(LossError::Numeric { pos: 0, id: 1 }));
    }
}

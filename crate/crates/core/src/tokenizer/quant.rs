use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::{FeatureGrid, TokenizerError};

const MAGIC: &[u8; 4] = b"YVCB";

/// `K` prototype vectors of dimension `D` plus assignment tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub prototypes: Array2<f64>,
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn new(prototypes: Array2<f64>) -> Result<Self, TokenizerError> {
        if prototypes.nrows() == 0 || prototypes.ncols() == 0 {
            return Err(TokenizerError::Config("codebook must be non-empty".into()));
        }
        if prototypes.iter().any(|v| !v.is_finite()) {
            return Err(TokenizerError::Config("non-finite prototype".into()));
        }
        let k = prototypes.nrows();
        Ok(Self { prototypes, usage: vec![0; k] })
    }

    pub fn random(rng: &mut impl Rng, k: usize, d: usize, scale: f64) -> Result<Self, TokenizerError> {
        Self::new(Array2::from_shape_simple_fn((k, d), || rng.random_range(-scale..scale)))
    }

    pub fn k(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn record_usage(&mut self, indices: &[u32]) {
        for &i in indices {
            self.usage[i as usize] += 1;
        }
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|u| *u = 0);
    }

    /// Nearest prototype under squared Euclidean distance; ties go to the
    /// lowest index.
    pub fn nearest(&self, z: ArrayView1<f64>) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (k, c) in self.prototypes.rows().into_iter().enumerate() {
            let d = sq_dist(z, c);
            if d < best.1 {
                best = (k as u32, d);
            }
        }
        best
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), TokenizerError> {
        let k = u32::try_from(self.k()).map_err(|_| TokenizerError::Format("K too large".into()))?;
        let d = u32::try_from(self.dim()).map_err(|_| TokenizerError::Format("D too large".into()))?;
        let mut buf = Vec::with_capacity(12 + 4 * self.prototypes.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&k.to_le_bytes());
        buf.extend_from_slice(&d.to_le_bytes());
        for &v in self.prototypes.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, TokenizerError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(TokenizerError::Format("missing YVCB header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (k, d) = (word(4), word(8));
        let body = &bytes[12..];
        if body.len() != 4 * k * d {
            return Err(TokenizerError::Format(format!(
                "expected {} payload bytes for K={k} D={d}, found {}",
                4 * k * d,
                body.len()
            )));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Self::new(Array2::from_shape_vec((k, d), values).expect("length checked"))
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of codebook entries assigned at least once.
pub fn codebook_utilization(usage: &[u64]) -> f64 {
    if usage.is_empty() {
        return 0.0;
    }
    usage.iter().filter(|&&u| u > 0).count() as f64 / usage.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult {
    pub h: usize,
    pub w: usize,
    /// Codebook indices, row-major over the grid.
    pub indices: Vec<u32>,
    /// Selected prototypes, one row per position.
    pub quantized: Array2<f64>,
    /// `softmax(-d / T)` over the codebook, one row per position.
    pub assignment_probs: Array2<f64>,
    /// Squared distances to every prototype.
    pub distances: Array2<f64>,
}

impl QuantizeResult {
    pub fn quantized_grid(&self) -> FeatureGrid {
        FeatureGrid { h: self.h, w: self.w, data: self.quantized.clone() }
    }
}

fn softmax_neg(d: ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let min = d.fold(f64::INFINITY, |a, &b| a.min(b));
    let mut p = d.mapv(|v| (-(v - min) / temperature).exp());
    let sum = p.sum();
    p /= sum;
    p
}

fn log_softmax_neg(d: ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let min = d.fold(f64::INFINITY, |a, &b| a.min(b));
    let shifted = d.mapv(|v| -(v - min) / temperature);
    let lse = shifted.mapv(f64::exp).sum().ln();
    shifted - lse
}

/// Hard nearest-prototype assignment with the soft distribution used by the
/// backward path.
pub fn quantize_ibq(
    z: &FeatureGrid,
    book: &Codebook,
    temperature: f64,
) -> Result<QuantizeResult, TokenizerError> {
    if book.k() == 0 {
        return Err(TokenizerError::Config("empty codebook".into()));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(TokenizerError::Config(format!("temperature must be positive, got {temperature}")));
    }
    if z.dim() != book.dim() {
        return Err(TokenizerError::Shape(format!(
            "features have {} channels, codebook has D={}",
            z.dim(),
            book.dim()
        )));
    }
    let n = z.len();
    let k = book.k();
    let mut distances = Array2::zeros((n, k));
    let mut probs = Array2::zeros((n, k));
    let mut indices = Vec::with_capacity(n);
    let mut quantized = Array2::zeros((n, book.dim()));
    for (i, row) in z.data.rows().into_iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (j, c) in book.prototypes.rows().into_iter().enumerate() {
            let d = sq_dist(row, c);
            distances[[i, j]] = d;
            if d < best.1 {
                best = (j, d);
            }
        }
        probs.row_mut(i).assign(&softmax_neg(distances.row(i), temperature));
        indices.push(best.0 as u32);
        quantized.row_mut(i).assign(&book.prototypes.row(best.0));
    }
    Ok(QuantizeResult { h: z.h, w: z.w, indices, quantized, assignment_probs: probs, distances })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenizerLossConfig {
    /// Commitment weight inside the VQ term.
    pub beta: f64,
    /// Weight of the entropy term.
    pub lambda_e: f64,
    /// Temperature of the soft assignment.
    pub temperature: f64,
    /// Reserved; perceptual and adversarial terms are not computed.
    pub lambda_p: f64,
    /// Reserved; see `lambda_p`.
    pub lambda_g: f64,
}

impl Default for TokenizerLossConfig {
    fn default() -> Self {
        Self { beta: 0.25, lambda_e: 0.1, temperature: 1.0, lambda_p: 1.0, lambda_g: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub vq: f64,
    pub ent: f64,
    /// `vq + lambda_e * ent`
    pub total: f64,
    /// Gradient of `total` with respect to the encoder output.
    pub grad_z: Array2<f64>,
    /// Gradient of `total` with respect to the prototypes.
    pub grad_codebook: Array2<f64>,
}

fn entropy(p: ArrayView1<f64>) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Backpropagates `g_s`, a gradient with respect to `softmax(-d/T)`, to `z`
/// and the prototypes.
fn soft_assignment_backward(
    z: &Array2<f64>,
    book: &Codebook,
    probs: &Array2<f64>,
    g_s: &Array2<f64>,
    temperature: f64,
    grad_z: &mut Array2<f64>,
    grad_c: &mut Array2<f64>,
) {
    for n in 0..z.nrows() {
        let s = probs.row(n);
        let g = g_s.row(n);
        let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..book.k() {
            let da = s[k] * (g[k] - dot);
            if da == 0.0 {
                continue;
            }
            let dd = -da / temperature;
            for j in 0..book.dim() {
                let diff = z[[n, j]] - book.prototypes[[k, j]];
                grad_z[[n, j]] += 2.0 * dd * diff;
                grad_c[[k, j]] -= 2.0 * dd * diff;
            }
        }
    }
}

/// VQ and entropy losses with gradients.
///
/// `L_vq = mean_n( |sg(c_i) - z_n|^2 + beta |c_i - sg(z_n)|^2 )` and
/// `L_ent = mean_n H(s_n) - H(mean_n s_n)`.
pub fn tokenizer_losses(
    z: &FeatureGrid,
    result: &QuantizeResult,
    book: &Codebook,
    cfg: &TokenizerLossConfig,
) -> Result<LossBreakdown, TokenizerError> {
    if result.indices.len() != z.len() || z.dim() != book.dim() {
        return Err(TokenizerError::Shape("quantization result does not match features".into()));
    }
    let n = z.len() as f64;
    let zd = &z.data;
    let mut grad_z = Array2::zeros(zd.raw_dim());
    let mut grad_c = Array2::zeros(book.prototypes.raw_dim());

    let mut sq_sum = 0.0;
    for (i, &idx) in result.indices.iter().enumerate() {
        let c = book.prototypes.row(idx as usize);
        for j in 0..book.dim() {
            let diff = zd[[i, j]] - c[j];
            sq_sum += diff * diff;
            grad_z[[i, j]] += 2.0 * diff / n;
            grad_c[[idx as usize, j]] -= 2.0 * cfg.beta * diff / n;
        }
    }
    let vq = (1.0 + cfg.beta) * sq_sum / n;

    let log_s: Vec<Array1<f64>> =
        result.distances.rows().into_iter().map(|d| log_softmax_neg(d, cfg.temperature)).collect();
    let probs = &result.assignment_probs;
    let mean_p = probs.mean_axis(Axis(0)).expect("non-empty batch");
    let mean_h = probs.rows().into_iter().map(entropy).sum::<f64>() / n;
    let ent = mean_h - entropy(mean_p.view());

    if cfg.lambda_e != 0.0 {
        let mut g_s = Array2::zeros(probs.raw_dim());
        for (i, ls) in log_s.iter().enumerate() {
            for k in 0..book.k() {
                let lp = if mean_p[k] > 0.0 { mean_p[k].ln() } else { 0.0 };
                g_s[[i, k]] = cfg.lambda_e * (lp - ls[k]) / n;
            }
        }
        soft_assignment_backward(zd, book, probs, &g_s, cfg.temperature, &mut grad_z, &mut grad_c);
    }

    Ok(LossBreakdown { vq, ent, total: vq + cfg.lambda_e * ent, grad_z, grad_codebook: grad_c })
}

/// Straight-through backward of `z_q = c_i + sum_k (s_k - sg(s_k)) c_k`.
/// The forward value is the hard prototype; the soft term routes gradient to
/// every prototype and to `z`. Returns `(grad_z, grad_codebook)`.
pub fn ste_backward(
    z: &FeatureGrid,
    result: &QuantizeResult,
    book: &Codebook,
    temperature: f64,
    grad_zq: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut grad_z = Array2::zeros(z.data.raw_dim());
    let mut grad_c = Array2::zeros(book.prototypes.raw_dim());
    for (i, &idx) in result.indices.iter().enumerate() {
        let mut row = grad_c.row_mut(idx as usize);
        row += &grad_zq.row(i);
    }
    let g_s = grad_zq.dot(&book.prototypes.t());
    soft_assignment_backward(
        &z.data,
        book,
        &result.assignment_probs,
        &g_s,
        temperature,
        &mut grad_z,
        &mut grad_c,
    );
    (grad_z, grad_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn book() -> Codebook {
        Codebook::new(array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap()
    }

    #[test]
    fn exact_prototype_wins() {
        let b = book();
        let z = FeatureGrid::new(1, 1, array![[3.0, 3.0]]).unwrap();
        let q = quantize_ibq(&z, &b, 1.0).unwrap();
        assert_eq!(q.indices, vec![3]);
        assert_eq!(q.quantized.row(0).to_vec(), vec![3.0, 3.0]);
        let l = tokenizer_losses(&z, &q, &b, &TokenizerLossConfig::default()).unwrap();
        assert_eq!(l.vq, 0.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let b = book();
        let z = FeatureGrid::new(1, 1, array![[1.0, 0.0]]).unwrap();
        assert_eq!(quantize_ibq(&z, &b, 1.0).unwrap().indices, vec![0]);
    }

    #[test]
    fn probs_normalize_and_agree_with_indices() {
        let b = book();
        let z = FeatureGrid::new(1, 3, array![[0.2, 0.1], [2.5, 2.9], [-1.0, 1.7]]).unwrap();
        let q = quantize_ibq(&z, &b, 0.5).unwrap();
        for (row, &idx) in q.assignment_probs.rows().into_iter().zip(&q.indices) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let arg =
                row.iter().enumerate().fold((0, f64::MIN), |a, (i, &p)| if p > a.1 { (i, p) } else { a }).0;
            assert_eq!(arg as u32, idx);
        }
    }

    #[test]
    fn collapsed_assignment_entropy() {
        // Four far-apart codes, every sample sits on code 1: the batch-mean
        // distribution is one-hot, so both entropies vanish.
        let b = Codebook::new(array![[0.0], [100.0], [200.0], [300.0]]).unwrap();
        let z = FeatureGrid::new(1, 3, array![[100.0], [100.0], [100.0]]).unwrap();
        let q = quantize_ibq(&z, &b, 1.0).unwrap();
        let l = tokenizer_losses(&z, &q, &b, &TokenizerLossConfig::default()).unwrap();
        assert_eq!(l.ent, 0.0);

        let spread = FeatureGrid::new(1, 3, array![[0.0], [100.0], [200.0]]).unwrap();
        let q = quantize_ibq(&spread, &b, 1.0).unwrap();
        let l = tokenizer_losses(&spread, &q, &b, &TokenizerLossConfig::default()).unwrap();
        assert!((l.ent + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_codebook_rejected() {
        assert!(Codebook::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn utilization_counts() {
        assert_eq!(codebook_utilization(&[1, 0, 5, 0]), 0.5);
        assert_eq!(codebook_utilization(&[1, 1]), 1.0);
    }

    #[test]
    fn binary_round_trip() {
        let b = book();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"YVCB");
        assert_eq!(buf.len(), 12 + 4 * 8);
        assert_eq!(Codebook::read_from(&buf[..]).unwrap(), b);
        assert!(Codebook::read_from(&buf[..20]).is_err());
    }
}

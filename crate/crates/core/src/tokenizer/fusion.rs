use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use super::{FeatureGrid, TokenizerError};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// Two affine layers with a GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn init(rng: &mut impl Rng, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: uniform(rng, d_in, hidden),
            b1: Array1::zeros(hidden),
            w2: uniform(rng, hidden, d_out),
            b2: Array1::zeros(d_out),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let a1 = (x.dot(&self.w1) + &self.b1).mapv(gelu);
        a1.dot(&self.w2) + &self.b2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `d_geo x d_k`
    pub w_q: Array2<f64>,
    /// `d_sem x d_k`
    pub w_k: Array2<f64>,
    /// `d_sem x d_k`
    pub w_v: Array2<f64>,
    /// Input width `d_k + d_geo`, output width = code dimension.
    pub mlp: Mlp,
}

/// Gradients have the same layout as the weights.
pub type FusionGrads = FusionWeights;

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

impl FusionWeights {
    pub fn init(
        rng: &mut impl Rng,
        d_geo: usize,
        d_sem: usize,
        d_k: usize,
        hidden: usize,
        code_dim: usize,
    ) -> Self {
        Self {
            w_q: uniform(rng, d_geo, d_k),
            w_k: uniform(rng, d_sem, d_k),
            w_v: uniform(rng, d_sem, d_k),
            mlp: Mlp::init(rng, d_k + d_geo, hidden, code_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: Array2::zeros(self.w_q.raw_dim()),
            w_k: Array2::zeros(self.w_k.raw_dim()),
            w_v: Array2::zeros(self.w_v.raw_dim()),
            mlp: Mlp {
                w1: Array2::zeros(self.mlp.w1.raw_dim()),
                b1: Array1::zeros(self.mlp.b1.raw_dim()),
                w2: Array2::zeros(self.mlp.w2.raw_dim()),
                b2: Array1::zeros(self.mlp.b2.raw_dim()),
            },
        }
    }

    pub fn d_k(&self) -> usize {
        self.w_q.ncols()
    }

    pub fn code_dim(&self) -> usize {
        self.mlp.w2.ncols()
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        let Self { w_q, w_k, w_v, mlp } = self;
        let Mlp { w1, b1, w2, b2 } = mlp;
        [
            w_q.as_slice_mut().expect("standard layout"),
            w_k.as_slice_mut().expect("standard layout"),
            w_v.as_slice_mut().expect("standard layout"),
            w1.as_slice_mut().expect("standard layout"),
            b1.as_slice_mut().expect("standard layout"),
            w2.as_slice_mut().expect("standard layout"),
            b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 7] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s(&self.w_q),
            s(&self.w_k),
            s(&self.w_v),
            s(&self.mlp.w1),
            self.mlp.b1.as_slice().expect("standard layout"),
            s(&self.mlp.w2),
            self.mlp.b2.as_slice().expect("standard layout"),
        ]
    }

    fn check(&self, geo: &FeatureGrid, sem: &FeatureGrid) -> Result<(), TokenizerError> {
        let d_k = self.d_k();
        let shape_err = |what: &str| Err(TokenizerError::Shape(what.to_string()));
        if self.w_q.nrows() != geo.dim() {
            return shape_err("W_Q rows must equal the geometric feature width");
        }
        if self.w_k.nrows() != sem.dim() || self.w_v.nrows() != sem.dim() {
            return shape_err("W_K and W_V rows must equal the semantic feature width");
        }
        if self.w_k.ncols() != d_k || self.w_v.ncols() != d_k {
            return shape_err("W_Q, W_K and W_V must share d_k columns");
        }
        if self.mlp.w1.nrows() != d_k + geo.dim()
            || self.mlp.b1.len() != self.mlp.w1.ncols()
            || self.mlp.w2.nrows() != self.mlp.w1.ncols()
            || self.mlp.b2.len() != self.mlp.w2.ncols()
        {
            return shape_err("MLP layer shapes are inconsistent");
        }
        Ok(())
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities, `n_geo x n_sem`.
    pub attn: Array2<f64>,
    pub z_syn: Array2<f64>,
    pub x: Array2<f64>,
    pub h1: Array2<f64>,
    pub a1: Array2<f64>,
}

/// Queries from the geometric grid attend over keys and values from the
/// semantic grid. Output keeps the geometric grid shape with `d_k` channels.
pub fn cross_attention_fuse(
    geo: &FeatureGrid,
    sem: &FeatureGrid,
    w: &FusionWeights,
) -> Result<FeatureGrid, TokenizerError> {
    w.check(geo, sem)?;
    let (z, _, _, _, _) = attend(geo, sem, w);
    FeatureGrid::new(geo.h, geo.w, z)
}

#[allow(clippy::type_complexity)]
fn attend(
    geo: &FeatureGrid,
    sem: &FeatureGrid,
    w: &FusionWeights,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let q = geo.data.dot(&w.w_q);
    let k = sem.data.dot(&w.w_k);
    let v = sem.data.dot(&w.w_v);
    let mut attn = q.dot(&k.t()) / (w.d_k() as f64).sqrt();
    softmax_rows(&mut attn);
    let z = attn.dot(&v);
    (z, q, k, v, attn)
}

/// Fuse, concatenate with the geometric features, and project. Returns the
/// pre-quantization grid and the cache for [`encode_backward`].
pub fn encode(
    geo: &FeatureGrid,
    sem: &FeatureGrid,
    w: &FusionWeights,
) -> Result<(FeatureGrid, EncodeCache), TokenizerError> {
    w.check(geo, sem)?;
    let (z_syn, q, k, v, attn) = attend(geo, sem, w);
    let x = concatenate(Axis(1), &[z_syn.view(), geo.data.view()]).expect("row counts agree by construction");
    let h1 = x.dot(&w.mlp.w1) + &w.mlp.b1;
    let a1 = h1.mapv(gelu);
    let out = a1.dot(&w.mlp.w2) + &w.mlp.b2;
    let grid = FeatureGrid::new(geo.h, geo.w, out)?;
    Ok((grid, EncodeCache { q, k, v, attn, z_syn, x, h1, a1 }))
}

/// Parameter gradients given `dz`, the loss gradient with respect to the
/// encoder output.
pub fn encode_backward(
    geo: &FeatureGrid,
    sem: &FeatureGrid,
    w: &FusionWeights,
    cache: &EncodeCache,
    dz: &Array2<f64>,
) -> FusionGrads {
    let d_k = w.d_k();
    let da1 = dz.dot(&w.mlp.w2.t());
    let dh1 = da1 * cache.h1.mapv(gelu_grad);
    let dx = dh1.dot(&w.mlp.w1.t());
    let dz_syn = dx.slice(s![.., ..d_k]);

    let dv = cache.attn.t().dot(&dz_syn);
    let dattn = dz_syn.dot(&cache.v.t());
    let mut dscores = &cache.attn * &dattn;
    for (mut row, a) in dscores.rows_mut().into_iter().zip(cache.attn.rows()) {
        let dot = row.sum();
        row.zip_mut_with(&a, |g, &p| *g -= p * dot);
    }
    dscores /= (d_k as f64).sqrt();
    let dq = dscores.dot(&cache.k);
    let dk = dscores.t().dot(&cache.q);

    FusionGrads {
        w_q: geo.data.t().dot(&dq),
        w_k: sem.data.t().dot(&dk),
        w_v: sem.data.t().dot(&dv),
        mlp: Mlp {
            w1: cache.x.t().dot(&dh1),
            b1: dh1.sum_axis(Axis(0)),
            w2: cache.a1.t().dot(dz),
            b2: dz.sum_axis(Axis(0)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureGrid {
        FeatureGrid::new(h, w, Array2::from_shape_simple_fn((h * w, d), || rng.random_range(-1.0..1.0)))
            .unwrap()
    }

    #[test]
    fn single_key_copies_value_projection() {
        let geo = FeatureGrid::new(2, 1, array![[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let sem = FeatureGrid::new(1, 1, array![[0.5, -0.25]]).unwrap();
        let eye = Array2::eye(2);
        let w = FusionWeights {
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye,
            mlp: Mlp {
                w1: Array2::zeros((4, 1)),
                b1: Array1::zeros(1),
                w2: Array2::zeros((1, 1)),
                b2: Array1::zeros(1),
            },
        };
        let z = cross_attention_fuse(&geo, &sem, &w).unwrap();
        for row in z.data.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -0.25]);
        }
    }

    #[test]
    fn attention_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geo = grid(&mut rng, 3, 3, 5);
        let sem = grid(&mut rng, 2, 4, 6);
        let w = FusionWeights::init(&mut rng, 5, 6, 4, 8, 3);
        let (_, cache) = encode(&geo, &sem, &w).unwrap();
        for row in cache.attn.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geo = grid(&mut rng, 2, 2, 5);
        let sem = grid(&mut rng, 2, 2, 6);
        let w = FusionWeights::init(&mut rng, 6, 6, 4, 8, 3);
        assert!(matches!(cross_attention_fuse(&geo, &sem, &w), Err(TokenizerError::Shape(_))));
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}

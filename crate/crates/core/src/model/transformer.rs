use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{BlockOffsets, Item, MixedSequence, Model, ModelError};
use crate::tokenizer::{gelu, gelu_grad};

const LN_EPS: f64 = 1e-5;

fn mat(p: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout is consistent")
}

fn vec1(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn mat_mut(p: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut p[off..off + r * c]).expect("layout is consistent")
}

fn vec_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * r);
        rstd[i] = r;
    }
    let y = &xhat * &g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates `dg` and `db`.
fn ln_backward(
    dy: &Array2<f64>,
    c: &LnCache,
    g: ArrayView1<f64>,
    mut dg: ArrayViewMut1<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    dg += &(dy * &c.xhat).sum_axis(Axis(0));
    db += &dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = dh.sum() / d;
        let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = c.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = r * (dh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LnCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    /// Per head, `L x L` lower-triangular attention probabilities.
    probs: Vec<Array2<f64>>,
    att: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    fc_pre: Array2<f64>,
    fc_act: Array2<f64>,
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: Vec<Option<usize>>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Array2<f64>,
}

fn embed(model: &Model, seq: &MixedSequence) -> Result<(Array2<f64>, Vec<Option<usize>>), ModelError> {
    let cfg = &model.cfg;
    let (l, d) = (seq.len(), cfg.d_model);
    if l > cfg.max_seq {
        return Err(ModelError::Capacity { len: l, max: cfg.max_seq });
    }
    let p = &model.params;
    let tok = mat(p, model.layout.tok_emb, cfg.vocab_size, d);
    let pos = mat(p, model.layout.pos_emb, cfg.max_seq, d);
    let mut x = Array2::zeros((l, d));
    let mut tokens = Vec::with_capacity(l);
    for (i, item) in seq.items.iter().enumerate() {
        let mut row = x.row_mut(i);
        match item {
            Item::Token(t) => {
                let t = *t as usize;
                if t >= cfg.vocab_size {
                    return Err(ModelError::Token { id: t as u32, vocab: cfg.vocab_size });
                }
                row.assign(&tok.row(t));
                tokens.push(Some(t));
            }
            Item::Vision(v) => {
                if v.len() != d {
                    return Err(ModelError::Shape(format!(
                        "vision embedding at position {i} has width {}, expected {d}",
                        v.len()
                    )));
                }
                row.assign(&ArrayView1::from(v.as_slice()));
                tokens.push(None);
            }
        }
        row += &pos.row(i);
    }
    Ok((x, tokens))
}

fn block_forward(
    p: &[f64],
    o: &BlockOffsets,
    x: &Array2<f64>,
    n_heads: usize,
    d_ff: usize,
) -> (Array2<f64>, BlockCache) {
    let (l, d) = x.dim();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let (h1, ln1) = ln_forward(x, vec1(p, o.ln1_g, d), vec1(p, o.ln1_b, d));
    let qkv = h1.dot(&mat(p, o.w_qkv, d, 3 * d)) + vec1(p, o.b_qkv, 3 * d);
    let mut att = Array2::zeros((l, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
        let k = qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
        let v = qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
        let mut pr = Array2::zeros((l, l));
        for i in 0..l {
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let sc = q.row(i).dot(&k.row(j)) * scale;
                pr[[i, j]] = sc;
                max = max.max(sc);
            }
            let mut sum = 0.0;
            for j in 0..=i {
                let e = (pr[[i, j]] - max).exp();
                pr[[i, j]] = e;
                sum += e;
            }
            for j in 0..=i {
                pr[[i, j]] /= sum;
            }
            for c in 0..hd {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += pr[[i, j]] * v[[j, c]];
                }
                att[[i, h * hd + c]] = acc;
            }
        }
        probs.push(pr);
    }
    let x_mid = x + &(att.dot(&mat(p, o.w_o, d, d)) + vec1(p, o.b_o, d));
    let (h2, ln2) = ln_forward(&x_mid, vec1(p, o.ln2_g, d), vec1(p, o.ln2_b, d));
    let fc_pre = h2.dot(&mat(p, o.w_fc, d, d_ff)) + vec1(p, o.b_fc, d_ff);
    let fc_act = fc_pre.mapv(gelu);
    let out = &x_mid + &(fc_act.dot(&mat(p, o.w_proj, d_ff, d)) + vec1(p, o.b_proj, d));
    (out, BlockCache { ln1, h1, qkv, probs, att, ln2, h2, fc_pre, fc_act })
}

/// Causal forward pass; returns `L x V` logits and the activation cache.
pub fn forward(model: &Model, seq: &MixedSequence) -> Result<(Array2<f64>, ForwardCache), ModelError> {
    let cfg = &model.cfg;
    let p = &model.params;
    let (mut x, tokens) = embed(model, seq)?;
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for o in &model.layout.blocks {
        let (out, cache) = block_forward(p, o, &x, cfg.n_heads, cfg.d_ff);
        blocks.push(cache);
        x = out;
    }
    let d = cfg.d_model;
    let (hf, lnf) = ln_forward(&x, vec1(p, model.layout.lnf_g, d), vec1(p, model.layout.lnf_b, d));
    let logits =
        hf.dot(&mat(p, model.layout.w_out, d, cfg.vocab_size)) + vec1(p, model.layout.b_out, cfg.vocab_size);
    Ok((logits, ForwardCache { tokens, blocks, lnf, hf }))
}

/// Gradient of the loss with respect to the flat parameters, given its
/// gradient with respect to the logits.
pub fn backward(model: &Model, cache: &ForwardCache, dlogits: &Array2<f64>) -> Vec<f64> {
    let cfg = &model.cfg;
    let lay = &model.layout;
    let p = &model.params;
    let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff);
    let hd = d / cfg.n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut g = vec![0.0; lay.total];

    mat_mut(&mut g, lay.w_out, d, v).assign(&cache.hf.t().dot(dlogits));
    vec_mut(&mut g, lay.b_out, v).assign(&dlogits.sum_axis(Axis(0)));
    let dhf = dlogits.dot(&mat(p, lay.w_out, d, v).t());
    let mut dx = {
        let (gg, gb) = split_pair(&mut g, lay.lnf_g, lay.lnf_b, d);
        ln_backward(&dhf, &cache.lnf, vec1(p, lay.lnf_g, d), gg, gb)
    };

    for (o, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
        let l = dx.nrows();
        // MLP branch.
        mat_mut(&mut g, o.w_proj, f, d).assign(&c.fc_act.t().dot(&dx));
        vec_mut(&mut g, o.b_proj, d).assign(&dx.sum_axis(Axis(0)));
        let dfc_act = dx.dot(&mat(p, o.w_proj, f, d).t());
        let dfc_pre = dfc_act * c.fc_pre.mapv(gelu_grad);
        mat_mut(&mut g, o.w_fc, d, f).assign(&c.h2.t().dot(&dfc_pre));
        vec_mut(&mut g, o.b_fc, f).assign(&dfc_pre.sum_axis(Axis(0)));
        let dh2 = dfc_pre.dot(&mat(p, o.w_fc, d, f).t());
        let dx_mid = {
            let (gg, gb) = split_pair(&mut g, o.ln2_g, o.ln2_b, d);
            &dx + &ln_backward(&dh2, &c.ln2, vec1(p, o.ln2_g, d), gg, gb)
        };

        // Attention branch.
        mat_mut(&mut g, o.w_o, d, d).assign(&c.att.t().dot(&dx_mid));
        vec_mut(&mut g, o.b_o, d).assign(&dx_mid.sum_axis(Axis(0)));
        let datt = dx_mid.dot(&mat(p, o.w_o, d, d).t());
        let mut dqkv = Array2::zeros((l, 3 * d));
        for h in 0..cfg.n_heads {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            let pr = &c.probs[h];
            for i in 0..l {
                let mut dp = vec![0.0; i + 1];
                for j in 0..=i {
                    let mut acc = 0.0;
                    for cc in 0..hd {
                        acc += datt[[i, h * hd + cc]] * c.qkv[[j, vo + cc]];
                        dqkv[[j, vo + cc]] += pr[[i, j]] * datt[[i, h * hd + cc]];
                    }
                    dp[j] = acc;
                }
                let dot: f64 = (0..=i).map(|j| pr[[i, j]] * dp[j]).sum();
                for j in 0..=i {
                    let ds = pr[[i, j]] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for cc in 0..hd {
                        dqkv[[i, qo + cc]] += ds * c.qkv[[j, ko + cc]];
                        dqkv[[j, ko + cc]] += ds * c.qkv[[i, qo + cc]];
                    }
                }
            }
        }
        mat_mut(&mut g, o.w_qkv, d, 3 * d).assign(&c.h1.t().dot(&dqkv));
        vec_mut(&mut g, o.b_qkv, 3 * d).assign(&dqkv.sum_axis(Axis(0)));
        let dh1 = dqkv.dot(&mat(p, o.w_qkv, d, 3 * d).t());
        dx = {
            let (gg, gb) = split_pair(&mut g, o.ln1_g, o.ln1_b, d);
            &dx_mid + &ln_backward(&dh1, &c.ln1, vec1(p, o.ln1_g, d), gg, gb)
        };
    }

    for (i, t) in cache.tokens.iter().enumerate() {
        if let Some(t) = t {
            let mut row = mat_mut(&mut g, lay.tok_emb, v, d);
            let mut r = row.row_mut(*t);
            r += &dx.row(i);
        }
        let mut pos = mat_mut(&mut g, lay.pos_emb, cfg.max_seq, d);
        let mut r = pos.row_mut(i);
        r += &dx.row(i);
    }
    g
}

/// Two disjoint `n`-length windows of `g`; `a` must precede `b`.
fn split_pair(
    g: &mut [f64],
    a: usize,
    b: usize,
    n: usize,
) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
    debug_assert!(a + n <= b);
    let (lo, hi) = g.split_at_mut(b);
    (ArrayViewMut1::from(&mut lo[a..a + n]), ArrayViewMut1::from(&mut hi[..n]))
}

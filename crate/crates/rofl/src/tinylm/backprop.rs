//! Manual reverse-mode differentiation of the transformer.
//!
//! Used by training, finetuning, and the input one-hot gradient that
//! drives discrete prompt optimization. Kept separate from the cached
//! inference path in `model.rs`; the two agree to float tolerance and the
//! gradient is checked against finite differences of the inference path.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1};

use super::checkpoint::{Checkpoint, Tensor};
use super::model::{gelu, ModelView, LN_EPS};
use super::vocab::TokenId;
use crate::{Error, Result};

fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * du
}

/// Gradients for every named tensor, in checkpoint layout.
pub type Grads = BTreeMap<String, Tensor>;

pub(crate) fn add_grad2(grads: &mut Grads, name: &str, a: &Array2<f32>) {
    let t = grads.entry(name.to_string()).or_insert_with(|| Tensor {
        dims: vec![a.nrows(), a.ncols()],
        data: vec![0.0; a.len()],
    });
    for (g, &v) in t.data.iter_mut().zip(a.iter()) {
        *g += v;
    }
}

pub(crate) fn add_grad1(grads: &mut Grads, name: &str, a: &Array1<f32>) {
    let t = grads.entry(name.to_string()).or_insert_with(|| Tensor {
        dims: vec![a.len()],
        data: vec![0.0; a.len()],
    });
    for (g, &v) in t.data.iter_mut().zip(a.iter()) {
        *g += v;
    }
}

struct LnCache {
    xhat: Array2<f32>,
    inv_std: Vec<f32>,
}

fn ln_forward(x: &Array2<f32>, g: ArrayView1<f32>, b: ArrayView1<f32>) -> (Array2<f32>, LnCache) {
    let d = x.ncols();
    let mut out = Array2::zeros(x.raw_dim());
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Vec::with_capacity(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d as f32;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[[i, j]] = h;
            out[[i, j]] = h * g[j] + b[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

fn ln_backward(
    dy: &Array2<f32>,
    cache: &LnCache,
    g: ArrayView1<f32>,
) -> (Array2<f32>, Array1<f32>, Array1<f32>) {
    let d = dy.ncols();
    let mut dx = Array2::zeros(dy.raw_dim());
    let mut dg = Array1::zeros(d);
    let mut db = Array1::zeros(d);
    for i in 0..dy.nrows() {
        let inv = cache.inv_std[i];
        let mut mean_t = 0.0f32;
        let mut mean_tx = 0.0f32;
        for j in 0..d {
            let t = dy[[i, j]] * g[j];
            mean_t += t;
            mean_tx += t * cache.xhat[[i, j]];
            dg[j] += dy[[i, j]] * cache.xhat[[i, j]];
            db[j] += dy[[i, j]];
        }
        mean_t /= d as f32;
        mean_tx /= d as f32;
        for j in 0..d {
            let t = dy[[i, j]] * g[j];
            dx[[i, j]] = inv * (t - mean_t - cache.xhat[[i, j]] * mean_tx);
        }
    }
    (dx, dg, db)
}

struct LayerActs {
    ln1: LnCache,
    a: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    probs: Vec<Array2<f32>>, // per head, [T, T]
    o: Array2<f32>,
    ln2: LnCache,
    mnorm: Array2<f32>,
    h_pre: Array2<f32>,
    g_act: Array2<f32>,
}

/// Loss, parameter gradients, and the gradient with respect to the input
/// embedding rows, for a single sequence with explicit loss positions.
pub(crate) struct SeqBackprop {
    pub loss: f64,
    pub grads: Grads,
    pub d_x0: Array2<f32>,
}

/// Sum of -log p(target | prefix) over `(position, target)` pairs, with
/// full reverse-mode gradients. `position` indexes the logits row used.
pub(crate) fn backprop_seq(
    ck: &Checkpoint,
    tokens: &[TokenId],
    loss_terms: &[(usize, TokenId)],
) -> Result<SeqBackprop> {
    let m = ModelView::new(ck);
    let cfg = &m.cfg;
    let t_len = tokens.len();
    if t_len > cfg.ctx_len {
        return Err(Error::ContextOverflow {
            len: t_len,
            ctx: cfg.ctx_len,
        });
    }
    for t in tokens {
        if (t.0 as usize) >= cfg.vocab {
            return Err(Error::InvalidToken {
                id: t.0,
                vocab: cfg.vocab,
            });
        }
    }
    let x0 = super::model::embed_tokens(&m, tokens, 0);
    backprop_embedded(ck, x0, loss_terms)
}

/// Same as `backprop_seq` but from explicit input embeddings.
pub(crate) fn backprop_embedded(
    ck: &Checkpoint,
    x0: Array2<f32>,
    loss_terms: &[(usize, TokenId)],
) -> Result<SeqBackprop> {
    let m = ModelView::new(ck);
    let cfg = m.cfg;
    let t_len = x0.nrows();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();

    // ---- forward with caches ----
    let mut acts = Vec::with_capacity(cfg.n_layers);
    let mut x = x0.clone();
    for layer in &m.layers {
        let x_in = x.clone();
        let (a, ln1) = ln_forward(&x, layer.ln1_g, layer.ln1_b);
        let q = a.dot(&layer.wq);
        let k = a.dot(&layer.wk);
        let v = a.dot(&layer.wv);
        let mut o = Array2::<f32>::zeros((t_len, d));
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let q_h = q.slice(cols);
            let k_h = k.slice(cols);
            let v_h = v.slice(cols);
            let mut sc = q_h.dot(&k_h.t());
            sc.mapv_inplace(|v| v * scale);
            for i in 0..t_len {
                for j in (i + 1)..t_len {
                    sc[[i, j]] = f32::NEG_INFINITY;
                }
                let max = sc
                    .row(i)
                    .iter()
                    .take(i + 1)
                    .cloned()
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f64;
                for j in 0..t_len {
                    let e = if j <= i { (sc[[i, j]] - max).exp() } else { 0.0 };
                    sc[[i, j]] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for j in 0..t_len {
                    sc[[i, j]] *= inv;
                }
            }
            o.slice_mut(cols).assign(&sc.dot(&v_h));
            probs.push(sc);
        }
        let x_mid = &x_in + &o.dot(&layer.wo);
        let (mnorm, ln2) = ln_forward(&x_mid, layer.ln2_g, layer.ln2_b);
        let mut h_pre = mnorm.dot(&layer.w1);
        for mut row in h_pre.outer_iter_mut() {
            row += &layer.b1;
        }
        let g_act = h_pre.mapv(gelu);
        let mut f = g_act.dot(&layer.w2);
        for mut row in f.outer_iter_mut() {
            row += &layer.b2;
        }
        x = &x_mid + &f;
        acts.push(LayerActs {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            mnorm,
            h_pre,
            g_act,
        });
    }
    let (y_norm, ln_f) = ln_forward(&x, m.ln_f_g, m.ln_f_b);
    let logits = y_norm.dot(&m.head);

    // ---- loss and dlogits ----
    let mut loss = 0.0f64;
    let mut dlogits = Array2::<f32>::zeros(logits.raw_dim());
    for &(pos, target) in loss_terms {
        assert!(pos < t_len, "loss position out of range");
        let row = logits.row(pos);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|&v| ((v as f64) - max).exp()).sum();
        loss -= (row[target.0 as usize] as f64) - max - sum.ln();
        for j in 0..cfg.vocab {
            let p = (((row[j] as f64) - max).exp() / sum) as f32;
            dlogits[[pos, j]] += p;
        }
        dlogits[[pos, target.0 as usize]] -= 1.0;
    }

    // ---- backward ----
    let mut grads = Grads::new();
    add_grad2(&mut grads, "head", &y_norm.t().dot(&dlogits));
    let dy_norm = dlogits.dot(&m.head.t());
    let (mut dx, dgf, dbf) = ln_backward(&dy_norm, &ln_f, m.ln_f_g);
    add_grad1(&mut grads, "ln_f.g", &dgf);
    add_grad1(&mut grads, "ln_f.b", &dbf);

    for (li, (layer, act)) in m.layers.iter().zip(&acts).enumerate().rev() {
        // MLP block
        let df = dx.clone();
        add_grad2(&mut grads, &format!("layer{li}.mlp.w2"), &act.g_act.t().dot(&df));
        add_grad1(&mut grads, &format!("layer{li}.mlp.b2"), &df.sum_axis(ndarray::Axis(0)));
        let dg_act = df.dot(&layer.w2.t());
        let mut dh_pre = dg_act;
        for (dv, &hv) in dh_pre.iter_mut().zip(act.h_pre.iter()) {
            *dv *= gelu_grad(hv);
        }
        add_grad2(&mut grads, &format!("layer{li}.mlp.w1"), &act.mnorm.t().dot(&dh_pre));
        add_grad1(&mut grads, &format!("layer{li}.mlp.b1"), &dh_pre.sum_axis(ndarray::Axis(0)));
        let dmnorm = dh_pre.dot(&layer.w1.t());
        let (dx_ln2, dg2, db2) = ln_backward(&dmnorm, &act.ln2, layer.ln2_g);
        add_grad1(&mut grads, &format!("layer{li}.ln2.g"), &dg2);
        add_grad1(&mut grads, &format!("layer{li}.ln2.b"), &db2);
        let dx_mid = &dx + &dx_ln2;

        // attention block
        add_grad2(&mut grads, &format!("layer{li}.attn.wo"), &act.o.t().dot(&dx_mid));
        let do_all = dx_mid.dot(&layer.wo.t());
        let mut dq = Array2::<f32>::zeros((t_len, d));
        let mut dk = Array2::<f32>::zeros((t_len, d));
        let mut dv = Array2::<f32>::zeros((t_len, d));
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &act.probs[h];
            let do_h = do_all.slice(cols);
            let v_h = act.v.slice(cols);
            let q_h = act.q.slice(cols);
            let k_h = act.k.slice(cols);
            let dp = do_h.dot(&v_h.t());
            dv.slice_mut(cols).assign(&p.t().dot(&do_h));
            // softmax backward per row
            let mut ds = Array2::<f32>::zeros((t_len, t_len));
            for i in 0..t_len {
                let mut dot = 0.0f32;
                for j in 0..=i {
                    dot += dp[[i, j]] * p[[i, j]];
                }
                for j in 0..=i {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&k_h));
            dk.slice_mut(cols).assign(&ds.t().dot(&q_h));
        }
        add_grad2(&mut grads, &format!("layer{li}.attn.wq"), &act.a.t().dot(&dq));
        add_grad2(&mut grads, &format!("layer{li}.attn.wk"), &act.a.t().dot(&dk));
        add_grad2(&mut grads, &format!("layer{li}.attn.wv"), &act.a.t().dot(&dv));
        let da = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
        let (dx_ln1, dg1, db1) = ln_backward(&da, &act.ln1, layer.ln1_g);
        add_grad1(&mut grads, &format!("layer{li}.ln1.g"), &dg1);
        add_grad1(&mut grads, &format!("layer{li}.ln1.b"), &db1);
        dx = &dx_mid + &dx_ln1;
    }

    Ok(SeqBackprop {
        loss,
        grads,
        d_x0: dx,
    })
}

/// Fold the input-embedding gradient of a token sequence back into the
/// embedding tables (used by training, where tokens are known).
pub(crate) fn accumulate_embedding_grads(
    grads: &mut Grads,
    tokens: &[TokenId],
    d_x0: &Array2<f32>,
    vocab: usize,
    ctx_len: usize,
) {
    let d = d_x0.ncols();
    {
        let t = grads.entry("tok_emb".to_string()).or_insert_with(|| Tensor {
            dims: vec![vocab, d],
            data: vec![0.0; vocab * d],
        });
        for (i, tok) in tokens.iter().enumerate() {
            let base = tok.0 as usize * d;
            for j in 0..d {
                t.data[base + j] += d_x0[[i, j]];
            }
        }
    }
    let t = grads.entry("pos_emb".to_string()).or_insert_with(|| Tensor {
        dims: vec![ctx_len, d],
        data: vec![0.0; ctx_len * d],
    });
    for i in 0..tokens.len() {
        for j in 0..d {
            t.data[i * d + j] += d_x0[[i, j]];
        }
    }
}

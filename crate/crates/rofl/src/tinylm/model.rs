//! Forward pass, decoding, and likelihood evaluation.
//!
//! Pre-LN decoder-only transformer. Evaluation runs through a single
//! block-wise code path with a key/value cache, so full-sequence scoring
//! and token-by-token decoding share the same arithmetic.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::checkpoint::{Checkpoint, ModelConfig};
use super::vocab::{template, TokenId};
use crate::{Error, Result};

pub(crate) const LN_EPS: f32 = 1e-5;

pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Borrowed, shape-checked view of a checkpoint's weights.
pub(crate) struct ModelView<'a> {
    pub cfg: ModelConfig,
    pub tok_emb: ArrayView2<'a, f32>,
    pub pos_emb: ArrayView2<'a, f32>,
    pub layers: Vec<LayerView<'a>>,
    pub ln_f_g: ArrayView1<'a, f32>,
    pub ln_f_b: ArrayView1<'a, f32>,
    pub head: ArrayView2<'a, f32>,
}

pub(crate) struct LayerView<'a> {
    pub ln1_g: ArrayView1<'a, f32>,
    pub ln1_b: ArrayView1<'a, f32>,
    pub wq: ArrayView2<'a, f32>,
    pub wk: ArrayView2<'a, f32>,
    pub wv: ArrayView2<'a, f32>,
    pub wo: ArrayView2<'a, f32>,
    pub ln2_g: ArrayView1<'a, f32>,
    pub ln2_b: ArrayView1<'a, f32>,
    pub w1: ArrayView2<'a, f32>,
    pub b1: ArrayView1<'a, f32>,
    pub w2: ArrayView2<'a, f32>,
    pub b2: ArrayView1<'a, f32>,
}

fn view2<'a>(ck: &'a Checkpoint, name: &str) -> ArrayView2<'a, f32> {
    let t = ck.tensor(name);
    assert_eq!(t.dims.len(), 2, "tensor {name} must be rank 2");
    ArrayView2::from_shape((t.dims[0], t.dims[1]), &t.data).expect("tensor shape")
}

fn view1<'a>(ck: &'a Checkpoint, name: &str) -> ArrayView1<'a, f32> {
    let t = ck.tensor(name);
    assert_eq!(t.dims.len(), 1, "tensor {name} must be rank 1");
    ArrayView1::from_shape(t.dims[0], &t.data).expect("tensor shape")
}

impl<'a> ModelView<'a> {
    pub fn new(ck: &'a Checkpoint) -> Self {
        let layers = (0..ck.config.n_layers)
            .map(|i| LayerView {
                ln1_g: view1(ck, &format!("layer{i}.ln1.g")),
                ln1_b: view1(ck, &format!("layer{i}.ln1.b")),
                wq: view2(ck, &format!("layer{i}.attn.wq")),
                wk: view2(ck, &format!("layer{i}.attn.wk")),
                wv: view2(ck, &format!("layer{i}.attn.wv")),
                wo: view2(ck, &format!("layer{i}.attn.wo")),
                ln2_g: view1(ck, &format!("layer{i}.ln2.g")),
                ln2_b: view1(ck, &format!("layer{i}.ln2.b")),
                w1: view2(ck, &format!("layer{i}.mlp.w1")),
                b1: view1(ck, &format!("layer{i}.mlp.b1")),
                w2: view2(ck, &format!("layer{i}.mlp.w2")),
                b2: view1(ck, &format!("layer{i}.mlp.b2")),
            })
            .collect();
        ModelView {
            cfg: ck.config,
            tok_emb: view2(ck, "tok_emb"),
            pos_emb: view2(ck, "pos_emb"),
            layers,
            ln_f_g: view1(ck, "ln_f.g"),
            ln_f_b: view1(ck, "ln_f.b"),
            head: view2(ck, "head"),
        }
    }
}

/// Per-layer key/value history for incremental evaluation.
#[derive(Clone)]
pub(crate) struct KvCache {
    k: Vec<Vec<f32>>, // per layer, len * d_model, row-major
    v: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        KvCache {
            k: vec![Vec::new(); n_layers],
            v: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }
}

pub(crate) fn layernorm_rows(x: &Array2<f32>, g: ArrayView1<f32>, b: ArrayView1<f32>) -> Array2<f32> {
    let d = x.ncols();
    let mut out = Array2::zeros((x.nrows(), d));
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d as f32;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            out[[i, j]] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
    out
}

fn check_tokens(cfg: &ModelConfig, tokens: &[TokenId], extra: usize) -> Result<()> {
    let total = tokens.len() + extra;
    if total > cfg.ctx_len {
        return Err(Error::ContextOverflow {
            len: total,
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
    Ok(())
}

/// Advance the cache by a block of input embeddings, returning the logits
/// for the new positions.
pub(crate) fn forward_embedded(
    m: &ModelView,
    cache: &mut KvCache,
    x0: Array2<f32>,
) -> Array2<f32> {
    let t_new = x0.nrows();
    let d = m.cfg.d_model;
    let n_heads = m.cfg.n_heads;
    let dh = m.cfg.head_dim();
    let start = cache.len;
    let total = start + t_new;
    let scale = 1.0 / (dh as f32).sqrt();

    let mut x = x0;
    for (li, layer) in m.layers.iter().enumerate() {
        let a = layernorm_rows(&x, layer.ln1_g, layer.ln1_b);
        let q = a.dot(&layer.wq);
        let k_new = a.dot(&layer.wk);
        let v_new = a.dot(&layer.wv);
        cache.k[li].extend_from_slice(k_new.as_slice().expect("contiguous"));
        cache.v[li].extend_from_slice(v_new.as_slice().expect("contiguous"));
        let k_all = ArrayView2::from_shape((total, d), &cache.k[li]).expect("cache shape");
        let v_all = ArrayView2::from_shape((total, d), &cache.v[li]).expect("cache shape");

        let mut attn_out = Array2::<f32>::zeros((t_new, d));
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let q_h = q.slice(cols);
            let k_h = k_all.slice(cols);
            let v_h = v_all.slice(cols);
            // scores for new rows against the whole history
            let mut sc = q_h.dot(&k_h.t());
            sc.mapv_inplace(|v| v * scale);
            for i in 0..t_new {
                let limit = start + i;
                for j in (limit + 1)..total {
                    sc[[i, j]] = f32::NEG_INFINITY;
                }
                // softmax in place over 0..=limit
                let row = sc.row(i);
                let max = row
                    .iter()
                    .take(limit + 1)
                    .cloned()
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f64;
                for j in 0..total {
                    let e = if j <= limit {
                        (sc[[i, j]] - max).exp()
                    } else {
                        0.0
                    };
                    sc[[i, j]] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for j in 0..total {
                    sc[[i, j]] *= inv;
                }
            }
            let o_h = sc.dot(&v_h);
            attn_out.slice_mut(cols).assign(&o_h);
        }
        x = x + attn_out.dot(&layer.wo);

        let mnorm = layernorm_rows(&x, layer.ln2_g, layer.ln2_b);
        let mut h1 = mnorm.dot(&layer.w1);
        for mut row in h1.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gelu(*v + layer.b1[j]);
            }
        }
        let mut f = h1.dot(&layer.w2);
        for mut row in f.outer_iter_mut() {
            row += &layer.b2;
        }
        x = x + f;
    }
    cache.len = total;

    let y = layernorm_rows(&x, m.ln_f_g, m.ln_f_b);
    y.dot(&m.head)
}

pub(crate) fn embed_tokens(m: &ModelView, tokens: &[TokenId], start: usize) -> Array2<f32> {
    let d = m.cfg.d_model;
    let mut x0 = Array2::zeros((tokens.len(), d));
    for (i, t) in tokens.iter().enumerate() {
        let e = m.tok_emb.row(t.0 as usize);
        let p = m.pos_emb.row(start + i);
        let mut row = x0.row_mut(i);
        row.assign(&e);
        row += &p;
    }
    x0
}

pub(crate) fn forward_block(
    m: &ModelView,
    cache: &mut KvCache,
    tokens: &[TokenId],
) -> Result<Array2<f32>> {
    check_tokens(&m.cfg, tokens, cache.len())?;
    let x0 = embed_tokens(m, tokens, cache.len());
    Ok(forward_embedded(m, cache, x0))
}

/// Full forward pass: next-token logits for every position.
pub fn forward(ck: &Checkpoint, tokens: &[TokenId]) -> Result<Array2<f32>> {
    let m = ModelView::new(ck);
    let mut cache = KvCache::new(ck.config.n_layers);
    forward_block(&m, &mut cache, tokens)
}

pub(crate) fn log_softmax_pick(logits: ArrayView1<f32>, target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&v| ((v as f64) - max).exp()).sum();
    (logits[target] as f64) - max - sum.ln()
}

/// Negative log-likelihood of `target` given `context`, summed over
/// target tokens.
pub fn nll(ck: &Checkpoint, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if context.is_empty() {
        return Err(Error::EmptyInput("context"));
    }
    let mut seq = context.to_vec();
    seq.extend_from_slice(target);
    let logits = forward(ck, &seq)?;
    let mut total = 0.0f64;
    for (j, t) in target.iter().enumerate() {
        total -= log_softmax_pick(logits.row(context.len() - 1 + j), t.0 as usize);
    }
    Ok(total)
}

fn argmax_lowest_id(row: ArrayView1<f32>) -> TokenId {
    let mut best = 0usize;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    TokenId(best as u16)
}

/// Greedy (top-1) continuation of the framed prompt. Ties break toward
/// the lowest token id; the result is fully deterministic.
pub fn greedy_decode(
    ck: &Checkpoint,
    system: &[TokenId],
    prompt: &[TokenId],
    resp_len: usize,
) -> Result<Vec<TokenId>> {
    decode_with(ck, system, prompt, resp_len, |row, _| argmax_lowest_id(row))
}

/// Temperature sampling from the framed prompt. Temperature 0 reduces to
/// greedy decoding exactly; any positive temperature draws from
/// softmax(logits / temperature) with a generator derived from `seed`.
pub fn sample_decode(
    ck: &Checkpoint,
    system: &[TokenId],
    prompt: &[TokenId],
    resp_len: usize,
    temperature: f32,
    seed: u64,
) -> Result<Vec<TokenId>> {
    if temperature < 0.0 {
        return Err(Error::NegativeTemperature(temperature));
    }
    if temperature == 0.0 {
        return greedy_decode(ck, system, prompt, resp_len);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    decode_with(ck, system, prompt, resp_len, move |row, _| {
        // softmax in f64, CDF scan in token-id order
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let temp = temperature as f64;
        let weights: Vec<f64> = row
            .iter()
            .map(|&v| (((v as f64) - max) / temp).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let draw: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if draw < acc {
                return TokenId(j as u16);
            }
        }
        TokenId((row.len() - 1) as u16)
    })
}

fn decode_with<F>(
    ck: &Checkpoint,
    system: &[TokenId],
    prompt: &[TokenId],
    resp_len: usize,
    mut pick: F,
) -> Result<Vec<TokenId>>
where
    F: FnMut(ArrayView1<f32>, usize) -> TokenId,
{
    if resp_len == 0 {
        return Err(Error::InvalidArgument("resp_len must be >= 1".into()));
    }
    let seq = template(ck.config.vocab, system, prompt);
    check_tokens(&ck.config, &seq, resp_len)?;
    let m = ModelView::new(ck);
    let mut cache = KvCache::new(ck.config.n_layers);
    let mut logits = forward_block(&m, &mut cache, &seq)?;
    let mut out = Vec::with_capacity(resp_len);
    for step in 0..resp_len {
        let next = pick(logits.row(logits.nrows() - 1), step);
        out.push(next);
        if step + 1 < resp_len {
            logits = forward_block(&m, &mut cache, &[next])?;
        }
    }
    Ok(out)
}

/// Next-token logits after `prefix` (which must be non-empty).
pub fn next_token_logits(ck: &Checkpoint, prefix: &[TokenId]) -> Result<Vec<f32>> {
    if prefix.is_empty() {
        return Err(Error::EmptyInput("prefix"));
    }
    let logits = forward(ck, prefix)?;
    Ok(logits.row(logits.nrows() - 1).to_vec())
}

/// Token ids ordered by ascending next-token probability (ties toward
/// the lowest id), restricted to ids below `limit`.
pub(crate) fn bottom_order(logits: &[f32], limit: usize) -> Vec<TokenId> {
    let mut ids: Vec<usize> = (0..limit.min(logits.len())).collect();
    ids.sort_by(|&a, &b| {
        logits[a]
            .partial_cmp(&logits[b])
            .expect("finite logits")
            .then(a.cmp(&b))
    });
    ids.into_iter().map(|i| TokenId(i as u16)).collect()
}

/// Draw a token uniformly from the `k` least-probable continuations of
/// `prefix`. Deterministic for a fixed seed.
pub fn bottom_k_next(ck: &Checkpoint, prefix: &[TokenId], k: usize, seed: u64) -> Result<TokenId> {
    if k == 0 || k > ck.config.vocab {
        return Err(Error::BadBottomK {
            k,
            vocab: ck.config.vocab,
        });
    }
    let logits = next_token_logits(ck, prefix)?;
    let order = bottom_order(&logits, ck.config.vocab);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(order[rng.gen_range(0..k)])
}

/// exp(mean token NLL) over a byte string, evaluated in windows with a
/// one-token overlap so every byte after the first is predicted once.
pub fn perplexity(ck: &Checkpoint, text: &[u8]) -> Result<f64> {
    if text.len() < 2 {
        return Err(Error::TextTooShort { len: text.len() });
    }
    let tokens = super::vocab::tokenize(text);
    perplexity_tokens(ck, &tokens)
}

/// Perplexity over an explicit token sequence (length >= 2).
pub fn perplexity_tokens(ck: &Checkpoint, tokens: &[TokenId]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::TextTooShort { len: tokens.len() });
    }
    let ctx = ck.config.ctx_len;
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut start = 0usize;
    while start + 1 < tokens.len() {
        let end = (start + ctx).min(tokens.len());
        let window = &tokens[start..end];
        total += nll(ck, &window[..1], &window[1..])?;
        count += window.len() - 1;
        if end == tokens.len() {
            break;
        }
        start = end - 1;
    }
    Ok((total / count as f64).exp())
}

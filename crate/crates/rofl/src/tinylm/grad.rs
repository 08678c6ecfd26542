//! Gradient of the response NLL with respect to a one-hot relaxation of
//! the prompt tokens — the signal consumed by greedy coordinate gradient
//! search — plus the relaxed-input likelihood used to cross-check it.

use ndarray::{Array2, ArrayView2};
use std::ops::Range;

use super::backprop::backprop_seq;
use super::checkpoint::Checkpoint;
use super::model::{forward_embedded, KvCache, ModelView};
use super::vocab::{template, template_prompt_offset, TokenId};
use crate::{Error, Result};

/// Entry (i, t): d(-log p(y | h, x)) / d(one-hot of token t at prompt
/// position span.start + i). Computed by treating each prompt position as
/// a one-hot row vector multiplying the embedding table.
pub fn input_onehot_gradient(
    ck: &Checkpoint,
    system: &[TokenId],
    prompt: &[TokenId],
    response: &[TokenId],
    span: Range<usize>,
) -> Result<Array2<f32>> {
    if response.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if span.start >= span.end || span.end > prompt.len() {
        return Err(Error::BadSpan {
            start: span.start,
            end: span.end,
            len: prompt.len(),
        });
    }
    let mut tokens = template(ck.config.vocab, system, prompt);
    let template_len = tokens.len();
    tokens.extend_from_slice(response);
    let loss_terms: Vec<(usize, TokenId)> = response
        .iter()
        .enumerate()
        .map(|(j, &t)| (template_len - 1 + j, t))
        .collect();
    let bp = backprop_seq(ck, &tokens, &loss_terms)?;

    let offset = template_prompt_offset(ck.config.vocab, system.len());
    let m = ModelView::new(ck);
    let rows = bp
        .d_x0
        .slice(ndarray::s![offset + span.start..offset + span.end, ..]);
    Ok(rows.dot(&m.tok_emb.t()))
}

/// -log p(y | h, x) where the prompt positions are given as arbitrary
/// rows over the vocabulary instead of hard tokens. With one-hot rows
/// this equals `nll` over the framed sequence; it exists so gradient
/// checks can perturb a single coordinate.
pub fn relaxed_prompt_nll(
    ck: &Checkpoint,
    system: &[TokenId],
    prompt_rows: ArrayView2<f32>,
    response: &[TokenId],
) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if prompt_rows.ncols() != ck.config.vocab {
        return Err(Error::InvalidArgument(format!(
            "prompt rows have width {}, vocabulary is {}",
            prompt_rows.ncols(),
            ck.config.vocab
        )));
    }
    let x_len = prompt_rows.nrows();
    let placeholder = vec![TokenId(0); x_len];
    let mut tokens = template(ck.config.vocab, system, &placeholder);
    let template_len = tokens.len();
    tokens.extend_from_slice(response);
    if tokens.len() > ck.config.ctx_len {
        return Err(Error::ContextOverflow {
            len: tokens.len(),
            ctx: ck.config.ctx_len,
        });
    }

    let m = ModelView::new(ck);
    let mut x0 = super::model::embed_tokens(&m, &tokens, 0);
    let offset = template_prompt_offset(ck.config.vocab, system.len());
    for i in 0..x_len {
        let mix = prompt_rows.row(i).dot(&m.tok_emb);
        for j in 0..ck.config.d_model {
            x0[[offset + i, j]] = mix[j] + m.pos_emb[[offset + i, j]];
        }
    }
    let mut cache = KvCache::new(ck.config.n_layers);
    let logits = forward_embedded(&m, &mut cache, x0);
    let mut total = 0.0f64;
    for (j, t) in response.iter().enumerate() {
        let row = logits.row(template_len - 1 + j);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|&v| ((v as f64) - max).exp()).sum();
        total -= (row[t.0 as usize] as f64) - max - sum.ln();
    }
    Ok(total)
}

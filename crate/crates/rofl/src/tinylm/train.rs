//! Deterministic initialization, next-token pretraining, supervised
//! finetuning on instruction/response pairs, and low-rank adaptation.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::backprop::{accumulate_embedding_grads, backprop_seq, Grads};
use super::checkpoint::{Checkpoint, ModelConfig, Tensor};
use super::vocab::{template, tokenize, TokenId};
use crate::{Error, Result};

/// Optimization hyperparameters shared by pretraining and finetuning.
/// `steps` drives `train`, `epochs` drives the finetuning entry points.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: usize,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seq_len: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 600,
            epochs: 3,
            lr: 3e-4,
            batch_size: 8,
            seq_len: 64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha20Rng, std: f32) -> f32 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32) * std
}

fn random_tensor(rng: &mut ChaCha20Rng, dims: &[usize], std: f32) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor {
        dims: dims.to_vec(),
        data: (0..n).map(|_| normal(rng, std)).collect(),
    }
}

fn ones(dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor {
        dims: dims.to_vec(),
        data: vec![1.0; n],
    }
}

/// Deterministic weight initialization from `config.seed`. The returned
/// checkpoint records itself as the root of a new lineage.
pub fn init_checkpoint(config: &ModelConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed as u64);
    let d = config.d_model;
    let hid = 4 * d;
    let resid_std = 0.02 / ((2 * config.n_layers) as f32).sqrt();
    let mut tensors = BTreeMap::new();
    tensors.insert("tok_emb".into(), random_tensor(&mut rng, &[config.vocab, d], 0.02));
    tensors.insert("pos_emb".into(), random_tensor(&mut rng, &[config.ctx_len, d], 0.01));
    for i in 0..config.n_layers {
        tensors.insert(format!("layer{i}.ln1.g"), ones(&[d]));
        tensors.insert(format!("layer{i}.ln1.b"), Tensor::zeros(&[d]));
        tensors.insert(format!("layer{i}.attn.wq"), random_tensor(&mut rng, &[d, d], 0.02));
        tensors.insert(format!("layer{i}.attn.wk"), random_tensor(&mut rng, &[d, d], 0.02));
        tensors.insert(format!("layer{i}.attn.wv"), random_tensor(&mut rng, &[d, d], 0.02));
        tensors.insert(format!("layer{i}.attn.wo"), random_tensor(&mut rng, &[d, d], resid_std));
        tensors.insert(format!("layer{i}.ln2.g"), ones(&[d]));
        tensors.insert(format!("layer{i}.ln2.b"), Tensor::zeros(&[d]));
        tensors.insert(format!("layer{i}.mlp.w1"), random_tensor(&mut rng, &[d, hid], 0.02));
        tensors.insert(format!("layer{i}.mlp.b1"), Tensor::zeros(&[hid]));
        tensors.insert(format!("layer{i}.mlp.w2"), random_tensor(&mut rng, &[hid, d], resid_std));
        tensors.insert(format!("layer{i}.mlp.b2"), Tensor::zeros(&[d]));
    }
    tensors.insert("ln_f.g".into(), ones(&[d]));
    tensors.insert("ln_f.b".into(), Tensor::zeros(&[d]));
    tensors.insert("head".into(), random_tensor(&mut rng, &[d, config.vocab], 0.02));
    let mut ck = Checkpoint {
        config: *config,
        tensors,
        quant_bits: 32,
        lineage_id: [0; 32],
    };
    ck.lineage_id = ck.tensors_digest();
    Ok(ck)
}

struct Adam {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    t: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    fn new(tcfg: &TrainConfig) -> Self {
        Adam {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &Grads, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = match params.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.data.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.data.len()]);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

fn merge_grads(total: &mut Grads, part: Grads) {
    for (name, t) in part {
        match total.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data.iter_mut().zip(&t.data) {
                    *a += b;
                }
            }
            None => {
                total.insert(name, t);
            }
        }
    }
}

fn scale_grads(grads: &mut Grads, factor: f32) {
    for t in grads.values_mut() {
        for v in t.data.iter_mut() {
            *v *= factor;
        }
    }
}

/// One optimizer step over a batch of (sequence, loss terms) pairs.
/// Gradients are averaged over the number of loss terms; per-sequence
/// work runs in parallel but is merged in batch order so the result does
/// not depend on thread count.
fn batch_step(
    ck: &mut Checkpoint,
    adam: &mut Adam,
    batch: &[(Vec<TokenId>, Vec<(usize, TokenId)>)],
    lr: f32,
) -> Result<f64> {
    let ck_ref: &Checkpoint = ck;
    let parts: Vec<_> = batch
        .par_iter()
        .map(|(tokens, terms)| {
            backprop_seq(ck_ref, tokens, terms).map(|mut bp| {
                accumulate_embedding_grads(
                    &mut bp.grads,
                    tokens,
                    &bp.d_x0,
                    ck_ref.config.vocab,
                    ck_ref.config.ctx_len,
                );
                (bp.loss, bp.grads)
            })
        })
        .collect::<Result<_>>()?;
    let total_terms: usize = batch.iter().map(|(_, t)| t.len()).sum();
    let mut grads = Grads::new();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        merge_grads(&mut grads, g);
    }
    scale_grads(&mut grads, 1.0 / total_terms as f32);
    adam.step(&mut ck.tensors, &grads, lr);
    Ok(loss / total_terms as f64)
}

fn lm_terms(tokens: &[TokenId]) -> Vec<(usize, TokenId)> {
    (0..tokens.len() - 1).map(|i| (i, tokens[i + 1])).collect()
}

/// Incremental from-scratch pretraining; each step may mix extra
/// examples (with their own loss terms) into the clean batch.
pub(crate) struct Trainer {
    pub ck: Checkpoint,
    adam: Adam,
    rng: ChaCha20Rng,
    tokens: Vec<TokenId>,
    seq_len: usize,
    tcfg: TrainConfig,
}

impl Trainer {
    pub fn new(config: &ModelConfig, corpus: &[u8], tcfg: &TrainConfig) -> Result<Trainer> {
        tcfg.validate()?;
        if corpus.is_empty() || corpus.len() < config.ctx_len {
            return Err(Error::CorpusTooShort {
                len: corpus.len(),
                min: config.ctx_len,
            });
        }
        let tokens = tokenize(corpus);
        let seq_len = tcfg.seq_len.min(config.ctx_len).min(tokens.len() - 1).max(2);
        Ok(Trainer {
            ck: init_checkpoint(config)?,
            adam: Adam::new(tcfg),
            rng: ChaCha20Rng::seed_from_u64(tcfg.seed),
            tokens,
            seq_len,
            tcfg: *tcfg,
        })
    }

    /// One optimizer step over `batch_size` random corpus windows plus
    /// the given extra examples.
    pub fn step(&mut self, extra: &[(Vec<TokenId>, Vec<(usize, TokenId)>)]) -> Result<f64> {
        let mut batch: Vec<_> = (0..self.tcfg.batch_size)
            .map(|_| {
                let start = self.rng.gen_range(0..=self.tokens.len() - self.seq_len - 1);
                let window = self.tokens[start..start + self.seq_len + 1].to_vec();
                let terms = lm_terms(&window);
                (window, terms)
            })
            .collect();
        batch.extend_from_slice(extra);
        batch_step(&mut self.ck, &mut self.adam, &batch, self.tcfg.lr)
    }

    /// Seal the trained weights as a new lineage root.
    pub fn finish(mut self) -> Checkpoint {
        self.ck.lineage_id = self.ck.tensors_digest();
        self.ck
    }
}

/// Frame a (prompt, response) token pair as a training example with loss
/// terms over the response only.
pub(crate) fn framed_example(
    config: &ModelConfig,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<(Vec<TokenId>, Vec<(usize, TokenId)>)> {
    if response.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mut seq = template(config.vocab, &[], prompt);
    let template_len = seq.len();
    if template_len + response.len() > config.ctx_len {
        return Err(Error::ContextOverflow {
            len: template_len + response.len(),
            ctx: config.ctx_len,
        });
    }
    let terms = response
        .iter()
        .enumerate()
        .map(|(j, &t)| (template_len - 1 + j, t))
        .collect();
    seq.extend_from_slice(response);
    Ok((seq, terms))
}

/// Pretrain a model from scratch on raw bytes with a next-token loss.
pub fn train(config: &ModelConfig, corpus: &[u8], tcfg: &TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config, corpus, tcfg)?;
    for _ in 0..tcfg.steps {
        trainer.step(&[])?;
    }
    Ok(trainer.finish())
}

/// Tokenize an instruction/response pair into a framed training sequence
/// with loss terms over the response only.
fn sft_example(
    config: &ModelConfig,
    instruction: &[u8],
    response: &[u8],
) -> Result<(Vec<TokenId>, Vec<(usize, TokenId)>)> {
    let mut seq = template(config.vocab, &[], &tokenize(instruction));
    let template_len = seq.len();
    let mut resp = tokenize(response);
    if template_len + 1 > config.ctx_len {
        return Err(Error::ContextOverflow {
            len: template_len + 1,
            ctx: config.ctx_len,
        });
    }
    resp.truncate(config.ctx_len - template_len);
    if resp.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let terms = resp
        .iter()
        .enumerate()
        .map(|(j, &t)| (template_len - 1 + j, t))
        .collect();
    seq.extend_from_slice(&resp);
    Ok((seq, terms))
}

/// Supervised finetuning: loss on response tokens only, prompt framing
/// applied per example. The base lineage id is preserved.
pub fn sft_finetune(
    base: &Checkpoint,
    dataset: &[(Vec<u8>, Vec<u8>)],
    tcfg: &TrainConfig,
) -> Result<Checkpoint> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ck = base.clone();
    if tcfg.epochs == 0 {
        return Ok(ck);
    }
    let examples: Vec<_> = dataset
        .iter()
        .map(|(i, r)| sft_example(&base.config, i, r))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha20Rng::seed_from_u64(tcfg.seed);
    let mut adam = Adam::new(tcfg);
    for _ in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| examples[i].clone()).collect();
            batch_step(&mut ck, &mut adam, &batch, tcfg.lr)?;
        }
    }
    Ok(ck)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha20Rng) {
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
}

const LORA_TARGETS: [&str; 4] = ["wq", "wk", "wv", "wo"];

/// Low-rank adaptation of the attention projections: base weights stay
/// frozen, rank-`rank` updates A·B are trained and merged into the
/// returned checkpoint.
pub fn lora_finetune(
    base: &Checkpoint,
    dataset: &[(Vec<u8>, Vec<u8>)],
    rank: usize,
    tcfg: &TrainConfig,
) -> Result<Checkpoint> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = base.config.d_model;
    if rank == 0 || rank > d {
        return Err(Error::BadRank { rank, d_model: d });
    }
    if tcfg.epochs == 0 {
        return Ok(base.clone());
    }
    let examples: Vec<_> = dataset
        .iter()
        .map(|(i, r)| sft_example(&base.config, i, r))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(tcfg.seed);
    // adapter parameters, keyed by the tensor they extend
    let mut adapters: BTreeMap<String, (Array2<f32>, Array2<f32>)> = BTreeMap::new();
    for i in 0..base.config.n_layers {
        for t in LORA_TARGETS {
            let a = Array2::from_shape_fn((d, rank), |_| normal(&mut rng, 0.01));
            let b = Array2::zeros((rank, d));
            adapters.insert(format!("layer{i}.attn.{t}"), (a, b));
        }
    }

    let merged = |base: &Checkpoint, adapters: &BTreeMap<String, (Array2<f32>, Array2<f32>)>| {
        let mut ck = base.clone();
        for (name, (a, b)) in adapters {
            let delta = a.dot(b);
            let t = ck.tensors.get_mut(name).expect("adapter target");
            for (w, &dv) in t.data.iter_mut().zip(delta.iter()) {
                *w += dv;
            }
        }
        ck
    };

    let mut adam_state: BTreeMap<String, (Vec<f32>, Vec<f32>)> = BTreeMap::new();
    let mut t_step = 0u64;
    for _ in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            let ck = merged(base, &adapters);
            let parts: Vec<_> = chunk
                .par_iter()
                .map(|&i| {
                    let (tokens, terms) = &examples[i];
                    backprop_seq(&ck, tokens, terms).map(|bp| bp.grads)
                })
                .collect::<Result<_>>()?;
            let total_terms: usize = chunk.iter().map(|&i| examples[i].1.len()).sum();
            let mut grads = Grads::new();
            for g in parts {
                merge_grads(&mut grads, g);
            }
            scale_grads(&mut grads, 1.0 / total_terms as f32);

            t_step += 1;
            let bc1 = 1.0 - tcfg.beta1.powi(t_step as i32);
            let bc2 = 1.0 - tcfg.beta2.powi(t_step as i32);
            for (name, (a, b)) in adapters.iter_mut() {
                let gw = match grads.get(name) {
                    Some(g) => ArrayView2::from_shape((d, d), &g.data).expect("grad shape"),
                    None => continue,
                };
                let ga = gw.dot(&b.t());
                let gb = a.t().dot(&gw);
                for (param, grad, key) in [(a, ga, "a"), (b, gb, "b")] {
                    let state = adam_state
                        .entry(format!("{name}.{key}"))
                        .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
                    for (i, p) in param.iter_mut().enumerate() {
                        let gi = grad.as_slice().expect("contiguous")[i];
                        state.0[i] = tcfg.beta1 * state.0[i] + (1.0 - tcfg.beta1) * gi;
                        state.1[i] = tcfg.beta2 * state.1[i] + (1.0 - tcfg.beta2) * gi * gi;
                        let mhat = state.0[i] / bc1;
                        let vhat = state.1[i] / bc2;
                        *p -= tcfg.lr * mhat / (vhat.sqrt() + tcfg.adam_eps);
                    }
                }
            }
        }
    }
    Ok(merged(base, &adapters))
}

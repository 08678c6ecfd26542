//! Independent f64 reference implementation of the model arithmetic,
//! written directly from the architecture description with plain loops.
//! Used as an oracle: it shares no code with the library's forward or
//! backward passes.

#![allow(dead_code)]

use rofl::tinylm::{Checkpoint, TokenId};

pub type Mat = Vec<Vec<f64>>;

pub struct RefModel {
    pub vocab: usize,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    tensors: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let v = a[i][l];
            for j in 0..m {
                out[i][j] += v * b[l][j];
            }
        }
    }
    out
}

impl RefModel {
    pub fn new(ck: &Checkpoint) -> RefModel {
        let tensors = ck
            .tensors
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    (t.dims.clone(), t.data.iter().map(|&v| v as f64).collect()),
                )
            })
            .collect();
        RefModel {
            vocab: ck.config.vocab,
            d: ck.config.d_model,
            n_layers: ck.config.n_layers,
            n_heads: ck.config.n_heads,
            tensors,
        }
    }

    fn mat(&self, name: &str) -> Mat {
        let (dims, data) = &self.tensors[name];
        assert_eq!(dims.len(), 2, "{name}");
        data.chunks(dims[1]).map(|r| r.to_vec()).collect()
    }

    fn vec1(&self, name: &str) -> Vec<f64> {
        let (dims, data) = &self.tensors[name];
        assert_eq!(dims.len(), 1, "{name}");
        data.clone()
    }

    fn layernorm(&self, x: &Mat, g: &[f64], b: &[f64]) -> Mat {
        x.iter()
            .map(|row| {
                let d = row.len() as f64;
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) * inv * g[j] + b[j])
                    .collect()
            })
            .collect()
    }

    pub fn embed(&self, tokens: &[TokenId]) -> Mat {
        let tok = self.mat("tok_emb");
        let pos = self.mat("pos_emb");
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                (0..self.d)
                    .map(|j| tok[t.0 as usize][j] + pos[i][j])
                    .collect()
            })
            .collect()
    }

    pub fn logits_from_embedded(&self, x0: Mat) -> Mat {
        let t_len = x0.len();
        let dh = self.d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = x0;
        for li in 0..self.n_layers {
            let a = self.layernorm(
                &x,
                &self.vec1(&format!("layer{li}.ln1.g")),
                &self.vec1(&format!("layer{li}.ln1.b")),
            );
            let q = matmul(&a, &self.mat(&format!("layer{li}.attn.wq")));
            let k = matmul(&a, &self.mat(&format!("layer{li}.attn.wk")));
            let v = matmul(&a, &self.mat(&format!("layer{li}.attn.wv")));
            let mut attn = vec![vec![0.0; self.d]; t_len];
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..t_len {
                    let mut scores = vec![f64::NEG_INFINITY; t_len];
                    for j in 0..=i {
                        let mut s = 0.0;
                        for c in cols.clone() {
                            s += q[i][c] * k[j][c];
                        }
                        scores[j] = s * scale;
                    }
                    let max = scores[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores[..=i].iter().map(|s| (s - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for (j, e) in exps.iter().enumerate() {
                        let p = e / sum;
                        for c in cols.clone() {
                            attn[i][c] += p * v[j][c];
                        }
                    }
                }
            }
            let proj = matmul(&attn, &self.mat(&format!("layer{li}.attn.wo")));
            for i in 0..t_len {
                for j in 0..self.d {
                    x[i][j] += proj[i][j];
                }
            }
            let m = self.layernorm(
                &x,
                &self.vec1(&format!("layer{li}.ln2.g")),
                &self.vec1(&format!("layer{li}.ln2.b")),
            );
            let b1 = self.vec1(&format!("layer{li}.mlp.b1"));
            let mut h1 = matmul(&m, &self.mat(&format!("layer{li}.mlp.w1")));
            for row in h1.iter_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = gelu(*v + b1[j]);
                }
            }
            let b2 = self.vec1(&format!("layer{li}.mlp.b2"));
            let f = matmul(&h1, &self.mat(&format!("layer{li}.mlp.w2")));
            for i in 0..t_len {
                for j in 0..self.d {
                    x[i][j] += f[i][j] + b2[j];
                }
            }
        }
        let y = self.layernorm(&x, &self.vec1("ln_f.g"), &self.vec1("ln_f.b"));
        matmul(&y, &self.mat("head"))
    }

    pub fn logits(&self, tokens: &[TokenId]) -> Mat {
        self.logits_from_embedded(self.embed(tokens))
    }

    /// Sum of -log p(target_j) over (position, target) pairs.
    pub fn nll_terms(&self, logits: &Mat, terms: &[(usize, TokenId)]) -> f64 {
        let mut total = 0.0;
        for &(pos, t) in terms {
            let row = &logits[pos];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            total -= row[t.0 as usize] - max - sum.ln();
        }
        total
    }

    /// The structural framing of (system, prompt), re-derived here.
    pub fn frame(&self, system: &[TokenId], prompt: &[TokenId]) -> Vec<TokenId> {
        if self.vocab >= 262 {
            let mut seq = vec![TokenId(260), TokenId(258)];
            seq.extend_from_slice(system);
            seq.push(TokenId(259));
            seq.extend_from_slice(prompt);
            seq.push(TokenId(261));
            seq
        } else {
            let mut seq = system.to_vec();
            seq.extend_from_slice(prompt);
            seq
        }
    }

    /// Response NLL with prompt positions given as arbitrary rows over
    /// the vocabulary (one-hot relaxation), mixed through the embedding
    /// table.
    pub fn relaxed_prompt_nll(
        &self,
        system: &[TokenId],
        prompt_rows: &Mat,
        response: &[TokenId],
    ) -> f64 {
        let x_len = prompt_rows.len();
        let placeholder = vec![TokenId(0); x_len];
        let mut seq = self.frame(system, &placeholder);
        let template_len = seq.len();
        seq.extend_from_slice(response);
        let mut x0 = self.embed(&seq);
        let offset = if self.vocab >= 262 { 3 + system.len() } else { system.len() };
        let tok = self.mat("tok_emb");
        let pos = self.mat("pos_emb");
        for i in 0..x_len {
            for j in 0..self.d {
                let mut mix = 0.0;
                for (t, w) in prompt_rows[i].iter().enumerate() {
                    mix += w * tok[t][j];
                }
                x0[offset + i][j] = mix + pos[offset + i][j];
            }
        }
        let logits = self.logits_from_embedded(x0);
        let terms: Vec<(usize, TokenId)> = response
            .iter()
            .enumerate()
            .map(|(j, &t)| (template_len - 1 + j, t))
            .collect();
        self.nll_terms(&logits, &terms)
    }
}

//! Fingerprint generation: random prompt initialization, greedy response
//! capture, and discrete coordinate-gradient optimization of the prompt
//! suffix against a multi-task likelihood objective.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::tinylm::{
    bottom_order, forward_block, greedy_decode, input_onehot_gradient, log_softmax_pick,
    next_token_logits, nll, template, template_prompt_offset, Checkpoint, KvCache, ModelView,
    TokenId,
};
use crate::{Error, Result};

const N_BYTES: usize = 256;

/// A (prompt, response) ownership fingerprint bound to a model lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub system_prompt: Vec<TokenId>,
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub lineage_id: [u8; 32],
    pub meta: FingerprintMeta,
}

/// Generation provenance carried with each fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMeta {
    pub seed: u64,
    pub trials: u64,
    pub final_loss: f64,
}

/// The models and system prompts a fingerprint is optimized against.
/// The first model is the base; any others are adapted derivatives of it.
pub struct TaskSet<'a> {
    models: Vec<&'a Checkpoint>,
    system_prompts: Vec<Vec<TokenId>>,
}

impl<'a> TaskSet<'a> {
    pub fn new(models: Vec<&'a Checkpoint>, system_prompts: Vec<Vec<TokenId>>) -> Result<Self> {
        if models.is_empty() || system_prompts.is_empty() {
            return Err(Error::TaskMismatch);
        }
        let base = models[0];
        for m in &models {
            if m.config.vocab != base.config.vocab || m.lineage_id != base.lineage_id {
                return Err(Error::TaskMismatch);
            }
        }
        Ok(TaskSet {
            models,
            system_prompts,
        })
    }

    pub fn base(&self) -> &Checkpoint {
        self.models[0]
    }

    pub fn models(&self) -> &[&'a Checkpoint] {
        &self.models
    }

    pub fn system_prompts(&self) -> &[Vec<TokenId>] {
        &self.system_prompts
    }

    fn pairs(&self) -> impl Iterator<Item = (&&'a Checkpoint, &Vec<TokenId>)> {
        self.models
            .iter()
            .flat_map(move |m| self.system_prompts.iter().map(move |h| (m, h)))
    }
}

/// Knobs of the coordinate-gradient search.
#[derive(Debug, Clone, Copy)]
pub struct GcgConfig {
    /// Frozen random prefix length.
    pub l: usize,
    /// Optimizable suffix length.
    pub suffix_len: usize,
    /// Response length.
    pub resp_len: usize,
    /// k for bottom-k sampling during suffix initialization.
    pub k_bottom: usize,
    /// Candidate substitutions kept per suffix position.
    pub topk_grad: usize,
    /// Candidate sequences evaluated per step.
    pub batch: usize,
    /// Step budget.
    pub max_epochs: usize,
    /// Successful-verification epochs required before stopping early.
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for GcgConfig {
    fn default() -> Self {
        GcgConfig {
            l: 16,
            suffix_len: 16,
            resp_len: 9,
            k_bottom: 10,
            topk_grad: 64,
            batch: 128,
            max_epochs: 500,
            n_trials: 20,
            seed: 0,
        }
    }
}

impl GcgConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.l == 0 || self.resp_len == 0 || self.k_bottom == 0 {
            return Err(Error::InvalidArgument(
                "l, resp_len, and k_bottom must be positive".into(),
            ));
        }
        if self.topk_grad == 0 || self.topk_grad > vocab {
            return Err(Error::InvalidArgument(format!(
                "topk_grad {} out of range 1..={vocab}",
                self.topk_grad
            )));
        }
        if self.batch == 0 || self.n_trials == 0 {
            return Err(Error::InvalidArgument(
                "batch and n_trials must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn byte_limit(vocab: usize) -> usize {
    vocab.min(N_BYTES)
}

/// Draw the initial prompt: `l` uniform byte tokens followed by
/// `suffix_len` tokens sampled autoregressively from the `k_bottom`
/// least-probable byte continuations.
pub fn init_prompt(base: &Checkpoint, cfg: &GcgConfig) -> Result<Vec<TokenId>> {
    cfg.validate(base.config.vocab)?;
    let framed = template_len(base.config.vocab, 0) + cfg.l + cfg.suffix_len + cfg.resp_len;
    if framed > base.config.ctx_len {
        return Err(Error::ContextOverflow {
            len: framed,
            ctx: base.config.ctx_len,
        });
    }
    let limit = byte_limit(base.config.vocab);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<TokenId> = (0..cfg.l)
        .map(|_| TokenId(rng.gen_range(0..limit) as u16))
        .collect();
    for _ in 0..cfg.suffix_len {
        let logits = next_token_logits(base, &x)?;
        let order = bottom_order(&logits, limit);
        let k = cfg.k_bottom.min(order.len());
        x.push(order[rng.gen_range(0..k)]);
    }
    Ok(x)
}

fn template_len(vocab: usize, system_len: usize) -> usize {
    template_prompt_offset(vocab, system_len)
        + if template_prompt_offset(vocab, 0) > 0 { 1 } else { 0 }
}

/// Capture the greedy response the base model gives to the fresh prompt.
pub fn gen_response(
    base: &Checkpoint,
    system: &[TokenId],
    prompt: &[TokenId],
    resp_len: usize,
) -> Result<Vec<TokenId>> {
    greedy_decode(base, system, prompt, resp_len)
}

/// Summed response NLL over every (model, system prompt) pair.
pub fn task_loss(tasks: &TaskSet, x: &[TokenId], y: &[TokenId]) -> Result<f64> {
    let mut total = 0.0;
    for (m, h) in tasks.pairs() {
        total += nll(m, &template(m.config.vocab, h, x), y)?;
    }
    Ok(total)
}

/// A precomputed key/value cache for everything before the optimizable
/// suffix, so candidate evaluation only re-runs the tail of the sequence.
struct PrefixCache<'a> {
    view: ModelView<'a>,
    cache: KvCache,
    /// Tokens after the suffix within the template (closing markers).
    tail: Vec<TokenId>,
}

fn build_prefix_caches<'a>(
    tasks: &TaskSet<'a>,
    x: &[TokenId],
    l: usize,
) -> Result<Vec<PrefixCache<'a>>> {
    let mut out = Vec::new();
    for (m, h) in tasks.pairs() {
        let seq = template(m.config.vocab, h, x);
        let offset = template_prompt_offset(m.config.vocab, h.len());
        let suffix_at = offset + l;
        let tail = seq[offset + x.len()..].to_vec();
        let view = ModelView::new(m);
        let mut cache = KvCache::new(m.config.n_layers);
        forward_block(&view, &mut cache, &seq[..suffix_at])?;
        out.push(PrefixCache { view, cache, tail });
    }
    Ok(out)
}

fn loss_from_caches(caches: &[PrefixCache], suffix: &[TokenId], y: &[TokenId]) -> Result<f64> {
    let mut total = 0.0;
    for pc in caches {
        let mut rest: Vec<TokenId> = suffix.to_vec();
        rest.extend_from_slice(&pc.tail);
        let resp_at = rest.len();
        rest.extend_from_slice(y);
        let mut cache = pc.cache.clone();
        let logits = forward_block(&pc.view, &mut cache, &rest)?;
        for (j, t) in y.iter().enumerate() {
            total -= log_softmax_pick(logits.row(resp_at - 1 + j), t.0 as usize);
        }
    }
    Ok(total)
}

/// One coordinate-gradient step: rank substitutions by the summed input
/// one-hot gradient, sample `batch` single-token candidates, and keep the
/// best. Returns the new prompt and its task loss; the prompt is unchanged
/// when no candidate improves on it.
pub fn gcg_step(
    tasks: &TaskSet,
    x: &[TokenId],
    y: &[TokenId],
    cfg: &GcgConfig,
    seed: u64,
) -> Result<(Vec<TokenId>, f64)> {
    if x.len() <= cfg.l {
        return Err(Error::EmptySuffix);
    }
    let span = cfg.l..x.len();
    let suffix_len = x.len() - cfg.l;
    let vocab = tasks.base().config.vocab;
    let limit = byte_limit(vocab);

    let mut grad = Array2::<f32>::zeros((suffix_len, vocab));
    for (m, h) in tasks.pairs() {
        grad = grad + input_onehot_gradient(m, h, x, y, span.clone())?;
    }

    // per position: topk_grad byte tokens with the most negative gradient
    let topk = cfg.topk_grad.min(limit);
    let candidates: Vec<Vec<TokenId>> = (0..suffix_len)
        .map(|i| {
            let mut ids: Vec<usize> = (0..limit).collect();
            ids.sort_by(|&a, &b| {
                grad[[i, a]]
                    .partial_cmp(&grad[[i, b]])
                    .expect("finite gradient")
                    .then(a.cmp(&b))
            });
            ids[..topk].iter().map(|&t| TokenId(t as u16)).collect()
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let proposals: Vec<Vec<TokenId>> = (0..cfg.batch)
        .map(|_| {
            let pos = rng.gen_range(0..suffix_len);
            let sub = candidates[pos][rng.gen_range(0..topk)];
            let mut c = x.to_vec();
            c[cfg.l + pos] = sub;
            c
        })
        .collect();

    let caches = build_prefix_caches(tasks, x, cfg.l)?;
    let current = loss_from_caches(&caches, &x[cfg.l..], y)?;
    let losses: Vec<Result<f64>> = proposals
        .par_iter()
        .map(|c| loss_from_caches(&caches, &c[cfg.l..], y))
        .collect();

    let mut best_idx = None;
    let mut best_loss = current;
    for (i, loss) in losses.into_iter().enumerate() {
        let loss = loss?;
        if loss < best_loss {
            best_loss = loss;
            best_idx = Some(i);
        }
    }
    match best_idx {
        Some(i) => Ok((proposals[i].clone(), best_loss)),
        None => Ok((x.to_vec(), current)),
    }
}

fn all_tasks_reproduce(tasks: &TaskSet, x: &[TokenId], y: &[TokenId]) -> Result<bool> {
    for (m, h) in tasks.pairs() {
        if greedy_decode(m, h, x, y.len())? != y {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Iterate `gcg_step` until `n_trials` verification successes accumulate
/// or the epoch budget runs out. Returns the best-loss successful prompt
/// (or the best-loss prompt seen when no epoch succeeded), the success
/// count, and the returned prompt's loss.
pub fn optimize_prompt(
    tasks: &TaskSet,
    x_init: &[TokenId],
    y: &[TokenId],
    cfg: &GcgConfig,
) -> Result<(Vec<TokenId>, u64, f64)> {
    cfg.validate(tasks.base().config.vocab)?;
    let mut x = x_init.to_vec();
    let mut loss = task_loss(tasks, &x, y)?;
    let mut best: (Vec<TokenId>, f64) = (x.clone(), loss);
    let mut best_success: Option<(Vec<TokenId>, f64)> = None;
    let mut successes = 0u64;

    let mut record = |x: &[TokenId], loss: f64, successes: &mut u64| -> Result<bool> {
        if all_tasks_reproduce(tasks, x, y)? {
            *successes += 1;
            if best_success.as_ref().map_or(true, |(_, l)| loss < *l) {
                best_success = Some((x.to_vec(), loss));
            }
        }
        Ok(*successes >= cfg.n_trials as u64)
    };

    let mut done = record(&x, loss, &mut successes)?;
    let mut seed_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5bd1_e995_9e37_79b9);
    for _ in 0..cfg.max_epochs {
        if done {
            break;
        }
        let step_seed: u64 = seed_rng.gen();
        let (x_new, new_loss) = gcg_step(tasks, &x, y, cfg, step_seed)?;
        x = x_new;
        loss = new_loss;
        if loss < best.1 {
            best = (x.clone(), loss);
        }
        done = record(&x, loss, &mut successes)?;
    }

    let (x_out, loss_out) = best_success.unwrap_or(best);
    Ok((x_out, successes, loss_out))
}

/// Full pipeline: initialize, capture the greedy response on the base
/// model under the first system prompt, then optimize against every task.
/// Generation is read-only; model digests are asserted unchanged.
pub fn generate_fingerprint(tasks: &TaskSet, cfg: &GcgConfig) -> Result<Fingerprint> {
    let digests: Vec<[u8; 32]> = tasks.models().iter().map(|m| m.weights_digest()).collect();
    let base = tasks.base();
    let h = tasks.system_prompts()[0].clone();

    let x_init = init_prompt(base, cfg)?;
    let y = gen_response(base, &h, &x_init, cfg.resp_len)?;
    let (x, successes, final_loss) = optimize_prompt(tasks, &x_init, &y, cfg)?;
    if successes == 0 {
        return Err(Error::GenerationFailed);
    }

    for (m, before) in tasks.models().iter().zip(&digests) {
        assert_eq!(&m.weights_digest(), before, "generation mutated a model");
    }
    Ok(Fingerprint {
        system_prompt: h,
        prompt: x,
        response: y,
        lineage_id: base.lineage_id,
        meta: FingerprintMeta {
            seed: cfg.seed,
            trials: successes,
            final_loss,
        },
    })
}

fn ids_line(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|t| t.0.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_ids(s: &str) -> Result<Vec<TokenId>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<u16>()
                .map(TokenId)
                .map_err(|_| bad(format!("bad token id {p:?}")))
        })
        .collect()
}

fn bad(detail: String) -> Error {
    Error::Parse {
        what: "fingerprint",
        detail,
    }
}

impl Fingerprint {
    /// Canonical ASCII serialization; the ledger commits to these exact
    /// bytes.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut s = String::new();
        s.push_str("ROFLFP1\n");
        s.push_str(&format!("lineage={}\n", hex::encode(self.lineage_id)));
        s.push_str(&format!("sys={}\n", ids_line(&self.system_prompt)));
        s.push_str(&format!("prompt={}\n", ids_line(&self.prompt)));
        s.push_str(&format!("response={}\n", ids_line(&self.response)));
        s.push_str(&format!(
            "meta={},{},{:.8e}\n",
            self.meta.seed, self.meta.trials, self.meta.final_loss
        ));
        s.into_bytes()
    }

    fn from_lines(lines: &[&str]) -> Result<Fingerprint> {
        if lines.len() != 6 {
            return Err(bad(format!("expected 6 lines per record, got {}", lines.len())));
        }
        if lines[0] != "ROFLFP1" {
            return Err(bad("missing ROFLFP1 header".into()));
        }
        let field = |i: usize, key: &str| -> Result<String> {
            let prefix = format!("{key}=");
            lines[i]
                .strip_prefix(&prefix)
                .map(str::to_string)
                .ok_or_else(|| bad(format!("line {} must start with {prefix:?}", i + 1)))
        };
        let lineage_hex = field(1, "lineage")?;
        let raw = hex::decode(&lineage_hex).map_err(|_| bad("lineage is not hex".into()))?;
        let lineage_id: [u8; 32] = raw
            .try_into()
            .map_err(|_| bad("lineage must be 32 bytes".into()))?;
        let system_prompt = parse_ids(&field(2, "sys")?)?;
        let prompt = parse_ids(&field(3, "prompt")?)?;
        let response = parse_ids(&field(4, "response")?)?;
        let meta_line = field(5, "meta")?;
        let parts: Vec<&str> = meta_line.split(',').collect();
        if parts.len() != 3 {
            return Err(bad("meta must have three comma-separated fields".into()));
        }
        let meta = FingerprintMeta {
            seed: parts[0]
                .parse()
                .map_err(|_| bad("bad meta seed".into()))?,
            trials: parts[1]
                .parse()
                .map_err(|_| bad("bad meta trial count".into()))?,
            final_loss: parts[2]
                .parse()
                .map_err(|_| bad("bad meta loss".into()))?,
        };
        if response.is_empty() {
            return Err(bad("empty response".into()));
        }
        Ok(Fingerprint {
            system_prompt,
            prompt,
            response,
            lineage_id,
            meta,
        })
    }
}

/// Parse a file of one or more fingerprint records separated by single
/// blank lines.
pub fn parse_fingerprints(text: &str) -> Result<Vec<Fingerprint>> {
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            if block.is_empty() {
                return Err(bad("unexpected blank line".into()));
            }
            out.push(Fingerprint::from_lines(&block)?);
            block.clear();
        } else {
            block.push(line);
        }
    }
    if !block.is_empty() {
        out.push(Fingerprint::from_lines(&block)?);
    }
    if out.is_empty() {
        return Err(bad("no fingerprint records".into()));
    }
    Ok(out)
}

/// Serialize records separated by single blank lines.
pub fn fingerprints_to_bytes(fps: &[Fingerprint]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, fp) in fps.iter().enumerate() {
        if i > 0 {
            out.push(b'\n');
        }
        out.extend_from_slice(&fp.to_canonical_bytes());
    }
    out
}

pub fn save_fingerprints(path: &std::path::Path, fps: &[Fingerprint]) -> Result<()> {
    std::fs::write(path, fingerprints_to_bytes(fps))?;
    Ok(())
}

pub fn load_fingerprints(path: &std::path::Path) -> Result<Vec<Fingerprint>> {
    let text = std::fs::read_to_string(path)?;
    parse_fingerprints(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::{init_checkpoint, tokenize, ModelConfig, VOCAB_SIZE};
    use proptest::prelude::*;

    fn model(seed: u32) -> Checkpoint {
        init_checkpoint(&ModelConfig {
            vocab: VOCAB_SIZE,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            ctx_len: 96,
            seed,
        })
        .unwrap()
    }

    fn small_cfg() -> GcgConfig {
        GcgConfig {
            l: 4,
            suffix_len: 4,
            resp_len: 3,
            k_bottom: 5,
            topk_grad: 16,
            batch: 16,
            max_epochs: 8,
            n_trials: 2,
            seed: 1,
        }
    }

    #[test]
    fn init_prompt_shape_and_bytes_only() {
        let m = model(0);
        let cfg = small_cfg();
        let x = init_prompt(&m, &cfg).unwrap();
        assert_eq!(x.len(), cfg.l + cfg.suffix_len);
        assert!(x.iter().all(|t| t.is_byte()));

        let no_suffix = GcgConfig {
            suffix_len: 0,
            ..cfg
        };
        assert_eq!(init_prompt(&m, &no_suffix).unwrap().len(), cfg.l);
    }

    #[test]
    fn init_prompt_distinct_across_seeds() {
        let m = model(0);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..100 {
            let cfg = GcgConfig {
                seed,
                ..small_cfg()
            };
            seen.insert(
                init_prompt(&m, &cfg)
                    .unwrap()
                    .iter()
                    .map(|t| t.0)
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn init_prompt_k1_takes_argmin_byte() {
        let m = model(0);
        let cfg = GcgConfig {
            k_bottom: 1,
            ..small_cfg()
        };
        let x = init_prompt(&m, &cfg).unwrap();
        for i in cfg.l..x.len() {
            let logits = next_token_logits(&m, &x[..i]).unwrap();
            let order = bottom_order(&logits, 256);
            assert_eq!(x[i], order[0]);
        }
    }

    #[test]
    fn init_prompt_rejects_overflow() {
        let m = model(0);
        let cfg = GcgConfig {
            l: 200,
            ..small_cfg()
        };
        assert!(matches!(
            init_prompt(&m, &cfg),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn task_loss_reduces_and_is_linear() {
        let m = model(0);
        let x = tokenize(b"prompt");
        let y = tokenize(b"abc");
        let h = tokenize(b"sys");
        let single = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let direct = nll(&m, &template(VOCAB_SIZE, &[], &x), &y).unwrap();
        assert_eq!(task_loss(&single, &x, &y).unwrap(), direct);

        let doubled = TaskSet::new(vec![&m, &m], vec![vec![]]).unwrap();
        let two = task_loss(&doubled, &x, &y).unwrap();
        assert!((two - 2.0 * direct).abs() < 1e-9);

        let m2 = {
            let mut c = model(1);
            c.lineage_id = m.lineage_id;
            c
        };
        let grid = TaskSet::new(vec![&m, &m2], vec![vec![], h.clone()]).unwrap();
        let mut by_hand = 0.0;
        for mm in [&m, &m2] {
            for hh in [&vec![], &h] {
                by_hand += nll(mm, &template(VOCAB_SIZE, hh, &x), &y).unwrap();
            }
        }
        let got = task_loss(&grid, &x, &y).unwrap();
        assert!((got - by_hand).abs() < 1e-6, "{got} vs {by_hand}");
    }

    #[test]
    fn taskset_rejects_mismatched_lineage() {
        let a = model(0);
        let b = model(1);
        assert!(TaskSet::new(vec![&a, &b], vec![vec![]]).is_err());
        assert!(TaskSet::new(vec![], vec![vec![]]).is_err());
        assert!(TaskSet::new(vec![&a], vec![]).is_err());
    }

    #[test]
    fn gcg_step_changes_at_most_one_position_and_never_worsens() {
        let m = model(0);
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let cfg = small_cfg();
        let x = init_prompt(&m, &cfg).unwrap();
        let y = gen_response(&m, &[], &x, cfg.resp_len).unwrap();
        let before = task_loss(&tasks, &x, &y).unwrap();
        for seed in 0..4 {
            let (x_new, loss) = gcg_step(&tasks, &x, &y, &cfg, seed).unwrap();
            let diff = x.iter().zip(&x_new).filter(|(a, b)| a != b).count();
            assert!(diff <= 1, "changed {diff} positions");
            assert!(loss <= before + 1e-9);
            let recomputed = task_loss(&tasks, &x_new, &y).unwrap();
            assert!((recomputed - loss).abs() < 1e-6, "{recomputed} vs {loss}");
        }
    }

    #[test]
    fn gcg_step_batch_one_is_single_candidate_and_empty_suffix_errors() {
        let m = model(0);
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let cfg = GcgConfig {
            batch: 1,
            ..small_cfg()
        };
        let x = init_prompt(&m, &cfg).unwrap();
        let y = gen_response(&m, &[], &x, cfg.resp_len).unwrap();
        let (x_new, _) = gcg_step(&tasks, &x, &y, &cfg, 7).unwrap();
        assert!(x.iter().zip(&x_new).filter(|(a, b)| a != b).count() <= 1);

        assert!(matches!(
            gcg_step(&tasks, &x[..cfg.l], &y, &cfg, 0),
            Err(Error::EmptySuffix)
        ));
    }

    #[test]
    fn gcg_step_matches_exhaustive_search_on_two_token_vocab() {
        let m = init_checkpoint(&ModelConfig {
            vocab: 2,
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            ctx_len: 16,
            seed: 4,
        })
        .unwrap();
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let cfg = GcgConfig {
            l: 2,
            suffix_len: 2,
            resp_len: 2,
            k_bottom: 1,
            topk_grad: 2,
            batch: 64,
            max_epochs: 1,
            n_trials: 1,
            seed: 0,
        };
        let x = vec![TokenId(0), TokenId(1), TokenId(0), TokenId(1)];
        let y = vec![TokenId(1), TokenId(0)];
        // exhaustive minimum over the current prompt and every
        // single-token substitution in the suffix
        let mut best = task_loss(&tasks, &x, &y).unwrap();
        for pos in 2..4 {
            for t in 0..2u16 {
                let mut c = x.clone();
                c[pos] = TokenId(t);
                best = best.min(task_loss(&tasks, &c, &y).unwrap());
            }
        }
        let (_, loss) = gcg_step(&tasks, &x, &y, &cfg, 3).unwrap();
        assert!((loss - best).abs() < 1e-9, "{loss} vs exhaustive {best}");
    }

    #[test]
    fn optimize_prompt_records_converged_init_and_is_monotone() {
        let m = model(0);
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let cfg = GcgConfig {
            n_trials: 3,
            max_epochs: 6,
            ..small_cfg()
        };
        let x = init_prompt(&m, &cfg).unwrap();
        // y is the base model's own greedy continuation, so every epoch
        // (including epoch 0) verifies
        let y = gen_response(&m, &[], &x, cfg.resp_len).unwrap();
        let init_loss = task_loss(&tasks, &x, &y).unwrap();
        let (x_out, successes, final_loss) = optimize_prompt(&tasks, &x, &y, &cfg).unwrap();
        assert_eq!(successes, 3);
        assert!(final_loss <= init_loss + 1e-9);
        assert_eq!(greedy_decode(&m, &[], &x_out, y.len()).unwrap(), y);
    }

    #[test]
    fn generate_fingerprint_is_sound_and_read_only() {
        let m = model(0);
        let before = m.weights_digest();
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let cfg = small_cfg();
        let fp = generate_fingerprint(&tasks, &cfg).unwrap();
        assert_eq!(m.weights_digest(), before);
        assert_eq!(fp.lineage_id, m.lineage_id);
        assert_eq!(fp.response.len(), cfg.resp_len);
        assert_eq!(
            greedy_decode(&m, &fp.system_prompt, &fp.prompt, cfg.resp_len).unwrap(),
            fp.response
        );
        assert!(fp.meta.trials >= 1);
    }

    #[test]
    fn distinct_seeds_give_distinct_fingerprints() {
        let m = model(0);
        let tasks = TaskSet::new(vec![&m], vec![vec![]]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..5 {
            let cfg = GcgConfig {
                seed,
                ..small_cfg()
            };
            let fp = generate_fingerprint(&tasks, &cfg).unwrap();
            seen.insert(fp.to_canonical_bytes());
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn serialization_round_trip_and_rejection() {
        let fp = Fingerprint {
            system_prompt: tokenize(b"hi"),
            prompt: tokenize(b"abc"),
            response: tokenize(b"xyz"),
            lineage_id: [7; 32],
            meta: FingerprintMeta {
                seed: 42,
                trials: 20,
                final_loss: 1.25,
            },
        };
        let bytes = fp.to_canonical_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let back = parse_fingerprints(&text).unwrap();
        assert_eq!(back, vec![fp.clone()]);

        let two = fingerprints_to_bytes(&[fp.clone(), fp.clone()]);
        let both = parse_fingerprints(std::str::from_utf8(&two).unwrap()).unwrap();
        assert_eq!(both.len(), 2);

        assert!(parse_fingerprints("").is_err());
        assert!(parse_fingerprints("ROFLFP1\n").is_err());
        assert!(parse_fingerprints(&text.replace("lineage=", "lineage:")).is_err());
        assert!(parse_fingerprints(&text.replace("ROFLFP1", "ROFLFP2")).is_err());
    }

    #[test]
    fn empty_system_prompt_serializes_as_empty_field() {
        let fp = Fingerprint {
            system_prompt: vec![],
            prompt: vec![TokenId(0)],
            response: vec![TokenId(1)],
            lineage_id: [0; 32],
            meta: FingerprintMeta {
                seed: 0,
                trials: 1,
                final_loss: 0.0,
            },
        };
        let text = String::from_utf8(fp.to_canonical_bytes()).unwrap();
        assert!(text.contains("\nsys=\n"));
        assert_eq!(parse_fingerprints(&text).unwrap()[0], fp);
    }

    proptest! {
        #[test]
        fn roundtrip_arbitrary_records(
            sys in proptest::collection::vec(0u16..262, 0..8),
            prompt in proptest::collection::vec(0u16..262, 1..16),
            response in proptest::collection::vec(0u16..262, 1..10),
            seed in any::<u64>(),
            trials in 0u64..1000,
            loss in -1e6f64..1e6,
        ) {
            let fp = Fingerprint {
                system_prompt: sys.into_iter().map(TokenId).collect(),
                prompt: prompt.into_iter().map(TokenId).collect(),
                response: response.into_iter().map(TokenId).collect(),
                lineage_id: [9; 32],
                meta: FingerprintMeta { seed, trials, final_loss: loss },
            };
            let text = String::from_utf8(fp.to_canonical_bytes()).unwrap();
            let back = parse_fingerprints(&text).unwrap();
            prop_assert_eq!(back[0].system_prompt.clone(), fp.system_prompt);
            prop_assert_eq!(back[0].prompt.clone(), fp.prompt);
            prop_assert_eq!(back[0].response.clone(), fp.response);
            prop_assert_eq!(back[0].meta.seed, fp.meta.seed);
            prop_assert!((back[0].meta.final_loss - fp.meta.final_loss).abs()
                <= 1e-7 * fp.meta.final_loss.abs().max(1.0));
        }
    }
}

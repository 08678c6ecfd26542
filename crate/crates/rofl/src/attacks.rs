//! Attack analyses: front-running data poisoning, forgery probability,
//! fingerprint density, perplexity filtering, and filter system prompts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::fpgen::{generate_fingerprint, Fingerprint, GcgConfig, TaskSet};
use crate::lineage::system_prompt_variant;
use crate::tinylm::{
    framed_example, greedy_decode, perplexity, perplexity_tokens, Checkpoint, ModelConfig,
    TokenId, TrainConfig, Trainer,
};
use crate::verify::{tpr, verify_one, DecodeParams, ModelOracle};
use crate::{Error, Result};

/// Outcome of one front-running poisoning run.
#[derive(Debug, Clone)]
pub struct FrontRunResult {
    /// Combined prompt + response length of the poison pair.
    pub fp_len: usize,
    /// First training step at which greedy verification held, when it
    /// did within the budget.
    pub steps_to_full_tpr: Option<usize>,
    /// (step, verified) at every evaluation point.
    pub trace: Vec<(usize, bool)>,
}

impl FrontRunResult {
    pub fn complete(&self) -> bool {
        self.steps_to_full_tpr.is_some()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,verified\n");
        for (step, v) in &self.trace {
            s.push_str(&format!("{step},{v}\n"));
        }
        s
    }
}

/// How many consecutive successful evaluations must be observed before a
/// front-running run is declared memorized.
const STABILITY_WINDOW: usize = 3;

/// Train a model from scratch on clean corpus batches with the poison
/// pair injected once per step, evaluating greedy reproduction of the
/// pair every `eval_every` steps. Stops once verification has held for
/// `STABILITY_WINDOW` consecutive evaluations or the budget runs out.
pub fn front_run(
    config: &ModelConfig,
    corpus: &[u8],
    poison: (&[TokenId], &[TokenId]),
    tcfg: &TrainConfig,
    max_steps: usize,
    eval_every: usize,
) -> Result<FrontRunResult> {
    if eval_every == 0 {
        return Err(Error::InvalidArgument("eval_every must be >= 1".into()));
    }
    let (x, y) = poison;
    let example = framed_example(config, x, y)?;
    let mut trainer = Trainer::new(config, corpus, tcfg)?;
    let mut trace = Vec::new();
    let mut first_success = None;
    let mut streak = 0usize;

    let mut evaluate = |ck: &Checkpoint, step: usize| -> Result<bool> {
        let verified = greedy_decode(ck, &[], x, y.len())? == y;
        trace.push((step, verified));
        Ok(verified)
    };

    let mut step = 0usize;
    loop {
        if step % eval_every == 0 || step == max_steps {
            let ok = evaluate(&trainer.ck, step)?;
            if ok {
                if first_success.is_none() {
                    first_success = Some(step);
                }
                streak += 1;
                if streak >= STABILITY_WINDOW {
                    break;
                }
            } else {
                first_success = None;
                streak = 0;
            }
        }
        if step == max_steps {
            break;
        }
        trainer.step(std::slice::from_ref(&example))?;
        step += 1;
    }

    Ok(FrontRunResult {
        fp_len: x.len() + y.len(),
        steps_to_full_tpr: first_success,
        trace,
    })
}

/// Probability that a random response of length `y_len` over a domain of
/// size `d` matches a fixed response: d^(-y_len), computed in log space.
pub fn forgery_probability(d: u64, y_len: u32) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("domain size {d} must be >= 2")));
    }
    if y_len == 0 {
        return Err(Error::InvalidArgument("y_len must be >= 1".into()));
    }
    Ok((-(y_len as f64) * (d as f64).ln()).exp())
}

/// Result of repeated fingerprint generation with distinct seeds.
#[derive(Debug, Clone)]
pub struct DensityReport {
    pub requested: usize,
    pub fingerprints: Vec<Fingerprint>,
    pub distinct: usize,
    pub success_rate: f64,
}

impl DensityReport {
    pub fn to_csv(&self) -> String {
        format!(
            "requested,generated,distinct,success_rate\n{},{},{},{:.4}\n",
            self.requested,
            self.fingerprints.len(),
            self.distinct,
            self.success_rate
        )
    }
}

/// Generate `count` fingerprints with seeds 0..count and report how many
/// are pairwise distinct.
pub fn density_probe(tasks: &TaskSet, cfg: &GcgConfig, count: usize) -> Result<DensityReport> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let mut fingerprints = Vec::new();
    for seed in 0..count as u64 {
        let seeded = GcgConfig { seed, ..*cfg };
        match generate_fingerprint(tasks, &seeded) {
            Ok(fp) => fingerprints.push(fp),
            Err(Error::GenerationFailed) => {}
            Err(e) => return Err(e),
        }
    }
    let mut keys: Vec<(Vec<TokenId>, Vec<TokenId>)> = fingerprints
        .iter()
        .map(|fp| (fp.prompt.clone(), fp.response.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    Ok(DensityReport {
        requested: count,
        distinct: keys.len(),
        success_rate: fingerprints.len() as f64 / count as f64,
        fingerprints,
    })
}

/// Perplexity comparison between fingerprint prompts and natural
/// prompts, with filter rates over a threshold sweep.
#[derive(Debug, Clone)]
pub struct PplReport {
    /// (token length, perplexity) per fingerprint prompt.
    pub fingerprint: Vec<(usize, f64)>,
    /// (token length, perplexity) per natural prompt.
    pub natural: Vec<(usize, f64)>,
    /// Mean fingerprint PPL divided by mean natural PPL.
    pub separation: f64,
    /// (threshold, fraction of fingerprints filtered, fraction of
    /// natural prompts wrongly filtered).
    pub sweep: Vec<(f64, f64, f64)>,
}

impl PplReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,length,perplexity\n");
        for (len, p) in &self.fingerprint {
            s.push_str(&format!("fingerprint,{len},{p:.4}\n"));
        }
        for (len, p) in &self.natural {
            s.push_str(&format!("natural,{len},{p:.4}\n"));
        }
        s.push_str("threshold,fingerprints_filtered,natural_filtered\n");
        for (t, ff, nf) in &self.sweep {
            s.push_str(&format!("{t},{ff:.4},{nf:.4}\n"));
        }
        s
    }
}

fn filtered_fraction(ppls: &[(usize, f64)], threshold: f64) -> f64 {
    let hits = ppls.iter().filter(|(_, p)| *p > threshold).count();
    hits as f64 / ppls.len() as f64
}

/// Score the prompt region only (what an API front-filter would see).
pub fn ppl_filter(
    model: &Checkpoint,
    fingerprint_prompts: &[Vec<TokenId>],
    natural_prompts: &[Vec<u8>],
    thresholds: &[f64],
) -> Result<PplReport> {
    if fingerprint_prompts.is_empty() || natural_prompts.is_empty() {
        return Err(Error::EmptyInput("prompt set"));
    }
    let mut fingerprint = Vec::with_capacity(fingerprint_prompts.len());
    for p in fingerprint_prompts {
        fingerprint.push((p.len(), perplexity_tokens(model, p)?));
    }
    let mut natural = Vec::with_capacity(natural_prompts.len());
    for p in natural_prompts {
        natural.push((p.len(), perplexity(model, p)?));
    }
    let mean = |v: &[(usize, f64)]| v.iter().map(|(_, p)| p).sum::<f64>() / v.len() as f64;
    let separation = mean(&fingerprint) / mean(&natural);
    let sweep = thresholds
        .iter()
        .map(|&t| {
            (
                t,
                filtered_fraction(&fingerprint, t),
                filtered_fraction(&natural, t),
            )
        })
        .collect();
    Ok(PplReport {
        fingerprint,
        natural,
        separation,
        sweep,
    })
}

/// TPR of a fingerprint set when the named system prompt variant is
/// substituted at query time.
pub fn filter_prompt_eval(
    oracle: &dyn ModelOracle,
    fps: &[Fingerprint],
    variants: &[&str],
    params: &DecodeParams,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(variants.len());
    for name in variants {
        let sys = system_prompt_variant(name)?;
        let swapped: Vec<Fingerprint> = fps
            .iter()
            .map(|fp| Fingerprint {
                system_prompt: sys.clone(),
                ..fp.clone()
            })
            .collect();
        let report = tpr(oracle, &swapped, params)?;
        out.push((name.to_string(), report.tpr));
    }
    Ok(out)
}

/// Verify `count` uniformly random (prompt, response) byte pairs against
/// the oracle; returns how many matched (the forgery spray experiment).
pub fn spray_match_count(
    oracle: &dyn ModelOracle,
    count: usize,
    x_len: usize,
    y_len: usize,
    seed: u64,
) -> Result<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let params = DecodeParams::greedy();
    let mut matches = 0usize;
    for _ in 0..count {
        let fp = Fingerprint {
            system_prompt: vec![],
            prompt: (0..x_len).map(|_| TokenId(rng.gen_range(0..256))).collect(),
            response: (0..y_len).map(|_| TokenId(rng.gen_range(0..256))).collect(),
            lineage_id: [0; 32],
            meta: crate::fpgen::FingerprintMeta {
                seed,
                trials: 0,
                final_loss: 0.0,
            },
        };
        if verify_one(oracle, &fp, &params)? {
            matches += 1;
        }
    }
    Ok(matches)
}

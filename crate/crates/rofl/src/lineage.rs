//! Construction of model suites for robustness experiments: finetuned
//! and quantized derivatives of a base model, multi-stage chains,
//! independently trained irrelevant models, and the bundled system
//! prompt variants.

use std::path::Path;

use crate::tinylm::{
    lora_finetune, nll, sft_finetune, template, tokenize, Checkpoint, TokenId, TrainConfig,
};
use crate::{Error, Result};

pub const VICUNA_PROMPT: &str = "A chat between a curious human and an artificial intelligence \
assistant. The assistant gives helpful, detailed, and polite answers to the human's questions.";

pub const FILTER1_PROMPT: &str = "You are a helpful, respectful, and honest assistant. Always \
answer as helpfully as possible, while being sensical.";

pub const FILTER2_PROMPT: &str = "You are an assistant that is harmless and helpful. \
Importantly, you need to always prioritize rationalness over helpfulness. That is, if answering \
the user query could be non-sensical, you should refuse to answer. Otherwise, provide a thorough \
and precise response, ensuring you assist the user to the best of your ability.";

pub const BASIC_PROMPT: &str = "Below is an instruction that describes a task. Write a response \
that appropriately completes the request.";

pub const VARIANT_NAMES: &[&str] = &[
    "empty",
    "vicuna",
    "filter1",
    "filter2",
    "basic",
    "basic_fp1",
    "basic_fp2",
];

/// Tokenized system prompt for a named variant.
pub fn system_prompt_variant(name: &str) -> Result<Vec<TokenId>> {
    let text = match name {
        "empty" => String::new(),
        "vicuna" => VICUNA_PROMPT.to_string(),
        "filter1" => FILTER1_PROMPT.to_string(),
        "filter2" => FILTER2_PROMPT.to_string(),
        "basic" => BASIC_PROMPT.to_string(),
        "basic_fp1" => format!("{BASIC_PROMPT} {FILTER1_PROMPT}"),
        "basic_fp2" => format!("{BASIC_PROMPT} {FILTER2_PROMPT}"),
        _ => return Err(Error::UnknownVariant(name.to_string())),
    };
    Ok(tokenize(text.as_bytes()))
}

/// All named variants, in declaration order.
pub fn system_prompt_variants(names: &[&str]) -> Result<Vec<(String, Vec<TokenId>)>> {
    names
        .iter()
        .map(|n| Ok((n.to_string(), system_prompt_variant(n)?)))
        .collect()
}

/// A base model with its adapted derivatives and unrelated control
/// models.
pub struct LineageRegistry {
    pub base: Checkpoint,
    /// (checkpoint, provenance tag), e.g. "sft:0", "lora:r4:1", "quant:8".
    pub derivatives: Vec<(Checkpoint, String)>,
    pub irrelevant: Vec<Checkpoint>,
}

impl LineageRegistry {
    /// Every derivative must share the base lineage; irrelevant models
    /// must not.
    pub fn validate(&self) -> Result<()> {
        for (ck, tag) in &self.derivatives {
            if ck.lineage_id != self.base.lineage_id {
                return Err(Error::LedgerIntegrity(format!(
                    "derivative {tag} does not share the base lineage"
                )));
            }
        }
        for ck in &self.irrelevant {
            if ck.lineage_id == self.base.lineage_id {
                return Err(Error::LedgerIntegrity(
                    "an irrelevant model shares the base lineage".into(),
                ));
            }
        }
        Ok(())
    }

    /// Write all checkpoints and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut put = |tag: &str, name: &str, ck: &Checkpoint| -> Result<()> {
            let path = dir.join(name);
            ck.save(&path)?;
            manifest.push_str(&format!(
                "{tag}\t{name}\t{}\n",
                hex::encode(ck.lineage_id)
            ));
            Ok(())
        };
        put("base", "base.ckpt", &self.base)?;
        for (i, (ck, tag)) in self.derivatives.iter().enumerate() {
            put(tag, &format!("derivative_{i}.ckpt"), ck)?;
        }
        for (i, ck) in self.irrelevant.iter().enumerate() {
            put(&format!("irrelevant:{i}"), &format!("irrelevant_{i}.ckpt"), ck)?;
        }
        std::fs::write(dir.join("manifest.tsv"), manifest)?;
        Ok(())
    }

    /// Reload a registry from a directory written by `save`.
    pub fn load(dir: &Path) -> Result<LineageRegistry> {
        let text = std::fs::read_to_string(dir.join("manifest.tsv"))?;
        let mut base = None;
        let mut derivatives = Vec::new();
        let mut irrelevant = Vec::new();
        for line in text.lines() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    what: "manifest",
                    detail: format!("expected 3 tab-separated fields: {line:?}"),
                });
            }
            let ck = Checkpoint::load(&dir.join(parts[1]))?;
            if hex::encode(ck.lineage_id) != parts[2] {
                return Err(Error::LedgerIntegrity(format!(
                    "manifest lineage mismatch for {}",
                    parts[1]
                )));
            }
            match parts[0] {
                "base" => base = Some(ck),
                tag if tag.starts_with("irrelevant:") => irrelevant.push(ck),
                tag => derivatives.push((ck, tag.to_string())),
            }
        }
        let registry = LineageRegistry {
            base: base.ok_or(Error::Parse {
                what: "manifest",
                detail: "missing base entry".into(),
            })?,
            derivatives,
            irrelevant,
        };
        registry.validate()?;
        Ok(registry)
    }
}

/// What derivatives `build_suite` produces.
#[derive(Debug, Clone)]
pub struct SuiteRecipe {
    pub sft_epochs: usize,
    pub lora_rank: usize,
    pub quant_bits: Vec<u32>,
    pub train: TrainConfig,
}

impl Default for SuiteRecipe {
    fn default() -> Self {
        SuiteRecipe {
            sft_epochs: 3,
            lora_rank: 4,
            quant_bits: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

/// One SFT and one LoRA derivative per dataset, plus quantized variants
/// of the base.
pub fn build_suite(
    base: &Checkpoint,
    datasets: &[Vec<(Vec<u8>, Vec<u8>)>],
    recipe: &SuiteRecipe,
) -> Result<LineageRegistry> {
    if datasets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tcfg = TrainConfig {
        epochs: recipe.sft_epochs,
        ..recipe.train
    };
    let mut derivatives = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        derivatives.push((sft_finetune(base, ds, &tcfg)?, format!("sft:{i}")));
        derivatives.push((
            lora_finetune(base, ds, recipe.lora_rank, &tcfg)?,
            format!("lora:r{}:{i}", recipe.lora_rank),
        ));
    }
    for &bits in &recipe.quant_bits {
        derivatives.push((base.quantize(bits)?, format!("quant:{bits}")));
    }
    let registry = LineageRegistry {
        base: base.clone(),
        derivatives,
        irrelevant: Vec::new(),
    };
    registry.validate()?;
    Ok(registry)
}

/// Sequential finetuning: stage i continues from stage i-1. Returns one
/// checkpoint per stage.
pub fn multi_stage(
    base: &Checkpoint,
    datasets: &[Vec<(Vec<u8>, Vec<u8>)>],
    tcfg: &TrainConfig,
) -> Result<Vec<Checkpoint>> {
    if datasets.len() < 2 {
        return Err(Error::InvalidArgument(
            "multi-stage finetuning needs at least 2 datasets".into(),
        ));
    }
    let mut stages = Vec::with_capacity(datasets.len());
    let mut current = base.clone();
    for ds in datasets {
        current = sft_finetune(&current, ds, tcfg)?;
        stages.push(current.clone());
    }
    Ok(stages)
}

/// Mean response NLL of a model over an instruction dataset.
pub fn dataset_nll(ck: &Checkpoint, dataset: &[(Vec<u8>, Vec<u8>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (q, a) in dataset {
        let ctx = template(ck.config.vocab, &[], &tokenize(q));
        let y = tokenize(a);
        total += nll(ck, &ctx, &y)?;
        count += y.len();
    }
    Ok(total / count as f64)
}

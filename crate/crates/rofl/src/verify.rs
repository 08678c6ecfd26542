//! Black-box ownership verification: the verifier sees only a query
//! interface, never weights.

use crate::fpgen::Fingerprint;
use crate::tinylm::{sample_decode, Checkpoint, TokenId};
use crate::{Error, Result};

/// Query-only access to a suspect model.
pub trait ModelOracle: Sync {
    /// Generate `resp_len` tokens after the framed (system, prompt) pair.
    /// Temperature 0 must be greedy decoding.
    fn query(
        &self,
        system: &[TokenId],
        prompt: &[TokenId],
        resp_len: usize,
        temperature: f32,
        seed: u64,
    ) -> Result<Vec<TokenId>>;

    /// Opaque identity label for reports.
    fn label(&self) -> String;
}

/// In-process oracle backed by a loaded checkpoint.
pub struct CheckpointOracle<'a> {
    ck: &'a Checkpoint,
    label: String,
}

impl<'a> CheckpointOracle<'a> {
    pub fn new(ck: &'a Checkpoint, label: impl Into<String>) -> Self {
        CheckpointOracle {
            ck,
            label: label.into(),
        }
    }
}

impl ModelOracle for CheckpointOracle<'_> {
    fn query(
        &self,
        system: &[TokenId],
        prompt: &[TokenId],
        resp_len: usize,
        temperature: f32,
        seed: u64,
    ) -> Result<Vec<TokenId>> {
        sample_decode(self.ck, system, prompt, resp_len, temperature, seed)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

impl DecodeMode {
    fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::Sampled => "sampled",
        }
    }
}

/// How verification queries decode.
#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    pub mode: DecodeMode,
    pub temperature: f32,
    /// Number of retries in sampled mode (exactly 1 query in greedy mode).
    pub k: usize,
    pub seed: u64,
}

impl DecodeParams {
    pub fn greedy() -> Self {
        DecodeParams {
            mode: DecodeMode::Greedy,
            temperature: 0.0,
            k: 1,
            seed: 0,
        }
    }

    pub fn sampled(temperature: f32, k: usize, seed: u64) -> Self {
        DecodeParams {
            mode: DecodeMode::Sampled,
            temperature,
            k,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(Error::NegativeTemperature(self.temperature));
        }
        Ok(())
    }
}

/// Outcome of verifying a set of fingerprints against one oracle.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub verdicts: Vec<bool>,
    pub queries_used: Vec<usize>,
    pub tpr: f64,
    pub params: DecodeParams,
    pub oracle_label: String,
}

impl VerificationReport {
    /// CSV rendering: one row per fingerprint, then a TPR summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fingerprint_index,verdict,queries_used,mode,temperature\n");
        for (i, (&v, &q)) in self.verdicts.iter().zip(&self.queries_used).enumerate() {
            s.push_str(&format!(
                "{i},{v},{q},{},{}\n",
                self.params.mode.as_str(),
                self.params.temperature
            ));
        }
        s.push_str(&format!("TPR,{:.4}\n", self.tpr));
        s
    }
}

fn verify_counted(
    oracle: &dyn ModelOracle,
    fp: &Fingerprint,
    params: &DecodeParams,
) -> Result<(bool, usize)> {
    params.validate()?;
    let resp_len = fp.response.len();
    let attempts = match params.mode {
        DecodeMode::Greedy => 1,
        DecodeMode::Sampled => params.k,
    };
    for i in 0..attempts {
        let (temp, seed) = match params.mode {
            DecodeMode::Greedy => (0.0, 0),
            DecodeMode::Sampled => (params.temperature, params.seed + i as u64),
        };
        let got = oracle.query(&fp.system_prompt, &fp.prompt, resp_len, temp, seed)?;
        if got.len() >= resp_len && got[..resp_len] == fp.response[..] {
            return Ok((true, i + 1));
        }
    }
    Ok((false, attempts))
}

/// TRUE iff some query reproduces the fingerprint response exactly.
/// Oracle failures propagate; they are never reported as mismatches.
pub fn verify_one(
    oracle: &dyn ModelOracle,
    fp: &Fingerprint,
    params: &DecodeParams,
) -> Result<bool> {
    verify_counted(oracle, fp, params).map(|(ok, _)| ok)
}

/// Verify each fingerprint and aggregate the true positive rate.
pub fn tpr(
    oracle: &dyn ModelOracle,
    fps: &[Fingerprint],
    params: &DecodeParams,
) -> Result<VerificationReport> {
    if fps.is_empty() {
        return Err(Error::EmptyInput("fingerprint list"));
    }
    let mut verdicts = Vec::with_capacity(fps.len());
    let mut queries_used = Vec::with_capacity(fps.len());
    for fp in fps {
        let (ok, q) = verify_counted(oracle, fp, params)?;
        verdicts.push(ok);
        queries_used.push(q);
    }
    let successes = verdicts.iter().filter(|&&v| v).count();
    Ok(VerificationReport {
        tpr: successes as f64 / fps.len() as f64,
        verdicts,
        queries_used,
        params: *params,
        oracle_label: oracle.label(),
    })
}

/// TRUE iff the fingerprint matches NONE of the irrelevant oracles.
pub fn uniqueness_check(
    fp: &Fingerprint,
    irrelevant: &[&dyn ModelOracle],
    params: &DecodeParams,
) -> Result<bool> {
    if irrelevant.is_empty() {
        return Err(Error::EmptyInput("irrelevant oracle list"));
    }
    for oracle in irrelevant {
        if verify_one(*oracle, fp, params)? {
            return Ok(false);
        }
    }
    Ok(true)
}

//! Command-line entry point wiring all modules together.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. The environment
//! variable ROFL_SEED provides a fallback for every --seed flag.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use rofl::attacks;
use rofl::fpgen::{self, Fingerprint, GcgConfig, TaskSet};
use rofl::ledger::{self, Claim, Ledger, SALT_LEN};
use rofl::lineage::{self, SuiteRecipe};
use rofl::tinylm::{
    lora_finetune, sft_finetune, train, Checkpoint, ModelConfig, TokenId, TrainConfig, VOCAB_SIZE,
};
use rofl::verify::{self, CheckpointOracle, DecodeParams};
use rofl::{Error, Result};

#[derive(Parser)]
#[command(name = "rofl", version, about = "Language-model fingerprinting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a base model from scratch on a byte corpus
    Train(TrainArgs),
    /// Finetune an existing checkpoint on an instruction dataset
    Finetune(FinetuneArgs),
    /// Quantize a checkpoint to 16, 8, or 4 bits
    Quantize(QuantizeArgs),
    /// Derivative model suites
    #[command(subcommand)]
    Lineage(LineageCmd),
    /// Fingerprint generation and verification
    #[command(subcommand)]
    Fp(FpCmd),
    /// Commitments and the append-only claim ledger
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Attack and robustness analyses
    #[command(subcommand)]
    Attack(AttackCmd),
    /// Report post-processing
    #[command(subcommand)]
    Report(ReportCmd),
}

/// Resolve a seed flag, falling back to ROFL_SEED and then 0.
fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("ROFL_SEED")
            .ok()
            .and_then(|s| s.trim().parse().ok())
    })
    .unwrap_or(0)
}

/// Write to --out when given, stdout otherwise; always flushed.
fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Instruction dataset file: one "<prompt>\t<response>" pair per line.
fn load_dataset(path: &Path) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (q, a) = line.split_once('\t').ok_or_else(|| Error::Parse {
            what: "dataset",
            detail: format!("line {}: expected \"prompt<TAB>response\"", i + 1),
        })?;
        out.push((q.as_bytes().to_vec(), a.as_bytes().to_vec()));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

// ------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Raw byte corpus to model
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    ctx: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f32,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    seq: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let config = ModelConfig {
        vocab: VOCAB_SIZE,
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        ctx_len: a.ctx,
        seed: seed as u32,
    };
    let tcfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        batch_size: a.batch,
        seq_len: a.seq,
        seed,
        ..TrainConfig::default()
    };
    let corpus = std::fs::read(&a.corpus)?;
    let ck = train(&config, &corpus, &tcfg)?;
    ck.save(&a.out)?;
    println!("lineage={}", hex::encode(ck.lineage_id));
    Ok(())
}

// ---------------------------------------------------------- finetune

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    base: PathBuf,
    /// Dataset file: one "prompt<TAB>response" pair per line
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f32,
    /// LoRA adapter rank; 0 selects full-weight finetuning
    #[arg(long, default_value_t = 0)]
    lora_rank: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let base = Checkpoint::load(&a.base)?;
    let dataset = load_dataset(&a.dataset)?;
    let tcfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: resolve_seed(a.seed),
        ..TrainConfig::default()
    };
    let ck = if a.lora_rank == 0 {
        sft_finetune(&base, &dataset, &tcfg)?
    } else {
        lora_finetune(&base, &dataset, a.lora_rank, &tcfg)?
    };
    ck.save(&a.out)?;
    Ok(())
}

// ---------------------------------------------------------- quantize

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    bits: u32,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_quantize(a: QuantizeArgs) -> Result<()> {
    Checkpoint::load(&a.ckpt)?.quantize(a.bits)?.save(&a.out)
}

// ----------------------------------------------------------- lineage

#[derive(Subcommand)]
enum LineageCmd {
    /// Build a derivative suite (one SFT and one LoRA model per dataset,
    /// plus quantized variants) and write it with a manifest
    Build(LineageBuildArgs),
}

#[derive(Args)]
struct LineageBuildArgs {
    #[arg(long)]
    base: PathBuf,
    /// Dataset files, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    datasets: Vec<PathBuf>,
    /// Output directory (checkpoints plus manifest.tsv)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    sft_epochs: usize,
    #[arg(long, default_value_t = 4)]
    lora_rank: usize,
    /// Quantized variants of the base to include, comma separated
    #[arg(long, value_delimiter = ',')]
    quant_bits: Vec<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_lineage_build(a: LineageBuildArgs) -> Result<()> {
    let base = Checkpoint::load(&a.base)?;
    let datasets = a
        .datasets
        .iter()
        .map(|p| load_dataset(p))
        .collect::<Result<Vec<_>>>()?;
    let recipe = SuiteRecipe {
        sft_epochs: a.sft_epochs,
        lora_rank: a.lora_rank,
        quant_bits: a.quant_bits.clone(),
        train: TrainConfig {
            seed: resolve_seed(a.seed),
            ..TrainConfig::default()
        },
    };
    let registry = lineage::build_suite(&base, &datasets, &recipe)?;
    std::fs::create_dir_all(&a.out)?;
    registry.save(&a.out)?;
    println!("{} derivatives written to {}", registry.derivatives.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- fp

#[derive(Subcommand)]
enum FpCmd {
    /// Generate fingerprints against one or more task models
    Gen(FpGenArgs),
    /// Verify a fingerprint file against a checkpoint-backed oracle
    Verify(FpVerifyArgs),
}

#[derive(Args)]
struct FpGenArgs {
    /// Task model checkpoints, comma separated; the first is the base
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    /// System prompt variant names, comma separated
    #[arg(long, value_delimiter = ',', default_value = "empty")]
    sys: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Number of fingerprints (consecutive seeds starting at --seed)
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    l: usize,
    #[arg(long, default_value_t = 16)]
    suffix: usize,
    #[arg(long, default_value_t = 9)]
    resp: usize,
    #[arg(long, default_value_t = 10)]
    k_bottom: usize,
    #[arg(long, default_value_t = 64)]
    topk: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_fp_gen(a: FpGenArgs) -> Result<()> {
    let models = a
        .models
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<&str> = a.sys.iter().map(|s| s.as_str()).collect();
    let prompts = lineage::system_prompt_variants(&names)?
        .into_iter()
        .map(|(_, toks)| toks)
        .collect();
    let tasks = TaskSet::new(models.iter().collect(), prompts)?;
    let seed0 = resolve_seed(a.seed);
    let mut fps = Vec::with_capacity(a.count);
    for seed in seed0..seed0 + a.count as u64 {
        let cfg = GcgConfig {
            l: a.l,
            suffix_len: a.suffix,
            resp_len: a.resp,
            k_bottom: a.k_bottom,
            topk_grad: a.topk,
            batch: a.batch,
            max_epochs: a.max_epochs,
            n_trials: a.trials,
            seed,
        };
        fps.push(fpgen::generate_fingerprint(&tasks, &cfg)?);
    }
    fpgen::save_fingerprints(&a.out, &fps)?;
    println!("{} fingerprints written to {}", fps.len(), a.out.display());
    Ok(())
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CliMode {
    Greedy,
    Sampled,
}

#[derive(Args)]
struct FpVerifyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    fps: PathBuf,
    /// CSV output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CliMode::Greedy)]
    mode: CliMode,
    #[arg(long, default_value_t = 0.0)]
    temperature: f32,
    /// Retries per fingerprint in sampled mode
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_fp_verify(a: FpVerifyArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let fps = fpgen::load_fingerprints(&a.fps)?;
    let oracle = CheckpointOracle::new(&ck, a.ckpt.display().to_string());
    let params = match a.mode {
        CliMode::Greedy => DecodeParams::greedy(),
        CliMode::Sampled => DecodeParams::sampled(a.temperature, a.k, resolve_seed(a.seed)),
    };
    let report = verify::tpr(&oracle, &fps, &params)?;
    emit(a.out.as_deref(), &report.to_csv())
}

// -------------------------------------------------------------- ledger

#[derive(Subcommand)]
enum LedgerCmd {
    /// Compute a salted commitment to a fingerprint file; prints the
    /// digest and writes the fresh salt
    Commit(LedgerCommitArgs),
    /// Append a commitment digest to the ledger
    Append(LedgerAppendArgs),
    /// Check that (fingerprint, salt) opens a ledger record
    Open(LedgerOpenArgs),
    /// Adjudicate competing claims against a target model
    Resolve(LedgerResolveArgs),
}

#[derive(Args)]
struct LedgerCommitArgs {
    /// Fingerprint file (single record)
    #[arg(long)]
    fp: PathBuf,
    /// Where to write the generated 32-byte salt
    #[arg(long)]
    salt_out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_one_fingerprint(path: &Path) -> Result<Fingerprint> {
    let mut fps = fpgen::load_fingerprints(path)?;
    if fps.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} fingerprints, expected exactly 1",
            path.display(),
            fps.len()
        )));
    }
    Ok(fps.remove(0))
}

fn cmd_ledger_commit(a: LedgerCommitArgs) -> Result<()> {
    let fp = load_one_fingerprint(&a.fp)?;
    let mut rng = ChaCha20Rng::seed_from_u64(resolve_seed(a.seed));
    let salt: Vec<u8> = (0..SALT_LEN).map(|_| rng.gen()).collect();
    let commitment = ledger::commit(&fp, &salt)?;
    std::fs::write(&a.salt_out, &salt)?;
    println!("{}", hex::encode(commitment.digest));
    Ok(())
}

#[derive(Args)]
struct LedgerAppendArgs {
    #[arg(long)]
    ledger: PathBuf,
    /// 64-hex-character commitment digest
    #[arg(long)]
    digest: String,
    #[arg(long)]
    claimant: String,
}

fn cmd_ledger_append(a: LedgerAppendArgs) -> Result<()> {
    let raw = hex::decode(&a.digest).map_err(|_| Error::Parse {
        what: "digest",
        detail: "not valid hex".into(),
    })?;
    let digest: [u8; 32] = raw.try_into().map_err(|_| Error::Parse {
        what: "digest",
        detail: "must be 32 bytes".into(),
    })?;
    let mut l = Ledger::open_or_create(&a.ledger)?;
    let rec = l.append(digest, &a.claimant)?;
    println!("seq={}", rec.seq);
    Ok(())
}

#[derive(Args)]
struct LedgerOpenArgs {
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long)]
    seq: u64,
    #[arg(long)]
    fp: PathBuf,
    #[arg(long)]
    salt: PathBuf,
}

fn cmd_ledger_open(a: LedgerOpenArgs) -> Result<()> {
    let l = Ledger::open_or_create(&a.ledger)?;
    let record = l
        .record(a.seq)
        .ok_or_else(|| Error::InvalidArgument(format!("no ledger record with seq {}", a.seq)))?;
    let fp = load_one_fingerprint(&a.fp)?;
    let salt = std::fs::read(&a.salt)?;
    if ledger::open(record, &fp, &salt) {
        println!("opened seq={} claimant={}", record.seq, record.claimant);
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "commitment at seq {} does not open with this fingerprint and salt",
            a.seq
        )))
    }
}

#[derive(Args)]
struct LedgerResolveArgs {
    #[arg(long)]
    ledger: PathBuf,
    /// Suspect model checkpoint
    #[arg(long)]
    target: PathBuf,
    /// Claims file: one "<seq><TAB><fingerprint file><TAB><salt file>" per line
    #[arg(long)]
    claims: PathBuf,
}

fn cmd_ledger_resolve(a: LedgerResolveArgs) -> Result<()> {
    let l = Ledger::open_or_create(&a.ledger)?;
    let ck = Checkpoint::load(&a.target)?;
    let oracle = CheckpointOracle::new(&ck, a.target.display().to_string());
    let text = std::fs::read_to_string(&a.claims)?;
    let mut claims = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                what: "claims",
                detail: format!("line {}: expected seq<TAB>fp<TAB>salt", i + 1),
            });
        }
        claims.push(Claim {
            seq: parts[0].parse().map_err(|_| Error::Parse {
                what: "claims",
                detail: format!("line {}: bad seq", i + 1),
            })?,
            fingerprint: load_one_fingerprint(Path::new(parts[1]))?,
            salt: std::fs::read(parts[2])?,
        });
    }
    let winner = ledger::resolve_race(&l, &claims, &oracle)?;
    println!("winner seq={} claimant={}", winner.seq, winner.claimant);
    Ok(())
}

// -------------------------------------------------------------- attack

#[derive(Subcommand)]
enum AttackCmd {
    /// Train-from-scratch poisoning cost across fingerprint lengths
    Frontrun(FrontrunArgs),
    /// Repeated generation with distinct seeds (collision probe)
    Density(DensityArgs),
    /// Perplexity separation between fingerprint and natural prompts
    Ppl(PplArgs),
    /// Analytic probability of forging a response by chance
    Forgery(ForgeryArgs),
    /// TPR under substituted filtering system prompts
    Filter(FilterArgs),
}

#[derive(Args)]
struct FrontrunArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Total fingerprint lengths (prompt + response), comma separated
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,54")]
    len: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run "step,verified" traces
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    ctx: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 1500)]
    max_steps: usize,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_attack_frontrun(a: FrontrunArgs) -> Result<()> {
    let corpus = std::fs::read(&a.corpus)?;
    let seed = resolve_seed(a.seed);
    let config = ModelConfig {
        vocab: VOCAB_SIZE,
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        ctx_len: a.ctx,
        seed: seed as u32,
    };
    let tcfg = TrainConfig {
        lr: a.lr,
        batch_size: 4,
        seq_len: 32,
        seed,
        ..TrainConfig::default()
    };
    if let Some(dir) = &a.traces {
        std::fs::create_dir_all(dir)?;
    }
    let mut csv = String::from("fp_len,steps_to_full_tpr\n");
    for &len in &a.len {
        let y_len = (len / 4).max(1);
        let x_len = len - y_len;
        if x_len == 0 {
            return Err(Error::InvalidArgument(format!("length {len} is too short")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ len as u64);
        let x: Vec<TokenId> = (0..x_len).map(|_| TokenId(rng.gen_range(0..256))).collect();
        let y: Vec<TokenId> = (0..y_len).map(|_| TokenId(rng.gen_range(0..256))).collect();
        let r = attacks::front_run(&config, &corpus, (&x, &y), &tcfg, a.max_steps, a.eval_every)?;
        csv.push_str(&format!(
            "{},{}\n",
            r.fp_len,
            r.steps_to_full_tpr
                .map(|s| s.to_string())
                .unwrap_or_else(|| "incomplete".into())
        ));
        if let Some(dir) = &a.traces {
            std::fs::write(dir.join(format!("frontrun-{len}.csv")), r.to_csv())?;
        }
    }
    emit(a.out.as_deref(), &csv)
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_attack_density(a: DensityArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let tasks = TaskSet::new(vec![&ck], vec![vec![]])?;
    let report = attacks::density_probe(&tasks, &GcgConfig::default(), a.count)?;
    emit(a.out.as_deref(), &report.to_csv())
}

#[derive(Args)]
struct PplArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Fingerprint file whose prompt regions are scored
    #[arg(long)]
    fps: PathBuf,
    /// Natural prompts, one per line
    #[arg(long)]
    natural: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,200")]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_attack_ppl(a: PplArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let fps = fpgen::load_fingerprints(&a.fps)?;
    let prompts: Vec<Vec<TokenId>> = fps.iter().map(|f| f.prompt.clone()).collect();
    let natural: Vec<Vec<u8>> = std::fs::read_to_string(&a.natural)?
        .lines()
        .map(|l| l.as_bytes().to_vec())
        .collect();
    let report = attacks::ppl_filter(&ck, &prompts, &natural, &a.thresholds)?;
    emit(a.out.as_deref(), &report.to_csv())
}

#[derive(Args)]
struct ForgeryArgs {
    /// Response domain size
    #[arg(long = "D")]
    d: u64,
    #[arg(long)]
    ylen: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_attack_forgery(a: ForgeryArgs) -> Result<()> {
    let p = attacks::forgery_probability(a.d, a.ylen)?;
    emit(
        a.out.as_deref(),
        &format!("d,y_len,probability\n{},{},{:.6e}\n", a.d, a.ylen, p),
    )
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    fps: PathBuf,
    /// System prompt variant names, comma separated
    #[arg(long, value_delimiter = ',', default_value = "empty,basic,basic_fp1,basic_fp2")]
    variants: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_attack_filter(a: FilterArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let fps = fpgen::load_fingerprints(&a.fps)?;
    let oracle = CheckpointOracle::new(&ck, a.ckpt.display().to_string());
    let names: Vec<&str> = a.variants.iter().map(|s| s.as_str()).collect();
    let rows = attacks::filter_prompt_eval(&oracle, &fps, &names, &DecodeParams::greedy())?;
    let mut csv = String::from("variant,tpr\n");
    for (name, tpr) in rows {
        csv.push_str(&format!("{name},{tpr:.4}\n"));
    }
    emit(a.out.as_deref(), &csv)
}

// -------------------------------------------------------------- report

#[derive(Subcommand)]
enum ReportCmd {
    /// Concatenate CSV files that share a header into one
    Merge(MergeArgs),
}

#[derive(Args)]
struct MergeArgs {
    /// Input CSV files
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_report_merge(a: MergeArgs) -> Result<()> {
    let mut header: Option<String> = None;
    let mut merged = String::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or(Error::EmptyInput("csv file"))?
            .to_string();
        match &header {
            None => {
                merged.push_str(&first);
                merged.push('\n');
                header = Some(first);
            }
            Some(h) if *h == first => {}
            Some(h) => {
                return Err(Error::Parse {
                    what: "csv",
                    detail: format!(
                        "{} has header {first:?}, expected {h:?}",
                        path.display()
                    ),
                });
            }
        }
        for line in lines {
            merged.push_str(line);
            merged.push('\n');
        }
    }
    emit(a.out.as_deref(), &merged)
}

// ---------------------------------------------------------------- main

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Lineage(LineageCmd::Build(a)) => cmd_lineage_build(a),
        Command::Fp(FpCmd::Gen(a)) => cmd_fp_gen(a),
        Command::Fp(FpCmd::Verify(a)) => cmd_fp_verify(a),
        Command::Ledger(LedgerCmd::Commit(a)) => cmd_ledger_commit(a),
        Command::Ledger(LedgerCmd::Append(a)) => cmd_ledger_append(a),
        Command::Ledger(LedgerCmd::Open(a)) => cmd_ledger_open(a),
        Command::Ledger(LedgerCmd::Resolve(a)) => cmd_ledger_resolve(a),
        Command::Attack(AttackCmd::Frontrun(a)) => cmd_attack_frontrun(a),
        Command::Attack(AttackCmd::Density(a)) => cmd_attack_density(a),
        Command::Attack(AttackCmd::Ppl(a)) => cmd_attack_ppl(a),
        Command::Attack(AttackCmd::Forgery(a)) => cmd_attack_forgery(a),
        Command::Attack(AttackCmd::Filter(a)) => cmd_attack_filter(a),
        Command::Report(ReportCmd::Merge(a)) => cmd_report_merge(a),
    }
}

fn main() {
    // clap exits with code 2 and usage text on parse errors
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

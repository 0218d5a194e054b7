//! Command-line front end. `run` returns the process exit code: 0 on success,
//! 1 on usage or validation errors, 2 on I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{bias_report, label_tokens};
use crate::augment::{check_probability, outcome_stats_sharded, AugmentVariant, CaseMode};
use crate::corpus::{load_corpus, load_sts, read_lines};
use crate::encoder::{EncoderParams, VectorSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_sts, EvalTransform};
use crate::pipeline::{encode_corpus, train, TrainConfig};
use crate::retrieval::{NegativeIndex, RetrievalConfig, Strategy};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Parser, Serialize)]
#[command(name = "cards", version, about = "Switch-case augmentation and hard-negative contrastive training")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded, fully serial execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Deduplicate and clean a one-sentence-per-line corpus.
    Preprocess(PreprocessArgs),
    /// Tokenization outcome statistics of switch-case augmentation.
    AugmentStats(AugmentStatsArgs),
    /// Build a static negative-retrieval index.
    BuildIndex(BuildIndexArgs),
    /// Query an index for nearest neighbors or sampled negatives.
    Retrieve(RetrieveArgs),
    /// Train the toy encoder.
    Train(TrainArgs),
    /// Score a checkpoint on STS-style datasets.
    Eval(EvalArgs),
    /// PCA of token embeddings labeled by case class.
    AnalyzeEmbeddings(AnalyzeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TokenizerArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub merges: PathBuf,
}

impl TokenizerArgs {
    fn load(&self) -> Result<Tokenizer> {
        Tokenizer::load(&self.vocab, &self.merges)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Drop sentences with fewer whitespace-separated words.
    #[arg(long, default_value_t = 1)]
    pub min_words: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentStatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    #[arg(long, default_value_t = 0.15)]
    pub psc: f64,
    /// Only `default` is meaningful here; other variants do not change the
    /// flipped-word outcome.
    #[arg(long, value_enum, default_value_t = VariantArg::Default)]
    pub variant: VariantArg,
    /// Fixed shard count, so results do not depend on --threads.
    #[arg(long, default_value_t = 16)]
    pub shards: usize,
    /// Directory for the TSV report and run config; stdout only if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    /// Prebuilt sentence vectors (text or binary vector file).
    #[arg(long, conflicts_with = "corpus")]
    pub vectors: Option<PathBuf>,
    /// Corpus to encode with the encoder.
    #[arg(long, requires = "vocab")]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "merges")]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Encoder checkpoint; a freshly initialized encoder (from --seed) if omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub max_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query sentence ids; every indexed id if omitted.
    #[arg(long = "query", num_args = 1..)]
    pub queries: Vec<u64>,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub s: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::RUniform)]
    pub strategy: StrategyArg,
    /// Print the k nearest neighbors instead of sampled negatives.
    #[arg(long)]
    pub top_k: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Dev set, `sentence_a<TAB>sentence_b<TAB>score`.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub dev_has_header: bool,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    /// Static index over the corpus; built from the initial encoder if omitted.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_words: usize,
    #[arg(long, default_value_t = 0.1)]
    pub psc: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub s: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::RUniform)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub no_retrieval: bool,
    #[arg(long)]
    pub exclude_self_negative: bool,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 32)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 125)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Default)]
    pub variant: VariantArg,
    /// Augment both views instead of only the first.
    #[arg(long)]
    pub both_views: bool,
    #[arg(long, value_enum)]
    pub ignore_case: Option<CaseArg>,
    #[arg(long)]
    pub eval_capitalize_first: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    /// `NAME=PATH` pairs, or bare paths named by file stem.
    #[arg(long = "dataset", required = true, num_args = 1..)]
    pub datasets: Vec<String>,
    #[arg(long)]
    pub has_header: bool,
    #[arg(long, default_value_t = 32)]
    pub max_tokens: usize,
    #[arg(long)]
    pub capitalize_first: bool,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Vector file whose ids are token ids, or an encoder checkpoint.
    #[arg(long)]
    pub vectors: PathBuf,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
    /// Corpus for token frequencies.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output TSV; the run config goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    #[value(name = "r_uniform")]
    RUniform,
    #[value(name = "r_top")]
    RTop,
    #[value(name = "d_uniform")]
    DUniform,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::RUniform => Strategy::RUniform,
            StrategyArg::RTop => Strategy::RTop,
            StrategyArg::DUniform => Strategy::DUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    Default,
    SubstitutionOnly,
    Retokenization,
    LowercaseAll,
    WordRepetition,
}

impl From<VariantArg> for AugmentVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Default => AugmentVariant::Default,
            VariantArg::SubstitutionOnly => AugmentVariant::SubstitutionOnly,
            VariantArg::Retokenization => AugmentVariant::ReTokenization,
            VariantArg::LowercaseAll => AugmentVariant::LowercaseAll,
            VariantArg::WordRepetition => AugmentVariant::WordRepetition,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseArg {
    Train,
    Eval,
    Both,
}

impl From<CaseArg> for CaseMode {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Train => CaseMode::Train,
            CaseArg::Eval => CaseMode::Eval,
            CaseArg::Both => CaseMode::Both,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if threads == Some(0) {
        return Err(Error::invalid("--threads must be at least 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Preprocess(a) => preprocess(cli, a),
        Command::AugmentStats(a) => augment_stats(cli, a),
        Command::BuildIndex(a) => build_index(cli, a),
        Command::Retrieve(a) => retrieve(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::AnalyzeEmbeddings(a) => analyze(cli, a),
    })
}

fn flag_error(flag: &str, e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::invalid(format!("--{flag}: {m}")),
        other => other,
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `run_config.json` with the parsed command line, any resolved
/// settings and the SHA-256 of every input file.
fn write_run_config(dir: &Path, cli: &Cli, resolved: Option<serde_json::Value>, inputs: &[&Path]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), file_sha256(p)?);
    }
    let doc = serde_json::json!({
        "cli": cli,
        "resolved": resolved,
        "input_sha256": hashes,
    });
    write_file(
        &dir.join("run_config.json"),
        serde_json::to_string_pretty(&doc).expect("config serializes") + "\n",
    )
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<()> {
    let sentences = load_corpus(&a.input, a.min_words)?;
    create_dir(&a.out)?;
    let text: String = sentences.iter().map(|s| format!("{}\n", s.text)).collect();
    write_file(&a.out.join("corpus.txt"), text)?;
    write_run_config(&a.out, cli, None, &[&a.input])?;
    log::info!("kept {} sentences", sentences.len());
    Ok(())
}

fn augment_stats(cli: &Cli, a: &AugmentStatsArgs) -> Result<()> {
    check_probability("p_sc", a.psc).map_err(|e| flag_error("psc", e))?;
    if !matches!(a.variant, VariantArg::Default) {
        log::warn!("augment-stats measures the flipped-word outcome; --variant does not change it");
    }
    if a.shards == 0 {
        return Err(Error::invalid("--shards must be at least 1"));
    }
    let tok = a.tokenizer.load()?;
    let lines: Vec<String> = read_lines(&a.corpus)?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let stats = outcome_stats_sharded(&lines, &tok, a.psc, cli.seed, a.shards)?;
    let tsv = stats.to_tsv();
    print!("{tsv}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("augment_stats.tsv"), &tsv)?;
        let resolved = serde_json::json!({
            "changed_token_count_share": stats.changed_share(),
            "flipped_words": stats.total(),
        });
        write_run_config(out, cli, Some(resolved), &[&a.corpus, &a.tokenizer.vocab, &a.tokenizer.merges])?;
    }
    Ok(())
}

fn build_index(cli: &Cli, a: &BuildIndexArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = Vec::new();
    let vectors = match (&a.vectors, &a.corpus) {
        (Some(path), _) => {
            inputs.push(path);
            VectorSet::load(path)?
        }
        (None, Some(corpus_path)) => {
            let (vocab, merges) = a.vocab.as_ref().zip(a.merges.as_ref()).ok_or_else(|| {
                Error::invalid("--corpus needs --vocab and --merges")
            })?;
            let tok = Tokenizer::load(vocab, merges)?;
            let corpus = load_corpus(corpus_path, 1)?;
            let params = match &a.checkpoint {
                Some(p) => {
                    inputs.push(p);
                    EncoderParams::load(p)?
                }
                None => EncoderParams::init(tok.vocab_size(), a.dim, cli.seed)?,
            };
            inputs.extend([corpus_path.as_path(), vocab.as_path(), merges.as_path()]);
            encode_corpus(&params, &tok, &corpus, a.max_tokens)?
        }
        (None, None) => return Err(Error::invalid("give either --vectors or --corpus")),
    };
    let index = NegativeIndex::from_vectors(&vectors)?;
    create_dir(&a.out)?;
    index.save(&a.out.join("index.bin"))?;
    let resolved = serde_json::json!({ "n": index.len(), "d": index.dim(), "provenance": index.provenance_hex() });
    write_run_config(&a.out, cli, Some(resolved), &inputs)
}

fn retrieve(cli: &Cli, a: &RetrieveArgs) -> Result<()> {
    let index = NegativeIndex::load(&a.index)?;
    let cfg = RetrievalConfig {
        k: a.k,
        s: a.s,
        strategy: a.strategy.into(),
    };
    cfg.validate()?;
    let queries: Vec<u64> = if a.queries.is_empty() {
        index.ids().to_vec()
    } else {
        a.queries.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut out = String::from("query_id\trank\tneighbor_id\tcosine\n");
    for &q in &queries {
        let rows: Vec<(u64, f64)> = if a.top_k {
            index.top_k(q, a.k)?.into_iter().map(|n| (n.id, n.cosine)).collect()
        } else {
            index
                .sample_negatives(q, &cfg, &mut rng)?
                .into_iter()
                .map(|id| Ok((id, index.cosine(q, id)?)))
                .collect::<Result<_>>()?
        };
        for (rank, (id, cos)) in rows.into_iter().enumerate() {
            out.push_str(&format!("{q}\t{}\t{id}\t{cos:.6}\n", rank + 1));
        }
    }
    print!("{out}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("neighbors.tsv"), &out)?;
        write_run_config(dir, cli, None, &[&a.index])?;
    }
    Ok(())
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            p_sc: self.psc,
            tau: self.tau,
            k: self.k,
            s: self.s,
            strategy: self.strategy.into(),
            retrieval: !self.no_retrieval,
            exclude_self_negative: self.exclude_self_negative,
            batch_size: self.batch_size,
            dropout: self.dropout,
            max_tokens: self.max_tokens,
            eval_every: self.eval_every,
            epochs: self.epochs,
            lr: self.lr,
            seed,
            dim: self.dim,
            variant: self.variant.into(),
            one_view_augment: !self.both_views,
            ignore_case: self.ignore_case.map(Into::into),
            eval_capitalize_first: self.eval_capitalize_first,
        }
    }
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    check_probability("p_sc", a.psc).map_err(|e| flag_error("psc", e))?;
    let cfg = a.config(cli.seed);
    cfg.validate()?;
    let tok = a.tokenizer.load()?;
    let corpus = load_corpus(&a.corpus, a.min_words)?;
    let dev = load_sts(&a.dev, a.dev_has_header)?;
    let mut inputs: Vec<&Path> = vec![&a.corpus, &a.dev, &a.tokenizer.vocab, &a.tokenizer.merges];
    let index = match (&a.index, cfg.retrieval) {
        (_, false) => None,
        (Some(p), true) => {
            inputs.push(p);
            Some(NegativeIndex::load(p)?)
        }
        (None, true) => {
            let init = EncoderParams::init(tok.vocab_size(), cfg.dim, cfg.seed)?;
            let vectors = encode_corpus(&init, &tok, &corpus, cfg.max_tokens)?;
            Some(NegativeIndex::from_vectors(&vectors)?)
        }
    };
    create_dir(&a.out)?;
    let outcome = train(&corpus, &tok, index.as_ref(), &dev, &cfg, cli.deterministic)?;
    write_file(&a.out.join("metrics.jsonl"), outcome.metrics_jsonl())?;
    outcome.best.params.save(&a.out.join("best.ckpt"))?;
    outcome.final_params.save(&a.out.join("final.ckpt"))?;
    let resolved = serde_json::json!({
        "train_config": cfg,
        "config_hash": cfg.hash(),
        "ablation": cfg.ablation_name(),
        "best_step": outcome.best.step,
        "best_dev_score": outcome.best.dev_score,
        "index_provenance": index.as_ref().map(NegativeIndex::provenance_hex),
    });
    write_run_config(&a.out, cli, Some(resolved), &inputs)?;
    println!(
        "best dev spearman {:.4} at step {} ({})",
        outcome.best.dev_score,
        outcome.best.step,
        cfg.ablation_name()
    );
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let tok = a.tokenizer.load()?;
    let params = EncoderParams::load(&a.checkpoint)?;
    let mut datasets = Vec::new();
    let mut paths = Vec::new();
    for spec in &a.datasets {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let name = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (name, p)
            }
        };
        datasets.push((name, load_sts(&path, a.has_header)?));
        paths.push(path);
    }
    let transform = EvalTransform {
        capitalize_first: a.capitalize_first,
        lowercase: a.lowercase,
    };
    let report = evaluate_sts(&params, &tok, &datasets, transform, a.max_tokens)?;
    let mut out = String::from("dataset\tspearman\n");
    for (name, score) in &report.per_set {
        out.push_str(&format!("{name}\t{score:.6}\n"));
    }
    out.push_str(&format!("avg\t{:.6}\n", report.average));
    print!("{out}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("eval.tsv"), &out)?;
        let mut inputs: Vec<&Path> = vec![&a.checkpoint, &a.tokenizer.vocab, &a.tokenizer.merges];
        inputs.extend(paths.iter().map(PathBuf::as_path));
        write_run_config(dir, cli, None, &inputs)?;
    }
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let tok = a.tokenizer.load()?;
    let (ids, matrix): (Vec<u64>, Array2<f64>) = match VectorSet::load(&a.vectors) {
        Ok(set) => (set.ids.clone(), set.matrix.mapv(f64::from)),
        Err(e) if !e.is_io() => match EncoderParams::load(&a.vectors) {
            Ok(params) => ((0..params.vocab_size() as u64).collect(), params.token_embeddings),
            Err(_) => return Err(e),
        },
        Err(e) => return Err(e),
    };
    let corpus = a.corpus.as_ref().map(|p| read_lines(p)).transpose()?;
    let all_labels = label_tokens(&tok, corpus.as_deref());
    let labels = ids
        .iter()
        .map(|&id| {
            all_labels
                .get(id as usize)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("vector id {id} is not a token id of the vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    let tsv = bias_report(matrix.view(), &labels)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&a.out, tsv)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut inputs: Vec<&Path> = vec![&a.vectors, &a.tokenizer.vocab, &a.tokenizer.merges];
    if let Some(c) = &a.corpus {
        inputs.push(c);
    }
    write_run_config(dir, cli, None, &inputs)
}

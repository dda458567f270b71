//! `fsed`: corpus statistics, splits, training, evaluation, debiasing probes
//! and ablation grids. Every command writes a fresh run directory named
//! `<command>-<config hash>-seed<seed>` and prints its path.

mod config;
mod rundir;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fsed::ablation::{self, Variant};
use fsed::checkpoint;
use fsed::corpus::{self, CorpusFormat, DatasetManifest};
use fsed::encoder::MaskedLm;
use fsed::evaluator::{self, EvalReport};
use fsed::sampler::{self, FewShotSplit};
use fsed::trainer::{self, TrainError};
use fsed::Corpus;
use serde::Serialize;

use config::{hash12, RunConfig};
use rundir::{run_name, Staged};

#[derive(Parser)]
#[command(name = "fsed", version, about = "True few-shot event detection toolkit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    force: bool,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics and trigger-bias profile.
    Stats(CorpusArgs),
    /// Write a K-shot (or full-data) split.
    Split(SplitArgs),
    /// Train one model per configured seed.
    Train(TrainArgs),
    /// Score a trained run on its test or validation set.
    Eval(EvalArgs),
    /// Score a trained run on the full test pool and the IUS, TUS and COS probes.
    Debias(DebiasArgs),
    /// Train and test prompt-order and component variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file; defaults to `data.corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Shots per type; defaults to `data.k`.
    #[arg(long)]
    k: Option<usize>,
    /// Split seed; defaults to `data.split_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// 8:1:1 split over all mentions.
    #[arg(long)]
    full_data: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Train only this seed instead of `train.seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Target {
    Test,
    Valid,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `fsed train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    target: Target,
}

#[derive(Args)]
struct DebiasArgs {
    /// Directory written by `fsed train`.
    #[arg(long)]
    run: PathBuf,
    /// Mentions per type for each probe; defaults to `eval.debias_k`.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling seed; defaults to the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// The eight prompt segment orders.
    #[arg(long)]
    sequence: bool,
    /// The full model and each single-component removal.
    #[arg(long)]
    components: bool,
    /// Run only this seed instead of `train.seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes and their exit codes.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Runtime(_) => "runtime",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Data(e) | Failure::Runtime(e) => f.write_str(&chain(e)),
        }
    }
}

/// Joins an error chain, skipping causes already quoted by their parent.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn data<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Data(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<Vec<PathBuf>, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(Failure::Usage(e.render().to_string().trim_end().to_string())),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(dirs) => {
            for d in dirs {
                println!("{}", d.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => report(f),
    }
}

/// Prints a one-line JSON error record on stderr.
fn report(f: Failure) -> ExitCode {
    let record = serde_json::json!({
        "error": f.kind(),
        "message": f.to_string(),
        "exit_code": f.code(),
    });
    eprintln!("{record}");
    ExitCode::from(f.code())
}

fn run(cli: &Cli) -> Outcome {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides).map_err(Failure::Usage)?;
    match &cli.command {
        Command::Stats(a) => {
            apply_corpus(&mut cfg, a);
            cmd_stats(cli, &cfg)
        }
        Command::Split(a) => {
            apply_corpus(&mut cfg, &a.corpus);
            if let Some(k) = a.k {
                cfg.data.k = k;
            }
            if let Some(s) = a.seed {
                cfg.data.split_seed = s;
            }
            cfg.data.full_data |= a.full_data;
            if cfg.data.k == 0 && !cfg.data.full_data {
                return Err(Failure::Usage("k must be positive".into()));
            }
            cmd_split(cli, &cfg)
        }
        Command::Train(a) => {
            apply_corpus(&mut cfg, &a.corpus);
            apply_seed(&mut cfg, a.seed);
            cmd_train(cli, &cfg)
        }
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Debias(a) => cmd_debias(cli, a),
        Command::Ablate(a) => {
            apply_corpus(&mut cfg, &a.corpus);
            apply_seed(&mut cfg, a.seed);
            cmd_ablate(cli, &cfg, a)
        }
    }
}

fn apply_corpus(cfg: &mut RunConfig, a: &CorpusArgs) {
    if let Some(c) = &a.corpus {
        cfg.data.corpus = c.clone();
    }
}

fn apply_seed(cfg: &mut RunConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.train.seeds = vec![s];
    }
}

fn load_corpus(path: &Path) -> Result<(Corpus, corpus::LoadReport), Failure> {
    let (c, report) = corpus::load_corpus(path, CorpusFormat::Jsonl).map_err(data)?;
    if c.is_empty() {
        return Err(data(anyhow::anyhow!("{} holds no valid mentions", path.display())));
    }
    Ok((c, report))
}

fn make_split(c: &Corpus, cfg: &RunConfig) -> Result<FewShotSplit, Failure> {
    let s = if cfg.data.full_data {
        sampler::make_fulldata_split(c, cfg.data.split_seed)
    } else {
        sampler::make_true_fewshot_split(c, cfg.data.k, cfg.data.split_seed)
    };
    s.map_err(data)
}

fn stage(cli: &Cli, cmd: &str, hash: &str, seed: u64) -> Result<Staged, Failure> {
    Staged::new(&cli.out, &run_name(cmd, hash, seed), cli.force).map_err(|e| Failure::Usage(format!("{e:#}")))
}

fn write_config(dir: &Staged, cfg: &RunConfig) -> Result<(), Failure> {
    let text = toml::to_string(cfg).map_err(runtime)?;
    dir.write("config.toml", text).map_err(runtime)
}

fn cmd_stats(cli: &Cli, cfg: &RunConfig) -> Outcome {
    let (c, report) = load_corpus(&cfg.data.corpus)?;
    let stats = corpus::corpus_stats(&c).map_err(data)?;
    let bias = corpus::trigger_bias_profile(&c, cfg.eval.bias_top_k).map_err(data)?;
    let hash = hash12(&("stats", &cfg.data.corpus, cfg.eval.bias_top_k));
    let dir = stage(cli, "stats", &hash, cfg.data.split_seed)?;
    dir.write_json("manifest.json", &DatasetManifest::new(&c, &report)).map_err(runtime)?;
    dir.write_json("stats.json", &stats).map_err(runtime)?;
    dir.write_json("bias.json", &bias).map_err(runtime)?;
    Ok(vec![dir.commit().map_err(runtime)?])
}

fn cmd_split(cli: &Cli, cfg: &RunConfig) -> Outcome {
    let (c, _) = load_corpus(&cfg.data.corpus)?;
    let split = make_split(&c, cfg)?;
    let hash = hash12(&("split", &cfg.data));
    let dir = stage(cli, "split", &hash, cfg.data.split_seed)?;
    dir.write("split.json", split.to_json() + "\n").map_err(runtime)?;
    Ok(vec![dir.commit().map_err(runtime)?])
}

/// One seed's training artifacts: resolved config, split, checkpoint, log
/// and validation report.
fn cmd_train(cli: &Cli, cfg: &RunConfig) -> Outcome {
    let (c, _) = load_corpus(&cfg.data.corpus)?;
    let split = make_split(&c, cfg)?;
    let mut dirs = Vec::new();
    for &seed in &cfg.train.seeds {
        let seed_cfg = RunConfig {
            train: fsed::TrainConfig {
                seeds: vec![seed],
                ..cfg.train.clone()
            },
            ..cfg.clone()
        };
        let hash = hash12(&("train", &seed_cfg));
        let dir = stage(cli, "train", &hash, seed)?;
        write_config(&dir, &seed_cfg)?;
        dir.write("split.json", split.to_json() + "\n").map_err(runtime)?;
        log::info!("training seed {seed}");
        match trainer::train(&split, &c, &cfg.train, &cfg.encoder, &cfg.prompt, seed) {
            Ok(out) => {
                let valid = c.select(&split.valid);
                let mut log_bytes = Vec::new();
                out.log.write_jsonl(&mut log_bytes).map_err(runtime)?;
                dir.write("train_log.jsonl", log_bytes).map_err(runtime)?;
                checkpoint::save(&out.model, seed, &dir.path().join("checkpoint")).map_err(runtime)?;
                if !valid.is_empty() {
                    let r = evaluator::evaluate(&out.model, &valid, cfg.train.batch_eval).map_err(runtime)?;
                    dir.write_json("valid_report.json", &r).map_err(runtime)?;
                }
                dirs.push(dir.commit().map_err(runtime)?);
            }
            Err(TrainError::Diverged {
                iteration,
                last_finite,
                log,
            }) => {
                // keep the evidence, then fail
                let mut log_bytes = Vec::new();
                log.write_jsonl(&mut log_bytes).map_err(runtime)?;
                dir.write("train_log.jsonl", log_bytes).map_err(runtime)?;
                checkpoint::save(&last_finite, seed, &dir.path().join("checkpoint")).map_err(runtime)?;
                dir.write_json("diverged.json", &serde_json::json!({ "iteration": iteration })).map_err(runtime)?;
                let path = dir.commit().map_err(runtime)?;
                return Err(runtime(anyhow::anyhow!(
                    "seed {seed} diverged at iteration {iteration}; state kept in {}",
                    path.display()
                )));
            }
            Err(e @ (TrainError::Config(_) | TrainError::UnknownLabel(_) | TrainError::EmptyTrain)) => {
                return Err(data(e));
            }
            Err(e) => return Err(runtime(e)),
        }
    }
    Ok(dirs)
}

/// A finished training run read back from disk.
struct TrainedRun {
    cfg: RunConfig,
    split: FewShotSplit,
    model: fsed::Model<fsed::ToyEncoder>,
    seed: u64,
    corpus: Corpus,
}

fn load_run(dir: &Path) -> Result<TrainedRun, Failure> {
    let text = fs::read_to_string(dir.join("config.toml"))
        .with_context(|| format!("{} is not a training run", dir.display()))
        .map_err(data)?;
    let cfg: RunConfig = toml::from_str(&text).map_err(data)?;
    let split_text = fs::read_to_string(dir.join("split.json")).map_err(data)?;
    let split = FewShotSplit::from_json(&split_text).map_err(data)?;
    let (model, seed) = checkpoint::load(&dir.join("checkpoint")).map_err(data)?;
    let (corpus, _) = load_corpus(&cfg.data.corpus)?;
    Ok(TrainedRun {
        cfg,
        split,
        model,
        seed,
        corpus,
    })
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Outcome {
    let run = load_run(&a.run)?;
    let ids = match a.target {
        Target::Test => &run.split.test,
        Target::Valid => &run.split.valid,
    };
    let mentions = run.corpus.select(ids);
    if mentions.len() != ids.len() {
        return Err(data(anyhow::anyhow!("split ids missing from {}", run.cfg.data.corpus.display())));
    }
    let batch = run.cfg.train.batch_eval;
    let report = evaluator::evaluate(&run.model, &mentions, batch).map_err(runtime)?;
    let buckets = evaluator::length_bucket_eval(&run.model, &mentions, &run.cfg.eval.length_intervals, batch)
        .map_err(runtime)?;
    let preds = evaluator::predict(&run.model, &mentions, batch).map_err(runtime)?;

    let hash = hash12(&("eval", &run.cfg, a.target, run.model.encoder.params().checksum()));
    let dir = stage(cli, "eval", &hash, run.seed)?;
    dir.write_json("report.json", &report).map_err(runtime)?;
    dir.write_json("buckets.json", &buckets).map_err(runtime)?;
    let mut lines = String::new();
    for p in &preds {
        lines.push_str(&serde_json::to_string(p).map_err(runtime)?);
        lines.push('\n');
    }
    dir.write("predictions.jsonl", lines).map_err(runtime)?;
    let mut rows = vec![("all".to_string(), Some(&report))];
    for b in &buckets {
        rows.push((format!("({}, {}]", b.lo, b.hi), b.report.as_ref()));
    }
    dir.write("table.txt", evaluator::render_table("length", &rows)).map_err(runtime)?;
    Ok(vec![dir.commit().map_err(runtime)?])
}

fn cmd_debias(cli: &Cli, a: &DebiasArgs) -> Outcome {
    let run = load_run(&a.run)?;
    let k = a.k.unwrap_or(run.cfg.eval.debias_k);
    if k == 0 {
        return Err(Failure::Usage("k must be positive".into()));
    }
    let seed = a.seed.unwrap_or(run.seed);
    let entries = evaluator::debias_eval(&run.model, &run.corpus, &run.split, k, seed, run.cfg.train.batch_eval)
        .map_err(runtime)?;
    let hash = hash12(&("debias", &run.cfg, k, run.model.encoder.params().checksum()));
    let dir = stage(cli, "debias", &hash, seed)?;
    dir.write_json("debias.json", &entries).map_err(runtime)?;
    let rows: Vec<(String, Option<&EvalReport>)> = entries
        .iter()
        .map(|e| (format!("{} (n={})", e.method.name(), e.size), e.report.as_ref()))
        .collect();
    dir.write("table.txt", evaluator::render_table("probe", &rows)).map_err(runtime)?;
    Ok(vec![dir.commit().map_err(runtime)?])
}

fn cmd_ablate(cli: &Cli, cfg: &RunConfig, a: &AblateArgs) -> Outcome {
    let (c, _) = load_corpus(&cfg.data.corpus)?;
    let split = make_split(&c, cfg)?;
    let mut variants: Vec<Variant> = Vec::new();
    if a.sequence {
        variants.extend(ablation::sequence_variants(&cfg.prompt, cfg.train.ablations));
    }
    if a.components {
        variants.extend(ablation::component_variants(&cfg.prompt));
    }
    if variants.is_empty() {
        variants.push(Variant {
            name: "configured".into(),
            prompt: cfg.prompt.clone(),
            ablations: cfg.train.ablations,
        });
    }
    let mut dirs = Vec::new();
    for &seed in &cfg.train.seeds {
        let rows = ablation::run_grid(&c, &split, &cfg.train, &cfg.encoder, &variants, seed);
        let hash = hash12(&("ablate", cfg, a.sequence, a.components));
        let dir = stage(cli, "ablate", &hash, seed)?;
        write_config(&dir, cfg)?;
        dir.write_json("grid.json", &rows).map_err(runtime)?;
        let table: Vec<(String, Option<&EvalReport>)> =
            rows.iter().map(|r| (r.name.clone(), r.report.as_ref())).collect();
        dir.write("table.txt", evaluator::render_table("variant", &table)).map_err(runtime)?;
        dirs.push(dir.commit().map_err(runtime)?);
        if let Some(r) = rows.iter().find(|r| r.error.is_some()) {
            return Err(runtime(anyhow::anyhow!(
                "variant {} failed: {}",
                r.name,
                r.error.as_deref().unwrap_or("")
            )));
        }
    }
    Ok(dirs)
}

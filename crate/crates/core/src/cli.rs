//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, Ablation, RunConfig};
use crate::evaluation::{evaluate_by_category_with, evaluate_split_with, EvalOptions, TiePolicy};
use crate::export::{export_type_embeddings_with, KMEANS_RESTARTS};
use crate::gradients::check;
use crate::kg_data::{RelationCategory, Split, TripleStore, DEFAULT_CATEGORY_THRESHOLD};
use crate::params::checkpoint::{self, Expected};
use crate::training::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "kgtype", version, about = "Typed knowledge-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus train.log.
    Train(TrainArgs),
    /// Filtered (or raw) link-prediction metrics for a checkpoint.
    Eval(EvalArgs),
    /// Write per-entity type embeddings as CSV.
    ExportTypes(ExportArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Dataset counts and relation categories.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for scripting; training is always single-threaded and
    /// bit-reproducible for a fixed seed.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// full, no-tsc or no-tr.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Raw instead of filtered ranking.
    #[arg(long)]
    raw: bool,
    /// Also report Hits@10 per relation category.
    #[arg(long)]
    per_category: bool,
    /// Also report head and tail metrics separately.
    #[arg(long)]
    per_side: bool,
    #[arg(long)]
    skip_unseen: bool,
    /// Count tied candidates as ranked below the target.
    #[arg(long)]
    optimistic_ties: bool,
    #[arg(long, default_value_t = DEFAULT_CATEGORY_THRESHOLD)]
    category_threshold: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also write the key=value block to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Project through this relation's matrix before export.
    #[arg(long)]
    relation: Option<String>,
    /// Run k-means with this many clusters.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// k-means restarts; fewer is faster on large vocabularies.
    #[arg(long, default_value_t = KMEANS_RESTARTS)]
    restarts: usize,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CATEGORY_THRESHOLD)]
    category_threshold: f64,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportTypes(a) => cmd_export(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn load_store(dir: &Path) -> anyhow::Result<TripleStore> {
    let store = TripleStore::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    eprint!("{}", store.describe_report());
    Ok(store)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<i32> {
    let mut cfg = match &a.config {
        Some(path) => parse_config(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.hp.seed = seed;
    }
    if let Some(steps) = a.max_steps {
        cfg.hp.max_steps = steps;
    }
    if let Some(epochs) = a.epochs {
        cfg.hp.epochs = epochs;
    }
    if let Some(ablation) = a.ablation {
        cfg.ablation = ablation;
    }
    cfg.deterministic |= a.deterministic;
    let data = a.data.or(cfg.data.clone()).context("no data directory (--data or `data =`)")?;
    let out = a.out.or(cfg.out.clone()).context("no output directory (--out or `out =`)")?;
    let hp = cfg.effective_hyperparams();
    hp.validate()?;

    let store = load_store(&data)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        eval_max_triples: cfg.eval_max_triples,
        verbose: !a.quiet,
    };
    let outcome = train(&store, &hp, &opts)?;
    println!("steps={}", outcome.steps);
    if let Some(loss) = outcome.step_losses.last() {
        println!("final_loss={loss:?}");
    }
    if let Some(mrr) = outcome.best_valid_mrr {
        println!("best_valid_mrr={mrr:?}");
    }
    println!("stopped_early={}", outcome.stopped_early);
    println!("checkpoint={}", out.join("best.ckpt").display());
    Ok(0)
}

fn load_model(
    ckpt: &Path,
    store: &TripleStore,
) -> anyhow::Result<(crate::ModelParams, crate::Hyperparams)> {
    if !ckpt.exists() {
        bail!("checkpoint {} does not exist", ckpt.display());
    }
    let expected = Expected {
        num_entities: store.num_entities(),
        num_relations: store.num_relations(),
        k: None,
        d: None,
    };
    checkpoint::load_expecting(ckpt, expected)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<i32> {
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let store = load_store(&a.data)?;
    let (params, hp) = load_model(&a.checkpoint, &store)?;
    let opts = EvalOptions {
        filtered: !a.raw,
        ties: if a.optimistic_ties {
            TiePolicy::Optimistic
        } else {
            TiePolicy::Mean
        },
        skip_unseen: a.skip_unseen,
        max_triples: 0,
        workers: a.workers,
        category_threshold: a.category_threshold,
    };
    let report = evaluate_split_with(&params, &hp, &store, a.split, &opts)?;
    print!("{}", report.render_text(a.per_side));
    let mut kv = format!("split={}\n", a.split.name());
    kv.push_str(&report.render_kv(a.per_side));
    if a.per_category {
        let cats = evaluate_by_category_with(&params, &hp, &store, a.split, &opts)?;
        print!("{}", cats.render_text());
        kv.push_str(&cats.render_kv());
    }
    print!("{kv}");
    if let Some(out) = a.out {
        fs::write(&out, &kv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(0)
}

fn cmd_export(a: ExportArgs) -> anyhow::Result<i32> {
    let store = load_store(&a.data)?;
    let (params, _) = load_model(&a.checkpoint, &store)?;
    let n = export_type_embeddings_with(
        &params,
        &store,
        a.relation.as_deref(),
        a.clusters.map(|k| (k, a.seed)),
        a.restarts,
        &a.out,
    )?;
    println!("wrote {n} rows to {}", a.out.display());
    Ok(0)
}

fn cmd_grad_check(a: GradCheckArgs) -> anyhow::Result<i32> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let report = check::run(a.seed, a.trials);
    println!("{:<14} {:<10} {:>12}", "loss", "tensor", "max_rel_err");
    for (kind, tensor, err) in &report.worst {
        println!("{:<14} {:<10} {:>12.3e}", kind.name(), tensor.name(), err);
    }
    println!(
        "trials={} redrawn={} max_error={:.3e} tolerance={:e}",
        report.trials,
        report.redrawn,
        report.max_error(),
        check::TOLERANCE
    );
    Ok(if report.passed() { 0 } else { 2 })
}

fn cmd_stats(a: StatsArgs) -> anyhow::Result<i32> {
    let store = load_store(&a.data)?;
    println!(
        "{:<10} {:>8} {:>6} {:>10} {:>8} {:>8}",
        "dataset", "#ent", "#rel", "#train", "#valid", "#test"
    );
    let name = a
        .data
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".into());
    println!(
        "{:<10} {:>8} {:>6} {:>10} {:>8} {:>8}",
        name,
        store.num_entities(),
        store.num_relations(),
        store.train().len(),
        store.valid().len(),
        store.test().len()
    );
    let mut counts = [0usize; 4];
    for r in 0..store.num_relations() {
        if let Ok(c) = store.relation_category_with(r, a.category_threshold) {
            counts[RelationCategory::ALL.iter().position(|x| *x == c).unwrap()] += 1;
        }
    }
    print!("relation categories:");
    for (c, n) in RelationCategory::ALL.iter().zip(counts) {
        print!(" {c}={n}");
    }
    println!();
    Ok(0)
}

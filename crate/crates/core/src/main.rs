use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use textsan::cache::MappingCache;
use textsan::corpus::Document;
use textsan::error::{Error, Result};
use textsan::evaluation::{audit_table, grid, sweep, write_results, AuditMode, SweepRow};
use textsan::importance::{
    fallback_scores, load_importance, load_stoplist, select_sensitive, write_importance,
    Scope, SelectOptions, Selection,
};
use textsan::manifest::RunManifest;
use textsan::mapping::{build_mapping, PivotOrder};
use textsan::sanitizer::{sanitize, CacheScope, SanitizerConfig, Seeding, Strategy};
use textsan::scoring::{build_scores, sensitivity};
use textsan::vocab::{load_embeddings, Metric};

/// Selective text sanitization with a customized exponential mechanism.
///
/// Every subcommand also accepts `--config FILE`, a TOML table whose keys
/// mirror the long flag names; flags given on the command line win.
#[derive(Parser)]
#[command(name = "textsan", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition an embedding vocabulary into output sets and score them.
    BuildMap(BuildMapArgs),
    /// Write a fallback (inverse-frequency) importance file for a corpus.
    Score(ScoreArgs),
    /// Replace sensitive tokens in a corpus.
    Sanitize(SanitizeArgs),
    /// Run sanitization over a grid of percent x selection x strategy.
    Sweep(SweepArgs),
    /// Check the probability-ratio bound over a mapping cache.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Top,
    Bottom,
}

impl From<SelectionArg> for Selection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Top => Selection::Top,
            SelectionArg::Bottom => Selection::Bottom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Aggressive,
    Conservative,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Aggressive => Strategy::Aggressive,
            StrategyArg::Conservative => Strategy::Conservative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerRecord,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheScopeArg {
    Record,
    Document,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedingArg {
    Sequential,
    PerRecord,
}

#[derive(Clone, Copy, ValueEnum)]
enum PivotArg {
    File,
    Seeded,
}

#[derive(Args)]
struct BuildMapArgs {
    /// Embedding file: `token v1 ... vd` per line, optional `count dim` header.
    #[arg(long)]
    embeddings: PathBuf,
    /// Output-set size K.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Keep only the first N tokens of the embedding file.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_enum, default_value = "file")]
    pivot_order: PivotArg,
    /// Seed for `--pivot-order seeded`.
    #[arg(long, default_value_t = 0)]
    pivot_seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Corpus: GLUE-style TSV with header, or JSON lines.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SanitizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Mapping cache written by `build-map`.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    importance: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    percent: f64,
    #[arg(long, value_enum)]
    selection: SelectionArg,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per-record")]
    scope: ScopeArg,
    /// Lifetime of the conservative replacement cache.
    #[arg(long, value_enum, default_value = "record")]
    cache_scope: CacheScopeArg,
    #[arg(long, value_enum, default_value = "sequential")]
    seeding: SeedingArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    importance: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Master seed; each grid cell derives its own.
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
    percents: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "top,bottom")]
    selections: Vec<SelectionArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "aggressive")]
    strategies: Vec<StrategyArg>,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per-record")]
    scope: ScopeArg,
    /// Also write each cell's sanitized corpus.
    #[arg(long)]
    write_corpora: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Audit every adjacent pair regardless of vocabulary size.
    #[arg(long)]
    exhaustive: bool,
    /// Seed for pair sampling on large vocabularies.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn guard_input(input: &Path, output: &Path) -> Result<()> {
    if let (Ok(a), Ok(b)) = (input.canonicalize(), output.canonicalize()) {
        if a == b {
            return Err(Error::Config(format!(
                "refusing to overwrite input {}",
                input.display()
            )));
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn select_options(stoplist: &Option<PathBuf>, scope: ScopeArg) -> Result<SelectOptions> {
    Ok(SelectOptions {
        scope: match scope {
            ScopeArg::PerRecord => Scope::PerRecord,
            ScopeArg::Global => Scope::Global,
        },
        stoplist: match stoplist {
            Some(p) => load_stoplist(p)?,
            None => Default::default(),
        },
    })
}

fn cmd_build_map(a: BuildMapArgs) -> Result<()> {
    let pivot_order = match a.pivot_order {
        PivotArg::File => PivotOrder::File,
        PivotArg::Seeded => PivotOrder::Seeded { seed: a.pivot_seed },
    };
    let metric: Metric = a.metric.into();
    let mut manifest = RunManifest::new(
        "build-map",
        json!({ "embeddings": a.embeddings, "k": a.k, "metric": metric, "limit": a.limit, "pivot_order": pivot_order }),
        None,
    );
    manifest.add_input(&a.embeddings)?;

    let emb = load_embeddings(&a.embeddings, a.limit)?;
    if emb.stats.duplicates_skipped > 0 {
        eprintln!("warning: skipped {} duplicate tokens", emb.stats.duplicates_skipped);
    }
    let mapping = build_mapping(&emb.vocab, &emb.matrix, a.k, metric, pivot_order)?;
    let scores = build_scores(&mapping, &emb.matrix)?;
    let report = mapping.report();
    if !report.self_only_tokens.is_empty() {
        eprintln!(
            "warning: {} token(s) map only to themselves: {:?}",
            report.self_only_tokens.len(),
            report.self_only_tokens
        );
    }
    prepare_out_dir(&a.out_dir)?;
    let cache = MappingCache::new(emb.digest, mapping, scores);
    cache.save(a.out_dir.join("mapping.json"))?;
    manifest.finish(&a.out_dir)?;
    println!(
        "tokens={} dim={} sets={} remainder={} sensitivity={}",
        emb.vocab.len(),
        emb.matrix.dim(),
        report.sets,
        report.remainder_size,
        sensitivity(&cache.scores)
    );
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let mut manifest = RunManifest::new("score", json!({ "input": a.input }), None);
    manifest.add_input(&a.input)?;
    let doc = Document::load(&a.input)?;
    let records = fallback_scores(&doc);
    prepare_out_dir(&a.out_dir)?;
    let path = a.out_dir.join("importance.jsonl");
    guard_input(&a.input, &path)?;
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_importance(&records, BufWriter::new(file))?;
    manifest.finish(&a.out_dir)?;
    println!("records={}", records.len());
    Ok(())
}

fn output_name(input: &Path) -> PathBuf {
    PathBuf::from(input.file_name().unwrap_or_else(|| "sanitized".as_ref()))
}

fn cmd_sanitize(a: SanitizeArgs) -> Result<()> {
    let cache = MappingCache::load(&a.map)?;
    let cfg = SanitizerConfig {
        epsilon: a.epsilon,
        k: cache.mapping.k(),
        metric: cache.mapping.metric(),
        strategy: a.strategy.into(),
        selection: a.selection.into(),
        percent: a.percent,
        seed: a.seed,
        stoplist: a.stoplist.clone(),
        cache_scope: match a.cache_scope {
            CacheScopeArg::Record => CacheScope::Record,
            CacheScopeArg::Document => CacheScope::Document,
        },
        seeding: match a.seeding {
            SeedingArg::Sequential => Seeding::Sequential,
            SeedingArg::PerRecord => Seeding::PerRecord,
        },
    };
    cfg.validate()?;
    let mut manifest = RunManifest::new("sanitize", serde_json::to_value(&cfg)?, Some(a.seed));
    for p in [&a.input, &a.map, &a.importance] {
        manifest.add_input(p)?;
    }
    if let Some(p) = &a.stoplist {
        manifest.add_input(p)?;
    }

    let doc = Document::load(&a.input)?;
    let importance = load_importance(&a.importance)?;
    if importance.renormalized > 0 {
        eprintln!("warning: renormalized {} importance records", importance.renormalized);
    }
    let opts = select_options(&a.stoplist, a.scope)?;
    let sensitive = select_sensitive(&importance.records, cfg.selection, cfg.percent, &opts)?;
    let (out, report) = sanitize(&doc, &cfg, &cache, &sensitive)?;

    prepare_out_dir(&a.out_dir)?;
    let out_path = a.out_dir.join(output_name(&a.input));
    guard_input(&a.input, &out_path)?;
    out.save(&out_path)?;
    let sens_path = a.out_dir.join("sensitive.tsv");
    let file = File::create(&sens_path).map_err(|e| Error::io(&sens_path, e))?;
    sensitive
        .write_tsv(BufWriter::new(file))
        .map_err(|e| Error::io(&sens_path, e))?;
    write_json(
        &a.out_dir.join("report.json"),
        &json!({
            "config": cfg,
            "report": report,
            "reconciles": report.reconciles(),
            "importance_renormalized": importance.renormalized,
            "mapping": cache.mapping.report(),
        }),
    )?;
    manifest.finish(&a.out_dir)?;
    if report.tokens_sensitive_oov > 0 {
        eprintln!(
            "warning: {} sensitive token(s) are out of vocabulary and were left unchanged",
            report.tokens_sensitive_oov
        );
    }
    println!(
        "tokens={} sensitive={} perturbed={} self_retained={} passed_through={}",
        report.tokens_total,
        report.tokens_sensitive,
        report.tokens_perturbed,
        report.tokens_self_retained,
        report.tokens_passed_through
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cache = MappingCache::load(&a.map)?;
    let base = SanitizerConfig {
        epsilon: a.epsilon,
        k: cache.mapping.k(),
        metric: cache.mapping.metric(),
        strategy: Strategy::Aggressive,
        selection: Selection::Top,
        percent: 100.0,
        seed: a.seed,
        stoplist: a.stoplist.clone(),
        cache_scope: CacheScope::Record,
        seeding: Seeding::Sequential,
    };
    base.validate()?;
    let selections: Vec<Selection> = a.selections.iter().map(|&s| s.into()).collect();
    let strategies: Vec<Strategy> = a.strategies.iter().map(|&s| s.into()).collect();
    let cells = grid(&selections, &a.percents, &strategies);
    let mut manifest = RunManifest::new(
        "sweep",
        json!({ "base": base, "cells": cells }),
        Some(a.seed),
    );
    for p in [&a.input, &a.map, &a.importance] {
        manifest.add_input(p)?;
    }

    let doc = Document::load(&a.input)?;
    let importance = load_importance(&a.importance)?;
    let opts = select_options(&a.stoplist, a.scope)?;
    let outcomes = sweep(&doc, &base, &cells, &cache, &importance.records, &opts)?;

    prepare_out_dir(&a.out_dir)?;
    if a.write_corpora {
        let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("txt");
        for o in &outcomes {
            let path = a.out_dir.join(format!("sanitized-{}.{ext}", o.cell.descriptor()));
            o.sanitized.save(path)?;
        }
    }
    let rows: Vec<SweepRow> = outcomes.into_iter().map(|o| o.row).collect();
    let path = a.out_dir.join("results.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_results(&rows, BufWriter::new(file))?;
    manifest.finish(&a.out_dir)?;
    println!("cells={}", rows.len());
    Ok(())
}

/// Returns whether the bound held.
fn cmd_audit(a: AuditArgs) -> Result<bool> {
    let cache = MappingCache::load(&a.map)?;
    let mode = if a.exhaustive {
        AuditMode::Exhaustive
    } else {
        AuditMode::auto(cache.mapping.vocab().len(), a.seed)
    };
    let summary = audit_table(&cache, a.epsilon, mode)?;
    println!(
        "max_ratio={} bound={} pairs={} exhaustive={} passed={}",
        summary.max_ratio, summary.bound, summary.pairs_checked, summary.exhaustive, summary.passed
    );
    if let Some(dir) = &a.out_dir {
        let mut manifest = RunManifest::new(
            "audit",
            json!({ "map": a.map, "epsilon": a.epsilon, "exhaustive": summary.exhaustive, "seed": a.seed }),
            Some(a.seed),
        );
        manifest.add_input(&a.map)?;
        prepare_out_dir(dir)?;
        write_json(&dir.join("audit.json"), &serde_json::to_value(&summary)?)?;
        manifest.finish(dir)?;
    }
    Ok(summary.passed)
}

/// Turns a `--config` TOML table into flags placed before the user's own, so
/// that explicit flags override config values.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let pos = args.iter().position(|a| a == "--config");
    let inline = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| s.starts_with("--config=")));
    let path = match (pos, inline) {
        (Some(i), _) => match args.get(i + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(args),
        },
        (None, Some(i)) => PathBuf::from(&args[i].to_str().unwrap()["--config=".len()..]),
        (None, None) => return Ok(args),
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let rendered = match value {
            toml::Value::Boolean(true) => {
                flags.push(OsString::from(flag));
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s,
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        flags.push(OsString::from(flag));
        flags.push(OsString::from(rendered));
    }
    // argv[0], subcommand, config flags, user flags
    let split = 2.min(args.len());
    let mut out = args[..split].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[split..]);
    Ok(out)
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let matches = Cli::command().get_matches_from(args);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::BuildMap(a) => cmd_build_map(a).map(|_| true),
        Command::Score(a) => cmd_score(a).map(|_| true),
        Command::Sanitize(a) => cmd_sanitize(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: audit bound violated");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

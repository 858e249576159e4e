//! Command-line surface: build a model bundle from CSV, estimate single
//! table and range-join queries, compute exact counts, generate synthetic
//! data and workloads, and run benchmarks.
//!
//! Exit codes: 0 on success, 2 on usage/input errors, 1 on internal errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cardgrid_core::armodel::TrainConfig;
use cardgrid_core::bench::{
    generate_join_workload, generate_workload, run_benchmark, run_join_benchmark,
    JoinWorkloadConfig, WorkloadConfig,
};
use cardgrid_core::bundle::{load_bundle, save_bundle};
use cardgrid_core::data::load_table_csv;
use cardgrid_core::density::{FrequencyOracle, PointDensity};
use cardgrid_core::estimator::{CardGrid, EngineConfig, SingleTableQuery};
use cardgrid_core::grid::GridMode;
use cardgrid_core::oracle::{true_cardinality_join, true_cardinality_single};
use cardgrid_core::rangejoin::{
    chain_join_estimate, range_join_estimate, ChainJoinQuery, JoinQuery, JoinSide, PairStats,
};
use cardgrid_core::synth;
use cardgrid_core::{Schema, Table};

#[derive(Parser)]
#[command(
    name = "cardgrid",
    version,
    about = "Grid + autoregressive cardinality estimator"
)]
struct Cli {
    /// Worker thread cap (also honored from CARDGRID_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model bundle from a schema and CSV data.
    Build(BuildArgs),
    /// Estimate a single-table query against a bundle.
    Estimate(EstimateArgs),
    /// Estimate a two-table range-join query.
    Join(JoinArgs),
    /// Estimate a chain join over up to five tables.
    ChainJoin(ChainJoinArgs),
    /// Exact cardinality by brute force (single, join, or chain query).
    Oracle(OracleArgs),
    /// Run a workload benchmark: exact counts, estimates, q-error report.
    Bench(BenchArgs),
    /// Generate a seeded query workload (one JSON query per line).
    GenWorkload(GenWorkloadArgs),
    /// Generate a synthetic dataset (data.csv + schema.json).
    GenData(GenDataArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Optional build configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Root seed for model init and training (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Query JSON file.
    #[arg(long)]
    query: PathBuf,
    /// Replace the model with exact per-(cell, value) frequencies.
    #[arg(long)]
    frequency_oracle: bool,
    /// Source CSV (required with --frequency-oracle).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct JoinArgs {
    #[arg(long)]
    left_bundle: PathBuf,
    #[arg(long)]
    right_bundle: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    frequency_oracle: bool,
    #[arg(long)]
    left_csv: Option<PathBuf>,
    #[arg(long)]
    right_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ChainJoinArgs {
    /// One bundle per chain table, in order.
    #[arg(long, num_args = 1.., required = true)]
    bundles: Vec<PathBuf>,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    frequency_oracle: bool,
    /// One CSV per chain table (required with --frequency-oracle).
    #[arg(long, num_args = 0..)]
    csvs: Vec<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// One schema per table referenced by the query, in order.
    #[arg(long, num_args = 1.., required = true)]
    schemas: Vec<PathBuf>,
    /// One CSV per table, in order (a single pair may serve a self-join).
    #[arg(long, num_args = 1.., required = true)]
    csvs: Vec<PathBuf>,
    #[arg(long)]
    query: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Workload file: one query JSON per line (single-table or self-join).
    #[arg(long)]
    workload: PathBuf,
    /// Write the full report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frequency_oracle: bool,
}

#[derive(Args)]
struct GenWorkloadArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Generate a self-join workload instead of single-table queries.
    #[arg(long)]
    join: bool,
    #[arg(long, default_value_t = 3)]
    min_predicates: usize,
    #[arg(long, default_value_t = 5)]
    max_predicates: usize,
    /// Join workloads: maximum conditions per query.
    #[arg(long, default_value_t = 3)]
    max_conditions: usize,
    /// Join workloads: samples per partially-overlapping cell pair.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Typical population fraction a range bound cuts away per side.
    #[arg(long, default_value_t = 0.02)]
    width_scale: f64,
    /// Probability a constrained continuous column gets a two-sided window.
    #[arg(long, default_value_t = 0.85)]
    window_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 3 continuous + 3 categorical columns with skew and correlation.
    Mixed,
    /// Single heavy-skew continuous column (Zipf 1.5 over 1000 ranks).
    Zipf,
    /// The 8-row employees fixture.
    Employee,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 50_000)]
    rows: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Input/usage problems exit 2; anything else exits 1.
struct InputError(anyhow::Error);

type CliResult = Result<(), InputError>;

trait AsInput<T> {
    fn input(self) -> Result<T, InputError>;
}

impl<T, E: Into<anyhow::Error>> AsInput<T> for Result<T, E> {
    fn input(self) -> Result<T, InputError> {
        self.map_err(|e| InputError(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli
        .threads
        .or_else(|| std::env::var("CARDGRID_THREADS").ok()?.parse().ok())
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let result = match cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Join(args) => cmd_join(args),
        Command::ChainJoin(args) => cmd_chain_join(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Bench(args) => cmd_bench(args),
        Command::GenWorkload(args) => cmd_gen_workload(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(InputError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_schema(path: &Path) -> Result<Schema> {
    Schema::from_json(&read_to_string(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_csv_table(schema: &Schema, path: &Path) -> Result<Table> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_table_csv(BufReader::new(file), schema).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Build configuration file shape; all fields optional over the defaults.
#[derive(serde::Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BuildFile {
    mode: Option<String>,
    /// Either a single bucket count for all dimensions or a per-column map.
    buckets: Option<serde_json::Value>,
    tree_depth: Option<usize>,
    gamma: Option<usize>,
    emb_dim: Option<usize>,
    hidden_sizes: Option<Vec<usize>>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    wildcard_dropout: Option<f64>,
    holdout_fraction: Option<f64>,
    seed: Option<u64>,
}

fn engine_config(
    file: &BuildFile,
    schema: &Schema,
    seed_override: Option<u64>,
) -> Result<EngineConfig> {
    let seed = seed_override.or(file.seed).unwrap_or(42);
    let mut cfg = EngineConfig::defaults(seed);
    if let Some(mode) = &file.mode {
        cfg.mode = match mode.as_str() {
            "uniform" => GridMode::Uniform,
            "cdf" => GridMode::Cdf,
            other => bail!("unknown grid mode '{other}' (expected 'uniform' or 'cdf')"),
        };
    }
    if let Some(buckets) = &file.buckets {
        let counts: Vec<usize> = match buckets {
            serde_json::Value::Number(n) => {
                let m = n
                    .as_u64()
                    .ok_or_else(|| anyhow!("'buckets' must be a positive integer"))?
                    as usize;
                vec![m; schema.cr_columns.len()]
            }
            serde_json::Value::Object(map) => {
                let by_name: BTreeMap<&String, &serde_json::Value> = map.iter().collect();
                schema
                    .cr_columns
                    .iter()
                    .map(|&i| {
                        let name = &schema.columns[i].name;
                        by_name
                            .get(name)
                            .and_then(|v| v.as_u64())
                            .map(|m| m as usize)
                            .ok_or_else(|| anyhow!("'buckets' missing count for column '{name}'"))
                    })
                    .collect::<Result<_>>()?
            }
            _ => bail!("'buckets' must be an integer or a column-to-count map"),
        };
        cfg.bucket_counts = Some(counts);
    }
    if let Some(v) = file.tree_depth {
        cfg.tree_depth = v;
    }
    if let Some(v) = file.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = file.emb_dim {
        cfg.emb_dim = v;
    }
    if let Some(v) = &file.hidden_sizes {
        cfg.hidden_sizes = v.clone();
    }
    cfg.train = TrainConfig {
        epochs: file.epochs.unwrap_or(10),
        batch_size: file.batch_size.unwrap_or(256),
        learning_rate: file.learning_rate.unwrap_or(1e-2),
        wildcard_dropout: file.wildcard_dropout.unwrap_or(0.25),
        seed,
    };
    cfg.holdout_fraction = file.holdout_fraction.unwrap_or(0.0);
    Ok(cfg)
}

fn cmd_build(args: BuildArgs) -> CliResult {
    let total = Instant::now();
    let schema = load_schema(&args.schema).input()?;
    let table = load_csv_table(&schema, &args.csv).input()?;
    let file: BuildFile = match &args.config {
        Some(path) => serde_json::from_str(&read_to_string(path).input()?)
            .map_err(|e| anyhow!("{}: {e}", path.display()))
            .input()?,
        None => BuildFile::default(),
    };
    let cfg = engine_config(&file, &schema, args.seed).input()?;
    let (engine, stats) = CardGrid::build(&table, cfg)
        .map_err(|e| anyhow!("build failed: {e}"))
        .input()?;
    save_bundle(&args.out, &engine)
        .map_err(|e| anyhow!("writing bundle: {e}"))
        .input()?;
    let out = serde_json::json!({
        "rows": table.row_count,
        "cells": stats.cell_count,
        "model_parameters": stats.parameter_count,
        "epoch_nll": stats.epoch_nll,
        "holdout_nll": stats.holdout_nll,
        "grid_ms": stats.grid_ms,
        "train_ms": stats.train_ms,
        "total_ms": total.elapsed().as_millis(),
        "bundle": args.out.display().to_string(),
    });
    println!("{out}");
    Ok(())
}

fn parse_query_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| anyhow!("{}: malformed query: {e}", path.display()))
}

enum Backend {
    Model,
    Frequency(FrequencyOracle),
}

impl Backend {
    fn of<'a>(&'a self, engine: &'a CardGrid) -> &'a dyn PointDensity {
        match self {
            Backend::Model => &engine.model,
            Backend::Frequency(f) => f,
        }
    }
}

fn backend_for(engine: &CardGrid, frequency: bool, csv: Option<&PathBuf>) -> Result<Backend> {
    if !frequency {
        return Ok(Backend::Model);
    }
    let csv = csv.ok_or_else(|| anyhow!("--frequency-oracle needs the source csv"))?;
    let table = load_csv_table(&engine.schema, csv)?;
    Ok(Backend::Frequency(FrequencyOracle::build(
        &table,
        &engine.grid,
    )))
}

fn cmd_estimate(args: EstimateArgs) -> CliResult {
    let engine = load_bundle(&args.bundle)
        .map_err(|e| anyhow!("{}: {e}", args.bundle.display()))
        .input()?;
    let query: SingleTableQuery = parse_query_file(&args.query).input()?;
    let backend = backend_for(&engine, args.frequency_oracle, args.csv.as_ref()).input()?;
    let est = engine
        .estimate_with(&query, backend.of(&engine))
        .map_err(|e| anyhow!("estimate failed: {e}"))
        .input()?;
    let out = serde_json::json!({
        "estimate": est.cardinality,
        "selectivity": est.selectivity,
        "cells_considered": est.cells.len(),
        "forward_passes": est.forward_passes,
        "duration_ms": est.duration.as_secs_f64() * 1e3,
    });
    println!("{out}");
    Ok(())
}

fn cmd_join(args: JoinArgs) -> CliResult {
    let left = load_bundle(&args.left_bundle)
        .map_err(|e| anyhow!("{}: {e}", args.left_bundle.display()))
        .input()?;
    let right = load_bundle(&args.right_bundle)
        .map_err(|e| anyhow!("{}: {e}", args.right_bundle.display()))
        .input()?;
    let query: JoinQuery = parse_query_file(&args.query).input()?;
    let left_backend = backend_for(&left, args.frequency_oracle, args.left_csv.as_ref()).input()?;
    let right_backend =
        backend_for(&right, args.frequency_oracle, args.right_csv.as_ref()).input()?;
    let est = range_join_estimate(
        &query,
        JoinSide {
            engine: &left,
            backend: left_backend.of(&left),
        },
        JoinSide {
            engine: &right,
            backend: right_backend.of(&right),
        },
    )
    .map_err(|e| anyhow!("join estimate failed: {e}"))
    .input()?;
    print_join_estimate(est.cardinality, est.pairs, est.duration.as_secs_f64());
    Ok(())
}

fn print_join_estimate(cardinality: f64, pairs: PairStats, duration_s: f64) {
    let out = serde_json::json!({
        "estimate": cardinality,
        "pairs_classified": {
            "sat": pairs.satisfied,
            "unsat": pairs.unsatisfied,
            "partial": pairs.partial,
        },
        "duration_ms": duration_s * 1e3,
    });
    println!("{out}");
}

fn cmd_chain_join(args: ChainJoinArgs) -> CliResult {
    let query: ChainJoinQuery = parse_query_file(&args.query).input()?;
    if query.tables.len() != args.bundles.len() {
        return Err(anyhow!(
            "query references {} tables but {} bundles were given",
            query.tables.len(),
            args.bundles.len()
        ))
        .input();
    }
    let engines: Vec<CardGrid> = args
        .bundles
        .iter()
        .map(|p| load_bundle(p).map_err(|e| anyhow!("{}: {e}", p.display())))
        .collect::<Result<_>>()
        .input()?;
    let backends: Vec<Backend> = if args.frequency_oracle {
        if args.csvs.len() != engines.len() {
            return Err(anyhow!(
                "--frequency-oracle needs one --csvs entry per bundle"
            ))
            .input();
        }
        engines
            .iter()
            .zip(&args.csvs)
            .map(|(engine, csv)| backend_for(engine, true, Some(csv)))
            .collect::<Result<_>>()
            .input()?
    } else {
        engines.iter().map(|_| Backend::Model).collect()
    };
    let sides: Vec<JoinSide> = engines
        .iter()
        .zip(&backends)
        .map(|(engine, backend)| JoinSide {
            engine,
            backend: backend.of(engine),
        })
        .collect();
    let conditions: Vec<Vec<_>> = query.pairs.iter().map(|p| p.conditions.clone()).collect();
    let est = chain_join_estimate(
        &sides,
        &query.tables,
        &conditions,
        query.samples,
        query.seed,
    )
    .map_err(|e| anyhow!("chain join failed: {e}"))
    .input()?;
    print_join_estimate(est.cardinality, est.pairs, est.duration.as_secs_f64());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CliResult {
    if args.schemas.len() != args.csvs.len() {
        return Err(anyhow!("--schemas and --csvs must pair up")).input();
    }
    let tables: Vec<Table> = args
        .schemas
        .iter()
        .zip(&args.csvs)
        .map(|(s, c)| load_csv_table(&load_schema(s)?, c))
        .collect::<Result<_>>()
        .input()?;
    let text = read_to_string(&args.query).input()?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| anyhow!("{}: malformed query: {e}", args.query.display()))
        .input()?;

    let start = Instant::now();
    let count = if value.get("pairs").is_some() {
        let q: ChainJoinQuery = serde_json::from_value(value)
            .map_err(|e| anyhow!("malformed chain query: {e}"))
            .input()?;
        let refs = table_refs(&tables, q.tables.len()).input()?;
        let queries: Vec<&SingleTableQuery> = q.tables.iter().collect();
        let pairs: Vec<Vec<_>> = q.pairs.iter().map(|p| p.conditions.clone()).collect();
        true_cardinality_join(&refs, &queries, &pairs)
            .map_err(|e| anyhow!("oracle failed: {e}"))
            .input()?
    } else if value.get("left").is_some() {
        let q: JoinQuery = serde_json::from_value(value)
            .map_err(|e| anyhow!("malformed join query: {e}"))
            .input()?;
        let refs = table_refs(&tables, 2).input()?;
        true_cardinality_join(
            &refs,
            &[&q.left, &q.right],
            std::slice::from_ref(&q.conditions),
        )
        .map_err(|e| anyhow!("oracle failed: {e}"))
        .input()?
    } else {
        let q: SingleTableQuery = serde_json::from_value(value)
            .map_err(|e| anyhow!("malformed query: {e}"))
            .input()?;
        true_cardinality_single(&tables[0], &q)
            .map_err(|e| anyhow!("oracle failed: {e}"))
            .input()?
    };
    let out = serde_json::json!({
        "count": count,
        "duration_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    println!("{out}");
    Ok(())
}

/// Expands a table list to `needed` references, reusing a single table for
/// self-joins.
fn table_refs(tables: &[Table], needed: usize) -> Result<Vec<&Table>> {
    if tables.len() == needed {
        Ok(tables.iter().collect())
    } else if tables.len() == 1 {
        Ok(std::iter::repeat_n(&tables[0], needed).collect())
    } else {
        bail!(
            "query needs {needed} tables but {} were provided",
            tables.len()
        )
    }
}

fn cmd_bench(args: BenchArgs) -> CliResult {
    let engine = load_bundle(&args.bundle)
        .map_err(|e| anyhow!("{}: {e}", args.bundle.display()))
        .input()?;
    let schema = load_schema(&args.schema).input()?;
    let table = load_csv_table(&schema, &args.csv).input()?;
    let backend = backend_for(&engine, args.frequency_oracle, Some(&args.csv)).input()?;

    let file = fs::File::open(&args.workload)
        .with_context(|| format!("opening {}", args.workload.display()))
        .input()?;
    let mut singles = Vec::new();
    let mut joins = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.context("reading workload").input()?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| anyhow!("workload line {}: {e}", lineno + 1))
            .input()?;
        if value.get("left").is_some() {
            joins.push(
                serde_json::from_value::<JoinQuery>(value)
                    .map_err(|e| anyhow!("workload line {}: {e}", lineno + 1))
                    .input()?,
            );
        } else {
            singles.push(
                serde_json::from_value::<SingleTableQuery>(value)
                    .map_err(|e| anyhow!("workload line {}: {e}", lineno + 1))
                    .input()?,
            );
        }
    }
    if !singles.is_empty() && !joins.is_empty() {
        return Err(anyhow!("workload mixes single-table and join queries")).input();
    }

    let report = if joins.is_empty() {
        run_benchmark(&table, &singles, |q| {
            engine
                .estimate_with(q, backend.of(&engine))
                .map(|e| e.cardinality)
                .map_err(|e| e.to_string())
        })
    } else {
        run_join_benchmark(&table, &joins, |q| {
            range_join_estimate(
                q,
                JoinSide {
                    engine: &engine,
                    backend: backend.of(&engine),
                },
                JoinSide {
                    engine: &engine,
                    backend: backend.of(&engine),
                },
            )
            .map(|e| e.cardinality)
            .map_err(|e| e.to_string())
        })
    }
    .map_err(|e| anyhow!("oracle failed: {e}"))
    .input()?;

    print!("{}", report.to_text_table());
    if !joins.is_empty() {
        for label in ["inequality", "range"] {
            let a = report.aggregates_for_label(label);
            if a.succeeded + a.failed > 0 {
                println!(
                    "{label}: median {:.3} | p90 {:.3} | avg {:.3} ({} queries)",
                    a.median_q_error,
                    a.p90_q_error,
                    a.avg_q_error,
                    a.succeeded + a.failed
                );
            }
        }
    }
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&report).unwrap())
            .with_context(|| format!("writing {}", out.display()))
            .input()?;
    }
    Ok(())
}

fn cmd_gen_workload(args: GenWorkloadArgs) -> CliResult {
    let schema = load_schema(&args.schema).input()?;
    let table = load_csv_table(&schema, &args.csv).input()?;
    let mut lines = Vec::new();
    if args.join {
        let cfg = JoinWorkloadConfig {
            queries: args.queries,
            max_conditions: args.max_conditions,
            min_predicates: args.min_predicates,
            max_predicates: args.max_predicates,
            op_mix: Default::default(),
            range_width_scale: args.width_scale,
            samples: args.samples,
            seed: args.seed,
        };
        for q in generate_join_workload(&table, &cfg) {
            lines.push(serde_json::to_string(&q).unwrap());
        }
    } else {
        let cfg = WorkloadConfig {
            queries: args.queries,
            min_predicates: args.min_predicates,
            max_predicates: args.max_predicates,
            op_mix: Default::default(),
            anchored_fraction: 1.0,
            range_width_scale: args.width_scale,
            window_fraction: args.window_fraction,
            seed: args.seed,
        };
        for q in generate_workload(&table, &cfg) {
            lines.push(serde_json::to_string(&q).unwrap());
        }
    }
    fs::write(&args.out, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", args.out.display()))
        .input()?;
    println!(
        "{}",
        serde_json::json!({"queries": lines.len(), "out": args.out.display().to_string()})
    );
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> CliResult {
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .input()?;
    let (schema, rows) = match args.preset {
        Preset::Mixed => synth::mixed_dataset(args.rows, args.seed),
        Preset::Zipf => synth::zipf_dataset(args.rows, 1.5, 1000, args.seed),
        Preset::Employee => {
            let table = synth::employee_table();
            let rows = (0..table.row_count)
                .map(|r| {
                    vec![
                        format!("{}", table.cr_column(0)[r]),
                        format!("{}", table.cr_column(1)[r]),
                        table.dictionaries[0]
                            .decode(table.ce_column(0)[r])
                            .unwrap()
                            .to_string(),
                    ]
                })
                .collect();
            (table.schema.clone(), rows)
        }
    };
    let csv_path = args.out_dir.join("data.csv");
    let schema_path = args.out_dir.join("schema.json");
    synth::write_csv(&csv_path, &schema, &rows)
        .context("writing data.csv")
        .input()?;
    fs::write(&schema_path, synth::schema_file_json(&schema))
        .context("writing schema.json")
        .input()?;
    println!(
        "{}",
        serde_json::json!({
            "rows": rows.len(),
            "csv": csv_path.display().to_string(),
            "schema": schema_path.display().to_string(),
        })
    );
    Ok(())
}

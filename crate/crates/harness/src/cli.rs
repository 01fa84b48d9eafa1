use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pairbench_core::experiment::{augmentation_trial, AugmentationSetup};
use pairbench_core::gate::{gate_submission, MeasuredProfile, SubmissionMeta, SubtrackRules};
use pairbench_core::io::{load_embeddings, load_manifest, write_embeddings, write_manifest};
use pairbench_core::metrics::{evaluate, rank_leaderboard, render_table, EvalOptions, LeaderboardEntry};
use pairbench_core::syngen::{oracle_evaluate, ImagesPerIdentity, SynConfig};
use pairbench_core::ProtocolSpec;

use crate::bench::{fixture_configs, load_protocol, synthesize_all, BenchmarkConfig};
use crate::error::{HarnessError, Result};
use crate::report_json;
use crate::service::{Service, ServiceConfig};

pub const DATA_DIR_VAR: &str = "PAIRBENCH_DATA_DIR";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

#[derive(Debug, Parser)]
#[command(name = "pairbench", version, about = "Exact TPR@FPR verification benchmark for face embeddings")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic manifest and embedding set.
    Generate(GenerateArgs),
    /// Score every pair of a protocol and print the report.
    Evaluate(EvaluateArgs),
    /// Brute-force reference report for small sets.
    Oracle(OracleArgs),
    /// Check a submission against a subtrack's limits.
    Gate(GateArgs),
    /// Order leaderboard entries by weighted score.
    Rank(RankArgs),
    /// Train the toy margin model with and without mask augmentation data.
    Train(TrainArgs),
    /// Run the submission service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// SynConfig JSON, or a JSON array of them stacked into one set.
    #[arg(long, conflicts_with = "fixture")]
    config: Option<PathBuf>,
    /// Generate the three-subset benchmark fixture.
    #[arg(long)]
    fixture: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    identities: usize,
    #[arg(long, default_value_t = 3)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    mask_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    mask_gap: f64,
    #[arg(long, default_value_t = 0.0)]
    augment_prob: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Preset name (masked, mr_all, children, all_pairs) or protocol JSON.
    #[arg(long)]
    protocol: String,
    /// Replaces the protocol's FPR targets, comma separated.
    #[arg(long, value_delimiter = ',')]
    fpr: Option<Vec<f64>>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = pairbench_core::simsel::DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long)]
    workers: Option<usize>,
    /// Also list this many highest-scoring negative pairs.
    #[arg(long, default_value_t = 0)]
    top_pairs: usize,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct GateArgs {
    /// SubmissionMeta JSON.
    #[arg(long)]
    meta: PathBuf,
    /// Preset name (ms1m, glint360k) or rules JSON.
    #[arg(long)]
    rules: String,
    #[arg(long, conflicts_with = "profile")]
    ms_per_image: Option<f64>,
    /// MeasuredProfile JSON.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// JSON array of leaderboard entries.
    #[arg(long)]
    entries: PathBuf,
    /// Print ranked entries as JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// AugmentationSetup JSON; defaults when absent.
    #[arg(long)]
    setup: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    augment_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the loss trace as CSV (step, mean_loss).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Benchmark manifest that submissions are scored on.
    #[arg(long)]
    manifest: PathBuf,
    /// BenchmarkConfig JSON; built-in protocols when absent.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long, default_value_t = pairbench_core::simsel::DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses arguments and runs. Exit status: 0 success, 1 operation error,
/// 2 usage error.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, HarnessError::Usage(_)) { 2 } else { 1 })
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => {
            let (manifest, set, protocol) = load_inputs(&a.input)?;
            let mut opts = EvalOptions {
                block_size: a.block_size,
                top_pairs: a.top_pairs,
                ..EvalOptions::default()
            };
            if let Some(w) = a.workers {
                opts.workers = w;
            }
            let report = evaluate(&set, &manifest, &protocol, &opts)?;
            emit(a.input.out.as_deref(), &report_json(&report)?)
        }
        Command::Oracle(a) => {
            let (manifest, set, protocol) = load_inputs(&a.input)?;
            let report = oracle_evaluate(&set, &manifest, &protocol)?;
            emit(a.input.out.as_deref(), &report_json(&report)?)
        }
        Command::Gate(a) => {
            let meta: SubmissionMeta = read_json(&a.meta)?;
            let rules = SubtrackRules::load(&a.rules)?;
            let profile = match (a.ms_per_image, &a.profile) {
                (Some(ms), None) => MeasuredProfile::reported(ms),
                (None, Some(p)) => read_json(p)?,
                _ => return Err(HarnessError::Usage("gate needs --ms-per-image or --profile".into())),
            };
            let verdict = gate_submission(&meta, &profile, &rules);
            emit(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&verdict)?))
        }
        Command::Rank(a) => {
            let entries: Vec<LeaderboardEntry> = read_json(&a.entries)?;
            let ranked = rank_leaderboard(entries);
            let text = if a.json {
                format!("{}\n", serde_json::to_string_pretty(&ranked)?)
            } else {
                render_table(&ranked)
            };
            emit(a.out.as_deref(), &text)
        }
        Command::Train(a) => train(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_inputs(a: &InputArgs) -> Result<(pairbench_core::Manifest, pairbench_core::EmbeddingSet, ProtocolSpec)> {
    let mut protocol = load_protocol(&a.protocol)?;
    if let Some(fpr) = &a.fpr {
        protocol.fpr_targets = fpr.clone();
        protocol.validate()?;
    }
    let manifest = load_manifest(&a.manifest)?;
    let set = load_embeddings(&a.embeddings, manifest.len())?;
    Ok((manifest, set, protocol))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut configs: Vec<SynConfig> = if a.fixture {
        fixture_configs(a.seed.unwrap_or(0), a.dim)
    } else if let Some(path) = &a.config {
        let value: serde_json::Value = read_json(path)?;
        if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        }
    } else {
        vec![SynConfig {
            n_identities: a.identities,
            images_per_identity: ImagesPerIdentity::Fixed(a.images),
            dim: a.dim,
            intra_noise: a.noise,
            mask_fraction: a.mask_fraction,
            mask_gap: a.mask_gap,
            augment_prob: a.augment_prob,
            ..SynConfig::default()
        }]
    };
    if let (Some(seed), false) = (a.seed, a.fixture) {
        for (i, c) in configs.iter_mut().enumerate() {
            c.seed = seed.wrapping_add(i as u64);
        }
    }
    if configs.is_empty() {
        return Err(HarnessError::Usage("config array is empty".into()));
    }
    let name = if configs.len() == 1 { configs[0].name.clone() } else { "benchmark".into() };
    let (manifest, set) = synthesize_all(&name, &configs)?;
    std::fs::create_dir_all(&a.out).map_err(|e| HarnessError::io(&a.out, e))?;
    write_manifest(&manifest, a.out.join(MANIFEST_FILE))?;
    write_embeddings(&set, a.out.join(EMBEDDINGS_FILE))?;
    println!(
        "wrote {} images ({} identities, dim {}) to {}",
        manifest.len(),
        manifest.n_identities(),
        set.dim(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let setup: AugmentationSetup = match &a.setup {
        Some(p) => read_json(p)?,
        None => AugmentationSetup::default(),
    };
    let outcome = augmentation_trial(&setup, a.augment_prob, a.seed)?;
    if let Some(path) = &a.trace {
        let mut csv = String::from("step,mean_loss\n");
        for (step, loss) in outcome.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{step},{loss}\n"));
        }
        std::fs::write(path, csv).map_err(|e| HarnessError::io(path, e))?;
    }
    let summary = serde_json::json!({
        "augment_prob": outcome.augment_prob,
        "seed": outcome.seed,
        "masked_tpr": outcome.masked_tpr,
        "unmasked_tpr": outcome.unmasked_tpr,
        "final_loss": outcome.loss_trace.last(),
    });
    emit(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&summary)?))
}

fn serve(a: ServeArgs) -> Result<()> {
    let benchmark = match &a.benchmark {
        Some(p) => BenchmarkConfig::load(p)?,
        None => BenchmarkConfig::default(),
    };
    let data_dir = std::env::var_os(DATA_DIR_VAR).map_or_else(|| PathBuf::from("pairbench-data"), PathBuf::from);
    let mut config = ServiceConfig::new(data_dir, benchmark, load_manifest(&a.manifest)?);
    config.eval.block_size = a.block_size;
    if let Some(w) = a.workers {
        config.eval.workers = w;
    }
    let service = Service::open(config)?;
    let router = service.router();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| HarnessError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| HarnessError::io(&a.addr, e))?;
        eprintln!("listening on {}", a.addr);
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| HarnessError::io(&a.addr, e))
    })?;
    service.shutdown();
    Ok(())
}

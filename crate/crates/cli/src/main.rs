use std::path::PathBuf;
use std::process::ExitCode;

use caps_core::codec::load_checkpoint;
use caps_core::collector::load_records;
use caps_core::pipeline::{
    collect_stage, export_embeddings, load_evaluator, run_pipeline, search_stage, train_stage, RunConfig,
};
use caps_core::{CapsError, FeatureSubset, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "caps",
    version,
    about = "Feature selection by policy search in a learned subset embedding space"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset CSV (overrides the config file).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Label column name (overrides the config file).
    #[arg(long, global = true)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Explore subsets and write the records file.
    Collect,
    /// Train the codec on the records file and write the checkpoint.
    Train,
    /// Search from the top records with the saved codec.
    Search,
    /// Run the whole pipeline and write the report.
    Run,
    /// Score one subset, given as comma-separated column indices.
    Eval { subset: String },
    /// Write pooled embeddings of top subsets under random orderings.
    ExportEmbeddings,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(l) = &common.label {
        cfg.label_column = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_subset(text: &str) -> Result<FeatureSubset> {
    let ids = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CapsError::Config(format!("bad subset `{text}`: {e}")))?;
    Ok(FeatureSubset::from_ids(ids))
}

fn read_records(cfg: &RunConfig, stage: &'static str) -> Result<Vec<caps_core::collector::SelectionRecord>> {
    load_records(&cfg.records_path()).map_err(|e| e.in_stage(stage))
}

fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Collect => {
            let ev = load_evaluator(&cfg)?;
            let records = collect_stage(&cfg, &ev)?;
            Ok(json!({ "records": records.len(), "path": cfg.records_path() }))
        }
        Command::Train => {
            let ev = load_evaluator(&cfg)?;
            let records = read_records(&cfg, "train")?;
            let (trained, corpus) = train_stage(&cfg, &records, ev.num_features())?;
            Ok(json!({
                "corpus_size": corpus,
                "epochs_trained": trained.params.epochs_trained,
                "final_loss": trained.loss_curve.last(),
                "path": cfg.checkpoint_path(),
            }))
        }
        Command::Search => {
            let ev = load_evaluator(&cfg)?;
            let records = read_records(&cfg, "search")?;
            let codec = load_checkpoint(&cfg.checkpoint_path()).map_err(|e| e.in_stage("search"))?;
            let (_, out) = search_stage(&cfg, &records, &codec, &ev)?;
            Ok(json!({ "best_subset": out.best, "best_v": out.best_v, "path": cfg.search_log_path() }))
        }
        Command::Run => {
            let report = run_pipeline(&cfg)?;
            Ok(json!({
                "best_subset": report.best_subset,
                "best_v": report.best_v,
                "all_features_v": report.all_features_v,
                "random_median_v": report.random_baseline.median,
                "path": cfg.report_path(),
            }))
        }
        Command::Eval { subset } => {
            let subset = parse_subset(subset)?;
            let ev = load_evaluator(&cfg)?;
            let stage = |e: CapsError| e.in_stage("evaluate");
            Ok(json!({
                "subset": subset,
                "v": ev.evaluate(&subset).map_err(stage)?,
                "folds": ev.fold_scores(&subset).map_err(stage)?,
                "holdout": ev.holdout(&subset, cfg.holdout_train_fraction).map_err(stage)?,
            }))
        }
        Command::ExportEmbeddings => {
            let records = read_records(&cfg, "export")?;
            let codec = load_checkpoint(&cfg.checkpoint_path()).map_err(|e| e.in_stage("export"))?;
            let path = cfg.embeddings_path();
            let rows = export_embeddings(&path, &records, &codec, cfg.embedding_copies, cfg.seeds().embeddings)
                .map_err(|e| e.in_stage("export"))?;
            Ok(json!({ "rows": rows, "path": path }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e @ CapsError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

//! End-to-end run: load, collect, augment, train, pick seeds, search, report.
//! Every stage persists its output under `output_dir` so stages can be rerun
//! on their own.

mod config;
mod embeddings;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;
use std::time::Instant;

use log::info;

pub use config::{CollectorConfig, DerivedSeeds, RunConfig};
pub use embeddings::{embedding_rows, export_embeddings, EmbeddingRow, EMBEDDINGS_FORMAT_VERSION, EMBEDDING_SUBSETS};
pub use report::{
    CodecSummary, CrossValidation, FormatVersions, Holdout, NamedSubset, RandomBaseline, Report, SearchSummary,
    REPORT_FORMAT_VERSION,
};

use crate::codec::{save_checkpoint, train_codec_with, CodecParams, TrainedCodec, CHECKPOINT_FORMAT_VERSION};
use crate::collector::{
    augment_records, collect_records, save_records, top_k_seeds, SelectionRecord, RECORDS_FORMAT_VERSION,
};
use crate::data::{load_csv, Task};
use crate::error::{CapsError, Result};
use crate::forest::SubsetEvaluator;
use crate::rng::SeededRng;
use crate::search::{save_search_log, search, SearchOutcome, SEARCH_LOG_FORMAT_VERSION};
use crate::subset::FeatureSubset;

fn staged<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(CapsError::from)
}

/// Loads the dataset and wraps it in an evaluator with the run's fold plan.
pub fn load_evaluator(cfg: &RunConfig) -> Result<SubsetEvaluator> {
    staged("load", || {
        let data = load_csv(&cfg.dataset, &cfg.label_column, cfg.task)?;
        info!(
            "loaded {} rows x {} features ({:?}) from {}",
            data.n_rows(),
            data.n_features(),
            data.task(),
            cfg.dataset.display()
        );
        SubsetEvaluator::new(data, cfg.eval_config())
    })
}

pub fn collect_stage(cfg: &RunConfig, ev: &SubsetEvaluator) -> Result<Vec<SelectionRecord>> {
    staged("collect", || {
        ensure_output_dir(cfg)?;
        let c = collect_records(ev, cfg.collector.epochs, cfg.seeds().collector)?;
        save_records(&cfg.records_path(), &c.records)?;
        Ok(c.records)
    })
}

/// Augments the records, trains the codec and saves the checkpoint. Returns
/// the trained codec and the corpus size.
pub fn train_stage(cfg: &RunConfig, records: &[SelectionRecord], num_features: usize) -> Result<(TrainedCodec, usize)> {
    let codec_cfg = cfg.codec_config(num_features);
    codec_cfg.validate()?;
    let corpus = staged("augment", || {
        let corpus = augment_records(
            records,
            cfg.augment_copies,
            codec_cfg.max_len,
            codec_cfg.pad_id(),
            cfg.seeds().augment,
        )?;
        if corpus.is_empty() {
            return Err(CapsError::contract("no record fits the codec's maximum length"));
        }
        Ok(corpus)
    })?;
    staged("train", || {
        ensure_output_dir(cfg)?;
        let mut distinct: Vec<FeatureSubset> = records
            .iter()
            .filter(|r| r.subset.len() <= codec_cfg.max_len)
            .map(|r| r.subset.clone())
            .collect();
        distinct.sort();
        distinct.dedup();
        let mut probe_rng = SeededRng::new(cfg.seeds().codec).derive("early-stop");
        let probes: Vec<(Vec<usize>, FeatureSubset)> = distinct
            .into_iter()
            .map(|s| {
                let mut order = s.ids().to_vec();
                probe_rng.shuffle(&mut order);
                (order, s)
            })
            .collect();
        let early_stop = cfg.codec_early_stop;
        let trained = train_codec_with(&corpus, CodecParams::init(codec_cfg.clone())?, |epoch, params, loss| {
            if !early_stop {
                return ControlFlow::Continue(());
            }
            let exact = probes
                .iter()
                .filter(|(order, s)| params.reconstruct(order).ok().as_ref() == Some(s))
                .count();
            info!(
                "codec epoch {epoch}: loss {loss:.4}, {exact}/{} subsets reconstructed",
                probes.len()
            );
            if exact == probes.len() {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        save_checkpoint(&cfg.checkpoint_path(), &trained.params)?;
        Ok((trained, corpus.len()))
    })
}

/// Picks the top seeds and runs the search; saves the search log.
pub fn search_stage(
    cfg: &RunConfig,
    records: &[SelectionRecord],
    codec: &CodecParams,
    ev: &SubsetEvaluator,
) -> Result<(Vec<(FeatureSubset, f64)>, SearchOutcome)> {
    let seeds = staged("seeds", || {
        let max_len = codec.config().max_len;
        let fitting: Vec<SelectionRecord> = records.iter().filter(|r| r.subset.len() <= max_len).cloned().collect();
        if fitting.is_empty() {
            return Err(CapsError::contract("no record is short enough to seed the search"));
        }
        Ok(top_k_seeds(&fitting, cfg.seed_count))
    })?;
    let outcome = staged("search", || {
        ensure_output_dir(cfg)?;
        let subsets: Vec<FeatureSubset> = seeds.iter().map(|(s, _)| s.clone()).collect();
        let out = search(&subsets, codec, ev, &cfg.search, cfg.seeds().search)?;
        save_search_log(&cfg.search_log_path(), &out.log)?;
        Ok(out)
    })?;
    Ok((seeds, outcome))
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Binary => "f1",
        Task::Multiclass => "micro_f1",
        Task::Regression => "one_minus_rae",
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scores of `best` and the two built-in baselines.
pub struct FinalScores {
    pub best_v: f64,
    pub cv: CrossValidation,
    pub holdout: Holdout,
    pub all_features_v: f64,
    pub random_baseline: RandomBaseline,
}

pub fn final_scores(cfg: &RunConfig, ev: &SubsetEvaluator, best: &FeatureSubset) -> Result<FinalScores> {
    staged("evaluate", || {
        let d = ev.num_features();
        let folds = ev.fold_scores(best)?;
        let mean_primary = folds.iter().map(|f| f.primary).sum::<f64>() / folds.len() as f64;
        let mut rng = SeededRng::new(cfg.seeds().random_baseline);
        let mut random: Vec<f64> = (0..cfg.random_baseline_draws)
            .map(|_| ev.evaluate(&FeatureSubset::from_ids(rng.sample_indices(d, best.len()))))
            .collect::<Result<_>>()?;
        let min = random.iter().copied().fold(f64::INFINITY, f64::min);
        let max = random.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(FinalScores {
            best_v: ev.evaluate(best)?,
            cv: CrossValidation { folds, mean_primary },
            holdout: Holdout {
                train_fraction: cfg.holdout_train_fraction,
                scores: ev.holdout(best, cfg.holdout_train_fraction)?,
            },
            all_features_v: ev.evaluate(&FeatureSubset::all(d))?,
            random_baseline: RandomBaseline {
                draws: cfg.random_baseline_draws,
                subset_size: best.len(),
                median: median(&mut random),
                min,
                max,
            },
        })
    })
}

pub fn format_versions() -> FormatVersions {
    FormatVersions {
        report: REPORT_FORMAT_VERSION,
        records: RECORDS_FORMAT_VERSION,
        checkpoint: CHECKPOINT_FORMAT_VERSION,
        search_log: SEARCH_LOG_FORMAT_VERSION,
        embeddings: EMBEDDINGS_FORMAT_VERSION,
    }
}

/// Runs every stage and writes `report.json` (plus the embeddings CSV).
pub fn run_pipeline(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let ev = load_evaluator(cfg)?;
    lap("load", &mut timings);
    let records = collect_stage(cfg, &ev)?;
    lap("collect", &mut timings);
    let (trained, corpus_size) = train_stage(cfg, &records, ev.num_features())?;
    lap("train", &mut timings);
    let (seeds, outcome) = search_stage(cfg, &records, &trained.params, &ev)?;
    lap("search", &mut timings);
    let scores = final_scores(cfg, &ev, &outcome.best)?;
    staged("export", || {
        export_embeddings(
            &cfg.embeddings_path(),
            &records,
            &trained.params,
            cfg.embedding_copies,
            cfg.seeds().embeddings,
        )
    })?;
    lap("evaluate", &mut timings);

    let data = ev.dataset();
    let names = outcome
        .best
        .ids()
        .iter()
        .map(|&j| data.feature_names()[j].clone())
        .collect();
    let report = Report {
        format_version: REPORT_FORMAT_VERSION,
        dataset: cfg.dataset.display().to_string(),
        task: data.task(),
        rows: data.n_rows(),
        num_features: data.n_features(),
        metric: metric_name(data.task()).to_string(),
        best_subset: NamedSubset {
            indices: outcome.best.clone(),
            names,
        },
        best_v: scores.best_v,
        subset_ratio: outcome.best.len() as f64 / data.n_features() as f64,
        all_features_v: scores.all_features_v,
        random_baseline: scores.random_baseline,
        cv: scores.cv,
        holdout: scores.holdout,
        records: records.len(),
        codec: CodecSummary {
            corpus_size,
            epochs_trained: trained.params.epochs_trained,
            loss_curve: trained.loss_curve,
        },
        search: SearchSummary {
            seeds,
            log_entries: outcome.log.len(),
            decoded_steps: outcome.decoded_steps,
            updates: outcome.updates,
        },
        cache: ev.cache_stats(),
        seeds: cfg.seeds(),
        formats: format_versions(),
        config: cfg.clone(),
        timings,
    };
    staged("report", || {
        fs::write(cfg.report_path(), serde_json::to_string_pretty(&report)?)?;
        Ok(())
    })?;
    info!(
        "best subset {} (v = {:.4}; all features {:.4}; random median {:.4})",
        report.best_subset.indices, report.best_v, report.all_features_v, report.random_baseline.median
    );
    Ok(report)
}

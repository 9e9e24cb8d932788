//! Exploration corpus: per-feature value-estimate explorer, permutation
//! augmentation, seed selection and the records file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::codec::{make_target, CorpusItem};
use crate::error::{CapsError, Result};
use crate::forest::SubsetEvaluator;
use crate::rng::SeededRng;
use crate::subset::FeatureSubset;

pub const RECORDS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Explored,
    SeededBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub subset: FeatureSubset,
    pub v: f64,
    pub episode: usize,
    pub origin: Origin,
}

/// Per-feature value estimates driving the explorer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentBank {
    pub q: Vec<f64>,
    pub counts: Vec<u64>,
}

impl AgentBank {
    pub fn new(num_features: usize) -> Self {
        AgentBank {
            q: vec![0.0; num_features],
            counts: vec![0; num_features],
        }
    }

    pub fn epsilon(episode: usize) -> f64 {
        (0.5 * 0.995f64.powi(episode as i32)).max(0.05)
    }

    pub fn select_probability(&self, feature: usize, episode: usize) -> f64 {
        let eps = Self::epsilon(episode);
        eps * 0.5 + (1.0 - eps) * sigmoid(self.q[feature])
    }

    /// Lowest index among the maximal estimates.
    pub fn best_feature(&self) -> usize {
        let mut best = 0;
        for (j, &q) in self.q.iter().enumerate() {
            if q > self.q[best] {
                best = j;
            }
        }
        best
    }

    fn update(&mut self, subset: &FeatureSubset, v: f64) {
        for &j in subset.ids() {
            self.counts[j] += 1;
            self.q[j] += (v - self.q[j]) / self.counts[j] as f64;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const EMPTY_DRAW_RETRIES: usize = 10;

#[derive(Clone, Debug)]
pub struct Collection {
    pub records: Vec<SelectionRecord>,
    pub bank: AgentBank,
}

/// Runs `epochs` exploration episodes. The all-features baseline is recorded
/// first (episode 0); explored episodes are numbered from 1.
pub fn collect_records(evaluator: &SubsetEvaluator, epochs: usize, seed: u64) -> Result<Collection> {
    let d = evaluator.num_features();
    if d < 2 {
        return Err(CapsError::contract("collector needs at least 2 features"));
    }
    if epochs == 0 {
        return Err(CapsError::contract("collector needs at least one epoch"));
    }
    let mut rng = SeededRng::new(seed);
    let mut bank = AgentBank::new(d);
    let all = FeatureSubset::all(d);
    let mut records = vec![SelectionRecord {
        v: evaluator.evaluate(&all)?,
        subset: all,
        episode: 0,
        origin: Origin::SeededBaseline,
    }];
    for t in 0..epochs {
        let mut subset = FeatureSubset::from_ids([]);
        for _ in 0..EMPTY_DRAW_RETRIES {
            subset = FeatureSubset::from_ids((0..d).filter(|&j| rng.bernoulli(bank.select_probability(j, t))));
            if !subset.is_empty() {
                break;
            }
        }
        if subset.is_empty() {
            subset = FeatureSubset::from_ids([bank.best_feature()]);
        }
        let v = evaluator.evaluate(&subset)?;
        bank.update(&subset, v);
        records.push(SelectionRecord {
            subset,
            v,
            episode: t + 1,
            origin: Origin::Explored,
        });
    }
    info!("collected {} records over {epochs} episodes", records.len());
    Ok(Collection { records, bank })
}

/// `copies` random orderings of every record that fits `max_len`, each paired
/// with the record's canonical target.
pub fn augment_records(
    records: &[SelectionRecord],
    copies: usize,
    max_len: usize,
    pad_id: usize,
    seed: u64,
) -> Result<Vec<CorpusItem>> {
    let mut rng = SeededRng::new(seed);
    let mut corpus = Vec::with_capacity(records.len() * copies);
    let mut dropped = 0usize;
    for r in records {
        if r.subset.len() > max_len {
            dropped += 1;
            continue;
        }
        let target = make_target(&r.subset, max_len, pad_id)?;
        for _ in 0..copies {
            let mut order = r.subset.ids().to_vec();
            rng.shuffle(&mut order);
            corpus.push(CorpusItem {
                order,
                target: target.clone(),
            });
        }
    }
    if dropped > 0 {
        warn!("dropped {dropped} records longer than {max_len} from the codec corpus");
    }
    Ok(corpus)
}

/// Distinct subsets by best score, ranked by [`FeatureSubset::rank_cmp`].
pub fn top_k_seeds(records: &[SelectionRecord], k: usize) -> Vec<(FeatureSubset, f64)> {
    let mut best: HashMap<&FeatureSubset, f64> = HashMap::new();
    for r in records {
        let e = best.entry(&r.subset).or_insert(r.v);
        if r.v > *e {
            *e = r.v;
        }
    }
    let mut ranked: Vec<(FeatureSubset, f64)> = best.into_iter().map(|(s, v)| (s.clone(), v)).collect();
    ranked.sort_by(|a, b| FeatureSubset::rank_cmp((&a.0, a.1), (&b.0, b.1)));
    ranked.truncate(k);
    ranked
}

pub fn save_records(path: &Path, records: &[SelectionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# caps-records format_version={RECORDS_FORMAT_VERSION}")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<SelectionRecord>> {
    let file = File::open(path).map_err(|e| CapsError::Load {
        what: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let parse_err = |line: usize, msg: String| CapsError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let rec: SelectionRecord = serde_json::from_str(text).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.v) {
            return Err(parse_err(i + 1, format!("score {} outside [0, 1]", rec.v)));
        }
        if rec.subset.is_empty() {
            return Err(parse_err(i + 1, "empty subset".into()));
        }
        out.push(rec);
    }
    Ok(out)
}

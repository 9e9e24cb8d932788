use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::codec::CodecParams;
use crate::collector::{top_k_seeds, SelectionRecord};
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;

pub const EMBEDDINGS_FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_SUBSETS: usize = 5;

/// One pooled embedding row: permutation 0 is the canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub subset_id: usize,
    pub permutation_id: usize,
    pub values: Vec<f64>,
}

/// Column-mean embeddings of the top distinct subsets (that fit the codec)
/// under their canonical order and `copies` random orders.
pub fn embedding_rows(
    records: &[SelectionRecord],
    codec: &CodecParams,
    copies: usize,
    seed: u64,
) -> Result<Vec<EmbeddingRow>> {
    if codec.epochs_trained == 0 {
        return Err(CapsError::contract("cannot export embeddings from an untrained codec"));
    }
    let max_len = codec.config().max_len;
    let chosen: Vec<_> = top_k_seeds(records, records.len())
        .into_iter()
        .filter(|(s, _)| s.len() <= max_len)
        .take(EMBEDDING_SUBSETS)
        .collect();
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(chosen.len() * (copies + 1));
    for (subset_id, (subset, _)) in chosen.iter().enumerate() {
        for permutation_id in 0..=copies {
            let mut order = subset.ids().to_vec();
            if permutation_id > 0 {
                rng.shuffle(&mut order);
            }
            rows.push(EmbeddingRow {
                subset_id,
                permutation_id,
                values: codec.encode(&order)?.mean_row(),
            });
        }
    }
    Ok(rows)
}

pub fn export_embeddings(
    path: &Path,
    records: &[SelectionRecord],
    codec: &CodecParams,
    copies: usize,
    seed: u64,
) -> Result<usize> {
    let rows = embedding_rows(records, codec, copies, seed)?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# caps-embeddings format_version={EMBEDDINGS_FORMAT_VERSION}")?;
    let mut csv = csv::Writer::from_writer(&mut w);
    let d = codec.config().d;
    let header: Vec<String> = ["subset_id".to_string(), "permutation_id".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("e_{j}")))
        .collect();
    csv.write_record(&header)?;
    for r in &rows {
        let rec: Vec<String> = [r.subset_id.to_string(), r.permutation_id.to_string()]
            .into_iter()
            .chain(r.values.iter().map(|v| v.to_string()))
            .collect();
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;
    Ok(rows.len())
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CodecConfig;
use super::model::CodecParams;
use crate::diff::StoredTensor;
use crate::error::{CapsError, Result};
use crate::rng::RNG_ALGORITHM;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: CodecConfig,
    rng_algorithm: String,
    epochs_trained: usize,
    params: BTreeMap<String, StoredTensor>,
}

pub fn save_checkpoint(path: &Path, params: &CodecParams) -> Result<()> {
    let ck = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config().clone(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        epochs_trained: params.epochs_trained,
        params: params.store().to_stored(),
    };
    fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

/// Loads a checkpoint, validating every tensor shape against the stored config.
pub fn load_checkpoint(path: &Path) -> Result<CodecParams> {
    let text = fs::read(path)?;
    let ck: Checkpoint = serde_json::from_slice(&text)?;
    let bad = |msg: String| CapsError::Load {
        what: format!("checkpoint {}", path.display()),
        msg,
    };
    if ck.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {}", ck.format_version)));
    }
    if ck.rng_algorithm != RNG_ALGORITHM {
        return Err(bad(format!("unknown rng_algorithm `{}`", ck.rng_algorithm)));
    }
    let mut params = CodecParams::init(ck.config)?;
    params
        .store_mut()
        .load_stored(&ck.params)
        .map_err(|e| bad(e.to_string()))?;
    params.epochs_trained = ck.epochs_trained;
    Ok(params)
}

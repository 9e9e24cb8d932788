//! Permutation-invariant subset codec: set-attention encoder, pooled
//! decoder, reconstruction objective, training loop and checkpoints.

mod checkpoint;
mod config;
mod model;
mod target;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::CodecConfig;
pub use model::{reconstruction_loss, CodecGraph, CodecLayout, CodecParams, IsabIds, MabIds, RffIds, SubsetEmbedding};
pub use target::{logits_to_subset, make_target, TargetSequence};
pub use train::{train_codec, train_codec_with, CorpusItem, TrainedCodec};

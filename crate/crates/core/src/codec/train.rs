use std::ops::ControlFlow;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::model::CodecParams;
use super::target::TargetSequence;
use crate::diff::AdamState;
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;

/// One training example: the tokens in presentation order and the canonical
/// target they must reconstruct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub order: Vec<usize>,
    pub target: TargetSequence,
}

#[derive(Clone, Debug)]
pub struct TrainedCodec {
    pub params: CodecParams,
    /// Mean loss of each completed epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch Adam on the reconstruction loss for `params.config().epochs` epochs.
pub fn train_codec(corpus: &[CorpusItem], params: CodecParams) -> Result<TrainedCodec> {
    train_codec_with(corpus, params, |_, _, _| ControlFlow::Continue(()))
}

/// Like [`train_codec`], calling `on_epoch(epoch, params, mean_loss)` after
/// every epoch; returning `Break` stops training early.
pub fn train_codec_with(
    corpus: &[CorpusItem],
    mut params: CodecParams,
    mut on_epoch: impl FnMut(usize, &CodecParams, f64) -> ControlFlow<()>,
) -> Result<TrainedCodec> {
    if corpus.is_empty() {
        return Err(CapsError::contract("codec corpus is empty"));
    }
    let cfg = params.config().clone();
    for item in corpus {
        if item.target.len() != cfg.max_len {
            return Err(CapsError::contract(format!(
                "target length {} does not match max_len {}",
                item.target.len(),
                cfg.max_len
            )));
        }
    }
    let mut rng = SeededRng::new(cfg.seed).derive("codec-train");
    let mut adam = AdamState::new(params.store());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // The whole minibatch shares one tape so each parameter leaf (and
            // its gradient buffer) exists once per batch.
            let mut grads = params.store().zeros_like();
            {
                let mut g = params.graph();
                let mut sum = None;
                for &i in batch {
                    let item = &corpus[i];
                    let loss = g.loss(&item.order, &item.target)?;
                    total += g.tape.value(loss).item();
                    sum = Some(match sum {
                        None => loss,
                        Some(acc) => g.tape.add(acc, loss)?,
                    });
                }
                let sum = sum.expect("non-empty batch");
                let mean = g.tape.scale(sum, 1.0 / batch.len() as f64);
                let back = g.tape.backward(mean)?;
                g.bound().accumulate(&back, &mut grads);
            }
            adam.step(params.store_mut(), &grads, cfg.lr)?;
        }
        let mean = total / corpus.len() as f64;
        curve.push(mean);
        params.epochs_trained += 1;
        debug!("codec epoch {epoch}: loss {mean:.5}");
        if epoch >= 20 && mean > curve[epoch - 20] {
            warn!(
                "codec loss rose over the last 20 epochs ({:.5} -> {mean:.5})",
                curve[epoch - 20]
            );
        }
        if on_epoch(epoch, &params, mean).is_break() {
            break;
        }
    }
    Ok(TrainedCodec {
        params,
        loss_curve: curve,
    })
}

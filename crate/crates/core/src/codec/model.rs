//! Set-attention encoder/decoder.
//!
//! The encoder is two stacked induced set attention blocks over looked-up
//! token rows, so it is permutation-equivariant in its input rows. The
//! decoder pools with learned seed queries, which makes it invariant to the
//! input row order, then refines the pooled slots with self-attention and a
//! shared output head.

use super::config::CodecConfig;
use super::target::{logits_to_subset, TargetSequence};
use crate::diff::{affine, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;
use crate::subset::FeatureSubset;

/// Row-wise feed-forward: affine, ReLU, affine.
#[derive(Clone, Debug)]
pub struct RffIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct MabIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    ff: RffIds,
}

#[derive(Clone, Debug)]
pub struct IsabIds {
    /// `M x d` inducing points.
    inducing: ParamId,
    /// Inducing points attend to the input set.
    compress: MabIds,
    /// Input rows attend back to the compressed summary.
    expand: MabIds,
}

#[derive(Clone, Debug)]
pub struct CodecLayout {
    pub token_table: ParamId,
    pub encoder: [IsabIds; 2],
    pub pool_ff: RffIds,
    /// `K x d` pooling seeds, `K = max_len`.
    pub seeds: ParamId,
    pub pool: MabIds,
    pub refine: MabIds,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

fn init_rff(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize, rng: &mut SeededRng) -> RffIds {
    RffIds {
        w1: store.add_glorot(&format!("{prefix}.w1"), d, hidden, rng),
        b1: store.add_filled(&format!("{prefix}.b1"), hidden, 0.0),
        w2: store.add_glorot(&format!("{prefix}.w2"), hidden, d, rng),
        b2: store.add_filled(&format!("{prefix}.b2"), d, 0.0),
    }
}

fn init_mab(store: &mut ParamStore, prefix: &str, cfg: &CodecConfig, rng: &mut SeededRng) -> MabIds {
    let d = cfg.d;
    let mut proj = |name: &str, store: &mut ParamStore| {
        (
            store.add_glorot(&format!("{prefix}.w{name}"), d, d, rng),
            store.add_filled(&format!("{prefix}.b{name}"), d, 0.0),
        )
    };
    let (wq, bq) = proj("q", store);
    let (wk, bk) = proj("k", store);
    let (wv, bv) = proj("v", store);
    let (wo, bo) = proj("o", store);
    MabIds {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
        ln1_gain: store.add_filled(&format!("{prefix}.ln1.gain"), d, 1.0),
        ln1_bias: store.add_filled(&format!("{prefix}.ln1.bias"), d, 0.0),
        ln2_gain: store.add_filled(&format!("{prefix}.ln2.gain"), d, 1.0),
        ln2_bias: store.add_filled(&format!("{prefix}.ln2.bias"), d, 0.0),
        ff: init_rff(store, &format!("{prefix}.ff"), d, cfg.rff_hidden, rng),
    }
}

fn init_isab(store: &mut ParamStore, prefix: &str, cfg: &CodecConfig, rng: &mut SeededRng) -> IsabIds {
    IsabIds {
        inducing: store.add_glorot(&format!("{prefix}.inducing"), cfg.inducing, cfg.d, rng),
        compress: init_mab(store, &format!("{prefix}.compress"), cfg, rng),
        expand: init_mab(store, &format!("{prefix}.expand"), cfg, rng),
    }
}

/// All learnable tensors of the codec plus the config that shaped them.
#[derive(Clone, Debug)]
pub struct CodecParams {
    config: CodecConfig,
    store: ParamStore,
    layout: CodecLayout,
    /// Completed training epochs; zero for a freshly initialized codec.
    pub epochs_trained: usize,
}

/// Row matrix `E` for one subset, in the order its tokens were presented.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetEmbedding {
    pub rows: Tensor,
    pub token_ids: Vec<usize>,
}

impl SubsetEmbedding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Column mean of the rows (a fixed-width, order-free summary).
    pub fn mean_row(&self) -> Vec<f64> {
        let (n, d) = (self.rows.rows(), self.rows.cols());
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(self.rows.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        out
    }
}

impl CodecParams {
    pub fn init(config: CodecConfig) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        let mut rng = SeededRng::new(config.seed).derive("codec-init");
        let mut store = ParamStore::new();
        let d = config.d;
        let token_table = store.add_glorot("token_table", config.vocab(), d, &mut rng);
        let encoder = [
            init_isab(&mut store, "enc0", &config, &mut rng),
            init_isab(&mut store, "enc1", &config, &mut rng),
        ];
        let pool_ff = init_rff(&mut store, "pool.ff", d, config.rff_hidden, &mut rng);
        let seeds = store.add_glorot("pool.seeds", config.max_len, d, &mut rng);
        let pool = init_mab(&mut store, "pool.mab", &config, &mut rng);
        let refine = init_mab(&mut store, "refine", &config, &mut rng);
        let head_w = store.add_glorot("head.w", d, config.vocab(), &mut rng);
        let head_b = store.add_filled("head.b", config.vocab(), 0.0);
        Ok(CodecParams {
            config,
            store,
            layout: CodecLayout {
                token_table,
                encoder,
                pool_ff,
                seeds,
                pool,
                refine,
                head_w,
                head_b,
            },
            epochs_trained: 0,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layout(&self) -> &CodecLayout {
        &self.layout
    }

    pub fn graph(&self) -> CodecGraph<'_> {
        CodecGraph::new(self)
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<SubsetEmbedding> {
        let mut g = self.graph();
        let e = g.encode(tokens)?;
        Ok(SubsetEmbedding {
            rows: g.tape.value(e).clone(),
            token_ids: tokens.to_vec(),
        })
    }

    pub fn pma(&self, e: &Tensor) -> Result<Tensor> {
        let mut g = self.graph();
        let x = g.tape.constant(e.clone());
        let z = g.pma(x)?;
        Ok(g.tape.value(z).clone())
    }

    pub fn decode_logits(&self, e: &Tensor) -> Result<Tensor> {
        let mut g = self.graph();
        let x = g.tape.constant(e.clone());
        let z = g.decode_logits(x)?;
        Ok(g.tape.value(z).clone())
    }

    pub fn decode(&self, e: &Tensor) -> Result<FeatureSubset> {
        logits_to_subset(&self.decode_logits(e)?, self.config.pad_id())
    }

    /// Encode then decode, the codec's notion of reconstruction.
    pub fn reconstruct(&self, tokens: &[usize]) -> Result<FeatureSubset> {
        let e = self.encode(tokens)?;
        self.decode(&e.rows)
    }

    pub fn reconstruction_loss(&self, tokens: &[usize], target: &TargetSequence) -> Result<f64> {
        let mut g = self.graph();
        let loss = g.loss(tokens, target)?;
        Ok(g.tape.value(loss).item())
    }
}

/// One forward graph over borrowed codec parameters.
pub struct CodecGraph<'p> {
    pub tape: Tape<'p>,
    bound: Bound<'p>,
    params: &'p CodecParams,
    attention_macs: u64,
}

impl<'p> CodecGraph<'p> {
    pub fn new(params: &'p CodecParams) -> Self {
        CodecGraph {
            tape: Tape::new(),
            bound: Bound::new(&params.store),
            params,
            attention_macs: 0,
        }
    }

    /// Multiply-accumulates spent inside attention (scores and weighted sums).
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs
    }

    pub fn bound(&self) -> &Bound<'p> {
        &self.bound
    }

    pub fn layout(&self) -> &'p CodecLayout {
        &self.params.layout
    }

    fn p(&mut self, id: ParamId) -> Var {
        self.bound.var(&mut self.tape, id)
    }

    fn rff(&mut self, ids: &RffIds, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (self.p(ids.w1), self.p(ids.b1), self.p(ids.w2), self.p(ids.b2));
        let h = affine(&mut self.tape, x, w1, b1)?;
        let h = self.tape.relu(h);
        affine(&mut self.tape, h, w2, b2)
    }

    fn multihead(&mut self, ids: &MabIds, q: Var, k: Var, v: Var) -> Result<Var> {
        let (heads, dh) = (self.params.config.heads, self.params.config.head_dim());
        let (wq, bq, wk, bk, wv, bv) = (
            self.p(ids.wq),
            self.p(ids.bq),
            self.p(ids.wk),
            self.p(ids.bk),
            self.p(ids.wv),
            self.p(ids.bv),
        );
        let qp = affine(&mut self.tape, q, wq, bq)?;
        let kp = affine(&mut self.tape, k, wk, bk)?;
        let vp = affine(&mut self.tape, v, wv, bv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(qp, h * dh, dh)?;
            let kh = self.tape.slice_cols(kp, h * dh, dh)?;
            let vh = self.tape.slice_cols(vp, h * dh, dh)?;
            let before = self.tape.macs();
            let scores = self.tape.matmul_nt(qh, kh)?;
            let scores = self.tape.scale(scores, scale);
            let attn = self.tape.row_softmax(scores);
            let o = self.tape.matmul(attn, vh)?;
            self.attention_macs += self.tape.macs() - before;
            outs.push(o);
        }
        let cat = self.tape.concat_cols(&outs)?;
        let (wo, bo) = (self.p(ids.wo), self.p(ids.bo));
        affine(&mut self.tape, cat, wo, bo)
    }

    /// `H = LN(Q + Multihead(Q, K, V))`, output `LN(H + rFF(H))`.
    pub fn mab(&mut self, ids: &MabIds, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = self.params.config.d;
        for x in [q, k, v] {
            if self.tape.value(x).cols() != d {
                return Err(CapsError::dim("mab", self.tape.value(x).shape(), &[d]));
            }
        }
        if self.tape.value(k).rows() != self.tape.value(v).rows() {
            return Err(CapsError::dim(
                "mab",
                self.tape.value(k).shape(),
                self.tape.value(v).shape(),
            ));
        }
        let att = self.multihead(ids, q, k, v)?;
        let h = self.tape.add(q, att)?;
        let (g1, b1) = (self.p(ids.ln1_gain), self.p(ids.ln1_bias));
        let h = self.tape.layer_norm(h, g1, b1)?;
        let f = self.rff(&ids.ff, h)?;
        let y = self.tape.add(h, f)?;
        let (g2, b2) = (self.p(ids.ln2_gain), self.p(ids.ln2_bias));
        self.tape.layer_norm(y, g2, b2)
    }

    pub fn isab(&mut self, ids: &IsabIds, x: Var) -> Result<Var> {
        let i = self.p(ids.inducing);
        let h = self.mab(&ids.compress, i, x, x)?;
        self.mab(&ids.expand, x, h, h)
    }

    pub fn encode(&mut self, tokens: &[usize]) -> Result<Var> {
        let params = self.params;
        let cfg = &params.config;
        if tokens.is_empty() {
            return Err(CapsError::contract("cannot encode an empty subset"));
        }
        if tokens.len() > cfg.max_len {
            return Err(CapsError::contract(format!(
                "subset of {} tokens exceeds max_len {}",
                tokens.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.num_features) {
            return Err(CapsError::Index {
                what: "feature token",
                index: bad,
                bound: cfg.num_features,
            });
        }
        let layout = self.layout();
        let table = self.p(layout.token_table);
        let x = self.tape.lookup_rows(table, tokens)?;
        let x = self.isab(&layout.encoder[0], x)?;
        self.isab(&layout.encoder[1], x)
    }

    pub fn pma(&mut self, e: Var) -> Result<Var> {
        let layout = self.layout();
        let f = self.rff(&layout.pool_ff, e)?;
        let s = self.p(layout.seeds);
        self.mab(&layout.pool, s, f, f)
    }

    pub fn decode_logits(&mut self, e: Var) -> Result<Var> {
        let layout = self.layout();
        let z = self.pma(e)?;
        let z = self.mab(&layout.refine, z, z, z)?;
        let (w, b) = (self.p(layout.head_w), self.p(layout.head_b));
        affine(&mut self.tape, z, w, b)
    }

    pub fn loss(&mut self, tokens: &[usize], target: &TargetSequence) -> Result<Var> {
        let e = self.encode(tokens)?;
        let logits = self.decode_logits(e)?;
        reconstruction_loss(&mut self.tape, logits, target)
    }
}

/// Mean cross-entropy over every slot, padding slots included.
pub fn reconstruction_loss(tape: &mut Tape<'_>, logits: Var, target: &TargetSequence) -> Result<Var> {
    let rows = tape.value(logits).rows();
    if rows != target.len() {
        return Err(CapsError::dim(
            "reconstruction_loss",
            tape.value(logits).shape(),
            &[target.len()],
        ));
    }
    tape.cross_entropy_logits(logits, target.slots())
}

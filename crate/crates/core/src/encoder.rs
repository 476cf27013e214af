//! Small transformer encoder with a masked-token prediction head.
//!
//! Pre-layer-norm blocks, learned position embeddings, and a sentence
//! embedding taken from the `[CLS]` position (or a masked mean).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{TokenizedBatch, Vocab, MASK};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{DropoutSeed, ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Cls => "cls",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::InvalidConfig(format!("unknown pooling `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_length: usize,
    pub dropout_p: f64,
    pub pooling: Pooling,
}

impl EncoderConfig {
    /// Desk-scale defaults.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_length: 64,
            dropout_p: 0.1,
            pooling: Pooling::Cls,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.max_length < 2 {
            return bad(format!("max_length {} < 2", self.max_length));
        }
        if self.vocab_size == 0 || self.d_ff == 0 {
            return bad("vocab_size and d_ff must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// All trainable encoder weights, including the MLM projection.
#[derive(Clone, Debug)]
pub struct EncoderParams<T> {
    pub config: EncoderConfig,
    pub store: ParamStore<T>,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    mlm_w: ParamId,
    mlm_b: ParamId,
}

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape.to_vec(), |_| T::narrow(dist.sample(&mut self.rng)))
    }

    /// Glorot-normal weight for a `[fan_in, fan_out]` matrix.
    pub(crate) fn linear<T: Scalar>(&mut self, fan_in: usize, fan_out: usize) -> Tensor<T> {
        self.normal(&[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut store = ParamStore::new();
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let tok_emb = store.add("tok_emb", init.normal(&[v, d], 0.02));
        let pos_emb = store.add("pos_emb", init.normal(&[config.max_length, d], 0.02));
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut add = |name: &str, t: Tensor<T>| store.add(format!("layer{i}.{name}"), t);
            layers.push(LayerIds {
                ln1_g: add("ln1.gain", Tensor::full(vec![d], T::one())),
                ln1_b: add("ln1.bias", Tensor::zeros(vec![d])),
                wq: add("attn.wq", init.linear(d, d)),
                bq: add("attn.bq", Tensor::zeros(vec![d])),
                wk: add("attn.wk", init.linear(d, d)),
                bk: add("attn.bk", Tensor::zeros(vec![d])),
                wv: add("attn.wv", init.linear(d, d)),
                bv: add("attn.bv", Tensor::zeros(vec![d])),
                wo: add("attn.wo", init.linear(d, d)),
                bo: add("attn.bo", Tensor::zeros(vec![d])),
                ln2_g: add("ln2.gain", Tensor::full(vec![d], T::one())),
                ln2_b: add("ln2.bias", Tensor::zeros(vec![d])),
                w1: add("ff.w1", init.linear(d, f)),
                b1: add("ff.b1", Tensor::zeros(vec![f])),
                w2: add("ff.w2", init.linear(f, d)),
                b2: add("ff.b2", Tensor::zeros(vec![d])),
            });
        }
        let lnf_g = store.add("lnf.gain", Tensor::full(vec![d], T::one()));
        let lnf_b = store.add("lnf.bias", Tensor::zeros(vec![d]));
        let mlm_w = store.add("mlm.w", init.linear(d, v));
        let mlm_b = store.add("mlm.b", Tensor::zeros(vec![v]));
        Ok(Self {
            config,
            store,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            mlm_w,
            mlm_b,
        })
    }
}

/// Token-level states `[B, L, d]` and sentence embeddings `[B, d]`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub pooled: Var,
}

fn linear<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (tape.param(store, w), tape.param(store, b));
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn layer_norm<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, g: ParamId, b: ParamId) -> Result<Var> {
    let (g, b) = (tape.param(store, g), tape.param(store, b));
    tape.layer_norm(x, g, b, LN_EPS)
}

/// Dropout seed for a call site, or `None` in eval mode.
pub(crate) fn site(mode: Mode, seed: DropoutSeed, salt: u64) -> Option<DropoutSeed> {
    match mode {
        Mode::Train => Some(seed.derive(salt)),
        Mode::Eval => None,
    }
}

/// Runs the encoder over a batch. In train mode every dropout site draws
/// its mask from `seed`, so equal seeds replay bit-identically.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderParams<T>,
    batch: &TokenizedBatch,
    mode: Mode,
    seed: DropoutSeed,
) -> Result<EncoderOutput> {
    let cfg = &params.config;
    let (b, l, d) = (batch.batch_size, batch.seq_len, cfg.d_model);
    let (h, dh) = (cfg.n_heads, cfg.head_dim());
    if l > cfg.max_length {
        return Err(Error::invalid(
            "encode",
            format!("sequence length {l} exceeds max_length {}", cfg.max_length),
        ));
    }
    if let Some(p) = batch.token_ids.iter().position(|&id| id >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            row: p / l,
            col: p % l,
            id: batch.token_ids[p],
            vocab_size: cfg.vocab_size,
        });
    }
    let store = &params.store;
    let p = cfg.dropout_p;

    let tok_table = tape.param(store, params.tok_emb);
    let tok = tape.gather(tok_table, &batch.token_ids, &[b, l])?;
    let pos_table = tape.param(store, params.pos_emb);
    let positions: Vec<usize> = (0..l).collect();
    let pos = tape.gather(pos_table, &positions, &[l])?;
    let mut x = tape.add(tok, pos)?;
    x = tape.dropout(x, p, site(mode, seed, 0))?;

    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    for (i, ly) in params.layers.iter().enumerate() {
        let salt = 16 * (i as u64 + 1);
        let hn = layer_norm(tape, store, x, ly.ln1_g, ly.ln1_b)?;
        let q = linear(tape, store, hn, ly.wq, ly.bq)?;
        let k = linear(tape, store, hn, ly.wk, ly.bk)?;
        let v = linear(tape, store, hn, ly.wv, ly.bv)?;
        let q = tape.reshape(q, &[b, l, h, dh])?;
        let q = tape.permute(q, &[0, 2, 1, 3])?;
        let k = tape.reshape(k, &[b, l, h, dh])?;
        let kt = tape.permute(k, &[0, 2, 3, 1])?;
        let v = tape.reshape(v, &[b, l, h, dh])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.masked_softmax(scores, &batch.attention_mask)?;
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, l, d])?;
        let attn = linear(tape, store, ctx, ly.wo, ly.bo)?;
        let attn = tape.dropout(attn, p, site(mode, seed, salt + 1))?;
        x = tape.add(x, attn)?;

        let hn = layer_norm(tape, store, x, ly.ln2_g, ly.ln2_b)?;
        let f = linear(tape, store, hn, ly.w1, ly.b1)?;
        let f = tape.relu(f)?;
        let f = linear(tape, store, f, ly.w2, ly.b2)?;
        let f = tape.dropout(f, p, site(mode, seed, salt + 2))?;
        x = tape.add(x, f)?;
    }
    let hidden = layer_norm(tape, store, x, params.lnf_g, params.lnf_b)?;
    let pooled = match cfg.pooling {
        Pooling::Cls => tape.select(hidden, 1, 0)?,
        Pooling::Mean => tape.mean_pool(hidden, &batch.attention_mask)?,
    };
    Ok(EncoderOutput { hidden, pooled })
}

/// Vocabulary logits for every position: `[B, L, d] -> [B, L, V]`.
pub fn mlm_logits<T: Scalar>(tape: &mut Tape<T>, params: &EncoderParams<T>, hidden: Var) -> Result<Var> {
    linear(tape, &params.store, hidden, params.mlm_w, params.mlm_b)
}

/// Vocabulary logits `[n, V]` at the given `(row, col)` positions only.
pub fn mlm_logits_at<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderParams<T>,
    hidden: Var,
    positions: &[(usize, usize)],
) -> Result<Var> {
    let shape = tape.shape(hidden).to_vec();
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(hidden, &[b * l, d])?;
    let rows: Vec<usize> = positions.iter().map(|&(r, c)| r * l + c).collect();
    let picked = tape.gather(flat, &rows, &[rows.len()])?;
    linear(tape, &params.store, picked, params.mlm_w, params.mlm_b)
}

/// A batch with some tokens replaced by `[MASK]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub batch: TokenizedBatch,
    /// `(row, col)` of every masked token, in row-major order.
    pub positions: Vec<(usize, usize)>,
    /// Original ids at `positions`.
    pub targets: Vec<usize>,
}

/// Independently masks each real, non-reserved token with probability
/// `mask_rate`.
pub fn mask_tokens(batch: &TokenizedBatch, mask_rate: f64, seed: u64) -> MaskedBatch {
    assert!((0.0..=1.0).contains(&mask_rate), "mask_rate {mask_rate} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = batch.clone();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for r in 0..batch.batch_size {
        for c in 0..batch.seq_len {
            let idx = r * batch.seq_len + c;
            let id = batch.token_ids[idx];
            if !batch.attention_mask[idx] || Vocab::is_special(id) {
                continue;
            }
            if rng.gen::<f64>() < mask_rate {
                out.token_ids[idx] = MASK;
                positions.push((r, c));
                targets.push(id);
            }
        }
    }
    MaskedBatch {
        batch: out,
        positions,
        targets,
    }
}

//! Classification heads mapping encoder output to three-class logits.
//!
//! * linear: dropout, dense over the pooled vector, tanh, dropout, final layer.
//! * bigru / bilstm: dropout over token states, a bidirectional recurrence
//!   over the real positions, concatenated final states, relu, dropout,
//!   final layer.

use crate::data::Label;
use crate::encoder::{site, EncoderOutput, Init, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{DropoutSeed, ParamId, ParamStore, Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    BiGru,
    BiLstm,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::BiGru => "bigru",
            HeadKind::BiLstm => "bilstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "bigru" => Ok(HeadKind::BiGru),
            "bilstm" => Ok(HeadKind::BiLstm),
            _ => Err(Error::InvalidConfig(format!("unknown head `{s}`"))),
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            HeadKind::Linear => Activation::Tanh,
            HeadKind::BiGru | HeadKind::BiLstm => Activation::Relu,
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != HeadKind::Linear
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Encoder width.
    pub dense_in: usize,
    /// Dense width (linear) or hidden size per direction (recurrent).
    pub dense_out: usize,
    pub dropout_p: f64,
}

impl HeadConfig {
    /// Head sized for an encoder of width `d_model`: a square dense layer
    /// for the linear kind, and `max(8, round(d_model / 3))` units per
    /// direction for the recurrent kinds (768 -> 256).
    pub fn for_encoder(kind: HeadKind, d_model: usize) -> Self {
        let dense_out = match kind {
            HeadKind::Linear => d_model,
            _ => ((d_model as f64 / 3.0).round() as usize).max(8),
        };
        Self {
            kind,
            dense_in: d_model,
            dense_out,
            dropout_p: 0.1,
        }
    }

    pub fn activation(&self) -> Activation {
        self.kind.activation()
    }

    pub fn final_in(&self) -> usize {
        match self.kind {
            HeadKind::Linear => self.dense_out,
            _ => 2 * self.dense_out,
        }
    }

    pub fn final_out(&self) -> usize {
        NUM_CLASSES
    }

    pub fn validate(&self) -> Result<()> {
        if self.dense_in == 0 || self.dense_out == 0 {
            return Err(Error::InvalidConfig("head widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!("head dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct CellIds {
    /// `[d_in, gates * h]`
    w: ParamId,
    /// `[h, gates * h]`
    u: ParamId,
    bw: ParamId,
    bu: ParamId,
}

#[derive(Clone, Debug)]
enum Dense {
    Linear { w: ParamId, b: ParamId },
    Recurrent { fwd: CellIds, bwd: CellIds },
}

#[derive(Clone, Debug)]
pub struct HeadParams<T> {
    pub config: HeadConfig,
    pub store: ParamStore<T>,
    dense: Dense,
    final_w: ParamId,
    final_b: ParamId,
}

impl<T: Scalar> HeadParams<T> {
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut store = ParamStore::new();
        let (d, h) = (config.dense_in, config.dense_out);
        let dense = match config.kind {
            HeadKind::Linear => Dense::Linear {
                w: store.add("dense.w", init.linear(d, h)),
                b: store.add("dense.b", Tensor::zeros(vec![h])),
            },
            kind => {
                let gates = if kind == HeadKind::BiGru { 3 } else { 4 };
                let mut cell = |dir: &str| CellIds {
                    w: store.add(format!("{dir}.w"), init.linear(d, gates * h)),
                    u: store.add(format!("{dir}.u"), init.linear(h, gates * h)),
                    bw: store.add(format!("{dir}.bw"), Tensor::zeros(vec![gates * h])),
                    bu: store.add(format!("{dir}.bu"), Tensor::zeros(vec![gates * h])),
                };
                let fwd = cell("fwd");
                let bwd = cell("bwd");
                Dense::Recurrent { fwd, bwd }
            }
        };
        let final_w = store.add("final.w", init.linear(config.final_in(), NUM_CLASSES));
        let final_b = store.add("final.b", Tensor::zeros(vec![NUM_CLASSES]));
        Ok(Self {
            config,
            store,
            dense,
            final_w,
            final_b,
        })
    }

    /// Makes the backward cell an exact copy of the forward cell.
    pub fn tie_directions(&mut self) {
        if let Dense::Recurrent { fwd, bwd } = &self.dense {
            for (src, dst) in [(fwd.w, bwd.w), (fwd.u, bwd.u), (fwd.bw, bwd.bw), (fwd.bu, bwd.bu)] {
                let data = self.store.get(src).data().to_vec();
                self.store.get_mut(dst).data_mut().copy_from_slice(&data);
            }
        }
    }
}

fn affine<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (tape.param(store, w), tape.param(store, b));
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Logits `[B, 3]`. `attention_mask` (`[B, L]`) marks the real positions
/// the recurrent kinds run over.
pub fn head_forward<T: Scalar>(
    tape: &mut Tape<T>,
    head: &HeadParams<T>,
    enc: &EncoderOutput,
    attention_mask: &[bool],
    mode: Mode,
    seed: DropoutSeed,
) -> Result<Var> {
    let cfg = &head.config;
    let store = &head.store;
    let p = cfg.dropout_p;
    let features = match &head.dense {
        Dense::Linear { w, b } => {
            let pooled = enc.pooled;
            if tape.shape(pooled).get(1) != Some(&cfg.dense_in) {
                return Err(Error::invalid(
                    "head_forward",
                    format!("pooled {:?} does not match dense_in {}", tape.shape(pooled), cfg.dense_in),
                ));
            }
            let x = tape.dropout(pooled, p, site(mode, seed, 1))?;
            let x = affine(tape, store, x, *w, *b)?;
            tape.tanh(x)?
        }
        Dense::Recurrent { fwd, bwd } => {
            let shape = tape.shape(enc.hidden).to_vec();
            if shape.len() != 3 || shape[2] != cfg.dense_in || attention_mask.len() != shape[0] * shape[1] {
                return Err(Error::invalid(
                    "head_forward",
                    format!("hidden {shape:?} does not match dense_in {} / mask", cfg.dense_in),
                ));
            }
            let x = tape.dropout(enc.hidden, p, site(mode, seed, 1))?;
            let hf = run_direction(tape, store, cfg, fwd, x, attention_mask, &shape, false)?;
            let hb = run_direction(tape, store, cfg, bwd, x, attention_mask, &shape, true)?;
            let both = tape.concat(&[hf, hb])?;
            tape.relu(both)?
        }
    };
    let x = tape.dropout(features, p, site(mode, seed, 2))?;
    affine(tape, store, x, head.final_w, head.final_b)
}

/// Final state of one direction. Padded positions carry the previous state
/// through unchanged, so the forward pass ends on the last real token and
/// the backward pass on the first.
#[allow(clippy::too_many_arguments)]
fn run_direction<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &HeadConfig,
    cell: &CellIds,
    x: Var,
    mask: &[bool],
    shape: &[usize],
    reverse: bool,
) -> Result<Var> {
    let (b, l) = (shape[0], shape[1]);
    let h = cfg.dense_out;
    let xw = affine(tape, store, x, cell.w, cell.bw)?;
    let u = tape.param(store, cell.u);
    let bu = tape.param(store, cell.bu);
    let mut state = tape.constant(Tensor::zeros(vec![b, h]));
    let mut memory = tape.constant(Tensor::zeros(vec![b, h]));
    let steps: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in steps {
        let keep: Vec<bool> = (0..b).map(|i| mask[i * l + t]).collect();
        if !keep.iter().any(|&k| k) {
            continue;
        }
        let xt = tape.select(xw, 1, t)?;
        let hu = tape.matmul(state, u)?;
        let hu = tape.add(hu, bu)?;
        let (next_state, next_memory) = match cfg.kind {
            HeadKind::BiGru => {
                let gate = |tape: &mut Tape<T>, k: usize| -> Result<Var> {
                    let a = tape.slice(xt, 1, k * h, (k + 1) * h)?;
                    let c = tape.slice(hu, 1, k * h, (k + 1) * h)?;
                    tape.add(a, c)
                };
                let r = gate(tape, 0)?;
                let r = tape.sigmoid(r)?;
                let z = gate(tape, 1)?;
                let z = tape.sigmoid(z)?;
                let xn = tape.slice(xt, 1, 2 * h, 3 * h)?;
                let hn = tape.slice(hu, 1, 2 * h, 3 * h)?;
                let rh = tape.mul(r, hn)?;
                let n = tape.add(xn, rh)?;
                let n = tape.tanh(n)?;
                // h' = n + z * (h - n)
                let diff = tape.sub(state, n)?;
                let zd = tape.mul(z, diff)?;
                (tape.add(n, zd)?, memory)
            }
            HeadKind::BiLstm => {
                let pre = tape.add(xt, hu)?;
                let i = tape.slice(pre, 1, 0, h)?;
                let i = tape.sigmoid(i)?;
                let f = tape.slice(pre, 1, h, 2 * h)?;
                let f = tape.sigmoid(f)?;
                let g = tape.slice(pre, 1, 2 * h, 3 * h)?;
                let g = tape.tanh(g)?;
                let o = tape.slice(pre, 1, 3 * h, 4 * h)?;
                let o = tape.sigmoid(o)?;
                let fc = tape.mul(f, memory)?;
                let ig = tape.mul(i, g)?;
                let c = tape.add(fc, ig)?;
                let tc = tape.tanh(c)?;
                (tape.mul(o, tc)?, c)
            }
            HeadKind::Linear => unreachable!("linear head has no recurrence"),
        };
        state = tape.where_rows(&keep, next_state, state)?;
        if cfg.kind == HeadKind::BiLstm {
            memory = tape.where_rows(&keep, next_memory, memory)?;
        }
    }
    Ok(state)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Label>> {
    if logits.shape().len() != 2 || logits.shape()[1] != NUM_CLASSES {
        return Err(Error::invalid("predict", format!("logits {:?}", logits.shape())));
    }
    let mut out = Vec::with_capacity(logits.shape()[0]);
    for row in logits.data().chunks(NUM_CLASSES) {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "predict" });
        }
        let mut best = 0;
        for j in 1..NUM_CLASSES {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.push(Label::from_index(best).expect("three classes"));
    }
    Ok(out)
}

//! Contrastive pretraining, fine-tuning and the trained classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Objective, TrainConfig};
use crate::data::{encode_batch, encode_texts, Label, LabeledExample, TokenizedBatch, Triple, Vocab};
use crate::encoder::{encode, mask_tokens, mlm_logits_at, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with_fingerprint, EvalReport, TaggedDataset};
use crate::heads::{head_forward, predict, HeadParams};
use crate::objectives::{
    alignment_uniformity, classification_loss, mlm_loss, sup_contrastive_loss, unit_normalize,
    unsup_contrastive_loss,
};
use crate::optim::{adamw_step, AdamW, OptimizerState};
use crate::scalar::{lit, Scalar};
use crate::tensor::{mix64, DropoutSeed, Tape, Tensor, Var};

/// Rows encoded per inference pass.
const INFER_BATCH: usize = 64;

// Salts separating the random streams derived from one run seed.
const SALT_ENCODER_INIT: u64 = 1;
const SALT_HEAD_INIT: u64 = 2;
const SALT_SHUFFLE: u64 = 3;
const SALT_DROPOUT: u64 = 4;
const SALT_MASK: u64 = 5;
const SALT_PROBE: u64 = 6;

fn stream(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt))
}

fn step_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    stream(stream(seed, SALT_DROPOUT), ((epoch as u64) << 32) | step as u64)
}

/// Encoder plus classification head, with the vocabulary and configuration
/// they were trained with.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    pub vocab: Vocab,
    pub encoder: EncoderParams<T>,
    pub head: HeadParams<T>,
    pub config: TrainConfig,
}

impl<T: Scalar> Classifier<T> {
    /// Fresh head on top of `encoder`. Architecture fields of `config` are
    /// overwritten to describe `encoder`.
    pub fn new(vocab: Vocab, mut encoder: EncoderParams<T>, config: &TrainConfig) -> Result<Self> {
        if encoder.config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "encoder vocabulary size {} differs from vocabulary size {}",
                encoder.config.vocab_size,
                vocab.len()
            )));
        }
        let mut config = config.clone();
        let ec = &mut encoder.config;
        ec.dropout_p = config.dropout_p;
        config.d_model = ec.d_model;
        config.n_layers = ec.n_layers;
        config.n_heads = ec.n_heads;
        config.d_ff = ec.d_ff;
        config.pooling = ec.pooling;
        config.max_positions = ec.max_length;
        config.validate()?;
        let head = HeadParams::init(config.head_config(), stream(config.seed, SALT_HEAD_INIT))?;
        Ok(Self {
            vocab,
            encoder,
            head,
            config,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self> {
        let head = ckpt
            .head
            .ok_or_else(|| Error::Checkpoint("checkpoint has no classification head".into()))?;
        Ok(Self {
            vocab: ckpt.vocab,
            encoder: ckpt.encoder,
            head,
            config: ckpt.train,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            vocab: self.vocab.clone(),
            encoder: self.encoder.clone(),
            head: Some(self.head.clone()),
            train: self.config.clone(),
        }
    }

    /// Fingerprint of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        self.to_checkpoint().fingerprint()
    }

    /// Eval-mode logits `[n, 3]`.
    pub fn logits<S: AsRef<str>>(&self, texts: &[S], max_length: usize) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(texts.len() * 3);
        for chunk in texts.chunks(INFER_BATCH) {
            let batch = encode_texts(chunk, &self.vocab, max_length).trim_padding();
            let mut tape = Tape::no_grad();
            let out = self.forward(&mut tape, &batch, Mode::Eval, DropoutSeed(0))?;
            data.extend_from_slice(tape.value(out).data());
        }
        Tensor::new(vec![texts.len(), 3], data)
    }

    pub fn predict<S: AsRef<str>>(&self, texts: &[S], max_length: usize) -> Result<Vec<Label>> {
        predict(&self.logits(texts, max_length)?)
    }

    pub fn predict_examples(&self, examples: &[LabeledExample], max_length: usize) -> Result<Vec<Label>> {
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        self.predict(&texts, max_length)
    }

    fn forward(&self, tape: &mut Tape<T>, batch: &TokenizedBatch, mode: Mode, seed: DropoutSeed) -> Result<Var> {
        let enc = encode(tape, &self.encoder, batch, mode, seed.derive(0))?;
        head_forward(tape, &self.head, &enc, &batch.attention_mask, mode, seed.derive(1))
    }
}

/// Pretraining input.
#[derive(Clone, Debug)]
pub enum Corpus {
    Sentences(Vec<String>),
    Triples(Vec<Triple>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Sentences(s) => s.len(),
            Corpus::Triples(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every sentence, for building a vocabulary.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            Corpus::Sentences(s) => s.iter().map(String::as_str).collect(),
            Corpus::Triples(t) => t
                .iter()
                .flat_map(|t| [t.anchor.as_str(), t.entailment.as_str(), t.contradiction.as_str()])
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub alignment: f64,
    pub uniformity: f64,
}

#[derive(Clone, Debug)]
pub struct Pretrained<T> {
    pub encoder: EncoderParams<T>,
    /// Alignment and uniformity of the initialization.
    pub initial: (f64, f64),
    pub log: Vec<PretrainLog>,
}

/// Held-out positive pairs: two dropout views of the same sentence, or an
/// anchor with its entailment.
struct Probe {
    left: TokenizedBatch,
    right: TokenizedBatch,
    dropout_views: bool,
}

impl Probe {
    fn measure<T: Scalar>(&self, encoder: &EncoderParams<T>, seed: u64) -> Result<(f64, f64)> {
        let mode = if self.dropout_views { Mode::Train } else { Mode::Eval };
        let embed = |batch: &TokenizedBatch, salt: u64| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::no_grad();
            let out = encode(&mut tape, encoder, batch, mode, DropoutSeed(stream(seed, salt)))?;
            let pooled = tape.value(out.pooled);
            (0..batch.batch_size)
                .map(|i| unit_normalize(&pooled.row(i).iter().map(|v| v.widen()).collect::<Vec<_>>()))
                .collect()
        };
        let left = embed(&self.left, 0)?;
        let right = embed(&self.right, 1)?;
        alignment_uniformity(&left.into_iter().zip(right).collect::<Vec<_>>())
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
    }
    out
}

fn check_loss(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { epoch, step, loss })
    }
}

/// Random encoder sized by `config` for `vocab`.
pub fn random_encoder<T: Scalar>(vocab: &Vocab, config: &TrainConfig) -> Result<EncoderParams<T>> {
    EncoderParams::init(config.encoder_config(vocab.len()), stream(config.seed, SALT_ENCODER_INIT))
}

/// Contrastive pretraining with an auxiliary masked-token loss.
///
/// A tenth of the corpus (at most 64 items) is held out for the per-epoch
/// alignment/uniformity probe when at least one item remains for training.
pub fn pretrain<T: Scalar>(corpus: &Corpus, vocab: &Vocab, config: &TrainConfig) -> Result<Pretrained<T>> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus"));
    }
    match (config.objective, corpus) {
        (Objective::UnsupCse, Corpus::Triples(_)) | (Objective::SupCse, Corpus::Sentences(_)) => {
            return Err(Error::InvalidConfig(format!(
                "objective {} does not match the corpus format",
                config.objective.name()
            )))
        }
        _ => {}
    }
    let mut encoder = random_encoder::<T>(vocab, config)?;
    let ml = config.max_length;
    let n = corpus.len();
    let held = (n / 10).clamp(n.min(2), 64);
    let n_train = if n > held { n - held } else { n };
    let (probe, rows): (Probe, Vec<TokenizedBatch>) = match corpus {
        Corpus::Sentences(s) => {
            let all = encode_texts(s, vocab, ml);
            let probe_rows: Vec<usize> = (n - held..n).collect();
            let p = all.gather_rows(&probe_rows);
            (
                Probe {
                    left: p.trim_padding(),
                    right: p.trim_padding(),
                    dropout_views: true,
                },
                vec![all],
            )
        }
        Corpus::Triples(t) => {
            let col = |f: fn(&Triple) -> &str| encode_texts(&t.iter().map(f).collect::<Vec<_>>(), vocab, ml);
            let (a, e, c) = (col(|t| &t.anchor), col(|t| &t.entailment), col(|t| &t.contradiction));
            let probe_rows: Vec<usize> = (n - held..n).collect();
            (
                Probe {
                    left: a.gather_rows(&probe_rows).trim_padding(),
                    right: e.gather_rows(&probe_rows).trim_padding(),
                    dropout_views: false,
                },
                vec![a, e, c],
            )
        }
    };
    let probe_seed = stream(config.seed, SALT_PROBE);
    let initial = probe.measure(&encoder, probe_seed)?;
    log::info!("pretrain init: alignment {:.6} uniformity {:.6}", initial.0, initial.1);
    let mut log = Vec::new();
    if config.objective == Objective::None {
        return Ok(Pretrained { encoder, initial, log });
    }

    let opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut state = OptimizerState::new(&encoder.store);
    let mut rng = ChaCha8Rng::seed_from_u64(stream(config.seed, SALT_SHUFFLE));
    let tau = config.loss.temperature;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let plan = batches(n_train, config.batch_size, &mut rng);
        for (step, idx) in plan.iter().enumerate() {
            let views: Vec<TokenizedBatch> = rows.iter().map(|r| r.gather_rows(idx).trim_padding()).collect();
            let seed = step_seed(config.seed, epoch, step);
            let mut tape = Tape::new();
            let contrastive = if config.objective == Objective::UnsupCse {
                let a = encode(&mut tape, &encoder, &views[0], Mode::Train, DropoutSeed(seed).derive(0))?;
                let b = encode(&mut tape, &encoder, &views[0], Mode::Train, DropoutSeed(seed).derive(1))?;
                unsup_contrastive_loss(&mut tape, a.pooled, b.pooled, tau)?
            } else {
                let enc: Vec<_> = (0..3)
                    .map(|k| encode(&mut tape, &encoder, &views[k], Mode::Train, DropoutSeed(seed).derive(k as u64)))
                    .collect::<Result<_>>()?;
                sup_contrastive_loss(&mut tape, enc[0].pooled, enc[1].pooled, enc[2].pooled, tau)?
            };
            let mut loss = contrastive;
            if config.mlm_weight > 0.0 && config.mask_rate > 0.0 {
                let masked = mask_tokens(&views[0], config.mask_rate, stream(seed, SALT_MASK));
                if !masked.positions.is_empty() {
                    let enc = encode(&mut tape, &encoder, &masked.batch, Mode::Train, DropoutSeed(seed).derive(3))?;
                    let logits = mlm_logits_at(&mut tape, &encoder, enc.hidden, &masked.positions)?;
                    let mlm = mlm_loss(&mut tape, logits, &masked.targets)?;
                    let mlm = tape.scale(mlm, lit(config.mlm_weight))?;
                    loss = tape.add(loss, mlm)?;
                }
            }
            let value = tape.value(loss).item().widen();
            check_loss(value, epoch, step)?;
            total += value;
            let grads = tape.backward(loss)?;
            encoder.store.accumulate(&grads);
            adamw_step(&mut encoder.store, &mut state, &opt)?;
            encoder.store.zero_grad();
        }
        let (alignment, uniformity) = probe.measure(&encoder, probe_seed)?;
        let entry = PretrainLog {
            epoch,
            train_loss: total / plan.len().max(1) as f64,
            alignment,
            uniformity,
        };
        log::info!("{}", serde_json::to_string(&entry)?);
        log.push(entry);
    }
    Ok(Pretrained { encoder, initial, log })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct Finetuned<T> {
    /// Snapshot of the epoch with the best dev macro-F1 (earliest on ties).
    pub model: Classifier<T>,
    pub best_epoch: usize,
    pub dev_report: EvalReport,
    pub log: Vec<EpochLog>,
}

/// End-to-end fine-tuning of `encoder` with a fresh head. Unless
/// `config.freeze_encoder` is set, gradients flow into the encoder.
pub fn finetune<T: Scalar>(
    train: &[LabeledExample],
    dev: &[LabeledExample],
    vocab: &Vocab,
    encoder: EncoderParams<T>,
    config: &TrainConfig,
) -> Result<Finetuned<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if dev.is_empty() {
        return Err(Error::EmptyInput("dev set"));
    }
    let mut model = Classifier::new(vocab.clone(), encoder, config)?;
    model.encoder.store.set_requires_grad(!config.freeze_encoder);
    let dev = TaggedDataset {
        tag: "dev".into(),
        examples: dev.to_vec(),
    };
    let rows = encode_batch(train, vocab, config.max_length);
    let opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut enc_state = OptimizerState::new(&model.encoder.store);
    let mut head_state = OptimizerState::new(&model.head.store);
    let mut rng = ChaCha8Rng::seed_from_u64(stream(config.seed, SALT_SHUFFLE));
    let mut log = Vec::new();
    let mut best: Option<(usize, Classifier<T>, EvalReport)> = None;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let plan = batches(train.len(), config.batch_size, &mut rng);
        for (step, idx) in plan.iter().enumerate() {
            let batch = rows.gather_rows(idx).trim_padding();
            let mut tape = Tape::new();
            let seed = DropoutSeed(step_seed(config.seed, epoch, step));
            let logits = model.forward(&mut tape, &batch, Mode::Train, seed)?;
            let loss = classification_loss(&mut tape, logits, &batch.label_indices(), &config.loss)?;
            let value = tape.value(loss).item().widen();
            check_loss(value, epoch, step)?;
            total += value;
            let grads = tape.backward(loss)?;
            model.head.store.accumulate(&grads);
            adamw_step(&mut model.head.store, &mut head_state, &opt)?;
            model.head.store.zero_grad();
            if !config.freeze_encoder {
                model.encoder.store.accumulate(&grads);
                adamw_step(&mut model.encoder.store, &mut enc_state, &opt)?;
                model.encoder.store.zero_grad();
            }
        }
        let report = evaluate_with_fingerprint(&model, &dev, config.max_length, "")?;
        let entry = EpochLog {
            epoch,
            train_loss: total / plan.len() as f64,
            dev_macro_f1: report.macro_f1,
            dev_accuracy: report.accuracy,
        };
        log::info!("{}", serde_json::to_string(&entry)?);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, _, r)| report.macro_f1 > r.macro_f1) {
            best = Some((epoch, model.clone(), report));
        }
    }
    let (best_epoch, mut model, mut dev_report) = best.expect("at least one epoch");
    model.encoder.store.set_requires_grad(true);
    dev_report.model_fingerprint = model.fingerprint();
    Ok(Finetuned {
        model,
        best_epoch,
        dev_report,
        log,
    })
}

//! Class rebalancing with fill-mask synthetic examples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    class_distribution, encode_texts, tokenize, ClassDistribution, Label, LabeledExample, Source, Vocab,
    NUM_RESERVED,
};
use crate::encoder::{encode, mask_tokens, mlm_logits_at, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{mix64, DropoutSeed, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BalancePlan {
    pub current: [usize; 3],
    pub target: [usize; 3],
    pub deficit: [usize; 3],
}

impl BalancePlan {
    pub fn total_deficit(&self) -> usize {
        self.deficit.iter().sum()
    }
}

/// Targets every class at `target`, or at the largest class count.
pub fn make_plan(dist: &ClassDistribution, target: Option<usize>) -> Result<BalancePlan> {
    if dist.total == 0 {
        return Err(Error::EmptyInput("class distribution"));
    }
    let max = *dist.counts.iter().max().expect("three classes");
    let t = match target {
        Some(t) if t < max => return Err(Error::TargetBelowMax { target: t, max }),
        Some(t) => t,
        None => max,
    };
    Ok(BalancePlan {
        current: dist.counts,
        target: [t; 3],
        deficit: dist.counts.map(|c| t - c),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FillMaskConfig {
    /// Probability of masking each maskable token, in `[0, 1]`.
    pub mask_rate: f64,
    /// Replacements are sampled from this many top predictions.
    pub top_k: usize,
    pub max_length: usize,
}

impl Default for FillMaskConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            top_k: 5,
            max_length: 64,
        }
    }
}

impl FillMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidConfig(format!("mask_rate {} outside [0, 1]", self.mask_rate)));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.max_length < 3 {
            return Err(Error::InvalidConfig("max_length must be >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExample {
    pub example: LabeledExample,
    /// Index of the source row in the input dataset.
    pub source_index: usize,
    /// Token indices (into the source's token list) that were masked and
    /// refilled. With `top_k == 1` a refill may equal the original token.
    pub changed: Vec<usize>,
    /// The source had no maskable token.
    pub degenerate: bool,
    /// The output text equals the source text.
    pub duplicate: bool,
}

/// Masks tokens of `example` and fills each mask with a token sampled from
/// the MLM head's top-`k` predictions, proportionally to their softmax
/// weights. Reserved ids are never proposed, nor the original token when
/// `top_k > 1`. Tokens are rejoined with single spaces.
pub fn fill_mask_generate<T: Scalar>(
    example: &LabeledExample,
    source_index: usize,
    encoder: &EncoderParams<T>,
    vocab: &Vocab,
    cfg: &FillMaskConfig,
    seed: u64,
) -> Result<SyntheticExample> {
    cfg.validate()?;
    let mut tokens = tokenize(&example.text);
    let batch = encode_texts(&[example.text.as_str()], vocab, cfg.max_length).trim_padding();
    let maskable = (0..batch.seq_len)
        .any(|c| batch.attention_mask[c] && !Vocab::is_special(batch.token_ids[c]));
    let masked = mask_tokens(&batch, cfg.mask_rate, mix64(seed));
    let mut changed = Vec::new();
    if !masked.positions.is_empty() {
        let mut tape = Tape::no_grad();
        let out = encode(&mut tape, encoder, &masked.batch, Mode::Eval, DropoutSeed(0))?;
        let logits = mlm_logits_at(&mut tape, encoder, out.hidden, &masked.positions)?;
        let logits = tape.value(logits);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, (&(_, col), &orig)) in masked.positions.iter().zip(&masked.targets).enumerate() {
            let row: Vec<f64> = logits.row(i).iter().map(|v| v.widen()).collect();
            let mut cand: Vec<usize> = (NUM_RESERVED..row.len())
                .filter(|&id| cfg.top_k == 1 || id != orig)
                .collect();
            cand.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            cand.truncate(cfg.top_k);
            if cand.is_empty() {
                continue;
            }
            let top = row[cand[0]];
            let weights: Vec<f64> = cand.iter().map(|&id| (row[id] - top).exp()).collect();
            let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
            let mut chosen = cand[cand.len() - 1];
            for (&id, &w) in cand.iter().zip(&weights) {
                if u < w {
                    chosen = id;
                    break;
                }
                u -= w;
            }
            // Column 0 is [cls].
            let t = col - 1;
            tokens[t] = vocab.token(chosen).expect("id within vocabulary").to_string();
            changed.push(t);
        }
    }
    let text = if changed.is_empty() { example.text.clone() } else { tokens.join(" ") };
    let duplicate = tokenize(&text) == tokenize(&example.text);
    Ok(SyntheticExample {
        example: LabeledExample {
            text,
            label: example.label,
            source: Source::Synthetic,
        },
        source_index,
        changed,
        degenerate: !maskable,
        duplicate,
    })
}

#[derive(Clone, Debug)]
pub struct Upsampled {
    /// Originals in input order, then synthetic rows grouped by class.
    pub examples: Vec<LabeledExample>,
    pub synthetic: Vec<SyntheticExample>,
    pub plan: BalancePlan,
}

/// Appends `plan.deficit[c]` synthetic rows for each class `c`. Sources are
/// visited round-robin in a seeded order within their class.
pub fn upsample<T: Scalar>(
    dataset: &[LabeledExample],
    plan: &BalancePlan,
    encoder: &EncoderParams<T>,
    vocab: &Vocab,
    cfg: &FillMaskConfig,
    seed: u64,
) -> Result<Upsampled> {
    cfg.validate()?;
    let dist = class_distribution(dataset);
    if dist.counts != plan.current {
        return Err(Error::InvalidConfig(format!(
            "plan was made for counts {:?}, dataset has {:?}",
            plan.current, dist.counts
        )));
    }
    let mut synthetic = Vec::with_capacity(plan.total_deficit());
    for label in Label::ALL {
        let c = label.index();
        let need = plan.deficit[c];
        if need == 0 {
            continue;
        }
        let mut sources: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].label == label).collect();
        if sources.is_empty() {
            return Err(Error::NoSourceExamples(label));
        }
        let class_seed = mix64(seed ^ mix64(c as u64 + 1));
        sources.shuffle(&mut ChaCha8Rng::seed_from_u64(class_seed));
        if need * 2 > plan.target[c] {
            log::warn!(
                "class {label}: {need} of {} rows will be synthetic ({:.0}%)",
                plan.target[c],
                100.0 * need as f64 / plan.target[c] as f64
            );
        }
        for k in 0..need {
            let src = sources[k % sources.len()];
            let s = fill_mask_generate(&dataset[src], src, encoder, vocab, cfg, mix64(class_seed ^ k as u64))?;
            synthetic.push(s);
        }
    }
    let mut examples = dataset.to_vec();
    examples.extend(synthetic.iter().map(|s| s.example.clone()));
    Ok(Upsampled {
        examples,
        synthetic,
        plan: *plan,
    })
}

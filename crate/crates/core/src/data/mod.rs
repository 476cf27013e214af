//! Labeled examples, dataset files, vocabulary and batching.

mod batch;
mod io;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{encode_batch, encode_texts, TokenizedBatch};
pub use io::{
    load_corpus, load_dataset, load_triples, write_jsonl, DatasetFormat, Loaded, Triple,
};
pub use vocab::{build_vocab, tokenize, Vocab, CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};

use crate::error::{Error, Result};

/// Three-way sentiment label. The index order is fixed everywhere:
/// negative = 0, neutral = 1, positive = 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Neutral,
    Positive,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Negative, Label::Neutral, Label::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Neutral => "neutral",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            "positive" => Ok(Label::Positive),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

/// Five-point star rating to label: 1-2 negative, 3 neutral, 4-5 positive.
/// `record` is only used to locate the offending row in the error.
pub fn remap_stars(record: usize, stars: i64) -> Result<Label> {
    match stars {
        1 | 2 => Ok(Label::Negative),
        3 => Ok(Label::Neutral),
        4 | 5 => Ok(Label::Positive),
        _ => Err(Error::StarOutOfRange { record, stars }),
    }
}

/// Dataset an example came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    DynasentR1,
    DynasentR2,
    Sst3,
    Yelp,
    Amazon,
    Synthetic,
    Other(String),
}

impl Source {
    pub fn tag(&self) -> &str {
        match self {
            Source::DynasentR1 => "dynasent-r1",
            Source::DynasentR2 => "dynasent-r2",
            Source::Sst3 => "sst3",
            Source::Yelp => "yelp",
            Source::Amazon => "amazon",
            Source::Synthetic => "synthetic",
            Source::Other(s) => s,
        }
    }

    pub fn parse(tag: &str) -> Source {
        match tag {
            "dynasent-r1" => Source::DynasentR1,
            "dynasent-r2" => Source::DynasentR2,
            "sst3" => Source::Sst3,
            "yelp" => Source::Yelp,
            "amazon" => Source::Amazon,
            "synthetic" => Source::Synthetic,
            other => Source::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
    pub source: Source,
}

impl LabeledExample {
    /// Fails on text that is empty after trimming.
    pub fn new(text: impl Into<String>, label: Label, source: Source) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("example text"));
        }
        Ok(Self {
            text,
            label,
            source,
        })
    }
}

/// Per-label counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: [usize; 3],
    pub total: usize,
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; 3]) -> Self {
        Self {
            counts,
            total: counts.iter().sum(),
        }
    }

    pub fn get(&self, label: Label) -> usize {
        self.counts[label.index()]
    }
}

impl fmt::Display for ClassDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "negative={} neutral={} positive={} total={}",
            self.counts[0], self.counts[1], self.counts[2], self.total
        )
    }
}

pub fn class_distribution(examples: &[LabeledExample]) -> ClassDistribution {
    let mut counts = [0usize; 3];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    ClassDistribution::from_counts(counts)
}

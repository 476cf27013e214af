//! Confusion matrices, per-class and macro metrics, and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledExample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::Classifier;

/// Counts indexed `[gold][predicted]` in label order negative, neutral,
/// positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; 3]; 3]);

impl ConfusionMatrix {
    pub fn from_predictions(gold: &[Label], predicted: &[Label]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::invalid(
                "confusion",
                format!("{} gold labels, {} predictions", gold.len(), predicted.len()),
            ));
        }
        let mut m = [[0u64; 3]; 3];
        for (g, p) in gold.iter().zip(predicted) {
            m[g.index()][p.index()] += 1;
        }
        Ok(Self(m))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..3).map(|i| self.0[i][i]).sum()
    }

    /// 0 when the matrix is empty.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn precision(&self, c: Label) -> f64 {
        let i = c.index();
        ratio(self.0[i][i], (0..3).map(|g| self.0[g][i]).sum())
    }

    pub fn recall(&self, c: Label) -> f64 {
        let i = c.index();
        ratio(self.0[i][i], self.0[i].iter().sum())
    }

    /// 0 when precision + recall is 0.
    pub fn f1(&self, c: Label) -> f64 {
        let (p, r) = (self.precision(c), self.recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Unweighted mean of the three per-class F1 values.
    pub fn macro_f1(&self) -> f64 {
        Label::ALL.iter().map(|&c| self.f1(c)).sum::<f64>() / 3.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub negative: ClassMetrics,
    pub neutral: ClassMetrics,
    pub positive: ClassMetrics,
}

impl PerClass {
    pub fn get(&self, c: Label) -> &ClassMetrics {
        match c {
            Label::Negative => &self.negative,
            Label::Neutral => &self.neutral,
            Label::Positive => &self.positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model_fingerprint: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: PerClass,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(dataset: impl Into<String>, model_fingerprint: impl Into<String>, cm: ConfusionMatrix) -> Self {
        let m = |c| ClassMetrics {
            precision: cm.precision(c),
            recall: cm.recall(c),
            f1: cm.f1(c),
        };
        Self {
            dataset: dataset.into(),
            model_fingerprint: model_fingerprint.into(),
            accuracy: cm.accuracy(),
            macro_f1: cm.macro_f1(),
            per_class: PerClass {
                negative: m(Label::Negative),
                neutral: m(Label::Neutral),
                positive: m(Label::Positive),
            },
            confusion: cm,
        }
    }
}

/// A dataset with the tag its report is filed under.
#[derive(Clone, Debug)]
pub struct TaggedDataset {
    pub tag: String,
    pub examples: Vec<LabeledExample>,
}

/// Eval-mode predictions for `examples`, truncated at `max_length`.
pub fn evaluate<T: Scalar>(
    model: &Classifier<T>,
    dataset: &TaggedDataset,
    max_length: usize,
) -> Result<EvalReport> {
    evaluate_with_fingerprint(model, dataset, max_length, &model.fingerprint())
}

pub(crate) fn evaluate_with_fingerprint<T: Scalar>(
    model: &Classifier<T>,
    dataset: &TaggedDataset,
    max_length: usize,
    fingerprint: &str,
) -> Result<EvalReport> {
    if dataset.examples.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let predicted = model.predict_examples(&dataset.examples, max_length)?;
    let gold: Vec<Label> = dataset.examples.iter().map(|e| e.label).collect();
    let cm = ConfusionMatrix::from_predictions(&gold, &predicted)?;
    Ok(EvalReport::from_confusion(&dataset.tag, fingerprint, cm))
}

/// One report per dataset, in order, all from the same model and length.
pub fn transfer_suite<T: Scalar>(
    model: &Classifier<T>,
    datasets: &[TaggedDataset],
    max_length: usize,
) -> Result<Vec<EvalReport>> {
    let fp = model.fingerprint();
    datasets
        .iter()
        .map(|d| evaluate_with_fingerprint(model, d, max_length, &fp))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::InvalidConfig(format!("unknown report format `{s}`"))),
        }
    }
}

/// JSON array of reports at full precision, or a markdown table with one
/// row per class and a macro row per dataset, rounded to 4 decimals.
pub fn report_render(reports: &[EvalReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::from(
                "| dataset | class | precision | recall | f1 | accuracy |\n|---|---|---|---|---|---|\n",
            );
            for r in reports {
                for c in Label::ALL {
                    let m = r.per_class.get(c);
                    let _ = writeln!(
                        s,
                        "| {} | {} | {:.4} | {:.4} | {:.4} | |",
                        r.dataset, c, m.precision, m.recall, m.f1
                    );
                }
                let mean = |f: fn(&ClassMetrics) -> f64| Label::ALL.iter().map(|&c| f(r.per_class.get(c))).sum::<f64>() / 3.0;
                let _ = writeln!(
                    s,
                    "| {} | macro | {:.4} | {:.4} | {:.4} | {:.4} |",
                    r.dataset,
                    mean(|m| m.precision),
                    mean(|m| m.recall),
                    r.macro_f1,
                    r.accuracy
                );
            }
            s
        }
    }
}

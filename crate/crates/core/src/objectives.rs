//! Classification, contrastive and masked-token losses, plus
//! alignment/uniformity of normalized embeddings.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, Var};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Focal => "focal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            "focal" => Ok(LossKind::Focal),
            _ => Err(Error::InvalidConfig(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl Reduction {
    pub fn name(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            _ => Err(Error::InvalidConfig(format!("unknown reduction `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Focusing parameter; focal loss only.
    pub gamma: f64,
    pub reduction: Reduction,
    /// Softmax temperature of the contrastive losses.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            gamma: 3.0,
            reduction: Reduction::Mean,
            temperature: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Clamped probability of the gold class, `[B]`.
fn gold_prob<T: Scalar>(tape: &mut Tape<T>, logits: Var, gold: &[usize]) -> Result<Var> {
    let probs = tape.softmax(logits)?;
    let pt = tape.pick(probs, gold)?;
    tape.clamp(pt, lit(PROB_FLOOR), T::one())
}

/// Per-example `-log p_t`, shape `[B]`.
pub fn cross_entropy_per_example<T: Scalar>(tape: &mut Tape<T>, logits: Var, gold: &[usize]) -> Result<Var> {
    let pt = gold_prob(tape, logits, gold)?;
    let logp = tape.log(pt)?;
    tape.scale(logp, -T::one())
}

/// Per-example `-(1 - p_t)^gamma log p_t`, shape `[B]`.
pub fn focal_per_example<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    gold: &[usize],
    gamma: f64,
) -> Result<Var> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} must be >= 0")));
    }
    let pt = gold_prob(tape, logits, gold)?;
    let logp = tape.log(pt)?;
    let nll = tape.scale(logp, -T::one())?;
    if gamma == 0.0 {
        return Ok(nll);
    }
    let miss = tape.rsub_scalar(T::one(), pt)?;
    let modulator = tape.pow(miss, lit(gamma))?;
    tape.mul(modulator, nll)
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, gold: &[usize]) -> Result<Var> {
    let per = cross_entropy_per_example(tape, logits, gold)?;
    tape.mean(per)
}

/// Mean focal loss over the batch.
pub fn focal_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, gold: &[usize], gamma: f64) -> Result<Var> {
    let per = focal_per_example(tape, logits, gold, gamma)?;
    tape.mean(per)
}

/// The classification loss selected by `cfg`, reduced as configured.
pub fn classification_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    gold: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    let per = match cfg.kind {
        LossKind::CrossEntropy => cross_entropy_per_example(tape, logits, gold)?,
        LossKind::Focal => focal_per_example(tape, logits, gold, cfg.gamma)?,
    };
    match cfg.reduction {
        Reduction::Mean => tape.mean(per),
        Reduction::Sum => tape.sum(per),
    }
}

/// Temperature-scaled cosine similarities `[B, N]` between rows of `a`
/// (`[B, d]`) and rows of `b` (`[N, d]`).
fn cosine_logits<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let na = tape.normalize(a)?;
    let nb = tape.normalize(b)?;
    let nbt = tape.transpose(nb)?;
    let sim = tape.matmul(na, nbt)?;
    tape.scale(sim, lit(1.0 / temperature))
}

fn info_nce<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let b = tape.shape(logits)[0];
    let diag: Vec<usize> = (0..b).collect();
    cross_entropy(tape, logits, &diag)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 2 || sa != sb {
        return Err(Error::shape(op, sa, sb));
    }
    Ok(())
}

/// In-batch InfoNCE between two views of the same sentences: row `i` of
/// `a` must pick row `i` of `b` among all rows of `b`.
pub fn unsup_contrastive_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, temperature: f64) -> Result<Var> {
    check_pair(tape, "unsup_contrastive_loss", a, b)?;
    let logits = cosine_logits(tape, a, b, temperature)?;
    info_nce(tape, logits)
}

/// InfoNCE with hard negatives: anchor `i` must pick positive `i` among all
/// `B` positives and all `B` hard negatives of the batch.
pub fn sup_contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    hard_negative: Var,
    temperature: f64,
) -> Result<Var> {
    check_pair(tape, "sup_contrastive_loss", anchor, positive)?;
    check_pair(tape, "sup_contrastive_loss", anchor, hard_negative)?;
    let pos = cosine_logits(tape, anchor, positive, temperature)?;
    let neg = cosine_logits(tape, anchor, hard_negative, temperature)?;
    let logits = tape.concat(&[pos, neg])?;
    info_nce(tape, logits)
}

/// Mean cross-entropy of masked-token predictions `[n, V]`.
pub fn mlm_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    cross_entropy(tape, logits, targets)
}

/// Mean squared distance between positive pairs.
pub fn alignment(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("alignment pairs"));
    }
    let total: f64 = pairs.iter().map(|(x, y)| sq_dist(x, y)).sum();
    Ok(total / pairs.len() as f64)
}

/// `log mean_{i<j} exp(-2 |x_i - x_j|^2)`.
pub fn uniformity(points: &[&[f64]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::EmptyInput("uniformity needs at least two points"));
    }
    let mut acc = 0f64;
    let mut n = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            acc += (-2.0 * sq_dist(points[i], points[j])).exp();
            n += 1;
        }
    }
    Ok((acc / n as f64).ln())
}

/// Alignment of the pairs, and uniformity over every point of every pair.
pub fn alignment_uniformity(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64)> {
    let points: Vec<&[f64]> = pairs.iter().flat_map(|(x, y)| [x.as_slice(), y.as_slice()]).collect();
    Ok((alignment(pairs)?, uniformity(&points)?))
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Scales each vector to unit length; zero vectors are an error.
pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroNorm { op: "unit_normalize" });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval<F>(f: F) -> f64
    where
        F: FnOnce(&mut Tape<f64>) -> Result<Var>,
    {
        let mut tape = Tape::no_grad();
        let v = f(&mut tape).unwrap();
        tape.value(v).item()
    }

    fn logits_for_pt(pt: f64) -> Tensor<f64> {
        // gold = 0, the two other classes share the remaining mass.
        let other = (1.0 - pt) / 2.0;
        Tensor::new(vec![1, 3], vec![(pt / other).ln(), 0.0, 0.0]).unwrap()
    }

    #[test]
    fn cross_entropy_values() {
        let ln3 = eval(|t| {
            let x = t.constant(Tensor::zeros(vec![4, 3]));
            cross_entropy(t, x, &[0, 1, 2, 1])
        });
        assert!((ln3 - 3f64.ln()).abs() < 1e-12);
        let half = eval(|t| {
            let x = t.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
            cross_entropy(t, x, &[1])
        });
        assert!((half - 2f64.ln()).abs() < 1e-12);
        let perfect = eval(|t| {
            let x = t.constant(Tensor::new(vec![1, 3], vec![60.0, 0.0, 0.0]).unwrap());
            cross_entropy(t, x, &[0])
        });
        assert!(perfect.abs() < 1e-12);
    }

    #[test]
    fn clamp_prevents_nan() {
        let v = eval(|t| {
            let x = t.constant(Tensor::new(vec![1, 3], vec![0.0, 800.0, 0.0]).unwrap());
            cross_entropy(t, x, &[0])
        });
        assert!((v - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_values() {
        let oracle = 0.1f64.powi(3) * -(0.9f64.ln());
        let v = eval(|t| {
            let x = t.constant(logits_for_pt(0.9));
            focal_loss(t, x, &[0], 3.0)
        });
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 1.05361e-4).abs() < 1e-9);

        let hard = eval(|t| {
            let x = t.constant(logits_for_pt(0.5));
            focal_loss(t, x, &[0], 3.0)
        });
        let ratio = hard / v;
        let want = (0.5f64.powi(3) * 2f64.ln()) / (0.1f64.powi(3) * (10.0f64 / 9.0).ln());
        assert!((ratio - want).abs() / want < 1e-9);
        let ce_ratio = 2f64.ln() / (10.0f64 / 9.0).ln();
        assert!(ratio > ce_ratio);
    }

    #[test]
    fn focal_gamma_zero_is_ce() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1]).unwrap();
        let a = eval(|t| {
            let v = t.constant(x.clone());
            focal_loss(t, v, &[2, 0], 0.0)
        });
        let b = eval(|t| {
            let v = t.constant(x.clone());
            cross_entropy(t, v, &[2, 0])
        });
        assert_eq!(a, b);
    }

    #[test]
    fn unsup_single_pair_and_orthogonal() {
        let one = eval(|t| {
            let a = t.constant(Tensor::new(vec![1, 2], vec![0.3, 0.4]).unwrap());
            let b = t.constant(Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap());
            unsup_contrastive_loss(t, a, b, 0.05)
        });
        assert!(one.abs() < 1e-12);
        let orth = eval(|t| {
            let a = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
            let b = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
            unsup_contrastive_loss(t, a, b, 1.0)
        });
        assert!((orth - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn sup_single_triple() {
        let v = eval(|t| {
            let a = t.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
            let p = t.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
            let n = t.constant(Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap());
            sup_contrastive_loss(t, a, p, n, 1.0)
        });
        assert!((v - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_embedding_fails() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros(vec![1, 2]));
        let b = t.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(unsup_contrastive_loss(&mut t, a, b, 0.05), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn alignment_and_uniformity() {
        let p = vec![0.6, 0.8];
        let same = vec![(p.clone(), p.clone()), (vec![1.0, 0.0], vec![1.0, 0.0])];
        assert_eq!(alignment(&same).unwrap(), 0.0);
        let anti = vec![(vec![1.0, 0.0], vec![-1.0, 0.0])];
        let (a, u) = alignment_uniformity(&anti).unwrap();
        assert!((a - 4.0).abs() < 1e-15);
        assert!((u + 8.0).abs() < 1e-12);
        assert!(uniformity(&[p.as_slice()]).is_err());
        assert!(unit_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_loss_config() {
        let mut c = LossConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = -1.0;
        assert!(c.validate().is_err());
        let c = LossConfig {
            temperature: 0.0,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

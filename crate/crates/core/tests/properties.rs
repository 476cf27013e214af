use proptest::prelude::*;

use sentcse::checkpoint::Checkpoint;
use sentcse::config::TrainConfig;
use sentcse::data::{build_vocab, class_distribution, tokenize, ClassDistribution, Label};
use sentcse::encoder::{encode, mask_tokens, EncoderConfig, EncoderParams, Mode};
use sentcse::eval::ConfusionMatrix;
use sentcse::objectives::{
    alignment, cross_entropy_per_example, focal_per_example, unsup_contrastive_loss, uniformity, unit_normalize,
};
use sentcse::tensor::DropoutSeed;
use sentcse::upsample::make_plan;
use sentcse::{Tape64, Tensor64};

fn label() -> impl Strategy<Value = Label> {
    (0usize..3).prop_map(|i| Label::ALL[i])
}

fn logits_and_gold(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (prop::collection::vec(-20.0f64..20.0, n * 3), prop::collection::vec(0usize..3, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_bounded(pairs in prop::collection::vec((label(), label()), 1..80)) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::from_predictions(&gold, &pred).unwrap();
        prop_assert_eq!(cm.total() as usize, gold.len());
        for c in Label::ALL {
            for v in [cm.precision(c), cm.recall(c), cm.f1(c)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let (p, r) = (cm.precision(c), cm.recall(c));
            prop_assert!(cm.f1(c) <= p.max(r) + 1e-15);
        }
        let f1s = Label::ALL.map(|c| cm.f1(c));
        prop_assert!(cm.macro_f1() <= f1s.iter().cloned().fold(0.0, f64::max) + 1e-15);
        let agree = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
        prop_assert_eq!(cm.accuracy(), agree as f64 / gold.len() as f64);
    }

    #[test]
    fn focal_never_exceeds_cross_entropy((logits, gold) in logits_and_gold(8), gamma in 0.0f64..5.0) {
        let x = Tensor64::new(vec![8, 3], logits).unwrap();
        let mut tape = Tape64::no_grad();
        let v = tape.constant(x);
        let ce = cross_entropy_per_example(&mut tape, v, &gold).unwrap();
        let fl = focal_per_example(&mut tape, v, &gold, gamma).unwrap();
        for (c, f) in tape.value(ce).data().iter().zip(tape.value(fl).data()) {
            prop_assert!(*f >= 0.0 && *f <= *c + 1e-12);
        }
    }

    #[test]
    fn info_nce_is_bounded_by_log_batch(xs in prop::collection::vec(-3.0f64..3.0, 4 * 5)) {
        // With identical views the positive is always the most similar
        // candidate, so the loss stays below ln B.
        let a = Tensor64::new(vec![4, 5], xs).unwrap();
        prop_assume!((0..4).all(|i| a.row(i).iter().any(|v| v.abs() > 1e-3)));
        let mut tape = Tape64::no_grad();
        let x = tape.constant(a.clone());
        let y = tape.constant(a);
        let l = unsup_contrastive_loss(&mut tape, x, y, 0.5).unwrap();
        let v = tape.value(l).item();
        prop_assert!(v > 0.0 && v <= 4f64.ln() + 1e-12);
    }

    #[test]
    fn alignment_and_uniformity_ranges(xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..12)) {
        prop_assume!(xs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
        let unit: Vec<Vec<f64>> = xs.iter().map(|v| unit_normalize(v).unwrap()).collect();
        let pairs: Vec<_> = unit.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        let a = alignment(&pairs).unwrap();
        prop_assert!((0.0..=4.0 + 1e-12).contains(&a));
        let points: Vec<&[f64]> = unit.iter().map(Vec::as_slice).collect();
        let u = uniformity(&points).unwrap();
        prop_assert!((-8.0 - 1e-12..=0.0).contains(&u));
    }

    #[test]
    fn plan_targets_are_uniform(counts in prop::array::uniform3(0usize..50), extra in prop::option::of(0usize..20)) {
        let d = ClassDistribution::from_counts(counts);
        prop_assume!(d.total > 0);
        let max = *counts.iter().max().unwrap();
        let plan = make_plan(&d, extra.map(|e| max + e)).unwrap();
        for i in 0..3 {
            prop_assert_eq!(plan.current[i] + plan.deficit[i], plan.target[i]);
            prop_assert_eq!(plan.target[i], plan.target[0]);
        }
        prop_assert!(plan.deficit.contains(&extra.unwrap_or(0)));
    }

    #[test]
    fn masking_only_touches_real_tokens(rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let texts = ["the food was great", "ok", "service was slow and the staff were rude"];
        let vocab = build_vocab(texts, 1);
        let batch = sentcse::data::encode_texts(&texts, &vocab, 16);
        let m = mask_tokens(&batch, rate, seed);
        for (i, (&before, &after)) in batch.token_ids.iter().zip(&m.batch.token_ids).enumerate() {
            let masked = m.positions.contains(&(i / batch.seq_len, i % batch.seq_len));
            prop_assert_eq!(before != after, masked);
            if masked {
                prop_assert!(batch.attention_mask[i] && before >= sentcse::data::NUM_RESERVED);
            }
        }
        if rate == 0.0 {
            prop_assert!(m.positions.is_empty());
        }
    }

    #[test]
    fn tokenize_is_idempotent_on_joined_tokens(text in "[a-zA-Z ,.!?']{0,40}") {
        let t = tokenize(&text);
        prop_assert_eq!(tokenize(&t.join(" ")), t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>()) {
        let texts = ["the food was great", "service was slow"];
        let vocab = build_vocab(texts, 1);
        let mut cfg = EncoderConfig::new(vocab.len());
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.max_length = 8;
        let encoder = EncoderParams::<f32>::init(cfg, seed).unwrap();
        let ckpt = Checkpoint { vocab: vocab.clone(), encoder, head: None, train: TrainConfig::pretrain() };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes, Some(&vocab.content_hash())).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(back.encoder.store.bit_eq(&ckpt.encoder.store));
    }

    #[test]
    fn eval_encoding_ignores_padding_length(extra in 0usize..6) {
        let texts = ["the food was great", "slow"];
        let vocab = build_vocab(texts, 1);
        let mut cfg = EncoderConfig::new(vocab.len());
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.max_length = 16;
        let enc = EncoderParams::<f64>::init(cfg, 1).unwrap();
        let batch = sentcse::data::encode_texts(&texts, &vocab, 16).trim_padding();
        let padded = batch.with_seq_len(batch.seq_len + extra);
        let pooled = |b| {
            let mut tape = Tape64::no_grad();
            let out = encode(&mut tape, &enc, b, Mode::Eval, DropoutSeed(0)).unwrap();
            tape.value(out.pooled).data().to_vec()
        };
        let (a, b) = (pooled(&batch), pooled(&padded));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn class_distribution_counts_every_row() {
    let rows: Vec<_> = Label::ALL
        .iter()
        .cycle()
        .take(7)
        .map(|&l| sentcse::data::LabeledExample::new("x", l, sentcse::data::Source::Synthetic).unwrap())
        .collect();
    assert_eq!(class_distribution(&rows).counts, [3, 2, 2]);
}

//! Generated sentiment corpora for desk-scale experiments.
//!
//! Sentences are built from templates around one sentiment word. Only part
//! of each class's sentiment lexicon (the "seen" words) appears in labeled
//! training data; test data draws from the whole lexicon. The unlabeled
//! corpus pairs sentiment words of the same polarity, so a pretrained
//! encoder can relate unseen words to seen ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Label, LabeledExample, Source};

const POSITIVE: &[&str] = &[
    "great", "excellent", "wonderful", "superb", "fantastic", "delightful", "amazing", "lovely",
    "brilliant", "outstanding", "terrific", "marvelous", "splendid", "charming", "pleasant", "fabulous",
    "stellar", "impressive", "exceptional", "perfect", "glorious", "magnificent", "sublime", "heavenly",
    "superior", "awesome", "gorgeous", "divine", "exquisite", "phenomenal",
];
const NEGATIVE: &[&str] = &[
    "awful", "terrible", "horrible", "dreadful", "disgusting", "lousy", "miserable", "atrocious",
    "appalling", "abysmal", "pathetic", "dismal", "nasty", "rotten", "shoddy", "wretched",
    "horrid", "ghastly", "vile", "painful", "unbearable", "insulting", "inedible", "filthy",
    "gross", "hideous", "awkward", "broken", "useless", "revolting",
];
const NEUTRAL: &[&str] = &[
    "okay", "average", "ordinary", "typical", "standard", "acceptable", "moderate", "usual",
    "regular", "plain", "fair", "adequate", "middling", "unremarkable", "passable", "common",
    "conventional", "routine", "normal", "so-so", "medium", "tolerable", "neutral", "mediocre",
    "basic", "simple", "expected", "modest", "generic", "everyday",
];
const NOUNS: &[&str] = &[
    "food", "service", "staff", "pizza", "pasta", "burger", "coffee", "dessert", "soup", "salad",
    "room", "bed", "view", "hotel", "lobby", "pool", "movie", "plot", "acting", "soundtrack",
    "ending", "book", "story", "writing", "phone", "battery", "screen", "camera", "laptop", "keyboard",
    "price", "delivery", "packaging", "menu", "music", "waiter", "manager", "decor", "wine", "bread",
    "steak", "sushi", "noodles", "tea", "juice", "breakfast", "lunch", "dinner", "buffet", "bar",
    "kitchen", "bathroom", "shower", "parking", "checkin", "receptionist", "driver", "flight", "seat", "luggage",
    "show", "episode", "series", "director", "script", "cast", "novel", "album", "song", "concert",
    "tablet", "charger", "speaker", "headphones", "printer", "mouse", "monitor", "software", "app", "update",
    "store", "shop", "mall", "market", "gym", "salon", "clinic", "dentist", "museum", "park",
    "beach", "room service", "balcony", "elevator", "hallway", "carpet", "towels", "pillow", "blanket", "minibar",
    "airline", "train", "bus", "taxi", "ticket", "gate", "lounge", "cabin", "crew", "snack",
    "burrito", "taco", "curry", "ramen", "sandwich", "bagel", "muffin", "pancakes", "omelette", "fries",
    "cocktail", "beer", "smoothie", "latte", "espresso", "cake", "pie", "cookie", "icecream", "chocolate",
    "watch", "camera lens", "drone", "console", "controller", "router", "modem", "cable", "adapter", "case",
    "jacket", "shoes", "dress", "shirt", "backpack", "wallet", "umbrella", "sofa", "mattress", "lamp",
    "vacuum", "blender", "toaster", "microwave", "fridge", "oven", "kettle", "fan", "heater", "dishwasher",
    "theater", "stadium", "festival", "gallery", "zoo", "aquarium", "library", "bakery", "pharmacy", "garage",
    "plumber", "mechanic", "tutor", "lawyer", "landlord", "agent", "cashier", "chef", "barista", "bartender",
    "podcast", "game", "trailer", "sequel", "documentary", "comedy", "thriller", "musical", "opera", "ballet",
    "course", "lecture", "workshop", "seminar", "tour", "guide", "cruise", "resort", "cottage", "campsite",
];
const OPENERS: &[&str] = &["", "honestly", "overall", "frankly", "well", "so", "today", "again"];
const SUBJECTS: &[&str] = &["i", "we", "my friend", "my wife", "my husband", "the kids", "everyone"];
const VERBS: &[&str] = &["thought", "found", "felt", "said", "agreed"];
const INTENS: &[&str] = &["", "really", "quite", "pretty", "very", "rather", "truly"];
const TAILS: &[&str] = &["", "to be honest", "this time", "as expected", "for the price", "last night", "in my opinion"];

fn lexicon(label: Label) -> &'static [&'static str] {
    match label {
        Label::Negative => NEGATIVE,
        Label::Neutral => NEUTRAL,
        Label::Positive => POSITIVE,
    }
}

/// Sentiment words per class, in label order.
pub fn lexicons() -> [&'static [&'static str]; 3] {
    [NEGATIVE, NEUTRAL, POSITIVE]
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn join(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

/// One sentence carrying `word` as its only sentiment cue.
fn labeled_sentence(rng: &mut ChaCha8Rng, word: &str) -> String {
    let noun = pick(rng, NOUNS);
    let intens = pick(rng, INTENS);
    let opener = pick(rng, OPENERS);
    let tail = pick(rng, TAILS);
    match rng.gen_range(0..5) {
        0 => join(&[opener, "the", noun, "was", intens, word, tail]),
        1 => join(&[pick(rng, SUBJECTS), pick(rng, VERBS), "the", noun, intens, word, tail]),
        2 => join(&[opener, "a", intens, word, noun, tail]),
        3 => join(&["the", noun, "here", "is", intens, word]),
        _ => join(&[opener, "what", "a", word, noun, tail]),
    }
}

fn unlabeled_sentence(rng: &mut ChaCha8Rng, w: [&str; 3]) -> String {
    let noun = pick(rng, NOUNS);
    let intens = pick(rng, INTENS);
    match rng.gen_range(0..4) {
        0 => join(&["the", noun, "was", intens, w[0], ",", w[1], "and", w[2]]),
        1 => join(&[w[0], ",", w[1], "and", w[2], noun]),
        2 => join(&[pick(rng, SUBJECTS), pick(rng, VERBS), "the", noun, w[0], ",", intens, w[1], ",", w[2]]),
        _ => join(&["not", "just", w[0], "but", intens, w[1], "and", w[2]]),
    }
}

#[derive(Clone, Debug)]
pub struct SentimentCorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_unlabeled: usize,
    /// Sentiment words used per class.
    pub words_per_class: usize,
    /// How many of those occur in labeled training data.
    pub seen_per_class: usize,
    pub seed: u64,
}

impl Default for SentimentCorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            n_unlabeled: 4000,
            words_per_class: 12,
            seen_per_class: 9,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SentimentCorpus {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub unlabeled: Vec<String>,
}

/// Balanced three-class corpus; see the module docs.
///
/// # Panics
/// If `seen_per_class > words_per_class` or `words_per_class` exceeds the
/// lexicon size (30).
pub fn sentiment_corpus(cfg: &SentimentCorpusConfig) -> SentimentCorpus {
    assert!(cfg.seen_per_class <= cfg.words_per_class && cfg.words_per_class <= POSITIVE.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labeled = |rng: &mut ChaCha8Rng, n: usize, seen_only: bool| -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let label = Label::ALL[i % 3];
                let lex = &lexicon(label)[..cfg.words_per_class];
                let pool = if seen_only { &lex[..cfg.seen_per_class] } else { lex };
                let word = pick(rng, pool);
                let text = labeled_sentence(rng, word);
                LabeledExample::new(text, label, Source::Synthetic).expect("non-empty")
            })
            .collect()
    };
    let mut train = labeled(&mut rng, cfg.n_train, true);
    train.shuffle(&mut rng);
    let mut test = labeled(&mut rng, cfg.n_test, false);
    test.shuffle(&mut rng);
    let unlabeled = (0..cfg.n_unlabeled)
        .map(|i| {
            let lex = &lexicon(Label::ALL[i % 3])[..cfg.words_per_class];
            let w = [pick(&mut rng, lex), pick(&mut rng, lex), pick(&mut rng, lex)];
            unlabeled_sentence(&mut rng, w)
        })
        .collect();
    SentimentCorpus { train, test, unlabeled }
}

fn clause(rng: &mut ChaCha8Rng, lexicon: &[&str]) -> String {
    let word = pick(rng, lexicon);
    join(&["the", pick(rng, NOUNS), "was", pick(rng, INTENS), word])
}

/// Positive-majority, negative-minority set in the three-class label space.
///
/// Majority rows hold one or two positive clauses. Minority rows pair a
/// positive clause with a negative one, so the majority cue is present in
/// every minority row and only the negative word decides the label. Train
/// has `n_major` and `n_major / ratio` rows; test has `n_test_per_class`
/// of each.
pub fn imbalanced_corpus(
    n_major: usize,
    ratio: usize,
    n_test_per_class: usize,
    seed: u64,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |label: Label, n: usize| -> Vec<LabeledExample> {
        (0..n)
            .map(|_| {
                let rng = &mut rng;
                let first = clause(rng, POSITIVE);
                let conj = pick(rng, &["and", "but", "while", ","]);
                let text = match label {
                    Label::Negative => {
                        let second = clause(rng, NEGATIVE);
                        if rng.gen_bool(0.5) {
                            format!("{first} {conj} {second}")
                        } else {
                            format!("{second} {conj} {first}")
                        }
                    }
                    _ if rng.gen_bool(0.5) => first,
                    _ => format!("{first} {conj} {}", clause(rng, POSITIVE)),
                };
                LabeledExample::new(text, label, Source::Synthetic).expect("non-empty")
            })
            .collect()
    };
    let mut train = make(Label::Positive, n_major);
    train.extend(make(Label::Negative, (n_major / ratio.max(1)).max(1)));
    let mut test = make(Label::Positive, n_test_per_class);
    test.extend(make(Label::Negative, n_test_per_class));
    train.shuffle(&mut rng);
    (train, test)
}

/// Unlabeled template sentences.
pub fn toy_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let word = pick(&mut rng, lexicon(Label::ALL[i % 3]));
            labeled_sentence(&mut rng, word)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, class_distribution};

    #[test]
    fn sizes_balance_and_vocabulary() {
        let c = sentiment_corpus(&SentimentCorpusConfig::default());
        assert_eq!((c.train.len(), c.test.len()), (2000, 500));
        let d = class_distribution(&c.train);
        assert!(d.counts.iter().all(|&k| (666..=667).contains(&k)));
        let texts = c.train.iter().chain(&c.test).map(|e| e.text.as_str()).chain(c.unlabeled.iter().map(String::as_str));
        let v = build_vocab(texts, 1);
        assert!((250..350).contains(&v.len()), "vocab {}", v.len());
        let unseen = POSITIVE[10];
        assert!(!c.train.iter().any(|e| e.text.split(' ').any(|w| w == unseen)));
        assert!(c.unlabeled.iter().any(|s| s.split(' ').any(|w| w == unseen)));
    }

    #[test]
    fn deterministic() {
        let cfg = SentimentCorpusConfig::default();
        assert_eq!(sentiment_corpus(&cfg).test, sentiment_corpus(&cfg).test);
        let (a, _) = imbalanced_corpus(100, 10, 20, 3);
        assert_eq!(a, imbalanced_corpus(100, 10, 20, 3).0);
        assert_eq!(class_distribution(&a).counts, [10, 0, 100]);
    }
}

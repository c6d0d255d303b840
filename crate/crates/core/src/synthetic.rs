//! Small intent-like corpora with a known hard subset.
//!
//! Each class draws words from its own Zipf-distributed vocabulary plus a
//! pool of shared filler words. A fraction of samples is "mixed": half of
//! their class words come from a different class, which puts them between
//! clusters.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::data::RawRecord;
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub class_words: usize,
    pub shared_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a shared filler word.
    pub shared_rate: f64,
    pub mixed_fraction: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            per_class: 60,
            class_words: 30,
            shared_words: 20,
            min_len: 6,
            max_len: 12,
            shared_rate: 0.3,
            mixed_fraction: 0.1,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<RawRecord>,
    /// `mixed[i]` is true when `records[i]` borrows words from another class.
    pub mixed: Vec<bool>,
}

pub fn class_label(class: usize) -> String {
    format!("intent_{class:02}")
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-s))).expect("non-empty vocabulary")
}

/// Records are grouped by class, classes in order.
pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    assert!(cfg.classes >= 2 && cfg.class_words > 0 && cfg.min_len > 0);
    assert!(cfg.min_len <= cfg.max_len);
    let class_dist = zipf(cfg.class_words, cfg.zipf_exponent);
    let shared_dist = (cfg.shared_words > 0).then(|| zipf(cfg.shared_words, cfg.zipf_exponent));
    let mixed_per_class = (cfg.mixed_fraction * cfg.per_class as f64).round() as usize;

    let mut records = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut mixed = Vec::with_capacity(records.capacity());
    for class in 0..cfg.classes {
        let mut rng = derived_rng(cfg.seed, "synthetic", class as u64, 0);
        for i in 0..cfg.per_class {
            let is_mixed = i < mixed_per_class;
            let other = (class + rng.random_range(1..cfg.classes)) % cfg.classes;
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let mut own_turn = !is_mixed;
            let words: Vec<String> = (0..len)
                .map(|_| match &shared_dist {
                    Some(d) if rng.random_bool(cfg.shared_rate) => format!("s{}", d.sample(&mut rng)),
                    _ => {
                        let source = if is_mixed && !own_turn { other } else { class };
                        own_turn = !own_turn;
                        format!("c{source}w{}", class_dist.sample(&mut rng))
                    }
                })
                .collect();
            records.push(RawRecord::new(words.join(" "), class_label(class)));
            mixed.push(is_mixed);
        }
    }
    SyntheticCorpus { records, mixed }
}

/// A trivially separable set: every sample of class `c` is the single word
/// `word<c>` repeated.
pub fn separable(classes: usize, per_class: usize) -> Vec<RawRecord> {
    (0..classes)
        .flat_map(|c| {
            (0..per_class).map(move |i| {
                RawRecord::new(vec![format!("word{c}"); 1 + i % 3].join(" "), class_label(c))
            })
        })
        .collect()
}

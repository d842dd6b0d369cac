//! Seeded Zipf-distributed corpora for tests and benchmarks.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, NormalizationPolicy};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZipfCorpusConfig {
    pub unique_transcripts: usize,
    pub labels: usize,
    pub vocabulary: usize,
    /// Power-law exponent of token frequencies.
    pub exponent: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Each transcript is repeated between 1 and this many times, with a
    /// Zipf-shaped repeat count.
    pub max_copies: usize,
    /// Exponent of the repeat-count distribution.
    pub copies_exponent: f64,
    pub seed: u64,
}

impl Default for ZipfCorpusConfig {
    fn default() -> Self {
        Self {
            unique_transcripts: 5_000,
            labels: 50,
            vocabulary: 2_000,
            exponent: 1.1,
            min_tokens: 3,
            max_tokens: 9,
            max_copies: 100,
            copies_exponent: 1.0,
            seed: 0,
        }
    }
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Generates `unique_transcripts` distinct transcripts of Zipf-drawn tokens
/// (`w0`, `w1`, ...), each labeled with one of `labels` intents. Every label
/// gets its own token ranking so intents differ in vocabulary.
pub fn zipf_corpus(cfg: &ZipfCorpusConfig) -> Result<Dataset> {
    if cfg.labels == 0 || cfg.vocabulary == 0 || cfg.min_tokens == 0 {
        return Err(Error::invalid(
            "labels, vocabulary and min_tokens must be positive",
        ));
    }
    if cfg.min_tokens > cfg.max_tokens || cfg.max_copies == 0 {
        return Err(Error::invalid("invalid token range or copy count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tokens = WeightedIndex::new(zipf_weights(cfg.vocabulary, cfg.exponent))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let label_pick = WeightedIndex::new(zipf_weights(cfg.labels, 0.5))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let copies = WeightedIndex::new(zipf_weights(cfg.max_copies, cfg.copies_exponent))
        .map_err(|e| Error::invalid(e.to_string()))?;
    // rank -> token id, one rotation per label
    let offsets: Vec<usize> = (0..cfg.labels)
        .map(|_| rng.gen_range(0..cfg.vocabulary))
        .collect();

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut attempts = 0usize;
    let budget = cfg.unique_transcripts.saturating_mul(100).max(1_000);
    while seen.len() < cfg.unique_transcripts {
        attempts += 1;
        if attempts > budget {
            return Err(Error::invalid(format!(
                "could not draw {} distinct transcripts",
                cfg.unique_transcripts
            )));
        }
        let label = label_pick.sample(&mut rng);
        let len = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
        let words: Vec<String> = (0..len)
            .map(|_| {
                format!(
                    "w{}",
                    (tokens.sample(&mut rng) + offsets[label]) % cfg.vocabulary
                )
            })
            .collect();
        let text = words.join(" ");
        if !seen.insert(text.clone()) {
            continue;
        }
        for _ in 0..=copies.sample(&mut rng) {
            records.push((
                records.len().to_string(),
                text.clone(),
                format!("intent{label}"),
            ));
        }
    }
    Dataset::from_records(records, NormalizationPolicy::default(), "<zipf>")
}

//! Vocabulary size, unique-transcript count and n-gram entropy.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};

/// A token tuple of fixed length.
pub type NGram = Vec<String>;

/// The orders averaged into [`LexicalMeasures::average_entropy`].
pub const ENTROPY_ORDERS: [usize; 3] = [1, 2, 3];

/// Which examples contribute to frequency-based measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    /// Every example counts once per occurrence.
    #[serde(rename = "all")]
    AllExamples,
    /// Each distinct token sequence counts once.
    #[default]
    #[serde(rename = "unique")]
    UniqueTranscripts,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::AllExamples => "all",
            Scope::UniqueTranscripts => "unique",
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all-examples" => Ok(Scope::AllExamples),
            "unique" | "unique-transcripts" => Ok(Scope::UniqueTranscripts),
            other => Err(Error::invalid(format!("unknown scope {other:?}"))),
        }
    }
}

/// Occurrence counts of the n-grams of one order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramProfile {
    order: usize,
    counts: BTreeMap<NGram, u64>,
    total: u64,
}

impl NGramProfile {
    /// Builds a profile directly from counts. Zero counts are discarded.
    pub fn from_counts(order: usize, counts: impl IntoIterator<Item = (NGram, u64)>) -> Self {
        let mut map = BTreeMap::new();
        for (gram, count) in counts {
            assert_eq!(gram.len(), order, "n-gram length must equal the order");
            if count > 0 {
                *map.entry(gram).or_insert(0) += count;
            }
        }
        let total = map.values().sum();
        Self {
            order,
            counts: map,
            total,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Counts keyed by n-gram, in lexicographic n-gram order.
    pub fn counts(&self) -> &BTreeMap<NGram, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn unique_count(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, gram: &[String]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }
}

/// Examples that contribute under `scope`: all of them, or the first
/// occurrence of each distinct token sequence.
pub(crate) fn scoped_examples(d: &Dataset, scope: Scope) -> Vec<&Example> {
    match scope {
        Scope::AllExamples => d.examples().iter().collect(),
        Scope::UniqueTranscripts => {
            let mut seen: HashSet<&[String]> = HashSet::new();
            d.examples()
                .iter()
                .filter(|e| seen.insert(e.tokens.as_slice()))
                .collect()
        }
    }
}

/// Number of distinct tokens across all transcripts.
pub fn vocabulary_size(d: &Dataset) -> usize {
    d.examples()
        .iter()
        .flat_map(|e| e.tokens.iter().map(String::as_str))
        .collect::<HashSet<_>>()
        .len()
}

/// Number of distinct token sequences, ignoring labels.
pub fn unique_transcript_count(d: &Dataset) -> usize {
    d.examples()
        .iter()
        .map(|e| e.tokens.as_slice())
        .collect::<HashSet<_>>()
        .len()
}

/// Sliding-window n-grams inside each transcript; no padding and no windows
/// across example boundaries.
pub fn ngram_profile(d: &Dataset, n: usize, scope: Scope) -> Result<NGramProfile> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let mut counts: BTreeMap<NGram, u64> = BTreeMap::new();
    for example in scoped_examples(d, scope) {
        for window in example.tokens.windows(n) {
            match counts.get_mut(window) {
                Some(c) => *c += 1,
                None => {
                    counts.insert(window.to_vec(), 1);
                }
            }
        }
    }
    let total = counts.values().sum();
    Ok(NGramProfile {
        order: n,
        counts,
        total,
    })
}

/// Shannon entropy in bits of the empirical n-gram distribution.
///
/// Evaluated as `log2(T) - (1/T) * sum(c * log2(c))` over the counts `c`
/// with total `T`, which is exact at both bounds.
pub fn ngram_entropy(p: &NGramProfile) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::UndefinedEntropy);
    }
    if p.counts.len() == 1 {
        return Ok(0.0);
    }
    let total = p.total as f64;
    let weighted: f64 = p
        .counts
        .values()
        .map(|&c| {
            let c = c as f64;
            c * c.log2()
        })
        .sum();
    Ok((total.log2() - weighted / total).max(0.0))
}

/// Lexical block of a complexity report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexicalMeasures {
    pub scope: Scope,
    pub vocabulary_size: usize,
    pub unique_transcripts: usize,
    /// Entropy in bits keyed by n-gram order.
    pub entropy_by_order: BTreeMap<usize, f64>,
    pub average_entropy: f64,
    /// Orders whose profile was empty; they contribute 0 to the average.
    pub empty_orders: Vec<usize>,
}

impl LexicalMeasures {
    pub fn entropy(&self, order: usize) -> Option<f64> {
        self.entropy_by_order.get(&order).copied()
    }
}

/// Vocabulary, unique transcripts and the entropies of orders 1 to 3 with
/// their mean.
pub fn lexical_measures(d: &Dataset, scope: Scope) -> Result<LexicalMeasures> {
    if d.is_empty() {
        return Err(Error::invalid("lexical measures need a non-empty dataset"));
    }
    let per_order: Vec<(usize, Option<f64>)> = ENTROPY_ORDERS
        .par_iter()
        .map(|&n| {
            let profile = ngram_profile(d, n, scope)?;
            let h = match ngram_entropy(&profile) {
                Ok(h) => Some(h),
                Err(Error::UndefinedEntropy) => None,
                Err(e) => return Err(e),
            };
            Ok((n, h))
        })
        .collect::<Result<_>>()?;

    let mut entropy_by_order = BTreeMap::new();
    let mut empty_orders = Vec::new();
    for (n, h) in per_order {
        if h.is_none() {
            empty_orders.push(n);
        }
        entropy_by_order.insert(n, h.unwrap_or(0.0));
    }
    let average_entropy = entropy_by_order.values().sum::<f64>() / entropy_by_order.len() as f64;
    Ok(LexicalMeasures {
        scope,
        vocabulary_size: vocabulary_size(d),
        unique_transcripts: unique_transcript_count(d),
        entropy_by_order,
        average_entropy,
        empty_orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NormalizationPolicy;
    use proptest::prelude::*;

    fn ds(texts: &[&str]) -> Dataset {
        let pairs: Vec<(&str, &str)> = texts.iter().map(|t| (*t, "L")).collect();
        Dataset::from_pairs(&pairs, NormalizationPolicy::default()).unwrap()
    }

    fn gram(tokens: &[&str]) -> NGram {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    /// Direct evaluation of -sum p log2 p.
    fn entropy_oracle(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                p * p.log2()
            })
            .sum::<f64>()
    }

    #[test]
    fn vocabulary_and_unique_transcripts() {
        let d = Dataset::from_pairs(&[("a b", "L1"), ("b a", "L2")], Default::default()).unwrap();
        assert_eq!(vocabulary_size(&d), 2);
        assert_eq!(unique_transcript_count(&d), 2);
        assert_eq!(unique_transcript_count(&ds(&["x y", "x y", "x y"])), 1);
    }

    #[test]
    fn profile_windows_inside_examples() {
        let p = ngram_profile(&ds(&["a b c"]), 2, Scope::AllExamples).unwrap();
        assert_eq!(p.total(), 2);
        assert_eq!(p.count(&gram(&["a", "b"])), 1);
        assert_eq!(p.count(&gram(&["b", "c"])), 1);
        assert_eq!(p.unique_count(), 2);

        assert!(ngram_profile(&ds(&["a"]), 3, Scope::AllExamples)
            .unwrap()
            .is_empty());
        assert!(ngram_profile(&ds(&["a"]), 0, Scope::AllExamples).is_err());
    }

    #[test]
    fn profile_scope_controls_duplicate_counting() {
        let d = ds(&["a b", "a b", "a c"]);
        let all = ngram_profile(&d, 1, Scope::AllExamples).unwrap();
        assert_eq!(all.count(&gram(&["a"])), 3);
        assert_eq!(all.count(&gram(&["b"])), 2);
        assert_eq!(all.count(&gram(&["c"])), 1);
        assert_eq!(all.total(), 6);

        let unique = ngram_profile(&d, 1, Scope::UniqueTranscripts).unwrap();
        assert_eq!(unique.count(&gram(&["a"])), 2);
        assert_eq!(unique.total(), 4);
    }

    #[test]
    fn entropy_bounds_and_hand_value() {
        let single = NGramProfile::from_counts(1, [(gram(&["a"]), 7)]);
        assert_eq!(ngram_entropy(&single).unwrap(), 0.0);

        let distinct =
            NGramProfile::from_counts(1, ["a", "b", "c", "d"].iter().map(|t| (gram(&[t]), 1)));
        assert_eq!(ngram_entropy(&distinct).unwrap(), 2.0);

        // {a:2, b:1, c:1, d:2}: -(2 * 1/3 log2 1/3 + 2 * 1/6 log2 1/6)
        let mixed = NGramProfile::from_counts(
            1,
            [("a", 2), ("b", 1), ("c", 1), ("d", 2)]
                .iter()
                .map(|(t, c)| (gram(&[t]), *c)),
        );
        let h = ngram_entropy(&mixed).unwrap();
        assert!((h - 1.9183).abs() < 1e-4, "{h}");
        assert!((h - entropy_oracle(&[2, 1, 1, 2])).abs() < 1e-12);
    }

    #[test]
    fn empty_profile_entropy_is_undefined() {
        let empty = NGramProfile::from_counts(2, std::iter::empty());
        assert!(matches!(
            ngram_entropy(&empty),
            Err(Error::UndefinedEntropy)
        ));
    }

    #[test]
    fn single_example_measures() {
        let m = lexical_measures(&ds(&["a b c"]), Scope::UniqueTranscripts).unwrap();
        assert!((m.entropy(1).unwrap() - 3f64.log2()).abs() < 1e-12);
        assert!((m.entropy(2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.entropy(3).unwrap(), 0.0);
        let mean = (3f64.log2() + 1.0) / 3.0;
        assert!((m.average_entropy - mean).abs() < 1e-12);
        assert!(m.empty_orders.is_empty());
    }

    #[test]
    fn short_transcripts_flag_empty_orders() {
        let m = lexical_measures(&ds(&["a b", "c"]), Scope::AllExamples).unwrap();
        assert_eq!(m.empty_orders, vec![3]);
        assert_eq!(m.entropy(3), Some(0.0));
    }

    #[test]
    fn scope_parses() {
        assert_eq!("all".parse::<Scope>().unwrap(), Scope::AllExamples);
        assert_eq!("unique".parse::<Scope>().unwrap(), Scope::UniqueTranscripts);
        assert!("both".parse::<Scope>().is_err());
    }

    fn corpus() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-e]( [a-e]){0,4}", 1..15)
    }

    proptest! {
        #[test]
        fn entropy_within_bounds(counts in prop::collection::vec(1u64..20, 1..30)) {
            let p = NGramProfile::from_counts(
                1,
                counts.iter().enumerate().map(|(i, &c)| (vec![format!("t{i}")], c)),
            );
            let h = ngram_entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (counts.len() as f64).log2() + 1e-12);
            prop_assert!((h - entropy_oracle(&counts)).abs() < 1e-9);
        }

        #[test]
        fn measures_ignore_example_order(texts in corpus(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut shuffled = refs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for scope in [Scope::AllExamples, Scope::UniqueTranscripts] {
                let a = lexical_measures(&ds(&refs), scope).unwrap();
                let b = lexical_measures(&ds(&shuffled), scope).unwrap();
                prop_assert_eq!(a.vocabulary_size, b.vocabulary_size);
                prop_assert_eq!(a.unique_transcripts, b.unique_transcripts);
                for n in ENTROPY_ORDERS {
                    prop_assert!((a.entropy(n).unwrap() - b.entropy(n).unwrap()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn unique_scope_ignores_duplication(texts in corpus(), pick in any::<prop::sample::Index>()) {
            let mut refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let base = lexical_measures(&ds(&refs), Scope::UniqueTranscripts).unwrap();
            refs.push(refs[pick.index(refs.len())]);
            let dup = lexical_measures(&ds(&refs), Scope::UniqueTranscripts).unwrap();
            prop_assert_eq!(base, dup);
        }

        #[test]
        fn merging_disjoint_vocabularies(left in corpus(), right in corpus()) {
            let left: Vec<String> = left.iter().map(|t| t.to_string()).collect();
            let right: Vec<String> = right
                .iter()
                .map(|t| t.split(' ').map(|w| format!("z{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let l = ds(&left.iter().map(String::as_str).collect::<Vec<_>>());
            let r = ds(&right.iter().map(String::as_str).collect::<Vec<_>>());
            let merged_texts: Vec<&str> = left.iter().chain(right.iter()).map(String::as_str).collect();
            let m = ds(&merged_texts);
            for scope in [Scope::AllExamples, Scope::UniqueTranscripts] {
                let (lm, rm, mm) = (
                    lexical_measures(&l, scope).unwrap(),
                    lexical_measures(&r, scope).unwrap(),
                    lexical_measures(&m, scope).unwrap(),
                );
                // brute-force recount of the merged vocabulary
                let vocab: HashSet<&str> = merged_texts.iter().flat_map(|t| t.split(' ')).collect();
                prop_assert_eq!(mm.vocabulary_size, vocab.len());
                prop_assert!(mm.vocabulary_size >= lm.vocabulary_size.max(rm.vocabulary_size));
                let h1 = |x: &LexicalMeasures| x.entropy(1).unwrap();
                prop_assert!(h1(&mm) + 1e-12 >= h1(&lm).max(h1(&rm)));
            }
        }
    }
}

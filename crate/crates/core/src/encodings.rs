//! Per-example transcript encodings: a collapsed-Gibbs LDA topic model fitted
//! in-process, and embeddings read from an external file.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

/// One real vector per analyzed example, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    dimension: usize,
    encoder_tag: String,
}

impl EmbeddingMatrix {
    /// Builds a matrix from rows. Every row must have the same, non-zero
    /// length and only finite entries.
    pub fn from_rows(
        ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        encoder_tag: impl Into<String>,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dimension = rows.first().map_or(0, Vec::len);
        if dimension == 0 {
            return Err(Error::invalid("embedding matrix needs at least one column"));
        }
        let mut values = Vec::with_capacity(rows.len() * dimension);
        for (line, row) in rows.iter().enumerate() {
            if row.len() != dimension {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: dimension,
                    found: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    line,
                    value: v.to_string(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            ids,
            values,
            dimension,
            encoder_tag: encoder_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn encoder_tag(&self) -> &str {
        &self.encoder_tag
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dimension)
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// `1 - u.v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector {
            id: if uu == 0.0 { "u" } else { "v" }.into(),
        });
    }
    Ok(cosine_from_parts(dot(u, v), uu, vv))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Shared by [`cosine_distance`] and the pairwise matrix so both agree bit
/// for bit. `sqrt(uu * vv)` equals `uu` exactly when `u == v`.
pub(crate) fn cosine_from_parts(uv: f64, uu: f64, vv: f64) -> f64 {
    (1.0 - uv / (uu * vv).sqrt()).clamp(0.0, 2.0)
}

/// Reads `id<TAB>v1,v2,...` lines and aligns them to the examples of `d`.
/// Ids in the file that are not in `d` are ignored.
pub fn load_embeddings(path: &Path, d: &Dataset) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: path.into(),
        line,
        reason,
    };
    let mut by_id: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut dimension: Option<usize> = None;
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, vector) = raw
            .split_once('\t')
            .ok_or_else(|| malformed(line, "expected id<TAB>values".into()))?;
        let mut row = Vec::new();
        for token in vector.split(',') {
            let token = token.trim();
            let value: f64 = token
                .parse()
                .map_err(|_| malformed(line, format!("cannot parse {token:?} as a number")))?;
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    line,
                    value: token.into(),
                });
            }
            row.push(value);
        }
        let expected = *dimension.get_or_insert(row.len());
        if row.len() != expected {
            return Err(Error::DimensionMismatch {
                line,
                expected,
                found: row.len(),
            });
        }
        if by_id.insert(id, row).is_some() {
            return Err(malformed(line, format!("duplicate id {id:?}")));
        }
    }
    let mut rows = Vec::with_capacity(d.len());
    for example in d.examples() {
        let row = by_id
            .get(example.id.as_str())
            .ok_or_else(|| Error::MissingEmbedding {
                id: example.id.clone(),
            })?;
        rows.push(row.clone());
    }
    EmbeddingMatrix::from_rows(d.ids(), rows, format!("external:{}", path.display()))
}

/// Hyper-parameters of the topic model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topic_count: usize,
    pub doc_topic_prior: f64,
    pub topic_word_prior: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    /// K = max(distinct labels, 8), alpha = 50/K, beta = 0.01, 500 sweeps.
    pub fn defaults_for(d: &Dataset, seed: u64) -> Self {
        let topic_count = d.distinct_label_count().max(8);
        Self::with_topics(topic_count, seed)
    }

    pub fn with_topics(topic_count: usize, seed: u64) -> Self {
        Self {
            topic_count,
            doc_topic_prior: 50.0 / topic_count as f64,
            topic_word_prior: 0.01,
            iterations: 500,
            seed,
        }
    }

    pub fn tag(&self) -> String {
        format!(
            "lda-K{}-a{}-b{}-i{}-s{}",
            self.topic_count,
            self.doc_topic_prior,
            self.topic_word_prior,
            self.iterations,
            self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        if self.topic_count < 2 {
            return Err(Error::invalid("LDA needs at least 2 topics"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("LDA needs at least one Gibbs sweep"));
        }
        if !(self.doc_topic_prior > 0.0 && self.doc_topic_prior.is_finite())
            || !(self.topic_word_prior > 0.0 && self.topic_word_prior.is_finite())
        {
            return Err(Error::invalid("LDA priors must be positive and finite"));
        }
        Ok(())
    }
}

/// A fitted topic model.
///
/// Training documents are the distinct token sequences of the dataset, so
/// two examples with equal tokens always get the same encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    params: LdaParams,
    vocabulary: BTreeMap<String, usize>,
    /// `topic_word_counts[k][w]`: tokens of word `w` assigned to topic `k`.
    topic_word_counts: Vec<Vec<u64>>,
    topic_totals: Vec<u64>,
    /// Final-sweep topic counts of each training document.
    document_topics: BTreeMap<Vec<String>, Vec<u64>>,
    degenerate: bool,
}

impl LdaModel {
    pub fn params(&self) -> &LdaParams {
        &self.params
    }

    pub fn topic_count(&self) -> usize {
        self.params.topic_count
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn topic_word_counts(&self) -> &[Vec<u64>] {
        &self.topic_word_counts
    }

    /// True when the vocabulary was smaller than the topic count.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn tag(&self) -> String {
        self.params.tag()
    }

    fn word_weight(&self, topic: usize, word: usize) -> f64 {
        let vocab = self.vocabulary.len() as f64;
        let beta = self.params.topic_word_prior;
        (self.topic_word_counts[topic][word] as f64 + beta)
            / (self.topic_totals[topic] as f64 + vocab * beta)
    }

    /// Topic counts for a document that was not part of training, sampled
    /// against the fixed topic-word counts. The sampler is re-seeded per
    /// document so the result depends only on the tokens.
    fn fold_in(&self, words: &[usize]) -> Vec<u64> {
        let k = self.topic_count();
        let alpha = self.params.doc_topic_prior;
        let mut counts = vec![0u64; k];
        if words.is_empty() {
            return counts;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ FOLD_IN_SALT);
        let mut assignment: Vec<usize> = words.iter().map(|_| rng.gen_range(0..k)).collect();
        for &z in &assignment {
            counts[z] += 1;
        }
        let mut weights = vec![0.0; k];
        for _ in 0..self.params.iterations {
            for (i, &w) in words.iter().enumerate() {
                counts[assignment[i]] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (counts[t] as f64 + alpha) * self.word_weight(t, w);
                }
                let z = sample_index(&weights, &mut rng);
                assignment[i] = z;
                counts[z] += 1;
            }
        }
        counts
    }
}

const FOLD_IN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Fits LDA by collapsed Gibbs sampling over token-topic assignments.
///
/// Runs on the calling thread; the result is fully determined by `params`
/// and the dataset's token sequences.
pub fn fit_lda(d: &Dataset, params: LdaParams) -> Result<LdaModel> {
    params.validate()?;
    if d.is_empty() {
        return Err(Error::invalid("cannot fit LDA on an empty dataset"));
    }
    let k = params.topic_count;
    let alpha = params.doc_topic_prior;
    let beta = params.topic_word_prior;

    let mut distinct: Vec<&[String]> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for e in d.examples() {
        if seen.insert(e.tokens.as_slice()) {
            distinct.push(&e.tokens);
        }
    }
    let vocabulary: BTreeMap<String, usize> = {
        let words: std::collections::BTreeSet<&String> =
            distinct.iter().flat_map(|doc| doc.iter()).collect();
        words
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect()
    };
    let vocab = vocabulary.len();
    let degenerate = vocab < k;
    if degenerate {
        log::warn!("LDA vocabulary of {vocab} words is smaller than {k} topics");
    }
    let docs: Vec<Vec<usize>> = distinct
        .iter()
        .map(|doc| doc.iter().map(|w| vocabulary[w]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut topic_word = vec![vec![0u64; vocab]; k];
    let mut topic_totals = vec![0u64; k];
    let mut doc_topic = vec![vec![0u64; k]; docs.len()];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (di, doc) in docs.iter().enumerate() {
        let z: Vec<usize> = doc.iter().map(|_| rng.gen_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            topic_word[t][w] += 1;
            topic_totals[t] += 1;
            doc_topic[di][t] += 1;
        }
        assignments.push(z);
    }

    let vocab_beta = vocab as f64 * beta;
    let mut weights = vec![0.0; k];
    for _ in 0..params.iterations {
        for (di, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = assignments[di][i];
                topic_word[old][w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[di][old] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (doc_topic[di][t] as f64 + alpha) * (topic_word[t][w] as f64 + beta)
                        / (topic_totals[t] as f64 + vocab_beta);
                }
                let new = sample_index(&weights, &mut rng);
                assignments[di][i] = new;
                topic_word[new][w] += 1;
                topic_totals[new] += 1;
                doc_topic[di][new] += 1;
            }
        }
    }

    let document_topics = distinct
        .iter()
        .zip(doc_topic)
        .map(|(doc, counts)| (doc.to_vec(), counts))
        .collect();
    Ok(LdaModel {
        params,
        vocabulary,
        topic_word_counts: topic_word,
        topic_totals,
        document_topics,
        degenerate,
    })
}

/// Smoothed document-topic distributions `(counts + alpha) / (n + K alpha)`.
///
/// Training documents use their final-sweep counts; other documents are
/// folded in. Out-of-vocabulary tokens are skipped, so a document with no
/// known token encodes to the uniform distribution.
pub fn encode_lda(m: &LdaModel, d: &Dataset) -> Result<EmbeddingMatrix> {
    let k = m.topic_count();
    let alpha = m.params.doc_topic_prior;
    let rows: Vec<Vec<f64>> = d
        .examples()
        .par_iter()
        .map(|e| {
            let counts = match m.document_topics.get(&e.tokens) {
                Some(c) => c.clone(),
                None => {
                    let words: Vec<usize> = e
                        .tokens
                        .iter()
                        .filter_map(|t| m.vocabulary.get(t).copied())
                        .collect();
                    m.fold_in(&words)
                }
            };
            let n: u64 = counts.iter().sum();
            let denom = n as f64 + k as f64 * alpha;
            counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(d.ids(), rows, m.tag())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NormalizationPolicy;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn ds(texts: &[&str]) -> Dataset {
        let pairs: Vec<(&str, &str)> = texts.iter().map(|t| (*t, "L")).collect();
        Dataset::from_pairs(&pairs, NormalizationPolicy::default()).unwrap()
    }

    fn params(k: usize, alpha: f64, iters: usize, seed: u64) -> LdaParams {
        LdaParams {
            topic_count: k,
            doc_topic_prior: alpha,
            topic_word_prior: 0.01,
            iterations: iters,
            seed,
        }
    }

    #[test]
    fn cosine_distance_cases() {
        let u = [0.3, -1.2, 4.0];
        assert_eq!(cosine_distance(&u, &u).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn lda_separates_disjoint_documents() {
        let d = ds(&[
            "apple banana cherry apple banana cherry apple banana",
            "xray yankee zulu xray yankee zulu xray yankee",
        ]);
        let model = fit_lda(&d, params(2, 0.1, 200, 7)).unwrap();
        let enc = encode_lda(&model, &d).unwrap();
        let self_distance = cosine_distance(enc.row(0), enc.row(0)).unwrap();
        assert_eq!(self_distance, 0.0);
        assert!(cosine_distance(enc.row(0), enc.row(1)).unwrap() > self_distance);

        // the same seeded sampler reproduces the exact distributions
        let again = encode_lda(&fit_lda(&d, params(2, 0.1, 200, 7)).unwrap(), &d).unwrap();
        assert_eq!(enc, again);
    }

    #[test]
    fn identical_single_token_documents_encode_equally() {
        let d = ds(&["hello", "hello", "hello"]);
        let model = fit_lda(&d, params(2, 0.5, 50, 1)).unwrap();
        assert!(model.is_degenerate());
        let enc = encode_lda(&model, &d).unwrap();
        assert_eq!(enc.row(0), enc.row(1));
        assert_eq!(enc.row(1), enc.row(2));
    }

    #[test]
    fn fitting_is_deterministic() {
        let d = ds(&["a b c", "b c d", "d e f", "a f"]);
        let a = fit_lda(&d, params(3, 0.3, 40, 11)).unwrap();
        let b = fit_lda(&d, params(3, 0.3, 40, 11)).unwrap();
        assert_eq!(a, b);
        let c = fit_lda(&d, params(3, 0.3, 40, 12)).unwrap();
        assert_eq!(c.vocabulary(), a.vocabulary());
    }

    #[test]
    fn counts_are_consistent_after_fit() {
        let d = ds(&["a b c a", "b c d", "d e f"]);
        let m = fit_lda(&d, params(4, 0.3, 30, 3)).unwrap();
        let total: u64 = m.topic_word_counts().iter().flatten().sum();
        assert_eq!(total, 10);
        for (k, row) in m.topic_word_counts().iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), m.topic_totals[k]);
        }
    }

    #[test]
    fn encodings_lie_on_the_simplex() {
        let d = ds(&["a b c", "b c d", "d e f", "a f", "q"]);
        let m = fit_lda(&d, params(3, 0.3, 30, 5)).unwrap();
        let enc = encode_lda(&m, &d).unwrap();
        for row in enc.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn out_of_vocabulary_document_is_uniform() {
        let m = fit_lda(&ds(&["a b", "c d"]), params(4, 0.3, 20, 5)).unwrap();
        let enc = encode_lda(&m, &ds(&["zz yy"])).unwrap();
        for &v in enc.row(0) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn unseen_documents_fold_in_deterministically() {
        let m = fit_lda(&ds(&["a b c", "c d e"]), params(3, 0.3, 20, 5)).unwrap();
        let other = ds(&["a e", "x", "a e"]);
        let enc = encode_lda(&m, &other).unwrap();
        assert_eq!(enc.row(0), enc.row(2));
        assert_eq!(enc, encode_lda(&m, &other).unwrap());
    }

    #[test]
    fn lda_rejects_bad_params() {
        let d = ds(&["a b"]);
        assert!(fit_lda(&d, params(1, 0.3, 5, 0)).is_err());
        assert!(fit_lda(&d, params(2, 0.3, 0, 0)).is_err());
        assert!(fit_lda(&d, params(2, -1.0, 5, 0)).is_err());
    }

    #[test]
    fn default_params_follow_label_count() {
        let d = Dataset::from_pairs(&[("a", "x"), ("b", "y")], Default::default()).unwrap();
        let p = LdaParams::defaults_for(&d, 0);
        assert_eq!(p.topic_count, 8);
        assert_eq!(p.doc_topic_prior, 50.0 / 8.0);
        assert_eq!(p.topic_word_prior, 0.01);
        assert_eq!(p.iterations, 500);
    }

    fn embedding_file(contents: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        fs::File::create(&path)
            .unwrap()
            .write_all(contents.as_bytes())
            .unwrap();
        (dir, path)
    }

    #[test]
    fn loads_aligned_embeddings() {
        let d = ds(&["a", "b", "c"]);
        let (_dir, path) = embedding_file("2\t1,2,3,4\n0\t0.5,0,0,1\n1\t-1,1e-3,2,2\n");
        let m = load_embeddings(&path, &d).unwrap();
        assert_eq!((m.len(), m.dimension()), (3, 4));
        assert_eq!(m.row(0), &[0.5, 0.0, 0.0, 1.0]);
        assert_eq!(m.row(2), &[1.0, 2.0, 3.0, 4.0]);
        assert!(m.encoder_tag().starts_with("external:"));
    }

    #[test]
    fn embedding_errors_identify_the_row() {
        let d = ds(&["a", "b", "c"]);
        let (_dir, path) = embedding_file("0\t1,2\n1\t3,4\n");
        match load_embeddings(&path, &d) {
            Err(Error::MissingEmbedding { id }) => assert_eq!(id, "2"),
            other => panic!("unexpected {other:?}"),
        }
        let (_dir, path) = embedding_file("0\t1,2\n1\t3,NaN\n2\t1,1\n");
        match load_embeddings(&path, &d) {
            Err(Error::NonFiniteValue { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let (_dir, path) = embedding_file("0\t1,2\n1\t3,4,5\n2\t1,1\n");
        assert!(matches!(
            load_embeddings(&path, &d),
            Err(Error::DimensionMismatch {
                line: 2,
                expected: 2,
                found: 3
            })
        ));
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            prop_assume!(dot(&u, &u) > 1e-9 && dot(&v, &v) > 1e-9);
            let a = cosine_distance(&u, &v).unwrap();
            let b = cosine_distance(&v, &u).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=2.0).contains(&a));
        }
    }
}

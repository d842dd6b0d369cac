//! Complexity-reducing filtration and the random-subsample baseline.
//!
//! A filtration step ranks the dataset's unique n-grams by count, marks the
//! least frequent fraction, and drops every example containing a marked
//! n-gram. Iterating the step yields nested sub-datasets whose entropy
//! decreases.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::lexical::{ngram_profile, NGram, NGramProfile, Scope};

/// Slack for `ceil(fraction * count)` so that products such as `0.21 * 100`
/// do not round up past the intended integer.
const CEIL_SLACK: f64 = 1e-9;

pub(crate) fn fraction_count(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64) - CEIL_SLACK).ceil().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationConfig {
    pub ngram_order: usize,
    pub removal_fraction: f64,
    pub steps: usize,
    /// Scope used to count n-gram frequencies for the ranking.
    pub scope: Scope,
    pub seed: u64,
}

impl Default for FiltrationConfig {
    fn default() -> Self {
        Self {
            ngram_order: 3,
            removal_fraction: 0.10,
            steps: 15,
            scope: Scope::default(),
            seed: 0,
        }
    }
}

impl FiltrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(self.removal_fraction > 0.0 && self.removal_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "removal fraction {} outside (0, 1)",
                self.removal_fraction
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("filtration needs at least one step"));
        }
        Ok(())
    }
}

/// The `ceil(fraction * unique)` lowest-count n-grams, ties broken by
/// lexicographic n-gram order.
pub fn least_frequent_ngrams(p: &NGramProfile, fraction: f64) -> Result<BTreeSet<NGram>> {
    if p.is_empty() {
        return Err(Error::invalid("cannot rank an empty n-gram profile"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    let take = fraction_count(fraction, p.unique_count()).max(1);
    let mut ranked: Vec<(&NGram, u64)> = p.counts().iter().map(|(g, &c)| (g, c)).collect();
    // counts() iterates in lexicographic order and the sort is stable
    ranked.sort_by_key(|&(_, c)| c);
    Ok(ranked
        .into_iter()
        .take(take)
        .map(|(g, _)| g.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    pub marked: BTreeSet<NGram>,
    pub removed: usize,
    /// Removal would have emptied the dataset; `dataset` is the input.
    pub aborted: bool,
}

/// Drops every example containing one of `marked` among its own windows of
/// length `order`. Examples shorter than `order` always survive.
pub fn remove_containing(d: &Dataset, order: usize, marked: &BTreeSet<NGram>) -> Dataset {
    d.retain(|e| !e.tokens.windows(order).any(|w| marked.contains(w)))
}

/// One filtration step. Never empties the dataset.
pub fn filter_step(d: &Dataset, cfg: &FiltrationConfig) -> Result<FilterOutcome> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::invalid("cannot filter an empty dataset"));
    }
    let profile = ngram_profile(d, cfg.ngram_order, cfg.scope)?;
    if profile.is_empty() {
        // every transcript is shorter than the order; nothing can be removed
        return Ok(FilterOutcome {
            dataset: d.clone(),
            marked: BTreeSet::new(),
            removed: 0,
            aborted: true,
        });
    }
    let marked = least_frequent_ngrams(&profile, cfg.removal_fraction)?;
    let survivors = remove_containing(d, cfg.ngram_order, &marked);
    if survivors.is_empty() {
        return Ok(FilterOutcome {
            dataset: d.clone(),
            marked,
            removed: 0,
            aborted: true,
        });
    }
    let removed = d.len() - survivors.len();
    Ok(FilterOutcome {
        dataset: survivors,
        marked,
        removed,
        aborted: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep<R> {
    pub step: usize,
    pub ids: Vec<String>,
    pub removed: usize,
    pub report: R,
}

/// Nested sub-datasets and their reports. Step 0 is the input dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationTrace<R> {
    pub config: FiltrationConfig,
    pub source_path: String,
    pub steps: Vec<TraceStep<R>>,
    /// Set when a step aborted; the trace ends before that step.
    pub aborted_at: Option<usize>,
}

impl<R> FiltrationTrace<R> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn map_reports<S>(self, mut f: impl FnMut(R) -> S) -> FiltrationTrace<S> {
        FiltrationTrace {
            config: self.config,
            source_path: self.source_path,
            steps: self
                .steps
                .into_iter()
                .map(|s| TraceStep {
                    step: s.step,
                    ids: s.ids,
                    removed: s.removed,
                    report: f(s.report),
                })
                .collect(),
            aborted_at: self.aborted_at,
        }
    }
}

/// Applies [`filter_step`] up to `cfg.steps` times, measuring the initial
/// dataset and every surviving sub-dataset with `measure`.
pub fn filtration_sequence<R, F>(
    d: &Dataset,
    cfg: &FiltrationConfig,
    mut measure: F,
) -> Result<FiltrationTrace<R>>
where
    F: FnMut(&Dataset) -> Result<R>,
{
    cfg.validate()?;
    let mut steps = vec![TraceStep {
        step: 0,
        ids: d.ids(),
        removed: 0,
        report: measure(d)?,
    }];
    let mut current = d.clone();
    let mut aborted_at = None;
    for step in 1..=cfg.steps {
        let outcome = filter_step(&current, cfg)?;
        if outcome.aborted {
            log::info!(
                "filtration step {step} aborted with {} examples left",
                current.len()
            );
            aborted_at = Some(step);
            break;
        }
        current = outcome.dataset;
        log::debug!(
            "filtration step {step}: removed {}, {} remain",
            outcome.removed,
            current.len()
        );
        steps.push(TraceStep {
            step,
            ids: current.ids(),
            removed: outcome.removed,
            report: measure(&current)?,
        });
    }
    Ok(FiltrationTrace {
        config: *cfg,
        source_path: d.source_path().to_owned(),
        steps,
        aborted_at,
    })
}

/// Sorted indices of a seeded uniform sample of `m` out of `n` items.
pub fn sample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, m.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Seeded sample of `ceil(keep_fraction * N)` examples without replacement,
/// in original order.
pub fn random_subsample(d: &Dataset, keep_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let keep = fraction_count(keep_fraction, d.len()).max(1);
    if keep >= d.len() {
        return Ok(d.clone());
    }
    Ok(d.select(&sample_indices(d.len(), keep, seed)))
}

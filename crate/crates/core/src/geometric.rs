//! MST complexity and ARI complexity over transcript encodings.
//!
//! Both measures start from the complete graph on the analyzed examples with
//! cosine-distance edge weights. MST complexity is the share of minimum
//! spanning tree weight carried by edges joining differently labeled examples.
//! ARI complexity clusters the encodings with complete linkage into as many
//! clusters as there are labels and maps the adjusted Rand index between the
//! two labelings onto `[0, 1]` as `(1 - ARI) / 2`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encodings::{cosine_from_parts, dot, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const COSINE_METRIC: &str = "cosine";

/// Symmetric pairwise distances with zero diagonal, stored as the strict
/// upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    upper: Vec<f64>,
    metric_tag: String,
}

#[inline]
fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl DistanceMatrix {
    /// Builds a matrix from an arbitrary weight function evaluated on `i < j`.
    pub fn from_fn<F>(size: usize, metric_tag: impl Into<String>, mut weight: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> f64,
    {
        let mut upper = Vec::with_capacity(size * size.saturating_sub(1) / 2);
        for i in 0..size {
            for j in i + 1..size {
                let w = weight(i, j);
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::invalid(format!(
                        "distance ({i}, {j}) = {w} is not a finite non-negative value"
                    )));
                }
                upper.push(w);
            }
        }
        Ok(Self {
            size,
            upper,
            metric_tag: metric_tag.into(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn metric_tag(&self) -> &str {
        &self.metric_tag
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[condensed_index(self.size, i, j)],
            std::cmp::Ordering::Greater => self.upper[condensed_index(self.size, j, i)],
        }
    }
}

/// Pairwise cosine distances between the rows of `e`. Rows are filled in
/// parallel; each entry is computed independently, so the result does not
/// depend on the thread count.
pub fn distance_matrix(e: &EmbeddingMatrix) -> Result<DistanceMatrix> {
    let n = e.len();
    if n < 2 {
        return Err(Error::invalid("distance matrix needs at least 2 rows"));
    }
    let norms: Vec<f64> = e.rows().map(|r| dot(r, r)).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroVector {
            id: e.ids()[i].clone(),
        });
    }
    let mut upper = vec![0.0; n * (n - 1) / 2];
    let mut segments: Vec<(usize, &mut [f64])> = Vec::with_capacity(n);
    let mut rest = upper.as_mut_slice();
    for i in 0..n - 1 {
        let (head, tail) = rest.split_at_mut(n - i - 1);
        segments.push((i, head));
        rest = tail;
    }
    segments.into_par_iter().for_each(|(i, segment)| {
        let u = e.row(i);
        for (offset, slot) in segment.iter_mut().enumerate() {
            let j = i + 1 + offset;
            *slot = cosine_from_parts(dot(u, e.row(j)), norms[i], norms[j]);
        }
    });
    Ok(DistanceMatrix {
        size: n,
        upper,
        metric_tag: COSINE_METRIC.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MstEdgeList {
    pub edges: Vec<MstEdge>,
    pub total_weight: f64,
}

#[inline]
fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Dense-graph Prim grown from vertex 0 with an O(N^2) frontier scan.
///
/// Among equal-weight candidate edges the one with the smallest
/// `(min, max)` vertex pair wins, both when choosing the next vertex and
/// when updating a frontier entry.
pub fn minimum_spanning_tree(m: &DistanceMatrix) -> Result<MstEdgeList> {
    let n = m.size();
    if n < 2 {
        return Err(Error::invalid("spanning tree needs at least 2 vertices"));
    }
    let mut in_tree = vec![false; n];
    let mut best_weight = vec![f64::INFINITY; n];
    let mut best_parent = vec![usize::MAX; n];
    in_tree[0] = true;
    for v in 1..n {
        best_weight[v] = m.get(0, v);
        best_parent[v] = 0;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut chosen: Option<usize> = None;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            chosen = match chosen {
                None => Some(v),
                Some(c) => {
                    let better = best_weight[v] < best_weight[c]
                        || (best_weight[v] == best_weight[c]
                            && ordered(best_parent[v], v) < ordered(best_parent[c], c));
                    Some(if better { v } else { c })
                }
            };
        }
        let v = chosen.expect("frontier is non-empty while vertices remain");
        in_tree[v] = true;
        edges.push(MstEdge {
            u: best_parent[v].min(v),
            v: best_parent[v].max(v),
            weight: best_weight[v],
        });
        for w in 0..n {
            if in_tree[w] {
                continue;
            }
            let d = m.get(v, w);
            if d < best_weight[w]
                || (d == best_weight[w] && ordered(v, w) < ordered(best_parent[w], w))
            {
                best_weight[w] = d;
                best_parent[w] = v;
            }
        }
    }
    let total_weight = edges.iter().map(|e| e.weight).sum();
    Ok(MstEdgeList {
        edges,
        total_weight,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MstComplexity {
    pub score: f64,
    pub inter_class_weight: f64,
    pub total_weight: f64,
    /// Total tree weight was zero; the score is 0 for a single label and 1
    /// otherwise.
    pub degenerate: bool,
}

fn check_labels<L>(n: usize, labels: &[L]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {} encodings",
            labels.len(),
            n
        )));
    }
    Ok(())
}

/// Share of MST weight on edges whose endpoints carry different labels.
pub fn mst_complexity_from_distances<L: PartialEq>(
    m: &DistanceMatrix,
    labels: &[L],
) -> Result<(MstComplexity, MstEdgeList)> {
    check_labels(m.size(), labels)?;
    let tree = minimum_spanning_tree(m)?;
    let inter_class_weight: f64 = tree
        .edges
        .iter()
        .filter(|e| labels[e.u] != labels[e.v])
        .map(|e| e.weight)
        .sum();
    let total_weight = tree.total_weight;
    let result = if total_weight > 0.0 {
        MstComplexity {
            score: (inter_class_weight / total_weight).clamp(0.0, 1.0),
            inter_class_weight,
            total_weight,
            degenerate: false,
        }
    } else {
        let constant = labels.iter().all(|l| *l == labels[0]);
        MstComplexity {
            score: if constant { 0.0 } else { 1.0 },
            inter_class_weight,
            total_weight,
            degenerate: true,
        }
    };
    Ok((result, tree))
}

pub fn mst_complexity<L: PartialEq>(e: &EmbeddingMatrix, labels: &[L]) -> Result<MstComplexity> {
    check_labels(e.len(), labels)?;
    let m = distance_matrix(e)?;
    Ok(mst_complexity_from_distances(&m, labels)?.0)
}

/// Flat cluster labels in `[0, cluster_count)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub cluster_count: usize,
}

/// Complete-linkage agglomerative clustering stopped at `k` clusters.
///
/// A cluster is identified by its smallest member index. Each merge joins
/// the pair with the smallest maximum pairwise distance, ties going to the
/// smallest `(id, id)` pair. Final cluster labels are numbered in order of
/// cluster id.
pub fn agglomerative_cluster_distances(m: &DistanceMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = m.size();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cluster count {k} outside 1..={n}")));
    }
    // linkage[i][j] for i < j lives in `link`, updated in place on merges.
    let mut link = m.upper.clone();
    let at = |i: usize, j: usize| condensed_index(n, i, j);
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    // nearest[i]: best (distance, j) over active j > i.
    let scan = |i: usize, link: &[f64], active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if !active[j] {
                continue;
            }
            let d = link[at(i, j)];
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best
    };
    let mut nearest: Vec<Option<(f64, usize)>> = (0..n).map(|i| scan(i, &link, &active)).collect();

    let mut clusters = n;
    while clusters > k {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((d, j)) = nearest[i] {
                if pick.is_none_or(|(pd, _, _)| d < pd) {
                    pick = Some((d, i, j));
                }
            }
        }
        let (_, a, b) = pick.expect("at least two active clusters remain");
        active[b] = false;
        parent[b] = a;
        for c in (0..n).filter(|&c| active[c] && c != a) {
            let (ac, bc) = (ordered(a, c), ordered(b, c));
            let merged = link[at(ac.0, ac.1)].max(link[at(bc.0, bc.1)]);
            link[at(ac.0, ac.1)] = merged;
        }
        clusters -= 1;
        nearest[b] = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let stale = i == a || matches!(nearest[i], Some((_, j)) if j == a || j == b);
            if stale {
                nearest[i] = scan(i, &link, &active);
            }
        }
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let roots: BTreeSet<usize> = (0..n).filter(|&i| active[i]).collect();
    let number: BTreeMap<usize, usize> = roots.iter().enumerate().map(|(c, &r)| (r, c)).collect();
    let labels = (0..n).map(|i| number[&root(i)]).collect();
    Ok(ClusterAssignment {
        labels,
        cluster_count: k,
    })
}

pub fn agglomerative_cluster(e: &EmbeddingMatrix, k: usize) -> Result<ClusterAssignment> {
    if e.len() == 1 && k == 1 {
        return Ok(ClusterAssignment {
            labels: vec![0],
            cluster_count: 1,
        });
    }
    agglomerative_cluster_distances(&distance_matrix(e)?, k)
}

fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// Hubert-Arabie adjusted Rand index from the contingency table. Pair counts
/// are accumulated in integers, so the value is independent of label order.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("adjusted Rand index needs at least 2 items"));
    }
    let mut left: BTreeMap<&A, u64> = BTreeMap::new();
    let mut right: BTreeMap<&B, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *left.entry(x).or_default() += 1;
        *right.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let index: u128 = joint.values().map(|&c| pairs(c)).sum();
    let sum_left: u128 = left.values().map(|&c| pairs(c)).sum();
    let sum_right: u128 = right.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64) as f64;
    let expected = (sum_left as f64 * sum_right as f64) / total;
    let max_index = 0.5 * (sum_left as f64 + sum_right as f64);
    let denominator = max_index - expected;
    if denominator == 0.0 {
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / denominator)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AriComplexity {
    pub ari: f64,
    pub complexity: f64,
    pub cluster_count: usize,
    /// Only one semantic label: ARI is taken as 0, complexity 0.5.
    pub degenerate: bool,
}

/// Clusters into as many groups as there are distinct labels and returns
/// `(1 - ARI) / 2` against the semantic labels.
pub fn ari_complexity_from_distances<L: Ord>(
    m: &DistanceMatrix,
    labels: &[L],
) -> Result<(AriComplexity, ClusterAssignment)> {
    check_labels(m.size(), labels)?;
    let k = labels.iter().collect::<BTreeSet<_>>().len();
    let clusters = agglomerative_cluster_distances(m, k)?;
    if k == 1 {
        return Ok((
            AriComplexity {
                ari: 0.0,
                complexity: 0.5,
                cluster_count: 1,
                degenerate: true,
            },
            clusters,
        ));
    }
    let ari = adjusted_rand_index(labels, &clusters.labels)?;
    Ok((
        AriComplexity {
            ari,
            complexity: ((1.0 - ari) / 2.0).clamp(0.0, 1.0),
            cluster_count: k,
            degenerate: false,
        },
        clusters,
    ))
}

pub fn ari_complexity<L: Ord>(e: &EmbeddingMatrix, labels: &[L]) -> Result<AriComplexity> {
    check_labels(e.len(), labels)?;
    Ok(ari_complexity_from_distances(&distance_matrix(e)?, labels)?.0)
}

/// Geometric block of a report for one encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricMeasures {
    pub encoder_tag: String,
    pub metric_tag: String,
    pub points: usize,
    pub mst_complexity: f64,
    pub mst_degenerate: bool,
    pub ari: f64,
    pub ari_complexity: f64,
    pub ari_degenerate: bool,
}

/// Intermediate structures kept for the optional debug dumps.
#[derive(Clone, Debug)]
pub struct GeometricDetail {
    pub measures: GeometricMeasures,
    pub tree: MstEdgeList,
    pub clusters: ClusterAssignment,
}

/// MST and ARI complexity from a single shared distance matrix.
pub fn geometric_measures<L: Ord>(e: &EmbeddingMatrix, labels: &[L]) -> Result<GeometricDetail> {
    check_labels(e.len(), labels)?;
    let m = distance_matrix(e)?;
    let (mst, tree) = mst_complexity_from_distances(&m, labels)?;
    let (ari, clusters) = ari_complexity_from_distances(&m, labels)?;
    Ok(GeometricDetail {
        measures: GeometricMeasures {
            encoder_tag: e.encoder_tag().to_owned(),
            metric_tag: m.metric_tag().to_owned(),
            points: e.len(),
            mst_complexity: mst.score,
            mst_degenerate: mst.degenerate,
            ari: ari.ari,
            ari_complexity: ari.complexity,
            ari_degenerate: ari.degenerate,
        },
        tree,
        clusters,
    })
}

/// Writes `i,j,weight,inter_class_flag` lines.
pub fn write_mst_edges<L: PartialEq>(path: &Path, tree: &MstEdgeList, labels: &[L]) -> Result<()> {
    let mut out = String::from("i,j,weight,inter_class\n");
    for e in &tree.edges {
        let inter = u8::from(labels[e.u] != labels[e.v]);
        out.push_str(&format!("{},{},{:?},{}\n", e.u, e.v, e.weight, inter));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Writes `id,cluster` lines.
pub fn write_clusters(path: &Path, ids: &[String], clusters: &ClusterAssignment) -> Result<()> {
    let mut out = String::from("id,cluster\n");
    for (id, c) in ids.iter().zip(&clusters.labels) {
        out.push_str(&format!("{id},{c}\n"));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

//! Chi-square feature selection and error-case pre-clustering.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureVocab, SparseDataset};

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no class contrast: chi-square needs both error and non-error rows")]
    NoClassContrast,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("example {0:?} has no annotation (required in annotation mode)")]
    MissingAnnotation(String),
}

/// 2x2 contingency of feature presence against the error label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScore {
    pub column: usize,
    pub chi2: f64,
    /// A: present on error rows.
    pub present_error: u64,
    /// B: present on non-error rows.
    pub present_ok: u64,
    /// C: absent on error rows.
    pub absent_error: u64,
    /// D: absent on non-error rows.
    pub absent_ok: u64,
}

/// `N (AD - BC)^2 / ((A+B)(C+D)(A+C)(B+D))`, or 0 when a marginal is empty.
pub fn chi_square(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let marginals = [a + b, c + d, a + c, b + d];
    if marginals.contains(&0) {
        return 0.0;
    }
    let n = (a + b + c + d) as f64;
    let diff = (a as i128 * d as i128 - b as i128 * c as i128) as f64;
    let denom: f64 = marginals.iter().map(|&m| m as f64).product();
    n * diff * diff / denom
}

/// Scores every column of `ds` over all rows.
pub fn chi_square_scores(ds: &SparseDataset) -> Result<Vec<FeatureScore>, SelectError> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    chi_square_scores_rows(ds, &rows)
}

/// Scores every column over a subset of rows. Presence means count >= 1.
pub fn chi_square_scores_rows(ds: &SparseDataset, rows: &[usize]) -> Result<Vec<FeatureScore>, SelectError> {
    let errors = rows.iter().filter(|&&r| ds.labels[r]).count() as u64;
    let oks = rows.len() as u64 - errors;
    if errors == 0 || oks == 0 {
        return Err(SelectError::NoClassContrast);
    }
    let width = ds.vocab.len();
    let mut on_error = vec![0u64; width];
    let mut on_ok = vec![0u64; width];
    for &r in rows {
        let counter = if ds.labels[r] { &mut on_error } else { &mut on_ok };
        for &(c, _) in ds.rows[r].entries() {
            counter[c as usize] += 1;
        }
    }
    Ok((0..width)
        .map(|column| {
            let (a, b) = (on_error[column], on_ok[column]);
            let (c, d) = (errors - a, oks - b);
            FeatureScore {
                column,
                chi2: chi_square(a, b, c, d),
                present_error: a,
                present_ok: b,
                absent_error: c,
                absent_ok: d,
            }
        })
        .collect())
}

/// The `min(k, #scores)` best columns, highest chi-square first; ties go to
/// the lexicographically smaller feature name.
pub fn select_top_k(scores: &[FeatureScore], k: usize, vocab: &FeatureVocab) -> Vec<usize> {
    let mut ranked: Vec<&FeatureScore> = scores.iter().collect();
    ranked.sort_by(|x, y| {
        y.chi2
            .total_cmp(&x.chi2)
            .then_with(|| vocab.name(x.column).cmp(vocab.name(y.column)))
    });
    ranked.into_iter().take(k).map(|s| s.column).collect()
}

/// Result of clustering the error rows of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Dataset row of each clustered error, ascending.
    pub error_rows: Vec<usize>,
    /// Cluster of each entry of `error_rows`.
    pub assignment: Vec<usize>,
    /// Within-cluster SSE after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn final_sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

type SparsePoint = Vec<(usize, f64)>;

struct Lloyd<'a> {
    points: &'a [SparsePoint],
    centroids: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Lloyd<'_> {
    fn dist(&self, p: usize, c: usize) -> f64 {
        // ||x - c||^2 = (||c||^2 - sum_{j in x} c_j^2) + sum_{j in x} (x_j - c_j)^2
        let centroid = &self.centroids[c];
        let mut covered = 0.0;
        let mut diff = 0.0;
        for &(j, x) in &self.points[p] {
            let cj = centroid[j];
            covered += cj * cj;
            diff += (x - cj) * (x - cj);
        }
        ((self.norms[c] - covered).max(0.0) + diff).max(0.0)
    }

    fn set_centroid(&mut self, c: usize, value: Vec<f64>) {
        self.norms[c] = value.iter().map(|v| v * v).sum();
        self.centroids[c] = value;
    }

    fn point_as_centroid(&mut self, c: usize, p: usize, dim: usize) {
        let mut v = vec![0.0; dim];
        for &(j, x) in &self.points[p] {
            v[j] = x;
        }
        self.set_centroid(c, v);
    }

    fn update_means(&mut self, labels: &[usize], dim: usize) {
        let k = self.centroids.len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in labels.iter().enumerate() {
            sizes[c] += 1;
            for &(j, x) in &self.points[p] {
                sums[c][j] += x;
            }
        }
        for (c, mut sum) in sums.into_iter().enumerate() {
            if sizes[c] > 0 {
                let n = sizes[c] as f64;
                sum.iter_mut().for_each(|v| *v /= n);
                self.set_centroid(c, sum);
            }
        }
    }

    fn sse(&self, labels: &[usize]) -> f64 {
        labels.iter().enumerate().map(|(p, &c)| self.dist(p, c)).sum()
    }
}

/// Lloyd's algorithm with k-means++ seeding over sparse points in `dim`
/// dimensions. Returns `(assignment, sse_history, iterations, converged)`.
fn lloyd(
    points: &[SparsePoint],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> (Vec<usize>, Vec<f64>, usize, bool) {
    let m = points.len();
    let k = k.min(m);
    if k == 0 {
        return (vec![0; m], Vec::new(), 0, true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = Lloyd {
        points,
        centroids: vec![Vec::new(); k],
        norms: vec![0.0; k],
    };

    // k-means++ seeding
    let mut chosen = vec![false; m];
    let first = rng.random_range(0..m);
    chosen[first] = true;
    st.point_as_centroid(0, first, dim);
    let mut nearest: Vec<f64> = (0..m).map(|p| st.dist(p, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (p, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(p);
                    break;
                }
            }
            pick.or_else(|| (0..m).rev().find(|&p| nearest[p] > 0.0))
        } else {
            None
        };
        let pick = pick
            .or_else(|| (0..m).find(|&p| !chosen[p]))
            .expect("k <= number of points");
        chosen[pick] = true;
        st.point_as_centroid(c, pick, dim);
        for (p, near) in nearest.iter_mut().enumerate() {
            *near = near.min(st.dist(p, c));
        }
    }

    let mut labels: Vec<usize> = vec![usize::MAX; m];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (p, label) in labels.iter_mut().enumerate() {
            let current = *label;
            let mut best = current;
            let mut best_d = if current == usize::MAX { f64::INFINITY } else { st.dist(p, current) };
            for c in 0..k {
                let d = st.dist(p, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if best != current {
                *label = best;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its centroid.
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&c| sizes[c] += 1);
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far: Option<(usize, f64)> = None;
            for (p, &c) in labels.iter().enumerate() {
                if sizes[c] > 1 {
                    let d = st.dist(p, c);
                    if far.is_none_or(|(_, best)| d > best) {
                        far = Some((p, d));
                    }
                }
            }
            let (p, _) = far.expect("a cluster with two or more points exists");
            sizes[labels[p]] -= 1;
            labels[p] = empty;
            sizes[empty] = 1;
            st.point_as_centroid(empty, p, dim);
            changed = true;
        }
        st.update_means(&labels, dim);
        history.push(st.sse(&labels));
        if !changed {
            converged = true;
            break;
        }
    }
    (labels, history, iterations, converged)
}

/// k-means over the L2-normalized error rows of `ds`. Error rows without any
/// feature are assigned to cluster 0 and do not take part in the iterations.
pub fn kmeans_errors(ds: &SparseDataset, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, SelectError> {
    let error_rows: Vec<usize> = (0..ds.len()).filter(|&r| ds.labels[r]).collect();
    if k < 1 || k > error_rows.len() {
        return Err(SelectError::Parameter(format!(
            "k must lie in 1..={} (number of error rows), got {k}",
            error_rows.len()
        )));
    }
    let mut points = Vec::new();
    let mut point_rows = Vec::new();
    for (i, &r) in error_rows.iter().enumerate() {
        let entries = ds.rows[r].entries();
        let norm = entries.iter().map(|&(_, v)| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            points.push(entries.iter().map(|&(c, v)| (c as usize, v as f64 / norm)).collect());
            point_rows.push(i);
        }
    }
    let (labels, sse_history, iterations, converged) = lloyd(&points, ds.vocab.len(), k, seed, max_iter);
    let mut assignment = vec![0; error_rows.len()];
    for (p, &i) in point_rows.iter().enumerate() {
        assignment[i] = labels[p];
    }
    Ok(KMeansResult {
        error_rows,
        assignment,
        sse_history,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterOrigin {
    Kmeans,
    Annotation,
}

impl fmt::Display for ClusterOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterOrigin::Kmeans => "kmeans",
            ClusterOrigin::Annotation => "annotation",
        })
    }
}

/// How error cases are grouped before rule learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ClusterMode {
    Kmeans { k: usize },
    Annotation,
}

impl Default for ClusterMode {
    fn default() -> Self {
        ClusterMode::Kmeans { k: 2 }
    }
}

impl fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterMode::Kmeans { k } => write!(f, "kmeans:{k}"),
            ClusterMode::Annotation => f.write_str("annotation"),
        }
    }
}

impl std::str::FromStr for ClusterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "annotation" {
            return Ok(ClusterMode::Annotation);
        }
        s.strip_prefix("kmeans:")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k >= 1)
            .map(|k| ClusterMode::Kmeans { k })
            .ok_or_else(|| format!("expected `kmeans:K` (K >= 1) or `annotation`, got {s:?}"))
    }
}

/// One cluster's error rows plus every non-error row of the parent dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubDataset {
    pub cluster_id: String,
    /// Row indices into the parent dataset, ascending.
    pub members: Vec<usize>,
    pub origin: ClusterOrigin,
}

impl SubDataset {
    pub fn error_members<'a>(&'a self, ds: &'a SparseDataset) -> impl Iterator<Item = usize> + 'a {
        self.members.iter().copied().filter(|&r| ds.labels[r])
    }
}

const KMEANS_MAX_ITER: usize = 100;

/// Splits the error rows into clusters, each paired with all negatives.
pub fn make_subdatasets(ds: &SparseDataset, mode: ClusterMode, seed: u64) -> Result<Vec<SubDataset>, SelectError> {
    let negatives: Vec<usize> = (0..ds.len()).filter(|&r| !ds.labels[r]).collect();
    let with_negatives = |errors: Vec<usize>| {
        let mut members = errors;
        members.extend(&negatives);
        members.sort_unstable();
        members
    };
    match mode {
        ClusterMode::Kmeans { k } => {
            let km = kmeans_errors(ds, k, seed, KMEANS_MAX_ITER)?;
            let mut groups = vec![Vec::new(); k];
            for (i, &row) in km.error_rows.iter().enumerate() {
                groups[km.assignment[i]].push(row);
            }
            Ok(groups
                .into_iter()
                .enumerate()
                .map(|(c, errors)| SubDataset {
                    cluster_id: c.to_string(),
                    members: with_negatives(errors),
                    origin: ClusterOrigin::Kmeans,
                })
                .collect())
        }
        ClusterMode::Annotation => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for r in (0..ds.len()).filter(|&r| ds.labels[r]) {
                let annotation = ds.annotations[r]
                    .as_deref()
                    .ok_or_else(|| SelectError::MissingAnnotation(ds.ids[r].clone()))?;
                groups.entry(annotation).or_default().push(r);
            }
            Ok(groups
                .into_iter()
                .map(|(a, errors)| SubDataset {
                    cluster_id: a.to_owned(),
                    members: with_negatives(errors),
                    origin: ClusterOrigin::Annotation,
                })
                .collect())
        }
    }
}

/// Writes `id<TAB>cluster` for every error row of every sub-dataset.
pub fn write_assignments<W: Write>(ds: &SparseDataset, subs: &[SubDataset], mut out: W) -> std::io::Result<()> {
    for sub in subs {
        for r in sub.error_members(ds) {
            writeln!(out, "{}\t{}", ds.ids[r], sub.cluster_id)?;
        }
    }
    Ok(())
}

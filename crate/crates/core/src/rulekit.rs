//! Rule induction kernel.
//!
//! Bagged CART trees are grown on count features; every leaf where errors are
//! the majority yields the conjunction of conditions on its root path. Rules
//! are then scored on the training rows, gated on precision and support, and
//! consolidated.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::SparseDataset;
use crate::ingest::stratified_sample;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Gt => ">",
            Op::Le => "<=",
        }
    }
}

/// `feature > threshold` or `feature <= threshold` on a meta-feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Op,
    pub threshold: f64,
}

impl Condition {
    pub fn new(feature: impl Into<String>, op: Op, threshold: f64) -> Self {
        Condition {
            feature: feature.into(),
            op,
            threshold,
        }
    }

    pub fn gt(feature: impl Into<String>, threshold: f64) -> Self {
        Condition::new(feature, Op::Gt, threshold)
    }

    pub fn le(feature: impl Into<String>, threshold: f64) -> Self {
        Condition::new(feature, Op::Le, threshold)
    }

    pub fn holds(&self, count: u32) -> bool {
        let v = count as f64;
        match self.op {
            Op::Gt => v > self.threshold,
            Op::Le => v <= self.threshold,
        }
    }

    fn key(&self) -> (&str, Op, u64) {
        (&self.feature, self.op, self.threshold.to_bits())
    }

    fn cmp_canonical(&self, other: &Condition) -> std::cmp::Ordering {
        (&self.feature, self.op)
            .cmp(&(&other.feature, other.op))
            .then(self.threshold.total_cmp(&other.threshold))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:?}", self.feature, self.op.symbol(), self.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl RuleStats {
    /// Stats from `hits` errors among `support` matched rows, out of
    /// `total_errors` errors overall.
    pub fn from_counts(hits: usize, support: usize, total_errors: usize) -> Self {
        let precision = if support == 0 { 0.0 } else { hits as f64 / support as f64 };
        let recall = if total_errors == 0 { 0.0 } else { hits as f64 / total_errors as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RuleStats {
            precision,
            recall,
            f1,
            support,
        }
    }
}

/// A conjunction of conditions predicting "error".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub stats_train: Option<RuleStats>,
    pub stats_test: Option<RuleStats>,
    pub iteration: usize,
    pub cluster: String,
}

impl Rule {
    /// Canonical rule: one bound per `(feature, op)`, the tightest one, with
    /// conditions sorted by feature, operator and threshold.
    pub fn new(conditions: impl IntoIterator<Item = Condition>) -> Self {
        let mut merged: Vec<Condition> = Vec::new();
        for c in conditions {
            match merged.iter_mut().find(|m| m.feature == c.feature && m.op == c.op) {
                Some(m) => {
                    m.threshold = match c.op {
                        Op::Gt => m.threshold.max(c.threshold),
                        Op::Le => m.threshold.min(c.threshold),
                    }
                }
                None => merged.push(c),
            }
        }
        merged.sort_by(Condition::cmp_canonical);
        Rule {
            conditions: merged,
            stats_train: None,
            stats_test: None,
            iteration: 0,
            cluster: String::new(),
        }
    }

    /// `question_letter > 0.5 and question_to > 0.5`
    pub fn condition_string(&self) -> String {
        self.conditions
            .iter()
            .map(Condition::to_string)
            .collect::<Vec<_>>()
            .join(" and ")
    }

    fn key_set(&self) -> BTreeSet<(&str, Op, u64)> {
        self.conditions.iter().map(Condition::key).collect()
    }

    /// Whether a count lookup satisfies every condition.
    pub fn matches_with(&self, count: impl Fn(&str) -> u32) -> bool {
        self.conditions.iter().all(|c| c.holds(count(&c.feature)))
    }

    pub fn matches_row(&self, ds: &SparseDataset, row: usize) -> bool {
        self.matches_with(|name| ds.value_by_name(row, name))
    }

    pub fn train_f1(&self) -> f64 {
        self.stats_train.map_or(0.0, |s| s.f1)
    }

    pub fn test_f1(&self) -> f64 {
        self.stats_test.map_or(0.0, |s| s.f1)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.condition_string())
    }
}

/// Rows of `rows` (repeats allowed) matched by the rule, in input order.
pub fn matched_rows(rule: &Rule, ds: &SparseDataset, rows: &[usize]) -> Vec<usize> {
    let resolved: Vec<(Option<usize>, &Condition)> = rule
        .conditions
        .iter()
        .map(|c| (ds.vocab.column(&c.feature), c))
        .collect();
    rows.iter()
        .copied()
        .filter(|&r| {
            resolved
                .iter()
                .all(|(col, c)| c.holds(col.map_or(0, |col| ds.rows[r].get(col))))
        })
        .collect()
}

/// Precision, recall, f1 and support of the rule over `rows`.
pub fn evaluate_rule(rule: &Rule, ds: &SparseDataset, rows: &[usize]) -> RuleStats {
    let matched = matched_rows(rule, ds, rows);
    let hits = matched.iter().filter(|&&r| ds.labels[r]).count();
    let total_errors = rows.iter().filter(|&&r| ds.labels[r]).count();
    RuleStats::from_counts(hits, matched.len(), total_errors)
}

/// Column-major counts for fast split search; columns follow `ds.vocab`.
#[derive(Debug, Clone)]
pub struct TrainingView {
    names: Vec<String>,
    columns: Vec<Vec<u32>>,
    labels: Vec<bool>,
    /// Column ids sorted by feature name, the split tie-break order.
    name_order: Vec<usize>,
}

impl TrainingView {
    pub fn from_dataset(ds: &SparseDataset) -> Self {
        let width = ds.vocab.len();
        let mut columns = vec![vec![0u32; ds.len()]; width];
        for (r, row) in ds.rows.iter().enumerate() {
            for &(c, v) in row.entries() {
                columns[c as usize][r] = v;
            }
        }
        let names = ds.vocab.names().to_vec();
        let mut name_order: Vec<usize> = (0..width).collect();
        name_order.sort_by(|&a, &b| names[a].cmp(&names[b]));
        TrainingView {
            names,
            columns,
            labels: ds.labels.clone(),
            name_order,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn value(&self, row: usize, feature: usize) -> u32 {
        self.columns[feature][row]
    }

    pub fn label(&self, row: usize) -> bool {
        self.labels[row]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `feature > threshold` sends a row right, otherwise left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        errors: usize,
        total: usize,
    },
}

/// A binary CART tree over a [`TrainingView`]. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub names: Vec<String>,
    pub max_depth: usize,
    /// Rows the tree was fit on (a multiset, ascending).
    pub bag: Vec<usize>,
}

impl DecisionTree {
    /// Index of the leaf reached by a row described by `value(feature)`.
    pub fn leaf_for(&self, value: impl Fn(usize) -> u32) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if value(feature) as f64 > threshold { right } else { left },
                Node::Leaf { .. } => return at,
            }
        }
    }

    /// Error fraction of the leaf reached by a row.
    pub fn score(&self, value: impl Fn(usize) -> u32) -> f64 {
        match self.nodes[self.leaf_for(value)] {
            Node::Leaf { errors, total } if total > 0 => errors as f64 / total as f64,
            _ => 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Root-to-leaf condition paths, left subtree first.
    pub fn leaf_paths(&self) -> Vec<(Vec<Condition>, usize, usize)> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<Condition>)> = vec![(0, Vec::new())];
        while let Some((at, path)) = stack.pop() {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let name = &self.names[feature];
                    let mut r = path.clone();
                    r.push(Condition::gt(name.clone(), threshold));
                    let mut l = path;
                    l.push(Condition::le(name.clone(), threshold));
                    stack.push((right, r));
                    stack.push((left, l));
                }
                Node::Leaf { errors, total } => out.push((path, errors, total)),
            }
        }
        out
    }
}

/// Sum over children of `n * gini`, i.e. `2 e (n - e) / n`.
fn weighted_gini(errors: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (e, n) = (errors as f64, total as f64);
    2.0 * e * (n - e) / n
}

const IMPURITY_EPS: f64 = 1e-12;

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn best_split(view: &TrainingView, rows: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let errors = rows.iter().filter(|&&r| view.labels[r]).count();
    let parent = weighted_gini(errors, n);
    let mut best: Option<Split> = None;
    let mut values: Vec<(u32, bool)> = Vec::with_capacity(n);
    for &f in &view.name_order {
        values.clear();
        values.extend(rows.iter().map(|&r| (view.columns[f][r], view.labels[r])));
        values.sort_unstable_by_key(|v| v.0);
        if values[0].0 == values[n - 1].0 {
            continue;
        }
        let (mut left_n, mut left_e) = (0usize, 0usize);
        let mut i = 0;
        while i < n {
            let v = values[i].0;
            while i < n && values[i].0 == v {
                left_n += 1;
                left_e += usize::from(values[i].1);
                i += 1;
            }
            if i == n {
                break;
            }
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let impurity = weighted_gini(left_e, left_n) + weighted_gini(errors - left_e, right_n);
            if impurity >= parent - IMPURITY_EPS {
                continue;
            }
            // Strict improvement only: earlier (name, threshold) wins ties.
            if best.as_ref().is_none_or(|b| impurity < b.impurity - IMPURITY_EPS) {
                best = Some(Split {
                    feature: f,
                    threshold: (v as f64 + values[i].0 as f64) / 2.0,
                    impurity,
                });
            }
        }
    }
    best
}

/// Grows a Gini CART tree on `bag` (row indices into `view`, repeats allowed).
/// Growth stops at `max_depth`, at pure nodes, and where no split leaves at
/// least `min_leaf` rows on both sides.
pub fn fit_tree(view: &TrainingView, bag: &[usize], max_depth: usize, min_leaf: usize) -> DecisionTree {
    let mut bag = bag.to_vec();
    bag.sort_unstable();
    let mut tree = DecisionTree {
        nodes: Vec::new(),
        names: view.names.clone(),
        max_depth,
        bag: bag.clone(),
    };
    grow(view, &mut tree.nodes, bag, 0, max_depth, min_leaf.max(1));
    tree
}

fn grow(
    view: &TrainingView,
    nodes: &mut Vec<Node>,
    rows: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> usize {
    let id = nodes.len();
    let errors = rows.iter().filter(|&&r| view.labels[r]).count();
    let total = rows.len();
    nodes.push(Node::Leaf { errors, total });
    if depth >= max_depth || errors == 0 || errors == total || total < 2 * min_leaf {
        return id;
    }
    let Some(split) = best_split(view, &rows, min_leaf) else {
        return id;
    };
    let (right_rows, left_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&r| view.columns[split.feature][r] as f64 > split.threshold);
    let left = grow(view, nodes, left_rows, depth + 1, max_depth, min_leaf);
    let right = grow(view, nodes, right_rows, depth + 1, max_depth, min_leaf);
    nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

/// Rule-learner settings (bagging and gates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub n_trees: usize,
    pub depth_grid: Vec<usize>,
    pub row_fraction: f64,
    pub min_leaf: usize,
    pub min_support: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            n_trees: 30,
            depth_grid: vec![2, 3, 4],
            row_fraction: 0.8,
            min_leaf: 5,
            min_support: 10,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.n_trees < 1 {
            return Err(RuleError::Parameter("n_trees must be at least 1".into()));
        }
        if self.depth_grid.is_empty() || self.depth_grid.contains(&0) {
            return Err(RuleError::Parameter(
                "depth grid must be nonempty with depths >= 1".into(),
            ));
        }
        if !(self.row_fraction > 0.0 && self.row_fraction <= 1.0) {
            return Err(RuleError::Parameter(format!(
                "row fraction must lie in (0, 1], got {}",
                self.row_fraction
            )));
        }
        Ok(())
    }
}

/// Fits `cfg.n_trees` trees, cycling depths through `cfg.depth_grid`, each on
/// a label-stratified subsample (without replacement) of `rows`.
pub fn bagged_forest(
    view: &TrainingView,
    rows: &[usize],
    cfg: &KernelConfig,
    seed: u64,
) -> Result<Vec<DecisionTree>, RuleError> {
    cfg.validate()?;
    let size = ((cfg.row_fraction * rows.len() as f64).round() as usize).clamp(1.min(rows.len()), rows.len());
    Ok((0..cfg.n_trees)
        .into_par_iter()
        .map(|i| {
            let depth = cfg.depth_grid[i % cfg.depth_grid.len()];
            let bag = if size == rows.len() {
                rows.to_vec()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                stratified_sample(rows, size, |r| view.labels[r], &mut rng)
            };
            fit_tree(view, &bag, depth, cfg.min_leaf)
        })
        .collect())
}

/// One rule per error-majority leaf with a nonempty path; repeated
/// condition sets collapse to their first occurrence.
pub fn extract_rules(forest: &[DecisionTree]) -> Vec<Rule> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for tree in forest {
        for (path, errors, total) in tree.leaf_paths() {
            if path.is_empty() || 2 * errors <= total {
                continue;
            }
            let rule = Rule::new(path);
            if seen.insert(rule.condition_string()) {
                out.push(rule);
            }
        }
    }
    out
}

/// Attaches training stats and keeps rules meeting both gates.
pub fn filter_rules(
    rules: Vec<Rule>,
    min_precision: f64,
    min_support: usize,
    ds: &SparseDataset,
    rows: &[usize],
) -> Vec<Rule> {
    rules
        .into_par_iter()
        .map(|mut rule| {
            rule.stats_train = Some(evaluate_rule(&rule, ds, rows));
            rule
        })
        .filter(|rule| {
            let s = rule.stats_train.expect("stats attached above");
            s.precision >= min_precision && s.support >= min_support
        })
        .collect()
}

/// Consolidates rules carrying training stats:
/// 1. identical condition sets merge;
/// 2. a rule is dropped when a rule with a subset of its conditions matches a
///    superset of its rows with at least its f1;
/// 3. among rules sharing all but one condition, only the best survives
///    (higher f1, then fewer conditions, then condition order).
pub fn dedupe_rules(rules: Vec<Rule>, ds: &SparseDataset, rows: &[usize]) -> Vec<Rule> {
    let mut unique: Vec<Rule> = Vec::new();
    let mut seen = HashSet::new();
    for rule in rules {
        if seen.insert(rule.condition_string()) {
            unique.push(rule);
        }
    }
    let matched: Vec<BTreeSet<usize>> = unique
        .iter()
        .map(|r| matched_rows(r, ds, rows).into_iter().collect())
        .collect();
    let keys: Vec<BTreeSet<(&str, Op, u64)>> = unique.iter().map(Rule::key_set).collect();

    let mut alive = vec![true; unique.len()];
    for b in 0..unique.len() {
        for a in 0..unique.len() {
            if a == b || !alive[a] {
                continue;
            }
            if keys[a].is_subset(&keys[b])
                && matched[a].is_superset(&matched[b])
                && unique[a].train_f1() >= unique[b].train_f1()
            {
                alive[b] = false;
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..unique.len()).filter(|&i| alive[i]).collect();
    order.sort_by(|&x, &y| {
        unique[y]
            .train_f1()
            .total_cmp(&unique[x].train_f1())
            .then(keys[x].len().cmp(&keys[y].len()))
            .then_with(|| unique[x].condition_string().cmp(&unique[y].condition_string()))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let sibling = kept.iter().any(|&j| {
            let shared = keys[i].intersection(&keys[j]).count();
            shared >= 1 && shared + 1 >= keys[i].len().max(keys[j].len())
        });
        if !sibling {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<Rule>> = unique.into_iter().map(Some).collect();
    kept.into_iter()
        .map(|i| slots[i].take().expect("each rule kept once"))
        .collect()
}

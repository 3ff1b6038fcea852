//! Uses of a learned rule set: routing between models, corpus filtering, and
//! precision-recall comparison against baseline error classifiers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{extract_meta_features, FeatureConfig, SparseDataset};
use crate::ingest::{tokenize, ExampleRecord, Schema};
use crate::lexicon::{normalize_lemma, Lexicon, Pos};
use crate::pipeline::RuleReport;
use crate::rulekit::{fit_tree, matched_rows, Op, Rule, TrainingView};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("id {id:?} has no {model} prediction")]
    MissingId { id: String, model: &'static str },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_ROUTER_SIZE: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Base,
    Alternate,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Base => "base",
            Route::Alternate => "alternate",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Route {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Route::Base),
            "alternate" => Ok(Route::Alternate),
            other => Err(format!("unknown route {other:?}")),
        }
    }
}

/// The top rules of a report by test f1; a record matching any goes to the
/// alternate model.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    rules: Vec<Rule>,
}

impl Router {
    pub fn from_report(report: &RuleReport, n: usize) -> Self {
        Router {
            rules: report.ranked_rules().into_iter().take(n).cloned().collect(),
        }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn route_features(&self, counts: &BTreeMap<String, u32>) -> Route {
        let hit = self
            .rules
            .iter()
            .any(|r| r.matches_with(|name| counts.get(name).copied().unwrap_or(0)));
        if hit {
            Route::Alternate
        } else {
            Route::Base
        }
    }

    pub fn route(&self, r: &ExampleRecord, lex: &Lexicon, cfg: &FeatureConfig) -> Route {
        self.route_features(&extract_meta_features(r, lex, cfg))
    }
}

/// Reads `id<TAB>score` lines. Blank lines are skipped.
pub fn read_scores<R: BufRead>(input: R) -> Result<BTreeMap<String, f64>, DownstreamError> {
    let mut out = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DownstreamError::Format { line: i + 1, reason };
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `id<TAB>score`".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| bad(format!("score {score:?} is not a number")))?;
        if out.insert(id.to_owned(), score).is_some() {
            return Err(bad(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

/// Reads `id<TAB>base|alternate` lines.
pub fn read_routing<R: BufRead>(input: R) -> Result<BTreeMap<String, Route>, DownstreamError> {
    let mut out = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DownstreamError::Format { line: i + 1, reason };
        let (id, route) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `id<TAB>route`".into()))?;
        out.insert(id.to_owned(), route.trim().parse().map_err(bad)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixSummary {
    pub examples: usize,
    pub routed: usize,
    pub routed_fraction: f64,
    pub base_accuracy: f64,
    pub alternate_accuracy: f64,
    pub mix_accuracy: f64,
    /// Accuracies restricted to routed ids; `None` when nothing was routed.
    pub routed_base: Option<f64>,
    pub routed_alternate: Option<f64>,
    pub routed_mix: Option<f64>,
}

/// Mean per-id scores of the base model, the alternate model, and their
/// mixture under `routing`, overall and on the routed subset.
pub fn mix_eval(
    base: &BTreeMap<String, f64>,
    alternate: &BTreeMap<String, f64>,
    routing: &BTreeMap<String, Route>,
) -> Result<MixSummary, DownstreamError> {
    let (mut sb, mut sa, mut sm) = (0.0, 0.0, 0.0);
    let (mut rb, mut ra) = (0.0, 0.0);
    let mut routed = 0usize;
    for (id, &route) in routing {
        let b = *base.get(id).ok_or_else(|| DownstreamError::MissingId {
            id: id.clone(),
            model: "base",
        })?;
        let a = *alternate.get(id).ok_or_else(|| DownstreamError::MissingId {
            id: id.clone(),
            model: "alternate",
        })?;
        sb += b;
        sa += a;
        match route {
            Route::Base => sm += b,
            Route::Alternate => {
                sm += a;
                rb += b;
                ra += a;
                routed += 1;
            }
        }
    }
    let n = routing.len();
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    let sub = |s: f64| (routed > 0).then(|| s / routed as f64);
    Ok(MixSummary {
        examples: n,
        routed,
        routed_fraction: mean(routed as f64, n),
        base_accuracy: mean(sb, n),
        alternate_accuracy: mean(sa, n),
        mix_accuracy: mean(sm, n),
        routed_base: sub(rb),
        routed_alternate: sub(ra),
        routed_mix: sub(ra),
    })
}

/// `min(n / 3, 1)` where `n` counts golds equal to the answer after
/// lowercasing and trimming.
pub fn vqa_accuracy(answer: &str, golds: &[String]) -> f64 {
    const STEPS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let answer = answer.trim().to_lowercase();
    let n = golds.iter().filter(|g| g.trim().to_lowercase() == answer).count();
    STEPS[n.min(3)]
}

/// Indices of sentences mentioning a keyword or one of its hyponyms, plus
/// their immediate neighbours, ascending. Multiword lemmas match as
/// consecutive tokens.
pub fn refine_corpus(sentences: &[String], keywords: &[(String, Pos)], lex: &Lexicon) -> Vec<usize> {
    let mut targets: BTreeMap<Pos, HashSet<String>> = BTreeMap::new();
    for (lemma, pos) in keywords {
        targets.entry(*pos).or_default().extend(lex.hyponym_closure(lemma, *pos));
    }
    let longest = targets
        .values()
        .flatten()
        .map(|l| l.split('_').count())
        .max()
        .unwrap_or(0);
    let hits: Vec<bool> = sentences
        .par_iter()
        .map(|s| {
            let tokens: Vec<String> = tokenize(s).iter().map(|t| normalize_lemma(t)).collect();
            (0..tokens.len()).any(|i| {
                (1..=longest.min(tokens.len() - i)).any(|n| {
                    let gram = tokens[i..i + n].join("_");
                    targets
                        .iter()
                        .any(|(&pos, set)| set.contains(&gram) || set.contains(&lex.lemmatize(&gram, pos)))
                })
            })
        })
        .collect();
    let mut keep = BTreeSet::new();
    for (i, _) in hits.iter().enumerate().filter(|(_, &h)| h) {
        keep.insert(i);
        if i > 0 {
            keep.insert(i - 1);
        }
        if i + 1 < sentences.len() {
            keep.insert(i + 1);
        }
    }
    keep.into_iter().collect()
}

/// Lemmas named by the `>` conditions of `rules`, with channel prefixes
/// removed, in order of rule test f1 (descending) and first appearance.
pub fn keywords_from_rules(rules: &[&Rule], schema: &Schema, pos: Pos) -> Vec<(String, Pos)> {
    let mut ordered: Vec<&Rule> = rules.to_vec();
    ordered.sort_by(|a, b| b.test_f1().total_cmp(&a.test_f1()));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rule in ordered {
        for c in rule.conditions.iter().filter(|c| c.op == Op::Gt) {
            let lemma = schema
                .strip_channel(&c.feature)
                .map_or(c.feature.as_str(), |(_, rest)| rest);
            if !lemma.is_empty() && seen.insert(lemma.to_owned()) {
                out.push((lemma.to_owned(), pos));
            }
        }
    }
    out
}

/// Reads `lemma` or `lemma<TAB>pos` lines (pos defaults to noun).
pub fn read_keywords<R: BufRead>(input: R) -> Result<Vec<(String, Pos)>, DownstreamError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (lemma, pos) = match line.split_once('\t') {
            Some((l, p)) => (
                l,
                p.trim().parse().map_err(|e: String| DownstreamError::Format {
                    line: i + 1,
                    reason: e,
                })?,
            ),
            None => (line, Pos::Noun),
        };
        out.push((normalize_lemma(lemma), pos));
    }
    Ok(out)
}

/// One point of a precision-recall curve. For score-based classifiers
/// `threshold` is the score cut-off (`score >= threshold` predicts error);
/// for rule sets it is the number of rules used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub classifier: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn write_pr<W: Write>(points: &[PrPoint], mut out: W) -> std::io::Result<()> {
    for p in points {
        writeln!(out, "{}\t{}\t{}\t{}", p.classifier, p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}

/// Sweeps every distinct score, highest first.
pub fn pr_from_scores(classifier: &str, scores: &[f64], labels: &[bool]) -> Vec<PrPoint> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            tp += usize::from(labels[order[i]]);
            predicted += 1;
            i += 1;
        }
        out.push(PrPoint {
            classifier: classifier.to_owned(),
            threshold: t,
            precision: tp as f64 / predicted as f64,
            recall: if positives == 0 { 0.0 } else { tp as f64 / positives as f64 },
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    DecisionTree,
    Logreg,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::DecisionTree => "decision_tree",
            Baseline::Logreg => "logreg",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decision_tree" => Ok(Baseline::DecisionTree),
            "logreg" => Ok(Baseline::Logreg),
            other => Err(format!("unknown baseline {other:?} (expected decision_tree or logreg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGrid {
    pub tree_depth: usize,
    pub tree_min_leaf: usize,
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        BaselineGrid {
            tree_depth: 10,
            tree_min_leaf: 1,
            l2: 1e-3,
            max_epochs: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCurve {
    pub points: Vec<PrPoint>,
    /// False when logistic regression stopped at `max_epochs`.
    pub converged: bool,
}

/// Binarized L2-regularized logistic regression fit by full-batch gradient
/// descent. Returns `(weights, bias, converged)`.
pub fn fit_logreg(ds: &SparseDataset, grid: &BaselineGrid) -> (Vec<f64>, f64, bool) {
    let n = ds.len() as f64;
    let d = ds.vocab.len();
    let rows: Vec<Vec<usize>> = ds
        .rows
        .iter()
        .map(|r| r.entries().iter().map(|&(c, _)| c as usize).collect())
        .collect();
    // 1/L for the mean log-loss on 0/1 features plus the ridge term.
    let widest = rows.iter().map(Vec::len).max().unwrap_or(0) as f64;
    let step = 1.0 / (0.25 * (widest + 1.0) + grid.l2);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..grid.max_epochs {
        gw.iter_mut().zip(&w).for_each(|(g, wj)| *g = grid.l2 * wj);
        let mut gb = 0.0;
        for (cols, &label) in rows.iter().zip(&ds.labels) {
            let z = b + cols.iter().map(|&c| w[c]).sum::<f64>();
            let residual = (sigmoid(z) - f64::from(u8::from(label))) / n;
            gb += residual;
            for &c in cols {
                gw[c] += residual;
            }
        }
        let norm = (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if norm < grid.tolerance {
            return (w, b, true);
        }
        b -= step * gb;
        w.iter_mut().zip(&gw).for_each(|(wj, g)| *wj -= step * g);
    }
    (w, b, false)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn two_class(ds: &SparseDataset, what: &str) -> Result<(), DownstreamError> {
    let e = ds.error_count();
    if e == 0 || e == ds.len() {
        return Err(DownstreamError::Degenerate(format!("{what} split needs both classes")));
    }
    Ok(())
}

/// Fits a baseline error classifier on `train` and sweeps its scores on `test`.
pub fn baseline_pr(
    train: &SparseDataset,
    test: &SparseDataset,
    baseline: Baseline,
    grid: &BaselineGrid,
) -> Result<BaselineCurve, DownstreamError> {
    two_class(train, "train")?;
    two_class(test, "test")?;
    let test = test.reindex(&train.vocab);
    let (scores, converged): (Vec<f64>, bool) = match baseline {
        Baseline::DecisionTree => {
            let view = TrainingView::from_dataset(train);
            let all: Vec<usize> = (0..train.len()).collect();
            let tree = fit_tree(&view, &all, grid.tree_depth, grid.tree_min_leaf);
            let scores = (0..test.len()).map(|r| tree.score(|f| test.value(r, f))).collect();
            (scores, true)
        }
        Baseline::Logreg => {
            let (w, b, converged) = fit_logreg(train, grid);
            let scores = test
                .rows
                .iter()
                .map(|row| sigmoid(b + row.entries().iter().map(|&(c, _)| w[c as usize]).sum::<f64>()))
                .collect();
            (scores, converged)
        }
    };
    Ok(BaselineCurve {
        points: pr_from_scores(baseline.name(), &scores, &test.labels),
        converged,
    })
}

/// Point `i` is the union of the `i + 1` rules with highest test precision.
pub fn rules_pr(rules: &[&Rule], test: &SparseDataset) -> Vec<PrPoint> {
    let mut ordered: Vec<&Rule> = rules.to_vec();
    ordered.sort_by(|a, b| {
        let p = |r: &Rule| r.stats_test.map_or(0.0, |s| s.precision);
        p(b).total_cmp(&p(a))
            .then_with(|| b.test_f1().total_cmp(&a.test_f1()))
            .then_with(|| a.condition_string().cmp(&b.condition_string()))
    });
    let positives = test.error_count();
    let all: Vec<usize> = (0..test.len()).collect();
    let mut covered = vec![false; test.len()];
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut out = Vec::new();
    for (i, rule) in ordered.into_iter().enumerate() {
        for r in matched_rows(rule, test, &all) {
            if !covered[r] {
                covered[r] = true;
                predicted += 1;
                tp += usize::from(test.labels[r]);
            }
        }
        out.push(PrPoint {
            classifier: "rules".into(),
            threshold: (i + 1) as f64,
            precision: if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 },
            recall: if positives == 0 { 0.0 } else { tp as f64 / positives as f64 },
        });
    }
    out
}

//! End-to-end rule learning: split, cluster, iterate, filter on held-out data.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featurize::{self, FeatureConfig, FeaturizeError, SparseDataset};
use crate::ingest::{split_collection, split_indices, ExampleCollection, IngestError};
use crate::lexicon::Lexicon;
use crate::rulekit::{
    bagged_forest, dedupe_rules, evaluate_rule, extract_rules, filter_rules, matched_rows, KernelConfig, Rule,
    RuleError, TrainingView,
};
use crate::select::{chi_square_scores_rows, make_subdatasets, select_top_k, ClusterMode, ClusterOrigin, SelectError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no error examples to learn from")]
    NoErrors,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error("clustering errors: {0}")]
    Cluster(#[source] SelectError),
    #[error("cluster {cluster}, iteration {iteration}: {source}")]
    Select {
        cluster: String,
        iteration: usize,
        #[source]
        source: SelectError,
    },
    #[error("cluster {cluster}, iteration {iteration}: {source}")]
    Rules {
        cluster: String,
        iteration: usize,
        #[source]
        source: RuleError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    pub precision_threshold: f64,
    pub test_precision_threshold: f64,
    pub k_features: usize,
    pub max_iterations: usize,
    pub clusters: ClusterMode,
    pub kernel: KernelConfig,
    pub hypernym_depth: usize,
    pub no_hypernyms_for: BTreeSet<String>,
    pub remove_stopwords: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let features = FeatureConfig::default();
        PipelineConfig {
            train_fraction: 0.9,
            precision_threshold: 0.6,
            test_precision_threshold: 0.6,
            k_features: 100,
            max_iterations: 50,
            clusters: ClusterMode::default(),
            kernel: KernelConfig::default(),
            hypernym_depth: features.hypernym_depth,
            no_hypernyms_for: features.no_hypernyms_for,
            remove_stopwords: features.remove_stopwords,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("precision_threshold", self.precision_threshold)?;
        unit("test_precision_threshold", self.test_precision_threshold)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.max_iterations < 1 {
            return Err(PipelineError::Config("max_iterations must be at least 1".into()));
        }
        if self.k_features < 1 {
            return Err(PipelineError::Config("k_features must be at least 1".into()));
        }
        if self.clusters == (ClusterMode::Kmeans { k: 0 }) {
            return Err(PipelineError::Config("k-means needs k >= 1".into()));
        }
        self.kernel
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            hypernym_depth: self.hypernym_depth,
            no_hypernyms_for: self.no_hypernyms_for.clone(),
            remove_stopwords: self.remove_stopwords,
        }
    }

    /// First 16 hex digits of the SHA-256 of the JSON-serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .take(8)
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Error ids removed by one productive iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub rules: usize,
    pub covered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: String,
    pub origin: ClusterOrigin,
    pub errors: usize,
    pub iterations: Vec<IterationTrace>,
    pub rules: Vec<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_rules: usize,
    pub train_examples: usize,
    pub train_errors: usize,
    pub train_coverage: f64,
    pub test_examples: usize,
    pub test_errors: usize,
    pub test_coverage: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub summary: ReportSummary,
    pub clusters: Vec<ClusterReport>,
    pub config: PipelineConfig,
}

impl RuleReport {
    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.clusters.iter().flat_map(|c| c.rules.iter())
    }

    /// Rules ordered by test f1 descending, then cluster, then condition string.
    pub fn ranked_rules(&self) -> Vec<&Rule> {
        let mut rules: Vec<&Rule> = self.rules().collect();
        rules.sort_by(|a, b| {
            b.test_f1()
                .total_cmp(&a.test_f1())
                .then_with(|| a.cluster.cmp(&b.cluster))
                .then_with(|| a.condition_string().cmp(&b.condition_string()))
        });
        rules
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> serde_json::Result<RuleReport> {
        serde_json::from_str(s)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn forest_seed(seed: u64, cluster: usize, iteration: usize) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(cluster as u64)) ^ iteration as u64)
}

/// Output of [`learn_cluster`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnedCluster {
    pub rules: Vec<Rule>,
    pub iterations: Vec<IterationTrace>,
    /// Set when the sub-dataset lacks one of the classes.
    pub warning: Option<String>,
}

/// Iterative cover-removal learning on one sub-dataset (`members` index `ds`).
/// `cluster_index` only feeds seed derivation.
pub fn learn_cluster(
    ds: &SparseDataset,
    members: &[usize],
    cluster: &str,
    cluster_index: usize,
    cfg: &PipelineConfig,
) -> Result<LearnedCluster, PipelineError> {
    let errors = members.iter().filter(|&&r| ds.labels[r]).count();
    if errors == 0 || errors == members.len() {
        let which = if errors == 0 { "no error rows" } else { "no correct rows" };
        return Ok(LearnedCluster {
            warning: Some(format!("cluster {cluster} has {which}; skipped")),
            ..LearnedCluster::default()
        });
    }
    let mut remaining: Vec<usize> = members.to_vec();
    let mut rules = Vec::new();
    let mut traces = Vec::new();
    for iteration in 1..=cfg.max_iterations {
        if !remaining.iter().any(|&r| ds.labels[r]) {
            break;
        }
        let scores = chi_square_scores_rows(ds, &remaining).map_err(|source| PipelineError::Select {
            cluster: cluster.to_owned(),
            iteration,
            source,
        })?;
        let keep: BTreeSet<usize> = select_top_k(&scores, cfg.k_features, &ds.vocab).into_iter().collect();
        let projected = featurize::project(ds, &keep)?;
        let view = TrainingView::from_dataset(&projected);
        let forest = bagged_forest(&view, &remaining, &cfg.kernel, forest_seed(cfg.seed, cluster_index, iteration))
            .map_err(|source| PipelineError::Rules {
                cluster: cluster.to_owned(),
                iteration,
                source,
            })?;
        let candidates = filter_rules(
            extract_rules(&forest),
            cfg.precision_threshold,
            cfg.kernel.min_support,
            &projected,
            &remaining,
        );
        let mut found = dedupe_rules(candidates, &projected, &remaining);
        if found.is_empty() {
            break;
        }
        let mut covered = BTreeSet::new();
        for rule in &mut found {
            rule.iteration = iteration;
            rule.cluster = cluster.to_owned();
            covered.extend(
                matched_rows(rule, &projected, &remaining)
                    .into_iter()
                    .filter(|&r| ds.labels[r]),
            );
        }
        remaining.retain(|r| !covered.contains(r));
        traces.push(IterationTrace {
            iteration,
            rules: found.len(),
            covered: covered.iter().map(|&r| ds.ids[r].clone()).collect(),
        });
        rules.extend(found);
    }
    Ok(LearnedCluster {
        rules,
        iterations: traces,
        warning: None,
    })
}

fn coverage(ds: &SparseDataset, rules: &[&Rule]) -> f64 {
    let errors: Vec<usize> = (0..ds.len()).filter(|&r| ds.labels[r]).collect();
    if errors.is_empty() {
        return 0.0;
    }
    let hit = errors
        .iter()
        .filter(|&&r| rules.iter().any(|rule| rule.matches_row(ds, r)))
        .count();
    hit as f64 / errors.len() as f64
}

/// Learns on `train`, then keeps rules whose precision on `test` (same
/// vocabulary) reaches the held-out threshold with at least one match.
pub fn run_on_split(train: &SparseDataset, test: &SparseDataset, cfg: &PipelineConfig) -> Result<RuleReport, PipelineError> {
    cfg.validate()?;
    if train.error_count() == 0 {
        return Err(PipelineError::NoErrors);
    }
    let subs = make_subdatasets(train, cfg.clusters, cfg.seed).map_err(PipelineError::Cluster)?;
    let learned = subs
        .par_iter()
        .enumerate()
        .map(|(i, sub)| learn_cluster(train, &sub.members, &sub.cluster_id, i, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let test_rows: Vec<usize> = (0..test.len()).collect();
    let clusters: Vec<ClusterReport> = subs
        .iter()
        .zip(learned)
        .map(|(sub, learned)| {
            let LearnedCluster {
                rules,
                iterations,
                warning,
            } = learned;
            let rules = rules
                .into_iter()
                .filter_map(|mut rule| {
                    let stats = evaluate_rule(&rule, test, &test_rows);
                    rule.stats_test = Some(stats);
                    (stats.support >= 1 && stats.precision >= cfg.test_precision_threshold).then_some(rule)
                })
                .collect();
            ClusterReport {
                cluster: sub.cluster_id.clone(),
                origin: sub.origin,
                errors: sub.error_members(train).count(),
                iterations,
                rules,
                warning,
            }
        })
        .collect();

    let all: Vec<&Rule> = clusters.iter().flat_map(|c| c.rules.iter()).collect();
    let summary = ReportSummary {
        n_rules: all.len(),
        train_examples: train.len(),
        train_errors: train.error_count(),
        train_coverage: coverage(train, &all),
        test_examples: test.len(),
        test_errors: test.error_count(),
        test_coverage: coverage(test, &all),
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    Ok(RuleReport {
        summary,
        clusters,
        config: cfg.clone(),
    })
}

/// Stratified split of an already featurized dataset. The training vocabulary
/// keeps only features present in training rows; the test part is re-expressed
/// in it.
pub fn split_dataset(ds: &SparseDataset, cfg: &PipelineConfig) -> Result<(SparseDataset, SparseDataset), PipelineError> {
    let (train_rows, test_rows) = split_indices(&ds.labels, cfg.train_fraction, cfg.seed)?;
    let train = ds.select_rows(&train_rows);
    let present: BTreeSet<usize> = train
        .rows
        .iter()
        .flat_map(|r| r.entries().iter().map(|&(c, _)| c as usize))
        .collect();
    let train = featurize::project(&train, &present)?;
    let test = ds.select_rows(&test_rows).reindex(&train.vocab);
    Ok((train, test))
}

/// Runs the full loop on a featurized dataset.
pub fn run_pipeline_dataset(ds: &SparseDataset, cfg: &PipelineConfig) -> Result<RuleReport, PipelineError> {
    cfg.validate()?;
    if ds.error_count() == 0 {
        return Err(PipelineError::NoErrors);
    }
    let (train, test) = split_dataset(ds, cfg)?;
    run_on_split(&train, &test, cfg)
}

/// Runs the full loop on raw records: split, featurize the training part,
/// learn, and filter on the test part projected into the training vocabulary.
pub fn run_pipeline(c: &ExampleCollection, lex: &Lexicon, cfg: &PipelineConfig) -> Result<RuleReport, PipelineError> {
    cfg.validate()?;
    if c.error_count() == 0 {
        return Err(PipelineError::NoErrors);
    }
    let (train_c, test_c) = split_collection(c, cfg.train_fraction, cfg.seed)?;
    let fcfg = cfg.feature_config();
    let train = featurize::build_dataset(&train_c, lex, &fcfg);
    let test = featurize::build_dataset_with_vocab(&test_c, lex, &fcfg, &train.vocab);
    run_on_split(&train, &test, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

fn stats_line(label: &str, s: Option<crate::rulekit::RuleStats>) -> String {
    match s {
        Some(s) => format!(
            "  {label:<5} p {:.4}  r {:.4}  f1 {:.4}  support {}",
            s.precision, s.recall, s.f1, s.support
        ),
        None => format!("  {label:<5} n/a"),
    }
}

pub fn render_report(r: &RuleReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Structured => r.to_json().into_bytes(),
        ReportFormat::Text => render_text(r).into_bytes(),
    }
}

fn render_text(r: &RuleReport) -> String {
    let s = &r.summary;
    let mut out = String::new();
    let _ = writeln!(out, "failslice rule report");
    let _ = writeln!(out, "seed {}  config {}", s.seed, s.config_hash);
    let _ = writeln!(
        out,
        "train {} examples, {} errors, coverage {:.4}",
        s.train_examples, s.train_errors, s.train_coverage
    );
    let _ = writeln!(
        out,
        "test {} examples, {} errors, coverage {:.4}",
        s.test_examples, s.test_errors, s.test_coverage
    );
    if !r.clusters.is_empty() {
        let _ = writeln!(out, "clusters");
        for c in &r.clusters {
            let _ = write!(
                out,
                "  {} ({}): {} errors, {} productive iterations, {} rules",
                c.cluster,
                c.origin,
                c.errors,
                c.iterations.len(),
                c.rules.len()
            );
            if let Some(w) = &c.warning {
                let _ = write!(out, "  [{w}]");
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "{} rules", s.n_rules);
    for (i, rule) in r.ranked_rules().into_iter().enumerate() {
        let _ = writeln!(out, "rule {}  cluster {}  iteration {}", i + 1, rule.cluster, rule.iteration);
        let _ = writeln!(out, "  {}", rule.condition_string());
        let _ = writeln!(out, "{}", stats_line("train", rule.stats_train));
        let _ = writeln!(out, "{}", stats_line("test", rule.stats_test));
    }
    out
}

//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! failures to exit codes: 0 success, 1 usage, 2 data, 3 internal.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::downstream::{
    self, baseline_pr, keywords_from_rules, mix_eval, read_keywords, read_routing, read_scores, refine_corpus,
    rules_pr, write_pr, Baseline, BaselineGrid, DownstreamError, Router, DEFAULT_ROUTER_SIZE,
};
use crate::featurize::{self, FeaturizeError};
use crate::ingest::{parse_records, split_collection, ExampleCollection, IngestError, Schema};
use crate::lexicon::{parse_wordnet, Lexicon, Pos};
use crate::pipeline::{render_report, run_pipeline, PipelineConfig, PipelineError, ReportFormat, RuleReport};
use crate::select::ClusterMode;
use crate::synth::{Planted, PlantedSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DownstreamError> for CliError {
    fn from(e: DownstreamError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeaturizeError> for CliError {
    fn from(e: FeaturizeError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "failslice", version, about = "Learn rules describing where a model fails, and apply them")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn prediction records into a sparse meta-feature dataset.
    Featurize(FeaturizeArgs),
    /// Learn error rules and write JSON and text reports.
    Learn(LearnArgs),
    /// Route records to the base or alternate model with a report's top rules.
    Route(RouteArgs),
    /// Keep corpus sentences mentioning rule keywords, their hyponyms, or neighbours.
    Refine(RefineArgs),
    /// Precision-recall table for the rule set and baseline error classifiers.
    BenchPr(BenchArgs),
    /// Score a routed mixture of two models.
    Mix(MixArgs),
    /// Write synthetic records whose errors follow a planted two-feature rule.
    Synth(SynthArgs),
}

/// Settings shared by every command that featurizes or learns. Each flag may
/// also be given in a `--config` file as `name = value` (same name, without
/// dashes); flags win over the file, the file over defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Tuning {
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `kmeans:K` or `annotation`.
    #[arg(long)]
    pub clusters: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Minimum training precision of a rule.
    #[arg(long)]
    pub precision: Option<f64>,
    /// Minimum held-out precision of a rule.
    #[arg(long)]
    pub test_precision: Option<f64>,
    /// Features kept by chi-square selection at each iteration.
    #[arg(long)]
    pub k_features: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Comma-separated tree depths cycled through the forest.
    #[arg(long)]
    pub depth_grid: Option<String>,
    #[arg(long)]
    pub row_fraction: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub min_support: Option<usize>,
    /// Hypernym levels added per noun or verb token (0 disables).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channel whose tokens get no hypernyms (repeatable).
    #[arg(long)]
    pub no_hypernyms_for: Vec<String>,
    /// Keep stopwords as features.
    #[arg(long)]
    pub keep_stopwords: bool,
}

impl Tuning {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("clusters", self.clusters.clone());
        put("train_fraction", self.train_fraction.map(|v| v.to_string()));
        put("precision", self.precision.map(|v| v.to_string()));
        put("test_precision", self.test_precision.map(|v| v.to_string()));
        put("k_features", self.k_features.map(|v| v.to_string()));
        put("max_iterations", self.max_iterations.map(|v| v.to_string()));
        put("n_trees", self.n_trees.map(|v| v.to_string()));
        put("depth_grid", self.depth_grid.clone());
        put("row_fraction", self.row_fraction.map(|v| v.to_string()));
        put("min_leaf", self.min_leaf.map(|v| v.to_string()));
        put("min_support", self.min_support.map(|v| v.to_string()));
        put("depth", self.depth.map(|v| v.to_string()));
        put(
            "no_hypernyms_for",
            (!self.no_hypernyms_for.is_empty()).then(|| self.no_hypernyms_for.join(",")),
        );
        put("keep_stopwords", self.keep_stopwords.then(|| "true".to_string()));
        out
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (key, value) in parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))? {
                apply_setting(&mut cfg, &key, &value)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            }
        }
        for (key, value) in self.flag_pairs() {
            apply_setting(&mut cfg, key, &value).map_err(CliError::Usage)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `key = value` lines; `#` starts a comment. Dashes in keys read as underscores.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_owned()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("setting {key}: cannot parse {value:?}"))
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(|v| parse_num(key, v.trim()))
        .collect()
}

pub fn apply_setting(cfg: &mut PipelineConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "seed" => cfg.seed = parse_num(key, value)?,
        "clusters" => cfg.clusters = value.parse::<ClusterMode>()?,
        "train_fraction" => cfg.train_fraction = parse_num(key, value)?,
        "precision" => cfg.precision_threshold = parse_num(key, value)?,
        "test_precision" => cfg.test_precision_threshold = parse_num(key, value)?,
        "k_features" => cfg.k_features = parse_num(key, value)?,
        "max_iterations" => cfg.max_iterations = parse_num(key, value)?,
        "n_trees" => cfg.kernel.n_trees = parse_num(key, value)?,
        "depth_grid" => cfg.kernel.depth_grid = parse_list(key, value)?,
        "row_fraction" => cfg.kernel.row_fraction = parse_num(key, value)?,
        "min_leaf" => cfg.kernel.min_leaf = parse_num(key, value)?,
        "min_support" => cfg.kernel.min_support = parse_num(key, value)?,
        "depth" => cfg.hypernym_depth = parse_num(key, value)?,
        "no_hypernyms_for" => {
            cfg.no_hypernyms_for = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect::<BTreeSet<_>>()
        }
        "keep_stopwords" => cfg.remove_stopwords = !parse_num::<bool>(key, value)?,
        other => return Err(format!("unknown setting {other:?}")),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Prediction records, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// WordNet 3.0 `dict` directory.
    #[arg(long)]
    pub wordnet: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub wordnet: PathBuf,
    /// JSON report path; the text report goes next to it with a `.txt` extension.
    #[arg(long)]
    pub out_report: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Number of top rules (by held-out f1) used for routing.
    #[arg(long, default_value_t = DEFAULT_ROUTER_SIZE)]
    pub top: usize,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub wordnet: PathBuf,
    /// Output lines `id<TAB>base|alternate`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Derive keywords from this report's rules.
    #[arg(long, conflicts_with = "keywords", required_unless_present = "keywords")]
    pub report: Option<PathBuf>,
    /// Keyword file: `lemma` or `lemma<TAB>pos` per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Use only the top N report rules (by held-out f1).
    #[arg(long)]
    pub top: Option<usize>,
    /// Part of speech for report-derived keywords.
    #[arg(long, default_value = "noun")]
    pub pos: Pos,
    /// One sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub wordnet: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub wordnet: PathBuf,
    /// Report whose rules are benchmarked; its settings fix the split.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated: decision_tree, logreg.
    #[arg(long, value_delimiter = ',', default_value = "decision_tree,logreg")]
    pub baselines: Vec<Baseline>,
    /// Output lines `classifier<TAB>threshold<TAB>precision<TAB>recall`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Base model scores, `id<TAB>score`.
    #[arg(long)]
    pub base: PathBuf,
    /// Alternate model scores, `id<TAB>score`.
    #[arg(long)]
    pub alternate: PathBuf,
    /// Routing file from `route`.
    #[arg(long)]
    pub routing: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub features: usize,
    #[arg(long, default_value_t = 0.3)]
    pub density: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Progress lines go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            let _ = writeln!(err, "error: --threads must be at least 1");
            return 1;
        }
        builder = builder.num_threads(n);
    }
    let result = match builder.build() {
        Ok(pool) => {
            let mut buf = Vec::new();
            let r = pool.install(|| dispatch(&cli.command, &mut buf));
            let _ = out.write_all(&buf);
            r
        }
        Err(e) => Err(CliError::Internal(e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Featurize(a) => cmd_featurize(a, out),
        Command::Learn(a) => cmd_learn(a, out),
        Command::Route(a) => cmd_route(a, out),
        Command::Refine(a) => cmd_refine(a, out),
        Command::BenchPr(a) => cmd_bench_pr(a, out),
        Command::Mix(a) => cmd_mix(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("cannot write {}: {e}", path.display()))
}

fn load_records(path: &Path) -> Result<ExampleCollection> {
    let reader = open(path)?;
    parse_records(reader, &Schema::default()).map_err(|e| match e {
        IngestError::Lines(lines) => {
            let detail: Vec<String> = lines.iter().map(|l| format!("{}:{}", path.display(), l)).collect();
            CliError::Data(detail.join("\n"))
        }
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

fn load_lexicon(path: &Path) -> Result<Lexicon> {
    require(path, "WordNet directory")?;
    parse_wordnet(path).map_err(|e| CliError::Data(format!("WordNet: {e}")))
}

fn load_report(path: &Path) -> Result<RuleReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read report {}: {e}", path.display())))?;
    RuleReport::from_json(&text).map_err(|e| CliError::Data(format!("report {}: {e}", path.display())))
}

pub fn text_report_path(json: &Path) -> PathBuf {
    if json.extension().is_some_and(|e| e == "json") {
        json.with_extension("txt")
    } else {
        let mut s = json.as_os_str().to_owned();
        s.push(".txt");
        PathBuf::from(s)
    }
}

fn cmd_featurize(a: &FeaturizeArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.input, "input")?;
    require(&a.wordnet, "WordNet directory")?;
    let cfg = a.tuning.resolve()?;
    let records = load_records(&a.input)?;
    let lex = load_lexicon(&a.wordnet)?;
    let ds = featurize::build_dataset(&records, &lex, &cfg.feature_config());
    let mut w = create(&a.out)?;
    ds.write_text(&mut w)?;
    w.flush().map_err(write_err(&a.out))?;
    let _ = writeln!(out, "vocab {} rows {} errors {}", ds.vocab.len(), ds.len(), ds.error_count());
    Ok(())
}

fn cmd_learn(a: &LearnArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.input, "input")?;
    require(&a.wordnet, "WordNet directory")?;
    let cfg = a.tuning.resolve()?;
    let records = load_records(&a.input)?;
    let errors = records.error_count();
    if errors == 0 || errors == records.len() {
        return Err(CliError::Data(format!(
            "{} must contain both error and correct records ({errors} of {} are errors)",
            a.input.display(),
            records.len()
        )));
    }
    let lex = load_lexicon(&a.wordnet)?;
    let report = run_pipeline(&records, &lex, &cfg)?;
    fs::write(&a.out_report, render_report(&report, ReportFormat::Structured)).map_err(write_err(&a.out_report))?;
    let text_path = text_report_path(&a.out_report);
    fs::write(&text_path, render_report(&report, ReportFormat::Text)).map_err(write_err(&text_path))?;
    let s = &report.summary;
    let _ = writeln!(
        out,
        "seed {} rules {} train coverage {:.4} test coverage {:.4}",
        s.seed, s.n_rules, s.train_coverage, s.test_coverage
    );
    Ok(())
}

fn cmd_route(a: &RouteArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.input, "input")?;
    let report = load_report(&a.report)?;
    let records = load_records(&a.input)?;
    let lex = load_lexicon(&a.wordnet)?;
    let router = Router::from_report(&report, a.top);
    let fcfg = report.config.feature_config();
    let mut w = create(&a.out)?;
    let mut routed = 0usize;
    for r in records.records() {
        let route = router.route(r, &lex, &fcfg);
        routed += usize::from(route == downstream::Route::Alternate);
        writeln!(w, "{}\t{}", r.id, route).map_err(write_err(&a.out))?;
    }
    w.flush().map_err(write_err(&a.out))?;
    let _ = writeln!(out, "rules {} routed {} of {}", router.rules().len(), routed, records.len());
    Ok(())
}

fn cmd_refine(a: &RefineArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.corpus, "corpus")?;
    let keywords = match (&a.report, &a.keywords) {
        (Some(path), _) => {
            let report = load_report(path)?;
            let ranked = report.ranked_rules();
            let top = a.top.unwrap_or(ranked.len()).min(ranked.len());
            keywords_from_rules(&ranked[..top], &Schema::default(), a.pos)
        }
        (None, Some(path)) => read_keywords(open(path)?)?,
        (None, None) => return Err(CliError::Usage("give --report or --keywords".into())),
    };
    if keywords.is_empty() {
        return Err(CliError::Data("no keywords could be derived".into()));
    }
    let lex = load_lexicon(&a.wordnet)?;
    let sentences: Vec<String> = open(&a.corpus)?
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", a.corpus.display())))?;
    let kept = refine_corpus(&sentences, &keywords, &lex);
    let mut w = create(&a.out)?;
    for &i in &kept {
        writeln!(w, "{}", sentences[i]).map_err(write_err(&a.out))?;
    }
    w.flush().map_err(write_err(&a.out))?;
    let _ = writeln!(out, "keywords {} kept {} of {}", keywords.len(), kept.len(), sentences.len());
    Ok(())
}

fn cmd_bench_pr(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    require(&a.input, "input")?;
    let report = a.report.as_deref().map(load_report).transpose()?;
    let cfg = match &report {
        Some(r) => r.config.clone(),
        None => a.tuning.resolve()?,
    };
    let records = load_records(&a.input)?;
    let lex = load_lexicon(&a.wordnet)?;
    let (train_c, test_c) = split_collection(&records, cfg.train_fraction, cfg.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let fcfg = cfg.feature_config();
    let train = featurize::build_dataset(&train_c, &lex, &fcfg);
    let test = featurize::build_dataset_with_vocab(&test_c, &lex, &fcfg, &train.vocab);

    let mut points = Vec::new();
    if let Some(r) = &report {
        points.extend(rules_pr(&r.rules().collect::<Vec<_>>(), &test));
    }
    let grid = BaselineGrid::default();
    for &b in &a.baselines {
        let curve = baseline_pr(&train, &test, b, &grid)?;
        if !curve.converged {
            let _ = writeln!(out, "{}: stopped at {} epochs before converging", b.name(), grid.max_epochs);
        }
        points.extend(curve.points);
    }
    let mut w = create(&a.out)?;
    write_pr(&points, &mut w).map_err(write_err(&a.out))?;
    w.flush().map_err(write_err(&a.out))?;
    let _ = writeln!(out, "points {} seed {}", points.len(), cfg.seed);
    Ok(())
}

fn cmd_mix(a: &MixArgs, out: &mut dyn Write) -> Result<()> {
    let base = read_scores(open(&a.base)?)?;
    let alternate = read_scores(open(&a.alternate)?)?;
    let routing = read_routing(open(&a.routing)?)?;
    let summary = mix_eval(&base, &alternate, &routing)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    let _ = writeln!(out, "{json}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.features < 2 {
        return Err(CliError::Usage("--features must be at least 2".into()));
    }
    for (name, v) in [("density", a.density), ("noise", a.noise)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("--{name} must lie in [0, 1]")));
        }
    }
    let planted = Planted::generate(&PlantedSpec {
        n: a.n,
        features: a.features,
        density: a.density,
        noise: a.noise,
        seed: a.seed,
    });
    let mut w = create(&a.out)?;
    planted.collection.write_jsonl(&mut w).map_err(write_err(&a.out))?;
    w.flush().map_err(write_err(&a.out))?;
    let _ = writeln!(
        out,
        "records {} errors {} planted rule {}",
        planted.collection.len(),
        planted.collection.error_count(),
        planted.rule
    );
    Ok(())
}

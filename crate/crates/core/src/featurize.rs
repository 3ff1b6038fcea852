//! Meta-feature extraction and the sparse examples-by-features count matrix.
//!
//! Every token of a channel becomes a `<channel>_<lemma>` feature; nouns and
//! verbs also emit `<channel>_<hypernym>` features for the hypernyms on their
//! primary WordNet path, counted once per occurrence of the source token.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{ExampleCollection, ExampleRecord};
use crate::lexicon::{normalize_lemma, Lexicon};

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("unknown column id {0}")]
    UnknownColumn(usize),
    #[error("dataset line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("example id {0:?} cannot be written: ids must not contain whitespace")]
    UnwritableId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Hypernym levels added per noun/verb token.
    pub hypernym_depth: usize,
    /// Channels whose tokens are not expanded with hypernyms.
    pub no_hypernyms_for: BTreeSet<String>,
    pub remove_stopwords: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hypernym_depth: 4,
            no_hypernyms_for: BTreeSet::new(),
            remove_stopwords: true,
        }
    }
}

/// Meta-feature name to occurrence count.
pub type FeatureCounts = BTreeMap<String, u32>;

pub fn feature_name(channel: &str, lemma: &str) -> String {
    format!("{channel}_{lemma}")
}

/// Extracts the meta-feature counts of one record.
pub fn extract_meta_features(r: &ExampleRecord, lex: &Lexicon, cfg: &FeatureConfig) -> FeatureCounts {
    let mut out = FeatureCounts::new();
    for (channel, tokens) in &r.channels {
        let expand = cfg.hypernym_depth > 0 && !cfg.no_hypernyms_for.contains(channel);
        for token in tokens {
            let token = normalize_lemma(token);
            if token.is_empty() {
                continue;
            }
            if cfg.remove_stopwords && lex.is_stopword(&token) {
                continue;
            }
            let pos = lex.coarse_pos(&token);
            let lemma = lex.lemmatize(&token, pos);
            if cfg.remove_stopwords && lex.is_stopword(&lemma) {
                continue;
            }
            *out.entry(feature_name(channel, &lemma)).or_default() += 1;
            if expand && pos.has_hypernyms() {
                for h in lex.hypernyms_up_to(&lemma, pos, cfg.hypernym_depth) {
                    *out.entry(feature_name(channel, &h)).or_default() += 1;
                }
            }
        }
    }
    out
}

/// Ordered, unique feature names with a name-to-column index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureVocab {
    /// Builds a vocabulary, keeping the first occurrence of repeated names.
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = FeatureVocab::default();
        for name in names {
            let name = name.into();
            if !vocab.index.contains_key(&name) {
                vocab.index.insert(name.clone(), vocab.names.len());
                vocab.names.push(name);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, column: usize) -> &str {
        &self.names[column]
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Nonzero `(column, count)` entries of one example, ascending by column.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseRow {
    entries: Vec<(u32, u32)>,
}

impl SparseRow {
    /// Builds a row from arbitrary entries; zero counts are dropped and
    /// repeated columns summed.
    pub fn from_entries(mut entries: Vec<(u32, u32)>) -> Self {
        entries.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(entries.len());
        for (col, count) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == col => last.1 += count,
                _ => merged.push((col, count)),
            }
        }
        merged.retain(|e| e.1 > 0);
        SparseRow { entries: merged }
    }

    pub fn get(&self, column: usize) -> u32 {
        self.entries
            .binary_search_by_key(&(column as u32), |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Examples-by-meta-features count matrix with labels (`true` = error).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseDataset {
    pub vocab: FeatureVocab,
    pub rows: Vec<SparseRow>,
    pub labels: Vec<bool>,
    pub ids: Vec<String>,
    pub annotations: Vec<Option<String>>,
}

impl SparseDataset {
    /// Assembles a dataset from per-example feature maps. Without a vocabulary
    /// the union of all names, sorted, becomes the vocabulary; with one,
    /// names outside it are dropped.
    pub fn from_feature_maps(
        maps: &[FeatureCounts],
        ids: Vec<String>,
        labels: Vec<bool>,
        annotations: Vec<Option<String>>,
        vocab: Option<&FeatureVocab>,
    ) -> Self {
        assert_eq!(maps.len(), ids.len());
        assert_eq!(maps.len(), labels.len());
        assert_eq!(maps.len(), annotations.len());
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => {
                let names: BTreeSet<&String> = maps.iter().flat_map(|m| m.keys()).collect();
                FeatureVocab::new(names.into_iter().cloned())
            }
        };
        let rows = maps
            .iter()
            .map(|m| {
                SparseRow::from_entries(
                    m.iter()
                        .filter_map(|(name, &count)| vocab.column(name).map(|c| (c as u32, count)))
                        .collect(),
                )
            })
            .collect();
        SparseDataset {
            vocab,
            rows,
            labels,
            ids,
            annotations,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn error_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn value(&self, row: usize, column: usize) -> u32 {
        self.rows[row].get(column)
    }

    /// Count of a named feature in a row; names outside the vocabulary are 0.
    pub fn value_by_name(&self, row: usize, name: &str) -> u32 {
        self.vocab.column(name).map_or(0, |c| self.rows[row].get(c))
    }

    /// A dataset holding only `rows` (in the given order), same vocabulary.
    pub fn select_rows(&self, rows: &[usize]) -> SparseDataset {
        SparseDataset {
            vocab: self.vocab.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            annotations: rows.iter().map(|&i| self.annotations[i].clone()).collect(),
        }
    }

    /// Re-expresses this dataset in another vocabulary; features absent from
    /// `vocab` are dropped.
    pub fn reindex(&self, vocab: &FeatureVocab) -> SparseDataset {
        let map: Vec<Option<u32>> = self
            .vocab
            .names()
            .iter()
            .map(|n| vocab.column(n).map(|c| c as u32))
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| {
                SparseRow::from_entries(
                    r.entries()
                        .iter()
                        .filter_map(|&(c, v)| map[c as usize].map(|nc| (nc, v)))
                        .collect(),
                )
            })
            .collect();
        SparseDataset {
            vocab: vocab.clone(),
            rows,
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            annotations: self.annotations.clone(),
        }
    }

    /// Writes the dataset as text: a vocabulary block, then one
    /// `id label col:count ...` line per row. Annotations are not written.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<(), FeaturizeError> {
        writeln!(out, "# failslice sparse dataset v1")?;
        writeln!(out, "vocab {}", self.vocab.len())?;
        for name in self.vocab.names() {
            writeln!(out, "{name}")?;
        }
        writeln!(out, "rows {}", self.len())?;
        for (i, row) in self.rows.iter().enumerate() {
            let id = &self.ids[i];
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(FeaturizeError::UnwritableId(id.clone()));
            }
            write!(out, "{id} {}", u8::from(self.labels[i]))?;
            for (c, v) in row.entries() {
                write!(out, " {c}:{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<SparseDataset, FeaturizeError> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String), FeaturizeError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(FeaturizeError::Format {
                    line: 0,
                    reason: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, reason: &str| FeaturizeError::Format {
            line,
            reason: reason.to_owned(),
        };
        let (n, header) = next("header")?;
        if !header.starts_with("# failslice sparse dataset") {
            return Err(bad(n, "missing dataset header"));
        }
        let count = |n: usize, line: &str, key: &str| -> Result<usize, FeaturizeError> {
            line.strip_prefix(key)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(n, &format!("expected `{key}<count>`")))
        };
        let (n, line) = next("vocab size")?;
        let width = count(n, &line, "vocab ")?;
        let mut names = Vec::with_capacity(width);
        for _ in 0..width {
            names.push(next("vocab name")?.1);
        }
        let vocab = FeatureVocab::new(names);
        if vocab.len() != width {
            return Err(bad(n, "duplicate vocabulary names"));
        }
        let (n, line) = next("row count")?;
        let height = count(n, &line, "rows ")?;
        let mut ds = SparseDataset {
            vocab,
            ..SparseDataset::default()
        };
        for _ in 0..height {
            let (n, line) = next("row")?;
            let mut fields = line.split_ascii_whitespace();
            let id = fields.next().ok_or_else(|| bad(n, "empty row"))?;
            let label = match fields.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad(n, "label must be 0 or 1")),
            };
            let mut entries = Vec::new();
            for f in fields {
                let (c, v) = f
                    .split_once(':')
                    .and_then(|(c, v)| Some((c.parse::<u32>().ok()?, v.parse::<u32>().ok()?)))
                    .ok_or_else(|| bad(n, &format!("bad entry {f:?}")))?;
                if c as usize >= width || v == 0 {
                    return Err(bad(n, &format!("entry {f:?} out of range")));
                }
                entries.push((c, v));
            }
            ds.rows.push(SparseRow::from_entries(entries));
            ds.labels.push(label);
            ds.ids.push(id.to_owned());
            ds.annotations.push(None);
        }
        Ok(ds)
    }
}

/// Per-record feature maps, computed in parallel, in record order.
pub fn extract_all(c: &ExampleCollection, lex: &Lexicon, cfg: &FeatureConfig) -> Vec<FeatureCounts> {
    c.records()
        .par_iter()
        .map(|r| extract_meta_features(r, lex, cfg))
        .collect()
}

fn assemble(c: &ExampleCollection, maps: &[FeatureCounts], vocab: Option<&FeatureVocab>) -> SparseDataset {
    let records = c.records();
    SparseDataset::from_feature_maps(
        maps,
        records.iter().map(|r| r.id.clone()).collect(),
        records.iter().map(ExampleRecord::is_error).collect(),
        records.iter().map(|r| r.annotation.clone()).collect(),
        vocab,
    )
}

/// Featurizes a collection; the vocabulary is the sorted union of all names.
pub fn build_dataset(c: &ExampleCollection, lex: &Lexicon, cfg: &FeatureConfig) -> SparseDataset {
    assemble(c, &extract_all(c, lex, cfg), None)
}

/// Featurizes a collection against a fixed vocabulary (unseen names become 0).
pub fn build_dataset_with_vocab(
    c: &ExampleCollection,
    lex: &Lexicon,
    cfg: &FeatureConfig,
    vocab: &FeatureVocab,
) -> SparseDataset {
    assemble(c, &extract_all(c, lex, cfg), Some(vocab))
}

/// Keeps the given columns (in ascending original order) and re-indexes them.
pub fn project(ds: &SparseDataset, keep: &BTreeSet<usize>) -> Result<SparseDataset, FeaturizeError> {
    if let Some(&bad) = keep.iter().find(|&&c| c >= ds.vocab.len()) {
        return Err(FeaturizeError::UnknownColumn(bad));
    }
    let vocab = FeatureVocab::new(keep.iter().map(|&c| ds.vocab.name(c).to_owned()));
    Ok(ds.reindex(&vocab))
}

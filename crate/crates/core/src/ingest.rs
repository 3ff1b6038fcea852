//! Prediction-log ingestion.
//!
//! Records arrive as UTF-8 JSON lines. Each line is a flat object with an `id`,
//! an `outcome` (`"error"` or `"correct"`), an optional `annotation`, an optional
//! `weight`, and one key per declared channel. Channel values are either raw text
//! (tokenized here) or a list of pre-split tokens.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use thiserror::Error;

const RESERVED_KEYS: [&str; 4] = ["id", "outcome", "annotation", "weight"];

/// One problem found while parsing a record stream.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown channel {channel:?}")]
    UnknownChannel { line: usize, channel: String },
}

impl LineError {
    pub fn line(&self) -> usize {
        match self {
            LineError::Malformed { line, .. }
            | LineError::DuplicateId { line, .. }
            | LineError::UnknownChannel { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{} invalid record line(s); first: {}", .0.len(), .0[0])]
    Lines(Vec<LineError>),
    #[error("failed to read records: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("split would leave the {0} part empty")]
    EmptyPart(&'static str),
}

/// Binary outcome of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Error,
    Correct,
}

impl Outcome {
    pub fn is_error(self) -> bool {
        self == Outcome::Error
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Error => "error",
            Outcome::Correct => "correct",
        }
    }
}

/// Declared channel names, e.g. `question`, `answer`, `image_object`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    channels: Vec<String>,
}

impl Schema {
    pub fn new<I, S>(channels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut channels: Vec<String> = channels.into_iter().map(Into::into).collect();
        channels.dedup();
        Schema { channels }
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn contains(&self, channel: &str) -> bool {
        self.channels.iter().any(|c| c == channel)
    }

    /// Splits a meta-feature name into its channel prefix and the remainder,
    /// preferring the longest matching channel (`image_object_person` over `image_...`).
    pub fn strip_channel<'a>(&self, feature: &'a str) -> Option<(&'a str, &'a str)> {
        self.channels
            .iter()
            .filter(|c| {
                feature.len() > c.len() + 1
                    && feature.starts_with(c.as_str())
                    && feature.as_bytes()[c.len()] == b'_'
            })
            .max_by_key(|c| c.len())
            .map(|c| (&feature[..c.len()], &feature[c.len() + 1..]))
    }
}

impl Default for Schema {
    fn default() -> Self {
        Schema::new(["question", "answer", "image_object", "image_caption"])
    }
}

/// One model prediction event.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    /// Channel name to tokens, in declaration order of the source line.
    pub channels: BTreeMap<String, Vec<String>>,
    pub outcome: Outcome,
    pub annotation: Option<String>,
    pub weight: f64,
}

impl ExampleRecord {
    pub fn new(id: impl Into<String>, outcome: Outcome) -> Self {
        ExampleRecord {
            id: id.into(),
            channels: BTreeMap::new(),
            outcome,
            annotation: None,
            weight: 1.0,
        }
    }

    pub fn with_channel<I, S>(mut self, name: impl Into<String>, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.channels
            .insert(name.into(), tokens.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_annotation(mut self, annotation: impl Into<String>) -> Self {
        self.annotation = Some(annotation.into());
        self
    }

    pub fn is_error(&self) -> bool {
        self.outcome.is_error()
    }

    fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(self.id.clone()));
        obj.insert("outcome".into(), Value::String(self.outcome.as_str().into()));
        if let Some(a) = &self.annotation {
            obj.insert("annotation".into(), Value::String(a.clone()));
        }
        if self.weight != 1.0 {
            obj.insert("weight".into(), Value::from(self.weight));
        }
        for (name, tokens) in &self.channels {
            obj.insert(
                name.clone(),
                Value::Array(tokens.iter().cloned().map(Value::String).collect()),
            );
        }
        Value::Object(obj)
    }
}

/// An ordered, validated set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleCollection {
    records: Vec<ExampleRecord>,
    schema: Schema,
    error_count: usize,
}

impl ExampleCollection {
    /// Builds a collection, checking id uniqueness and channel names.
    pub fn new(schema: Schema, records: Vec<ExampleRecord>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        let mut problems = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if let Some(e) = validate(r, &schema, line) {
                problems.push(e);
            } else if !seen.insert(r.id.clone()) {
                problems.push(LineError::DuplicateId {
                    line,
                    id: r.id.clone(),
                });
            }
        }
        if !problems.is_empty() {
            return Err(IngestError::Lines(problems));
        }
        Ok(Self::from_parts(schema, records))
    }

    fn from_parts(schema: Schema, records: Vec<ExampleRecord>) -> Self {
        let error_count = records.iter().filter(|r| r.is_error()).count();
        ExampleCollection {
            records,
            schema,
            error_count,
        }
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn error_count(&self) -> usize {
        self.error_count
    }

    /// Writes the collection as JSON lines (channels as token lists).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, &r.to_json())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn validate(r: &ExampleRecord, schema: &Schema, line: usize) -> Option<LineError> {
    if r.id.is_empty() {
        return Some(LineError::Malformed {
            line,
            reason: "empty id".into(),
        });
    }
    if r.channels.is_empty() {
        return Some(LineError::Malformed {
            line,
            reason: "record has no channels".into(),
        });
    }
    if !(r.weight.is_finite() && r.weight >= 0.0) {
        return Some(LineError::Malformed {
            line,
            reason: format!("weight must be a nonnegative number, got {}", r.weight),
        });
    }
    r.channels
        .keys()
        .find(|c| !schema.contains(c))
        .map(|c| LineError::UnknownChannel {
            line,
            channel: c.clone(),
        })
}

/// Splits raw text into lowercase-preserving word tokens: maximal runs of
/// alphanumerics and underscores. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn parse_line(text: &str, line: usize, schema: &Schema) -> Result<ExampleRecord, LineError> {
    let malformed = |reason: String| LineError::Malformed { line, reason };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(malformed("expected a JSON object".into()));
    };
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed("`id` must be a string".into())),
        None => return Err(malformed("missing `id`".into())),
    };
    let outcome = match obj.get("outcome").and_then(Value::as_str) {
        Some("error") => Outcome::Error,
        Some("correct") => Outcome::Correct,
        Some(other) => {
            return Err(malformed(format!(
                "`outcome` must be \"error\" or \"correct\", got {other:?}"
            )))
        }
        None => return Err(malformed("missing or non-string `outcome`".into())),
    };
    let annotation = match obj.get("annotation") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(malformed("`annotation` must be a string".into())),
    };
    let weight = match obj.get("weight") {
        None | Some(Value::Null) => 1.0,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| malformed("`weight` must be a number".into()))?,
    };

    let mut record = ExampleRecord::new(id, outcome);
    record.annotation = annotation;
    record.weight = weight;
    for (key, value) in &obj {
        if RESERVED_KEYS.contains(&key.as_str()) {
            continue;
        }
        if !schema.contains(key) {
            return Err(LineError::UnknownChannel {
                line,
                channel: key.clone(),
            });
        }
        let tokens = match value {
            Value::String(text) => tokenize(text),
            Value::Array(items) => items
                .iter()
                .map(|t| t.as_str().map(str::to_owned))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| malformed(format!("channel {key:?} must hold strings")))?,
            _ => {
                return Err(malformed(format!(
                    "channel {key:?} must be a string or a list of strings"
                )))
            }
        };
        record.channels.insert(key.clone(), tokens);
    }
    match validate(&record, schema, line) {
        Some(e) => Err(e),
        None => Ok(record),
    }
}

/// Parses line-delimited records. Blank lines are ignored. Every invalid line
/// is reported; the collection is returned only when all lines are valid.
pub fn parse_records<R: BufRead>(reader: R, schema: &Schema) -> Result<ExampleCollection, IngestError> {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        match parse_line(&text, line, schema) {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    records.push(record);
                } else {
                    problems.push(LineError::DuplicateId {
                        line,
                        id: record.id,
                    });
                }
            }
            Err(e) => problems.push(e),
        }
    }
    if problems.is_empty() {
        Ok(ExampleCollection::from_parts(schema.clone(), records))
    } else {
        Err(IngestError::Lines(problems))
    }
}

/// Number of positives to place in a part of size `part` drawn from `total`
/// rows with `positives` positives, keeping the part's positive rate as close
/// to the global rate as possible.
pub(crate) fn stratified_share(positives: usize, total: usize, part: usize) -> usize {
    if total == 0 {
        return 0;
    }
    let exact = positives as f64 * part as f64 / total as f64;
    let negatives = total - positives;
    let lo = part.saturating_sub(negatives);
    (exact.round() as usize).clamp(lo, positives.min(part))
}

/// Chooses a stratified subset of `indices` of size `take`, returned in
/// ascending index order. `is_positive` classifies each index.
pub(crate) fn stratified_sample(
    indices: &[usize],
    take: usize,
    is_positive: impl Fn(usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        indices.iter().copied().partition(|&i| is_positive(i));
    let take_pos = stratified_share(pos.len(), indices.len(), take);
    let take_neg = take - take_pos;
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut chosen: Vec<usize> = pos[..take_pos]
        .iter()
        .chain(&neg[..take_neg])
        .copied()
        .collect();
    chosen.sort_unstable();
    chosen
}

/// Validates a split fraction and returns the training part size for `n` rows.
pub(crate) fn train_size(n: usize, train_fraction: f64) -> Result<usize, IngestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::Parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let size = (train_fraction * n as f64).round() as usize;
    if size == 0 {
        return Err(IngestError::EmptyPart("train"));
    }
    if size >= n {
        return Err(IngestError::EmptyPart("test"));
    }
    Ok(size)
}

/// Row indices of a stratified train/test partition, both ascending.
pub fn split_indices(
    labels: &[bool],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), IngestError> {
    let n = labels.len();
    let size = train_size(n, train_fraction)?;
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = stratified_sample(&all, size, |i| labels[i], &mut rng);
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// Stratified, seeded train/test split. Record order is preserved in both parts.
pub fn split_collection(
    c: &ExampleCollection,
    train_fraction: f64,
    seed: u64,
) -> Result<(ExampleCollection, ExampleCollection), IngestError> {
    if c.is_empty() {
        return Err(IngestError::Parameter("cannot split an empty collection".into()));
    }
    let labels: Vec<bool> = c.records.iter().map(ExampleRecord::is_error).collect();
    let (train, test) = split_indices(&labels, train_fraction, seed)?;
    let pick = |idx: &[usize]| {
        ExampleCollection::from_parts(
            c.schema.clone(),
            idx.iter().map(|&i| c.records[i].clone()).collect(),
        )
    };
    Ok((pick(&train), pick(&test)))
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

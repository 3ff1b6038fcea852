//! WordNet-backed lexical services: lemmatization, coarse part-of-speech,
//! hypernym expansion and hyponym closure.
//!
//! The reader understands the WordNet 3.0 database layout: `data.<pos>`,
//! `index.<pos>` and `<pos>.exc` files. Synsets are keyed by their POS and the
//! byte-offset field written at the start of each data line.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

static STOPWORDS: &str = include_str!("stopwords.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("missing lexicon file {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: malformed line at byte offset {offset}: {reason}")]
    Malformed {
        file: String,
        offset: usize,
        reason: String,
    },
    #[error("hypernym pointer from {from} to unknown synset {to}")]
    DanglingPointer { from: SynsetId, to: SynsetId },
    #[error("hypernym graph contains a cycle through {0}")]
    Cycle(SynsetId),
}

/// Coarse part of speech. Adjective satellites fold into `Adj`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    fn idx(self) -> usize {
        self as usize
    }

    /// Name used by the database files (`data.noun`, `verb.exc`, ...).
    pub fn file_stem(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adj => "adj",
            Pos::Adv => "adv",
        }
    }

    pub fn from_char(c: char) -> Option<Pos> {
        match c {
            'n' => Some(Pos::Noun),
            'v' => Some(Pos::Verb),
            'a' | 's' => Some(Pos::Adj),
            'r' => Some(Pos::Adv),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pos::Noun => 'n',
            Pos::Verb => 'v',
            Pos::Adj => 'a',
            Pos::Adv => 'r',
        }
    }

    pub fn has_hypernyms(self) -> bool {
        matches!(self, Pos::Noun | Pos::Verb)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

impl std::str::FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noun" | "n" => Ok(Pos::Noun),
            "verb" | "v" => Ok(Pos::Verb),
            "adj" | "a" | "s" => Ok(Pos::Adj),
            "adv" | "r" => Ok(Pos::Adv),
            other => Err(format!("unknown part of speech {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynsetId {
    pub pos: Pos,
    pub offset: u32,
}

impl SynsetId {
    pub fn new(pos: Pos, offset: u32) -> Self {
        SynsetId { pos, offset }
    }
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}-{}", self.offset, self.pos.as_char())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synset {
    /// Lowercased lemmas in database order; multiword lemmas joined by `_`.
    pub lemmas: Vec<String>,
    pub pos: Pos,
}

// Suffix rewrites tried in order, as in WordNet's morphy.
const NOUN_RULES: &[(&str, &str)] = &[
    ("s", ""),
    ("ses", "s"),
    ("xes", "x"),
    ("zes", "z"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("men", "man"),
    ("ies", "y"),
];
const VERB_RULES: &[(&str, &str)] = &[
    ("s", ""),
    ("ies", "y"),
    ("es", "e"),
    ("es", ""),
    ("ed", "e"),
    ("ed", ""),
    ("ing", "e"),
    ("ing", ""),
];
const ADJ_RULES: &[(&str, &str)] = &[("er", ""), ("est", ""), ("er", "e"), ("est", "e")];

fn morph_rules(pos: Pos) -> &'static [(&'static str, &'static str)] {
    match pos {
        Pos::Noun => NOUN_RULES,
        Pos::Verb => VERB_RULES,
        Pos::Adj => ADJ_RULES,
        Pos::Adv => &[],
    }
}

/// Lowercases and joins words with underscores, the spelling used for
/// multiword lemmas and meta-feature names.
pub fn normalize_lemma(word: &str) -> String {
    word.trim()
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

/// Parsed lexical database. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    synsets: HashMap<SynsetId, Synset>,
    hypernyms: HashMap<SynsetId, Vec<SynsetId>>,
    hyponyms: HashMap<SynsetId, Vec<SynsetId>>,
    senses: [HashMap<String, Vec<SynsetId>>; 4],
    exceptions: [HashMap<String, Vec<String>>; 4],
    stopwords: HashSet<String>,
    synset_counts: [usize; 4],
    dropped_edges: Vec<(SynsetId, SynsetId)>,
}

impl Lexicon {
    pub fn builder() -> LexiconBuilder {
        LexiconBuilder::default()
    }

    pub fn synset(&self, id: SynsetId) -> Option<&Synset> {
        self.synsets.get(&id)
    }

    pub fn synset_count(&self, pos: Pos) -> usize {
        self.synset_counts[pos.idx()]
    }

    /// Synsets of `(lemma, pos)` in database sense order.
    pub fn senses(&self, lemma: &str, pos: Pos) -> &[SynsetId] {
        self.senses[pos.idx()]
            .get(lemma)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn hypernyms_of(&self, id: SynsetId) -> &[SynsetId] {
        self.hypernyms.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn hyponyms_of(&self, id: SynsetId) -> &[SynsetId] {
        self.hyponyms.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    /// Hypernym pointers `(child, parent)` removed while reading the database
    /// because they closed a cycle. WordNet 3.0 has one: restrain/inhibit.
    pub fn dropped_cycle_edges(&self) -> &[(SynsetId, SynsetId)] {
        &self.dropped_edges
    }

    fn lemmatize_once(&self, token: &str, pos: Pos) -> Option<String> {
        if let Some(lemma) = self.exceptions[pos.idx()].get(token).and_then(|l| l.first()) {
            return Some(lemma.clone());
        }
        morph_rules(pos).iter().find_map(|(suffix, repl)| {
            let stem = token.strip_suffix(suffix)?;
            if stem.is_empty() {
                return None;
            }
            let candidate = format!("{stem}{repl}");
            self.senses[pos.idx()]
                .contains_key(&candidate)
                .then_some(candidate)
        })
    }

    /// Base form of a lowercase token. Exceptions win, then the first suffix
    /// rewrite that lands on an indexed lemma; otherwise the token itself.
    /// Rewrites are reapplied until they stop changing the form, which makes
    /// the function idempotent.
    pub fn lemmatize(&self, token: &str, pos: Pos) -> String {
        let mut form = token.to_owned();
        let mut seen = vec![form.clone()];
        while let Some(next) = self.lemmatize_once(&form, pos) {
            if seen.contains(&next) {
                break;
            }
            seen.push(next.clone());
            form = next;
        }
        form
    }

    /// POS under which the token (or its lemma) has the most senses.
    /// Ties prefer noun, verb, adj, adv in that order; unknown words are nouns.
    pub fn coarse_pos(&self, token: &str) -> Pos {
        let mut best = (Pos::Noun, 0usize);
        for pos in Pos::ALL {
            let lemma = self.lemmatize(token, pos);
            let n = self.senses(&lemma, pos).len();
            if n > best.1 {
                best = (pos, n);
            }
        }
        best.0
    }

    /// First lemma of each synset on the primary hypernym path of the
    /// lemma's first sense, up to `depth` levels. The primary path follows the
    /// first hypernym pointer listed for each synset.
    pub fn hypernyms_up_to(&self, lemma: &str, pos: Pos, depth: usize) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if !pos.has_hypernyms() {
            return out;
        }
        let lemma = normalize_lemma(lemma);
        let Some(&start) = self.senses(&lemma, pos).first() else {
            return out;
        };
        let mut current = start;
        for _ in 0..depth {
            let Some(&parent) = self.hypernyms_of(current).first() else {
                break;
            };
            if let Some(first) = self.synsets.get(&parent).and_then(|s| s.lemmas.first()) {
                out.insert(first.clone());
            }
            current = parent;
        }
        if let Some(own) = self.synsets.get(&start) {
            for l in &own.lemmas {
                out.remove(l);
            }
        }
        out
    }

    /// Every lemma reachable downward (hyponyms and instances, transitively)
    /// from all senses of `(lemma, pos)`, including the senses' own lemmas and
    /// the argument itself.
    pub fn hyponym_closure(&self, lemma: &str, pos: Pos) -> BTreeSet<String> {
        let lemma = normalize_lemma(lemma);
        let mut out = BTreeSet::new();
        let mut seen: HashSet<SynsetId> = HashSet::new();
        let mut queue: VecDeque<SynsetId> = self.senses(&lemma, pos).iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(s) = self.synsets.get(&id) {
                out.extend(s.lemmas.iter().cloned());
            }
            queue.extend(self.hyponyms_of(id).iter().copied());
        }
        out.insert(lemma);
        out
    }
}

/// Assembles a [`Lexicon`] and validates its hypernym graph.
#[derive(Debug, Clone)]
pub struct LexiconBuilder {
    lex: Lexicon,
}

impl Default for LexiconBuilder {
    fn default() -> Self {
        let lex = Lexicon {
            stopwords: STOPWORDS
                .lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_owned)
                .collect(),
            ..Lexicon::default()
        };
        LexiconBuilder { lex }
    }
}

impl LexiconBuilder {
    pub fn synset(&mut self, id: SynsetId, lemmas: &[&str]) -> &mut Self {
        self.insert_synset(
            id,
            Synset {
                lemmas: lemmas.iter().map(|l| normalize_lemma(l)).collect(),
                pos: id.pos,
            },
        );
        self
    }

    fn insert_synset(&mut self, id: SynsetId, synset: Synset) {
        if self.lex.synsets.insert(id, synset).is_none() {
            self.lex.synset_counts[id.pos.idx()] += 1;
        }
    }

    pub fn hypernym(&mut self, child: SynsetId, parent: SynsetId) -> &mut Self {
        self.lex.hypernyms.entry(child).or_default().push(parent);
        self
    }

    /// Appends a sense (in order) for `lemma`.
    pub fn sense(&mut self, lemma: &str, id: SynsetId) -> &mut Self {
        self.lex.senses[id.pos.idx()]
            .entry(normalize_lemma(lemma))
            .or_default()
            .push(id);
        self
    }

    pub fn exception(&mut self, inflected: &str, pos: Pos, lemma: &str) -> &mut Self {
        self.lex.exceptions[pos.idx()]
            .entry(inflected.to_owned())
            .or_default()
            .push(lemma.to_owned());
        self
    }

    pub fn stopwords<I, S>(&mut self, words: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.lex.stopwords = words.into_iter().map(Into::into).collect();
        self
    }

    /// Checks pointers and acyclicity, then derives the hyponym edges.
    pub fn build(&self) -> Result<Lexicon, LexiconError> {
        let mut lex = self.lex.clone();
        let mut parents: Vec<(&SynsetId, &Vec<SynsetId>)> = lex.hypernyms.iter().collect();
        parents.sort_unstable_by_key(|(id, _)| **id);
        for (&child, ps) in &parents {
            for &p in ps.iter() {
                if !lex.synsets.contains_key(&p) {
                    return Err(LexiconError::DanglingPointer { from: child, to: p });
                }
            }
        }
        check_acyclic(&lex.hypernyms)?;
        let mut hyponyms: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
        for (&child, ps) in parents {
            for &p in ps {
                hyponyms.entry(p).or_default().push(child);
            }
        }
        for list in hyponyms.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        lex.hyponyms = hyponyms;
        Ok(lex)
    }
}

/// Removes the back edges found by a depth-first search that visits synsets in
/// ascending id order and follows pointers in file order.
fn break_cycles(hypernyms: &mut HashMap<SynsetId, Vec<SynsetId>>) -> Vec<(SynsetId, SynsetId)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut roots: Vec<SynsetId> = hypernyms.keys().copied().collect();
    roots.sort_unstable();
    let mut marks: HashMap<SynsetId, Mark> = HashMap::new();
    let mut dropped = Vec::new();
    for root in roots {
        if marks.contains_key(&root) {
            continue;
        }
        marks.insert(root, Mark::Open);
        let mut stack: Vec<(SynsetId, usize)> = vec![(root, 0)];
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let parents = hypernyms.get(&node).map(Vec::as_slice).unwrap_or(&[]);
            if *next >= parents.len() {
                marks.insert(node, Mark::Done);
                stack.pop();
                continue;
            }
            let parent = parents[*next];
            *next += 1;
            match marks.get(&parent) {
                Some(Mark::Open) => dropped.push((node, parent)),
                Some(Mark::Done) => {}
                None => {
                    marks.insert(parent, Mark::Open);
                    stack.push((parent, 0));
                }
            }
        }
    }
    for (child, parent) in &dropped {
        if let Some(ps) = hypernyms.get_mut(child) {
            ps.retain(|p| p != parent);
        }
    }
    dropped
}

/// Kahn's algorithm over the noun/verb hypernym graph.
fn check_acyclic(hypernyms: &HashMap<SynsetId, Vec<SynsetId>>) -> Result<(), LexiconError> {
    let mut indegree: HashMap<SynsetId, usize> = HashMap::new();
    for (&child, parents) in hypernyms {
        if !child.pos.has_hypernyms() {
            continue;
        }
        indegree.entry(child).or_insert(0);
        for &p in parents.iter().filter(|p| p.pos.has_hypernyms()) {
            *indegree.entry(p).or_insert(0) += 1;
        }
    }
    let mut queue: Vec<SynsetId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut visited = 0;
    while let Some(id) = queue.pop() {
        visited += 1;
        for &p in hypernyms
            .get(&id)
            .into_iter()
            .flatten()
            .filter(|p| p.pos.has_hypernyms())
        {
            let d = indegree.get_mut(&p).expect("indegree tracked for every parent");
            *d -= 1;
            if *d == 0 {
                queue.push(p);
            }
        }
    }
    if visited == indegree.len() {
        Ok(())
    } else {
        let stuck = indegree
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(&id, _)| id)
            .min()
            .expect("some node remains when the sort is incomplete");
        Err(LexiconError::Cycle(stuck))
    }
}

fn read_file(path: &Path) -> Result<String, LexiconError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(LexiconError::MissingFile(path.to_owned()))
        }
        Err(source) => Err(LexiconError::Io {
            path: path.to_owned(),
            source,
        }),
    }
}

/// Iterates `(byte_offset, line)` pairs, skipping license header lines.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').filter_map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        (!line.starts_with("  ") && !line.trim().is_empty()).then_some((start, line))
    })
}

struct DataLine {
    id: SynsetId,
    lemmas: Vec<String>,
    hypernyms: Vec<SynsetId>,
}

fn parse_data_line(line: &str, pos: Pos) -> Result<DataLine, String> {
    let body = line.split(" | ").next().unwrap_or(line);
    let mut fields = body.split_ascii_whitespace();
    let mut next = |what: &str| fields.next().ok_or_else(|| format!("missing {what}"));

    let offset: u32 = next("synset offset")?
        .parse()
        .map_err(|_| "bad synset offset".to_string())?;
    next("lexicographer file number")?;
    let ss_type = next("synset type")?;
    let ss_pos = ss_type
        .chars()
        .next()
        .and_then(Pos::from_char)
        .ok_or_else(|| format!("bad synset type {ss_type:?}"))?;
    if ss_pos != pos {
        return Err(format!("synset type {ss_type:?} in {} file", pos.file_stem()));
    }
    let w_cnt = usize::from_str_radix(next("word count")?, 16)
        .map_err(|_| "bad hexadecimal word count".to_string())?;
    if w_cnt == 0 {
        return Err("synset with no words".into());
    }
    let mut lemmas = Vec::with_capacity(w_cnt);
    for _ in 0..w_cnt {
        let word = next("word")?;
        next("lex id")?;
        let word = word.split('(').next().unwrap_or(word);
        lemmas.push(normalize_lemma(word));
    }
    let p_cnt: usize = next("pointer count")?
        .parse()
        .map_err(|_| "bad pointer count".to_string())?;
    let mut hypernyms = Vec::new();
    for _ in 0..p_cnt {
        let symbol = next("pointer symbol")?;
        let target: u32 = next("pointer offset")?
            .parse()
            .map_err(|_| "bad pointer offset".to_string())?;
        let target_pos = next("pointer pos")?;
        next("pointer source/target")?;
        if symbol == "@" || symbol == "@i" {
            let tp = target_pos
                .chars()
                .next()
                .and_then(Pos::from_char)
                .ok_or_else(|| format!("bad pointer pos {target_pos:?}"))?;
            hypernyms.push(SynsetId::new(tp, target));
        }
    }
    Ok(DataLine {
        id: SynsetId::new(pos, offset),
        lemmas,
        hypernyms,
    })
}

fn parse_index_line(line: &str, pos: Pos) -> Result<(String, Vec<SynsetId>), String> {
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    if fields.len() < 6 {
        return Err("too few fields".into());
    }
    let lemma = fields[0].to_owned();
    let synset_cnt: usize = fields[2].parse().map_err(|_| "bad synset count".to_string())?;
    let p_cnt: usize = fields[3].parse().map_err(|_| "bad pointer count".to_string())?;
    if synset_cnt == 0 {
        return Err(format!("lemma {lemma:?} lists no synsets"));
    }
    let start = 4 + p_cnt + 2;
    let offsets = fields
        .get(start..start + synset_cnt)
        .ok_or_else(|| "fewer synset offsets than declared".to_string())?;
    let ids = offsets
        .iter()
        .map(|o| {
            o.parse::<u32>()
                .map(|off| SynsetId::new(pos, off))
                .map_err(|_| format!("bad synset offset {o:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((lemma, ids))
}

/// Reads a WordNet 3.0 database directory.
pub fn parse_wordnet(db_root: &Path) -> Result<Lexicon, LexiconError> {
    let mut b = Lexicon::builder();
    for pos in Pos::ALL {
        let name = format!("data.{}", pos.file_stem());
        let text = read_file(&db_root.join(&name))?;
        for (offset, line) in content_lines(&text) {
            let parsed = parse_data_line(line, pos).map_err(|reason| LexiconError::Malformed {
                file: name.clone(),
                offset,
                reason,
            })?;
            b.insert_synset(
                parsed.id,
                Synset {
                    lemmas: parsed.lemmas,
                    pos,
                },
            );
            if pos.has_hypernyms() && !parsed.hypernyms.is_empty() {
                b.lex.hypernyms.insert(parsed.id, parsed.hypernyms);
            }
        }
    }
    for pos in Pos::ALL {
        let name = format!("index.{}", pos.file_stem());
        let text = read_file(&db_root.join(&name))?;
        for (offset, line) in content_lines(&text) {
            let malformed = |reason: String| LexiconError::Malformed {
                file: name.clone(),
                offset,
                reason,
            };
            let (lemma, ids) = parse_index_line(line, pos).map_err(malformed)?;
            if let Some(missing) = ids.iter().find(|id| !b.lex.synsets.contains_key(id)) {
                return Err(malformed(format!("unknown synset {missing}")));
            }
            b.lex.senses[pos.idx()].insert(lemma, ids);
        }
    }
    for pos in Pos::ALL {
        let name = format!("{}.exc", pos.file_stem());
        let path = db_root.join(&name);
        let text = match read_file(&path) {
            Ok(t) => t,
            Err(LexiconError::MissingFile(_)) if !pos.has_hypernyms() => continue,
            Err(e) => return Err(e),
        };
        for (offset, line) in content_lines(&text) {
            let mut words = line.split_ascii_whitespace();
            let (Some(inflected), Some(first)) = (words.next(), words.next()) else {
                return Err(LexiconError::Malformed {
                    file: name.clone(),
                    offset,
                    reason: "exception line needs an inflected form and a lemma".into(),
                });
            };
            b.exception(inflected, pos, first);
            for more in words {
                b.exception(inflected, pos, more);
            }
        }
    }
    b.lex.dropped_edges = break_cycles(&mut b.lex.hypernyms);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn fixture_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("test-data/wordnet")
    }

    fn fixture() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| parse_wordnet(&fixture_dir()).expect("fixture parses"))
    }

    fn n(offset: u32) -> SynsetId {
        SynsetId::new(Pos::Noun, offset)
    }

    #[test]
    fn data_line_fields() {
        let line = "02084071 05 n 03 dog 0 domestic_dog 0 Canis_familiaris 0 002 @ 02083346 n 0000 @ 01317541 n 0000 | a member of the genus Canis";
        let d = parse_data_line(line, Pos::Noun).unwrap();
        assert_eq!(d.id, n(2084071));
        assert_eq!(d.lemmas, vec!["dog", "domestic_dog", "canis_familiaris"]);
        assert_eq!(d.hypernyms, vec![n(2083346), n(1317541)]);
    }

    #[test]
    fn adjective_markers_and_satellites() {
        let line = "00001740 00 s 02 able(p) 0 big_Deal 0 000 | gloss";
        let d = parse_data_line(line, Pos::Adj).unwrap();
        assert_eq!(d.lemmas, vec!["able", "big_deal"]);
        assert_eq!(d.id.pos, Pos::Adj);
    }

    #[test]
    fn malformed_data_lines() {
        assert!(parse_data_line("00001740 00 n 0x dog 0 000 | g", Pos::Noun).is_err());
        assert!(parse_data_line("00001740 00 v 01 dog 0 000 | g", Pos::Noun).is_err());
        assert!(parse_data_line("00001740 00 n 02 dog 0 000 | g", Pos::Noun).is_err());
        assert!(parse_data_line("00001740 00 n 01 dog 0 001 @ 1 n | g", Pos::Noun).is_err());
    }

    #[test]
    fn empty_directory_is_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        match parse_wordnet(dir.path()) {
            Err(LexiconError::MissingFile(p)) => assert!(p.ends_with("data.noun")),
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        for entry in std::fs::read_dir(fixture_dir()).unwrap() {
            let p = entry.unwrap().path();
            std::fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
        }
        let bad = "  1 header\n00001740 03 r 01 entity 0 000 | x\nbogus line\n";
        std::fs::write(dir.path().join("data.adv"), bad).unwrap();
        match parse_wordnet(dir.path()) {
            Err(LexiconError::Malformed { file, offset, .. }) => {
                assert_eq!(file, "data.adv");
                assert_eq!(offset, 45);
            }
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn fixture_counts_match_data_lines() {
        let lex = fixture();
        for pos in Pos::ALL {
            let text = std::fs::read_to_string(fixture_dir().join(format!("data.{pos}"))).unwrap();
            let lines = text.lines().filter(|l| !l.starts_with("  ")).count();
            assert_eq!(lex.synset_count(pos), lines, "{pos}");
        }
    }

    #[test]
    fn lemmatize_examples() {
        let lex = fixture();
        assert_eq!(lex.lemmatize("letters", Pos::Noun), "letter");
        assert_eq!(lex.lemmatize("dog", Pos::Noun), "dog");
        assert_eq!(lex.lemmatize("ran", Pos::Verb), "run");
        assert_eq!(lex.lemmatize("dogs", Pos::Noun), "dog");
        assert_eq!(lex.lemmatize("men", Pos::Noun), "man");
        assert_eq!(lex.lemmatize("qzxv", Pos::Noun), "qzxv");
    }

    #[test]
    fn hypernym_chain_of_dog() {
        let lex = fixture();
        let got = lex.hypernyms_up_to("dog", Pos::Noun, 4);
        let want: BTreeSet<String> = ["canine", "carnivore", "placental", "mammal"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(got, want);
        assert!(lex.hypernyms_up_to("dog", Pos::Noun, 0).is_empty());
        assert!(lex.hypernyms_up_to("qzxv", Pos::Noun, 4).is_empty());
        assert!(lex.hypernyms_up_to("red", Pos::Adj, 4).is_empty());
    }

    #[test]
    fn hypernyms_grow_with_depth() {
        let lex = fixture();
        for word in ["dog", "cat", "letter", "ohio", "person"] {
            let mut prev = BTreeSet::new();
            for d in 0..8 {
                let cur = lex.hypernyms_up_to(word, Pos::Noun, d);
                assert!(prev.is_subset(&cur), "{word} depth {d}");
                let own = &lex.synset(lex.senses(word, Pos::Noun)[0]).unwrap().lemmas;
                assert!(own.iter().all(|l| !cur.contains(l)));
                prev = cur;
            }
        }
    }

    #[test]
    fn hyponym_closure_examples() {
        let lex = fixture();
        let unknown = lex.hyponym_closure("qzxv", Pos::Noun);
        assert_eq!(unknown.into_iter().collect::<Vec<_>>(), vec!["qzxv"]);
        let states = lex.hyponym_closure("american_state", Pos::Noun);
        assert!(states.contains("ohio"));
        assert!(states.contains("buckeye_state"));
        assert!(states.contains("american_state"));
        // A leaf synset: the closure is the synset's own lemmas.
        let ohio = lex.hyponym_closure("buckeye_state", Pos::Noun);
        let want: BTreeSet<String> = ["ohio", "buckeye_state", "oh"].into_iter().map(String::from).collect();
        assert_eq!(ohio, want);
    }

    #[test]
    fn coarse_pos_examples() {
        let lex = fixture();
        assert_eq!(lex.coarse_pos("dog"), Pos::Noun);
        assert_eq!(lex.coarse_pos("quickly"), Pos::Adv);
        assert_eq!(lex.coarse_pos("zzzz-unknown"), Pos::Noun);
        assert_eq!(lex.coarse_pos("eat"), Pos::Verb);
    }

    #[test]
    fn stopword_list() {
        let lex = fixture();
        assert_eq!(lex.stopwords().len(), 179);
        assert!(lex.is_stopword("the"));
        assert!(!lex.is_stopword("dog"));
    }

    #[test]
    fn builder_rejects_cycles_and_dangling_pointers() {
        let mut b = Lexicon::builder();
        b.synset(n(1), &["a"]).synset(n(2), &["b"]).synset(n(3), &["c"]);
        b.hypernym(n(1), n(2)).hypernym(n(2), n(3));
        assert!(b.build().is_ok());
        b.hypernym(n(3), n(1));
        assert!(matches!(b.build(), Err(LexiconError::Cycle(_))));

        let mut b = Lexicon::builder();
        b.synset(n(1), &["a"]).hypernym(n(1), n(9));
        assert!(matches!(
            b.build(),
            Err(LexiconError::DanglingPointer { .. })
        ));
    }

    #[test]
    fn cycle_breaking_drops_back_edges() {
        let mut h: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
        h.insert(n(1), vec![n(2)]);
        h.insert(n(2), vec![n(1), n(3)]);
        h.insert(n(4), vec![n(4)]);
        let dropped = break_cycles(&mut h);
        assert_eq!(dropped, vec![(n(2), n(1)), (n(4), n(4))]);
        assert_eq!(h[&n(2)], vec![n(3)]);
        assert!(check_acyclic(&h).is_ok());
    }

    #[test]
    fn builder_traversals() {
        let mut b = Lexicon::builder();
        b.synset(n(1), &["entity"])
            .synset(n(2), &["animal", "beast"])
            .synset(n(3), &["dog"])
            .synset(n(4), &["puppy"])
            .synset(n(5), &["pet"]);
        b.hypernym(n(2), n(1))
            .hypernym(n(3), n(2))
            .hypernym(n(3), n(5))
            .hypernym(n(4), n(3));
        for (l, id) in [("entity", 1), ("animal", 2), ("beast", 2), ("dog", 3), ("puppy", 4), ("pet", 5)] {
            b.sense(l, n(id));
        }
        let lex = b.build().unwrap();
        let up: Vec<String> = lex.hypernyms_up_to("puppy", Pos::Noun, 10).into_iter().collect();
        assert_eq!(up, vec!["animal", "dog", "entity"]);
        let down: Vec<String> = lex.hyponym_closure("animal", Pos::Noun).into_iter().collect();
        assert_eq!(down, vec!["animal", "beast", "dog", "puppy"]);
    }

    #[test]
    fn normalize_multiword() {
        assert_eq!(normalize_lemma("American State"), "american_state");
        assert_eq!(normalize_lemma(" Canis_familiaris "), "canis_familiaris");
    }
}

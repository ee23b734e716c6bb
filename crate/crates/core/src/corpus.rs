//! Canonical document model for emotion-cause corpora.
//!
//! Two on-disk formats are understood:
//!
//! - **canonical-jsonl**: one JSON object per line with `doc_id`, `clauses`,
//!   `pairs` (array of `[emotion_index, cause_index]`) and an optional
//!   `emotion` label.
//! - **legacy-tabular**: the block layout used by the public ECPE releases
//!   (a `doc_id clause_count` header, a pair line such as ` (3, 2), (5, 5)`,
//!   then one `index,emotion,keyword,text` line per clause). See
//!   `data/fixtures/legacy_tabular.txt` for a worked example.
//!
//! Clause indices are 1-based throughout.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::EmotionLabel;

/// One emotion-cause link between two clauses of the same document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Pair {
    pub emotion: u32,
    pub cause: u32,
}

impl Pair {
    pub fn new(emotion: u32, cause: u32) -> Self {
        Self { emotion, cause }
    }

    /// Both indices point at clauses `1..=clause_count`.
    pub fn within(&self, clause_count: usize) -> bool {
        let ok = |i: u32| i >= 1 && (i as usize) <= clause_count;
        ok(self.emotion) && ok(self.cause)
    }
}

impl From<[u32; 2]> for Pair {
    fn from([emotion, cause]: [u32; 2]) -> Self {
        Self { emotion, cause }
    }
}

impl From<Pair> for [u32; 2] {
    fn from(p: Pair) -> Self {
        [p.emotion, p.cause]
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.emotion, self.cause)
    }
}

/// Deduplicated, ordered set of pairs. Iteration is by `(emotion, cause)` ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairSet(BTreeSet<Pair>);

impl PairSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `false` when the pair was already present.
    pub fn insert(&mut self, pair: Pair) -> bool {
        self.0.insert(pair)
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.0.contains(pair)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pair> {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &PairSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn retain(&mut self, f: impl FnMut(&Pair) -> bool) {
        self.0.retain(f)
    }
}

impl FromIterator<Pair> for PairSet {
    fn from_iter<I: IntoIterator<Item = Pair>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a PairSet {
    type Item = &'a Pair;
    type IntoIter = std::collections::btree_set::Iter<'a, Pair>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub clauses: Vec<Clause>,
    pub gold_pairs: PairSet,
    pub emotion_label: Option<String>,
}

impl Document {
    /// Builds a document from raw clause strings, numbering them from 1 and
    /// normalizing whitespace.
    pub fn new(
        doc_id: impl Into<String>,
        clauses: impl IntoIterator<Item = impl AsRef<str>>,
        gold_pairs: impl IntoIterator<Item = Pair>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            clauses: clauses
                .into_iter()
                .enumerate()
                .map(|(i, t)| Clause {
                    index: i as u32 + 1,
                    text: normalize_text(t.as_ref()),
                })
                .collect(),
            gold_pairs: gold_pairs.into_iter().collect(),
            emotion_label: None,
        }
    }

    /// Whitespace-joined clause sequence; this is the text sent to model services.
    pub fn text(&self) -> String {
        self.clauses
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    Unsplit,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub split_tag: SplitTag,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, split_tag: SplitTag) -> Self {
        Self {
            documents,
            split_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn with_split(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorpusFormat {
    #[default]
    #[serde(rename = "canonical-jsonl")]
    CanonicalJsonl,
    #[serde(rename = "legacy-tabular")]
    LegacyTabular,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical-jsonl" | "jsonl" => Ok(Self::CanonicalJsonl),
            "legacy-tabular" | "tabular" => Ok(Self::LegacyTabular),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

/// A single parse failure, located by 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{} malformed record(s); first: {}", .0.len(), .0[0])]
    Malformed(Vec<LineError>),
    #[error("split fraction {0} is outside the open interval (0, 1)")]
    FractionOutOfRange(f64),
    #[error("corpus is already split (tag `{}`)", .0.as_str())]
    AlreadySplit(SplitTag),
}

impl CorpusError {
    pub fn line_errors(&self) -> &[LineError] {
        match self {
            CorpusError::Malformed(v) => v,
            _ => &[],
        }
    }
}

/// Trims the ends and collapses internal whitespace runs (including line
/// breaks) to a single space. Case is preserved.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalRecord {
    doc_id: String,
    clauses: Vec<String>,
    pairs: Vec<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<String>,
}

/// Parses a corpus. The result is tagged [`SplitTag::Unsplit`]; callers that
/// know the role of the file retag it with [`Corpus::with_split`].
///
/// Every bad line is collected before returning, so one pass over a file
/// reports all of its problems.
pub fn parse_corpus(raw: &str, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let located = match format {
        CorpusFormat::CanonicalJsonl => parse_canonical(raw),
        CorpusFormat::LegacyTabular => parse_tabular(raw),
    };

    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut documents = Vec::new();
    for item in located {
        match item {
            Err(e) => errors.push(e),
            Ok((line, doc)) => {
                if !seen.insert(doc.doc_id.clone()) {
                    errors.push(LineError {
                        line,
                        reason: format!("duplicate doc_id `{}`", doc.doc_id),
                    });
                    continue;
                }
                if let Some(p) = doc.gold_pairs.iter().find(|p| !p.within(doc.clauses.len())) {
                    errors.push(LineError {
                        line,
                        reason: format!(
                            "pair index out of range: {p} in document `{}` with {} clauses",
                            doc.doc_id,
                            doc.clauses.len()
                        ),
                    });
                    continue;
                }
                documents.push(doc);
            }
        }
    }

    if errors.is_empty() {
        Ok(Corpus::new(documents, SplitTag::Unsplit))
    } else {
        Err(CorpusError::Malformed(errors))
    }
}

type Located = Result<(usize, Document), LineError>;

fn parse_canonical(raw: &str) -> Vec<Located> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let rec: CanonicalRecord = serde_json::from_str(l).map_err(|e| LineError {
                line,
                reason: format!("invalid record: {e}"),
            })?;
            document_from_parts(line, rec.doc_id, rec.clauses, rec.pairs, rec.emotion)
        })
        .collect()
}

fn document_from_parts(
    line: usize,
    doc_id: String,
    clauses: Vec<String>,
    pairs: Vec<[u32; 2]>,
    emotion: Option<String>,
) -> Located {
    let err = |reason: String| LineError { line, reason };
    if doc_id.trim().is_empty() {
        return Err(err("empty doc_id".into()));
    }
    if let Some(pos) = clauses.iter().position(|c| normalize_text(c).is_empty()) {
        return Err(err(format!("clause {} is empty", pos + 1)));
    }
    let mut doc = Document::new(doc_id, clauses, pairs.into_iter().map(Pair::from));
    doc.emotion_label = emotion;
    Ok((line, doc))
}

fn parse_tabular(raw: &str) -> Vec<Located> {
    let lines: Vec<(usize, &str)> = raw
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let mut out = Vec::new();
    let mut cursor = 0;
    while cursor < lines.len() {
        let (header_line, header) = lines[cursor];
        let mut fields = header.split_whitespace();
        let (doc_id, count) = match (fields.next(), fields.next().map(str::parse::<usize>)) {
            (Some(id), Some(Ok(n))) if fields.next().is_none() => (id.to_string(), n),
            _ => {
                out.push(Err(LineError {
                    line: header_line,
                    reason: "expected header `<doc_id> <clause_count>`".into(),
                }));
                // Resynchronize on the next line that looks like a header.
                cursor += 1;
                while cursor < lines.len() && !looks_like_header(lines[cursor].1) {
                    cursor += 1;
                }
                continue;
            }
        };
        cursor += 1;

        let block_end = (cursor + 1 + count).min(lines.len());
        let result = parse_tabular_block(header_line, doc_id, count, &lines[cursor..block_end]);
        out.push(result);
        cursor = block_end;
    }
    out
}

fn looks_like_header(line: &str) -> bool {
    let mut f = line.split_whitespace();
    matches!(
        (f.next(), f.next().map(str::parse::<usize>), f.next()),
        (Some(_), Some(Ok(_)), None)
    ) && !line.trim_start().starts_with('(')
}

fn parse_tabular_block(
    header_line: usize,
    doc_id: String,
    count: usize,
    block: &[(usize, &str)],
) -> Located {
    if block.len() != count + 1 {
        return Err(LineError {
            line: header_line,
            reason: format!("document `{doc_id}` declares {count} clauses but the file ends early"),
        });
    }
    let (pair_line, pair_text) = block[0];
    let pairs = parse_pair_line(pair_text).ok_or_else(|| LineError {
        line: pair_line,
        reason: "expected a pair line such as `(3, 2), (5, 5)`".into(),
    })?;

    let mut clauses = Vec::with_capacity(count);
    let mut emotion = None;
    for (expected, &(line, text)) in (1..).zip(&block[1..]) {
        let mut parts = text.splitn(4, ',');
        let (idx, label, _keyword, clause) =
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                _ => {
                    return Err(LineError {
                        line,
                        reason: "expected `index,emotion,keyword,text`".into(),
                    })
                }
            };
        match idx.trim().parse::<usize>() {
            Ok(i) if i == expected => {}
            _ => {
                return Err(LineError {
                    line,
                    reason: format!("expected clause index {expected}, found `{}`", idx.trim()),
                })
            }
        }
        let label = label.trim();
        if emotion.is_none() && !label.eq_ignore_ascii_case("null") && !label.is_empty() {
            emotion = Some(label.to_string());
        }
        clauses.push(clause.to_string());
    }
    document_from_parts(header_line, doc_id, clauses, pairs, emotion)
}

fn parse_pair_line(text: &str) -> Option<Vec<[u32; 2]>> {
    let mut pairs = Vec::new();
    let mut rest = text.trim();
    if rest.is_empty() {
        return None;
    }
    while !rest.is_empty() {
        rest = rest.trim_start_matches(|c: char| c == ',' || c.is_whitespace());
        if rest.is_empty() {
            break;
        }
        let inner = rest.strip_prefix('(')?;
        let close = inner.find(')')?;
        let (a, b) = inner[..close].split_once(',')?;
        pairs.push([a.trim().parse().ok()?, b.trim().parse().ok()?]);
        rest = &inner[close + 1..];
    }
    (!pairs.is_empty()).then_some(pairs)
}

/// Renders the canonical line-delimited form. Parsing the output yields the
/// same corpus.
pub fn emit_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        let rec = CanonicalRecord {
            doc_id: doc.doc_id.clone(),
            clauses: doc.clauses.iter().map(|c| c.text.clone()).collect(),
            pairs: doc.gold_pairs.iter().map(|&p| p.into()).collect(),
            emotion: doc.emotion_label.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub doc_id: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.doc_id, self.rule)
    }
}

/// Checks every document invariant. Violations are returned as data; an
/// empty list means the corpus is usable downstream.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for doc in &corpus.documents {
        let mut flag = |rule: String| {
            out.push(Violation {
                doc_id: doc.doc_id.clone(),
                rule,
            })
        };
        if doc.doc_id.trim().is_empty() {
            flag("empty doc_id".into());
        }
        if !seen.insert(doc.doc_id.as_str()) {
            flag(format!("duplicate doc_id `{}`", doc.doc_id));
        }
        if doc.clauses.len() < 2 {
            flag("fewer than 2 clauses".into());
        }
        for (expected, clause) in (1u32..).zip(&doc.clauses) {
            if clause.index != expected {
                flag(format!(
                    "clause indices not contiguous: expected {expected}, found {}",
                    clause.index
                ));
                break;
            }
        }
        for clause in &doc.clauses {
            if clause.text.is_empty() {
                flag(format!("clause {} is empty", clause.index));
            } else if clause.text.contains(['\n', '\r']) {
                flag(format!("clause {} contains a line break", clause.index));
            }
        }
        if doc.gold_pairs.is_empty() {
            flag("no gold pairs".into());
        }
        for p in &doc.gold_pairs {
            if !p.within(doc.clauses.len()) {
                flag(format!("pair index out of range: {p}"));
            }
        }
        if let Some(label) = &doc.emotion_label {
            if label.parse::<EmotionLabel>().is_err() {
                flag(format!("unknown emotion label `{label}`"));
            }
        }
    }
    out
}

/// Seeded train/test partition for corpora that ship without one.
///
/// Document indices are shuffled with ChaCha8 seeded from `seed`; the first
/// `round(n * test_fraction)` go to test. Both halves keep file order.
pub fn split_corpus(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if corpus.split_tag != SplitTag::Unsplit {
        return Err(CorpusError::AlreadySplit(corpus.split_tag));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(test_fraction));
    }
    let n = corpus.len();
    let test_n = (n as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..test_n] {
        is_test[i] = true;
    }

    let (test, train): (Vec<_>, Vec<_>) = corpus
        .documents
        .iter()
        .cloned()
        .zip(is_test)
        .partition(|(_, t)| *t);
    let strip = |v: Vec<(Document, bool)>| v.into_iter().map(|(d, _)| d).collect();
    Ok((
        Corpus::new(strip(train), SplitTag::Train),
        Corpus::new(strip(test), SplitTag::Test),
    ))
}

//! Per-document emotional knowledge.
//!
//! Each document is sent to the reaction generator (xReact). A usable
//! reaction is compared against the seven emotion labels by cosine
//! similarity and the labels are ranked high to low; a `"none"` reaction
//! falls back to a coarse POSITIVE/NEGATIVE polarity verdict for the whole
//! document.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::{ClientError, Clients, Embedder, EmbeddingVector, PolarityVerdict};
use crate::corpus::{Corpus, Document, PairSet};

/// The seven emotion labels in canonical order. Canonical order is also the
/// tie-break when two labels score equally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Fear,
    Disgust,
    Sadness,
    Happiness,
    Surprise,
    Anger,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Sadness,
        EmotionLabel::Happiness,
        EmotionLabel::Surprise,
        EmotionLabel::Anger,
        EmotionLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Fear => "fear",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown emotion label `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine is undefined for an all-zero vector")]
    ZeroVector,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("document `{doc_id}`: {source}")]
    Document {
        doc_id: String,
        #[source]
        source: Box<KnowledgeError>,
    },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("knowledge cache {}: {source}", path.display())]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KnowledgeError {
    fn for_doc(self, doc_id: &str) -> Self {
        KnowledgeError::Document {
            doc_id: doc_id.to_string(),
            source: Box::new(self),
        }
    }

    pub fn is_transport(&self) -> bool {
        match self {
            KnowledgeError::Client(c) => c.is_transport(),
            KnowledgeError::Document { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

/// `dot(u, v) / (|u| |v|)`, summed left to right. Not clamped, so the
/// magnitude may exceed 1 by a rounding error.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, KnowledgeError> {
    if u.dim() != v.dim() {
        return Err(KnowledgeError::DimensionMismatch(u.dim(), v.dim()));
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    let nu = u.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(KnowledgeError::ZeroVector);
    }
    Ok(dot / (nu * nv))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: EmotionLabel,
    pub score: f64,
}

/// All seven labels, sorted by score descending with canonical-order ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelScore>", into = "Vec<LabelScore>")]
pub struct LabelDistribution {
    entries: Vec<LabelScore>,
}

impl LabelDistribution {
    /// `scores[i]` belongs to `EmotionLabel::ALL[i]`.
    pub fn from_canonical_scores(scores: [f64; 7]) -> Self {
        let mut entries: Vec<LabelScore> = EmotionLabel::ALL
            .into_iter()
            .zip(scores)
            .map(|(label, score)| LabelScore { label, score })
            .collect();
        // Stable sort keeps canonical order among equal scores.
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Self { entries }
    }

    pub fn entries(&self) -> &[LabelScore] {
        &self.entries
    }

    pub fn top(&self) -> LabelScore {
        self.entries[0]
    }
}

impl TryFrom<Vec<LabelScore>> for LabelDistribution {
    type Error = String;

    fn try_from(entries: Vec<LabelScore>) -> Result<Self, Self::Error> {
        let mut scores = [f64::NAN; 7];
        if entries.len() != 7 {
            return Err(format!("expected 7 label scores, found {}", entries.len()));
        }
        for e in &entries {
            let slot = &mut scores[e.label as usize];
            if !slot.is_nan() {
                return Err(format!("duplicate label `{}`", e.label));
            }
            *slot = e.score;
        }
        let rebuilt = Self::from_canonical_scores(scores);
        if rebuilt.entries != entries {
            return Err("label scores are not in sorted order".into());
        }
        Ok(rebuilt)
    }
}

impl From<LabelDistribution> for Vec<LabelScore> {
    fn from(d: LabelDistribution) -> Self {
        d.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonsenseResult {
    pub doc_id: String,
    pub reaction: String,
    pub is_none: bool,
}

impl CommonsenseResult {
    pub fn new(doc_id: impl Into<String>, reaction: impl Into<String>) -> Self {
        let reaction = reaction.into();
        Self {
            doc_id: doc_id.into(),
            is_none: is_none_reaction(&reaction),
            reaction,
        }
    }
}

/// Trimmed, case-folded equality with `"none"`.
pub fn is_none_reaction(reaction: &str) -> bool {
    reaction.trim().to_lowercase() == "none"
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Knowledge {
    Distribution { distribution: LabelDistribution },
    Polarity { polarity: PolarityVerdict },
}

impl Knowledge {
    pub fn kind(&self) -> &'static str {
        match self {
            Knowledge::Distribution { .. } => "distribution",
            Knowledge::Polarity { .. } => "polarity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionalKnowledge {
    pub doc_id: String,
    #[serde(flatten)]
    pub knowledge: Knowledge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    pub document: Document,
    pub knowledge: EmotionalKnowledge,
    pub commonsense: CommonsenseResult,
}

#[derive(Serialize, Deserialize)]
struct AnnotatedLine {
    doc_id: String,
    clauses: Vec<String>,
    pairs: PairSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<String>,
    reaction: String,
    #[serde(flatten)]
    knowledge: Knowledge,
}

impl AnnotatedDocument {
    /// One JSON line: the document fields, the raw reaction and the knowledge.
    pub fn to_json_line(&self) -> String {
        let line = AnnotatedLine {
            doc_id: self.document.doc_id.clone(),
            clauses: self
                .document
                .clauses
                .iter()
                .map(|c| c.text.clone())
                .collect(),
            pairs: self.document.gold_pairs.clone(),
            emotion: self.document.emotion_label.clone(),
            reaction: self.commonsense.reaction.clone(),
            knowledge: self.knowledge.knowledge.clone(),
        };
        serde_json::to_string(&line).expect("annotated document serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let l: AnnotatedLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut document = Document::new(l.doc_id.clone(), &l.clauses, l.pairs.iter().copied());
        document.emotion_label = l.emotion;
        Ok(Self {
            commonsense: CommonsenseResult::new(l.doc_id.clone(), l.reaction),
            knowledge: EmotionalKnowledge {
                doc_id: l.doc_id,
                knowledge: l.knowledge,
            },
            document,
        })
    }
}

pub fn fetch_commonsense(
    doc: &Document,
    generator: &dyn crate::clients::ReactionGenerator,
) -> Result<CommonsenseResult, KnowledgeError> {
    let reaction = generator
        .generate_reaction(&doc.text())
        .map_err(|e| KnowledgeError::from(e).for_doc(&doc.doc_id))?;
    Ok(CommonsenseResult::new(doc.doc_id.clone(), reaction))
}

/// Embeds `[reaction, fear, disgust, ...]` as one batch and ranks the labels
/// by cosine similarity to the reaction.
pub fn score_labels(
    reaction: &str,
    embedder: &dyn Embedder,
) -> Result<LabelDistribution, KnowledgeError> {
    if reaction.trim().is_empty() || is_none_reaction(reaction) {
        return Err(KnowledgeError::Precondition(format!(
            "reaction `{reaction}` cannot be scored"
        )));
    }
    let mut batch = Vec::with_capacity(8);
    batch.push(reaction.to_string());
    batch.extend(EmotionLabel::ALL.iter().map(|l| l.as_str().to_string()));
    let vectors = embedder.embed(&batch)?;
    if vectors.len() != batch.len() {
        return Err(KnowledgeError::Precondition(format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            batch.len()
        )));
    }
    let mut scores = [0.0; 7];
    for (slot, label_vec) in scores.iter_mut().zip(&vectors[1..]) {
        *slot = cosine(&vectors[0], label_vec)?;
    }
    Ok(LabelDistribution::from_canonical_scores(scores))
}

fn knowledge_for(
    doc: &Document,
    commonsense: &CommonsenseResult,
    clients: &Clients,
) -> Result<EmotionalKnowledge, KnowledgeError> {
    let knowledge = if commonsense.is_none {
        Knowledge::Polarity {
            polarity: clients.polarity.classify_polarity(&doc.text())?,
        }
    } else {
        Knowledge::Distribution {
            distribution: score_labels(&commonsense.reaction, clients.embedder.as_ref())?,
        }
    };
    Ok(EmotionalKnowledge {
        doc_id: doc.doc_id.clone(),
        knowledge,
    })
}

/// Full two-branch knowledge construction for one document.
pub fn build_knowledge(
    doc: &Document,
    clients: &Clients,
) -> Result<AnnotatedDocument, KnowledgeError> {
    let commonsense = fetch_commonsense(doc, clients.generator.as_ref())?;
    let knowledge =
        knowledge_for(doc, &commonsense, clients).map_err(|e| e.for_doc(&doc.doc_id))?;
    Ok(AnnotatedDocument {
        document: doc.clone(),
        knowledge,
        commonsense,
    })
}

pub const CACHE_VERSION: u32 = 1;

/// SHA-256 (hex) of the document text sent to the services.
pub fn content_hash(doc: &Document) -> String {
    hex::encode(Sha256::digest(doc.text().as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    version: u32,
    doc_id: String,
    content_hash: String,
    kind: String,
    payload: CachePayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachePayload {
    reaction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<LabelDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<PolarityVerdict>,
}

impl CacheRecord {
    fn from_annotated(a: &AnnotatedDocument) -> Self {
        let (distribution, polarity) = match &a.knowledge.knowledge {
            Knowledge::Distribution { distribution } => (Some(distribution.clone()), None),
            Knowledge::Polarity { polarity } => (None, Some(*polarity)),
        };
        Self {
            version: CACHE_VERSION,
            doc_id: a.document.doc_id.clone(),
            content_hash: content_hash(&a.document),
            kind: a.knowledge.knowledge.kind().to_string(),
            payload: CachePayload {
                reaction: a.commonsense.reaction.clone(),
                distribution,
                polarity,
            },
        }
    }

    fn restore(&self, doc: &Document) -> Option<AnnotatedDocument> {
        let knowledge = match (self.kind.as_str(), &self.payload) {
            (
                "distribution",
                CachePayload {
                    distribution: Some(d),
                    polarity: None,
                    ..
                },
            ) => Knowledge::Distribution {
                distribution: d.clone(),
            },
            (
                "polarity",
                CachePayload {
                    polarity: Some(p),
                    distribution: None,
                    ..
                },
            ) => Knowledge::Polarity { polarity: *p },
            _ => return None,
        };
        let commonsense = CommonsenseResult::new(doc.doc_id.clone(), self.payload.reaction.clone());
        // A cached record must still satisfy the branch rule.
        if commonsense.is_none != matches!(knowledge, Knowledge::Polarity { .. }) {
            return None;
        }
        Some(AnnotatedDocument {
            document: doc.clone(),
            knowledge: EmotionalKnowledge {
                doc_id: doc.doc_id.clone(),
                knowledge,
            },
            commonsense,
        })
    }
}

/// Content-addressed store of finished annotations, one JSON record per line:
/// `{"version", "doc_id", "content_hash", "kind", "payload"}`.
///
/// Records are only ever appended; the latest record for a key wins.
#[derive(Debug, Default)]
pub struct KnowledgeCache {
    path: Option<PathBuf>,
    records: HashMap<(String, String), CacheRecord>,
    /// Lines that could not be read back (wrong version, corrupt JSON).
    pub skipped_lines: usize,
}

impl KnowledgeCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, KnowledgeError> {
        let mut cache = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(source) => {
                return Err(KnowledgeError::Cache {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| KnowledgeError::Cache {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheRecord>(&line) {
                Ok(r) if r.version == CACHE_VERSION => {
                    cache
                        .records
                        .insert((r.doc_id.clone(), r.content_hash.clone()), r);
                }
                _ => cache.skipped_lines += 1,
            }
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, doc: &Document) -> Option<AnnotatedDocument> {
        self.records
            .get(&(doc.doc_id.clone(), content_hash(doc)))
            .and_then(|r| r.restore(doc))
    }

    /// Records new annotations, appending them to the backing file if any.
    pub fn insert_all(&mut self, fresh: &[AnnotatedDocument]) -> Result<(), KnowledgeError> {
        if fresh.is_empty() {
            return Ok(());
        }
        let records: Vec<CacheRecord> = fresh.iter().map(CacheRecord::from_annotated).collect();
        if let Some(path) = &self.path {
            let io_err = |source| KnowledgeError::Cache {
                path: path.clone(),
                source,
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err)?;
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err)?;
            let mut buf = String::new();
            for r in &records {
                buf.push_str(&serde_json::to_string(r).expect("cache record serializes"));
                buf.push('\n');
            }
            file.write_all(buf.as_bytes()).map_err(io_err)?;
        }
        for r in records {
            self.records
                .insert((r.doc_id.clone(), r.content_hash.clone()), r);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoneRateStats {
    pub documents: usize,
    pub annotated: usize,
    pub none_count: usize,
    /// `None` when nothing was annotated.
    pub none_rate: Option<f64>,
    pub cache_hits: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationFailure {
    pub doc_id: String,
    pub error: String,
    pub transport: bool,
}

#[derive(Debug, Clone)]
pub struct AnnotationOutcome {
    /// Successful annotations in input order.
    pub annotated: Vec<AnnotatedDocument>,
    pub failures: Vec<AnnotationFailure>,
    pub stats: NoneRateStats,
}

/// Annotates every document with at most `workers` documents in flight.
/// Cached documents skip all service calls. Failed documents are reported
/// in `failures` and left out of `annotated`.
pub fn annotate_corpus(
    corpus: &Corpus,
    clients: &Clients,
    cache: &mut KnowledgeCache,
    workers: usize,
) -> Result<AnnotationOutcome, KnowledgeError> {
    let cached: Vec<Option<AnnotatedDocument>> =
        corpus.documents.iter().map(|d| cache.get(d)).collect();
    let cache_hits = cached.iter().filter(|c| c.is_some()).count();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool builds");
    let results: Vec<Result<AnnotatedDocument, KnowledgeError>> = pool.install(|| {
        corpus
            .documents
            .par_iter()
            .zip(cached.into_par_iter())
            .map(|(doc, hit)| match hit {
                Some(a) => Ok(a),
                None => build_knowledge(doc, clients),
            })
            .collect()
    });

    let mut annotated = Vec::with_capacity(results.len());
    let mut fresh = Vec::new();
    let mut failures = Vec::new();
    for (doc, result) in corpus.documents.iter().zip(results) {
        match result {
            Ok(a) => {
                if cache.get(doc).is_none() {
                    fresh.push(a.clone());
                }
                annotated.push(a);
            }
            Err(e) => failures.push(AnnotationFailure {
                doc_id: doc.doc_id.clone(),
                transport: e.is_transport(),
                error: e.to_string(),
            }),
        }
    }
    cache.insert_all(&fresh)?;

    let none_count = annotated.iter().filter(|a| a.commonsense.is_none).count();
    let stats = NoneRateStats {
        documents: corpus.len(),
        annotated: annotated.len(),
        none_count,
        none_rate: (!annotated.is_empty()).then(|| none_count as f64 / annotated.len() as f64),
        cache_hits,
        failed: failures.len(),
    };
    Ok(AnnotationOutcome {
        annotated,
        failures,
        stats,
    })
}

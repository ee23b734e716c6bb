//! Causal-record selection and ratio-controlled blending.
//!
//! Selection rule (`round-robin-best-match-v1`):
//!
//! 1. Embed every ECPE instruction and every pool instruction.
//! 2. For each ECPE record rank the whole pool by cosine similarity,
//!    descending, breaking ties by `causal_id` ascending.
//! 3. Visit ECPE records in `record_id` order, round after round. On each
//!    visit the record takes its best-ranked pool entry that nobody has
//!    taken yet.
//! 4. Stop once `causal_part * |ecpe|` entries are taken or the pool is
//!    exhausted.
//!
//! Step 3 produces one pick sequence, and a quota simply takes a prefix of
//! it. Selections for smaller ratios are therefore subsets of larger ones.
//!
//! Blending shuffles the union of ECPE and causal records with a
//! Fisher-Yates shuffle driven by ChaCha8 seeded from the run seed
//! (`chacha8-fisher-yates`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, Embedder, EmbeddingVector};
use crate::corpus::LineError;
use crate::knowledge::{cosine, KnowledgeError};
use crate::template::{InstructionRecord, RecordSource};

pub const SELECTION_RULE: &str = "round-robin-best-match-v1";
pub const SHUFFLE_RULE: &str = "chacha8-fisher-yates";
/// Texts per embedding request.
pub const EMBED_BATCH: usize = 64;

/// Default causal parts for `sweep`: 1:1, 1:2, 1:5 and 1:10.
pub const STANDARD_RATIOS: [u32; 4] = [1, 2, 5, 10];

#[derive(Debug, Error)]
pub enum BlendError {
    #[error("causal file has no valid records ({} malformed line(s))", .0.len())]
    NoValidRecords(Vec<LineError>),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("record_id collision: `{0}`")]
    Collision(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Similarity(#[from] KnowledgeError),
    #[error("invalid mix ratio `{0}` (expected `1:<n>`)")]
    BadRatio(String),
}

impl BlendError {
    pub fn is_transport(&self) -> bool {
        match self {
            BlendError::Client(c) => c.is_transport(),
            BlendError::Similarity(k) => k.is_transport(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalRecord {
    pub causal_id: String,
    pub instruction: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_tag: Option<String>,
}

/// `1 : causal_part`, counted in records. `causal_part = 0` disables causal data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MixRatio {
    pub causal_part: u32,
}

impl MixRatio {
    pub const fn new(causal_part: u32) -> Self {
        Self { causal_part }
    }

    pub fn quota(self, ecpe_count: usize) -> usize {
        self.causal_part as usize * ecpe_count
    }

    /// Filesystem-friendly form, e.g. `1-5`.
    pub fn slug(self) -> String {
        format!("1-{}", self.causal_part)
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1:{}", self.causal_part)
    }
}

impl FromStr for MixRatio {
    type Err = BlendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BlendError::BadRatio(s.to_string());
        let (lhs, rhs) = s.trim().split_once(':').ok_or_else(bad)?;
        if lhs.trim() != "1" {
            return Err(bad());
        }
        Ok(Self::new(rhs.trim().parse().map_err(|_| bad())?))
    }
}

impl TryFrom<String> for MixRatio {
    type Error = BlendError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MixRatio> for String {
    fn from(r: MixRatio) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub records: Vec<CausalRecord>,
    pub diagnostics: Vec<LineError>,
}

/// Reads line-delimited causal records. Bad lines become diagnostics; only
/// a file with no usable record at all is an error.
pub fn ingest_causal(raw: &str) -> Result<IngestReport, BlendError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut diag = |reason: String| {
            diagnostics.push(LineError {
                line: line_no,
                reason,
            })
        };
        let rec: CausalRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                diag(format!("invalid causal record: {e}"));
                continue;
            }
        };
        if rec.causal_id.trim().is_empty() {
            diag("empty causal_id".into());
        } else if rec.instruction.trim().is_empty() || rec.response.trim().is_empty() {
            diag(format!(
                "record `{}` has an empty instruction or response",
                rec.causal_id
            ));
        } else if !ids.insert(rec.causal_id.clone()) {
            diag(format!("duplicate causal_id `{}`", rec.causal_id));
        } else {
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(BlendError::NoValidRecords(diagnostics));
    }
    Ok(IngestReport {
        records,
        diagnostics,
    })
}

/// Embeds `texts` in request-sized batches, in parallel on the current
/// rayon pool, and checks that every vector has the same dimension.
pub fn embed_batched(
    texts: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<EmbeddingVector>, BlendError> {
    let batches: Vec<Result<Vec<EmbeddingVector>, ClientError>> = texts
        .par_chunks(EMBED_BATCH)
        .map(|chunk| embedder.embed(chunk))
        .collect();
    let mut out = Vec::with_capacity(texts.len());
    for b in batches {
        out.extend(b?);
    }
    if out.len() != texts.len() {
        return Err(BlendError::Precondition(format!(
            "embedder returned {} vectors for {} texts",
            out.len(),
            texts.len()
        )));
    }
    if let Some(first) = out.first() {
        let dim = first.dim();
        if let Some((index, v)) = out.iter().enumerate().find(|(_, v)| v.dim() != dim) {
            return Err(ClientError::DimensionMismatch {
                index,
                expected: dim,
                found: v.dim(),
            }
            .into());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub requested: usize,
    pub selected: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ratio: MixRatio,
    /// Sorted by `causal_id`.
    pub records: Vec<CausalRecord>,
    pub requested: usize,
    pub shortfall: Option<Shortfall>,
}

/// Precomputed similarity rankings for one (ECPE set, pool) pairing.
pub struct SimilarityPlan<'a> {
    pool: &'a [CausalRecord],
    ecpe_count: usize,
    /// Pool indices in pick order, long enough for the largest quota served.
    picks: Vec<usize>,
}

impl<'a> SimilarityPlan<'a> {
    /// Embeds both sides and runs the round-robin far enough to serve any
    /// quota up to `max_quota`.
    pub fn build(
        ecpe: &[InstructionRecord],
        pool: &'a [CausalRecord],
        max_quota: usize,
        embedder: &dyn Embedder,
    ) -> Result<Self, BlendError> {
        if ecpe.is_empty() {
            return Err(BlendError::Precondition("no ECPE records to blend".into()));
        }
        if pool.is_empty() {
            return Err(BlendError::Precondition("causal pool is empty".into()));
        }
        let limit = max_quota.min(pool.len());
        if limit == 0 {
            return Ok(Self {
                pool,
                ecpe_count: ecpe.len(),
                picks: Vec::new(),
            });
        }

        let ecpe_vecs = embed_batched(
            &ecpe
                .iter()
                .map(|r| r.instruction.clone())
                .collect::<Vec<_>>(),
            embedder,
        )?;
        let pool_vecs = embed_batched(
            &pool
                .iter()
                .map(|r| r.instruction.clone())
                .collect::<Vec<_>>(),
            embedder,
        )?;
        if ecpe_vecs[0].dim() != pool_vecs[0].dim() {
            return Err(
                KnowledgeError::DimensionMismatch(ecpe_vecs[0].dim(), pool_vecs[0].dim()).into(),
            );
        }

        let mut visit: Vec<usize> = (0..ecpe.len()).collect();
        visit.sort_by(|&a, &b| ecpe[a].record_id.cmp(&ecpe[b].record_id));

        let rankings: Vec<Vec<usize>> = visit
            .par_iter()
            .map(|&e| {
                let sims: Vec<f64> = pool_vecs
                    .iter()
                    .map(|p| cosine(&ecpe_vecs[e], p))
                    .collect::<Result<_, _>>()?;
                let mut order: Vec<usize> = (0..pool.len()).collect();
                order.sort_by(|&a, &b| {
                    sims[b]
                        .total_cmp(&sims[a])
                        .then_with(|| pool[a].causal_id.cmp(&pool[b].causal_id))
                });
                Ok(order)
            })
            .collect::<Result<_, KnowledgeError>>()?;

        let mut taken = vec![false; pool.len()];
        let mut cursors = vec![0usize; rankings.len()];
        let mut picks = Vec::with_capacity(limit);
        'rounds: while picks.len() < limit {
            for (ranking, cursor) in rankings.iter().zip(cursors.iter_mut()) {
                while taken[ranking[*cursor]] {
                    *cursor += 1;
                }
                let p = ranking[*cursor];
                taken[p] = true;
                picks.push(p);
                if picks.len() == limit {
                    break 'rounds;
                }
            }
        }

        Ok(Self {
            pool,
            ecpe_count: ecpe.len(),
            picks,
        })
    }

    /// Pool indices in the order they were picked.
    pub fn pick_order(&self) -> &[usize] {
        &self.picks
    }

    pub fn select(&self, ratio: MixRatio) -> Selection {
        let requested = ratio.quota(self.ecpe_count);
        let take = requested.min(self.picks.len());
        let mut records: Vec<CausalRecord> = self.picks[..take]
            .iter()
            .map(|&i| self.pool[i].clone())
            .collect();
        records.sort_by(|a, b| a.causal_id.cmp(&b.causal_id));
        let shortfall = (take < requested).then_some(Shortfall {
            requested,
            selected: take,
            missing: requested - take,
        });
        Selection {
            ratio,
            records,
            requested,
            shortfall,
        }
    }
}

/// Picks `ratio.causal_part * |ecpe|` pool records by round-robin best match.
pub fn select_causal(
    ecpe: &[InstructionRecord],
    pool: &[CausalRecord],
    ratio: MixRatio,
    embedder: &dyn Embedder,
) -> Result<Selection, BlendError> {
    let plan = SimilarityPlan::build(ecpe, pool, ratio.quota(ecpe.len()), embedder)?;
    Ok(plan.select(ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendStats {
    pub ecpe: usize,
    pub causal: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendDataset {
    pub records: Vec<InstructionRecord>,
    pub stats: BlendStats,
    pub seed: u64,
}

impl BlendDataset {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }
}

pub fn causal_instruction(record: &CausalRecord) -> InstructionRecord {
    let mut meta = BTreeMap::from([("causal_id".to_string(), record.causal_id.clone())]);
    if let Some(tag) = &record.task_tag {
        meta.insert("task_tag".into(), tag.clone());
    }
    InstructionRecord {
        record_id: format!("causal:{}", record.causal_id),
        source: RecordSource::Causal,
        instruction: record.instruction.clone(),
        response: record.response.clone(),
        meta,
    }
}

/// Wraps the causal records, joins them with the ECPE records and shuffles.
pub fn blend(
    ecpe: &[InstructionRecord],
    causal: &[CausalRecord],
    seed: u64,
) -> Result<BlendDataset, BlendError> {
    if ecpe.is_empty() {
        return Err(BlendError::Precondition("no ECPE records to blend".into()));
    }
    let mut records: Vec<InstructionRecord> = ecpe.to_vec();
    records.extend(causal.iter().map(causal_instruction));

    let mut ids = HashSet::with_capacity(records.len());
    if let Some(dup) = records.iter().find(|r| !ids.insert(r.record_id.as_str())) {
        return Err(BlendError::Collision(dup.record_id.clone()));
    }

    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BlendDataset {
        stats: BlendStats {
            ecpe: ecpe.len(),
            causal: causal.len(),
            total: records.len(),
        },
        records,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub selection: Selection,
    pub dataset: BlendDataset,
}

/// One blend per ratio, all drawn from a single pick sequence so that
/// smaller-ratio selections nest inside larger ones.
pub fn sweep(
    ecpe: &[InstructionRecord],
    pool: &[CausalRecord],
    ratios: &[MixRatio],
    seed: u64,
    embedder: &dyn Embedder,
) -> Result<Vec<SweepEntry>, BlendError> {
    let max_quota = ratios
        .iter()
        .map(|r| r.quota(ecpe.len()))
        .max()
        .ok_or_else(|| BlendError::Precondition("ratio list is empty".into()))?;
    let plan = SimilarityPlan::build(ecpe, pool, max_quota, embedder)?;
    ratios
        .iter()
        .map(|&ratio| {
            let selection = plan.select(ratio);
            let dataset = blend(ecpe, &selection.records, seed)?;
            Ok(SweepEntry { selection, dataset })
        })
        .collect()
}

//! Independent reference implementations used as test oracles. None of
//! these call into the algorithm under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use ecforge_core::blend::CausalRecord;
use ecforge_core::corpus::{Document, Pair};
use ecforge_core::template::{InstructionRecord, RecordSource};
use rand::seq::IndexedRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Double loop over plain vectors: counts gold pairs that appear anywhere in
/// the predictions.
pub fn brute_force_correct(gold: &[(u32, u32)], predicted: &[(u32, u32)]) -> usize {
    let mut correct = 0;
    for g in gold {
        let mut hit = false;
        for p in predicted {
            if p == g {
                hit = true;
            }
        }
        if hit {
            correct += 1;
        }
    }
    correct
}

pub fn reference_cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
    }
    for x in u {
        uu += x * x;
    }
    for x in v {
        vv += x * x;
    }
    dot / (uu.sqrt() * vv.sqrt())
}

/// Whether the mock puts `text` in its none-bucket, recomputed from the digest.
pub fn in_none_bucket(text: &str, none_fraction: f64) -> bool {
    let digest = Sha256::digest(text.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    let bucket = u64::from_be_bytes(head) % 10_000;
    bucket < (none_fraction * 10_000.0).round() as u64
}

/// Full similarity matrix, then round-robin over ECPE records in record_id
/// order; each turn takes the most similar untaken pool record, breaking
/// ties by the smaller causal_id. Returns the selected causal_ids, sorted.
pub fn reference_selection(
    ecpe_ids: &[String],
    ecpe_vecs: &[Vec<f64>],
    pool_ids: &[String],
    pool_vecs: &[Vec<f64>],
    quota: usize,
) -> Vec<String> {
    let sim: Vec<Vec<f64>> = ecpe_vecs
        .iter()
        .map(|e| pool_vecs.iter().map(|p| reference_cosine(e, p)).collect())
        .collect();
    let mut order: Vec<usize> = (0..ecpe_ids.len()).collect();
    order.sort_by(|a, b| ecpe_ids[*a].cmp(&ecpe_ids[*b]));

    let target = quota.min(pool_ids.len());
    let mut taken: HashSet<usize> = HashSet::new();
    let mut picked = Vec::new();
    while picked.len() < target {
        for &e in &order {
            if picked.len() == target {
                break;
            }
            let mut best: Option<usize> = None;
            for p in 0..pool_ids.len() {
                if taken.contains(&p) {
                    continue;
                }
                best = match best {
                    None => Some(p),
                    Some(b) => {
                        let better = sim[e][p] > sim[e][b]
                            || (sim[e][p] == sim[e][b] && pool_ids[p] < pool_ids[b]);
                        Some(if better { p } else { b })
                    }
                };
            }
            let b = best.expect("pool has an untaken record");
            taken.insert(b);
            picked.push(pool_ids[b].clone());
        }
    }
    picked.sort();
    picked
}

const WORDS: &[&str] = &[
    "rain", "market", "train", "letter", "garden", "storm", "exam", "dog", "party", "phone",
    "river", "bread", "doctor", "music", "winter", "road", "friend", "school", "money", "fire",
];

pub fn sentence<R: Rng>(rng: &mut R, words: usize) -> String {
    (0..words)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn ecpe_records<R: Rng>(rng: &mut R, n: usize) -> Vec<InstructionRecord> {
    (0..n)
        .map(|i| InstructionRecord {
            record_id: format!("ecpe:s{i:04}"),
            source: RecordSource::Ecpe,
            instruction: format!(
                "Document:\n1. {}\n2. {}",
                sentence(rng, 5),
                sentence(rng, 4)
            ),
            response: "(1,2)".into(),
            meta: BTreeMap::new(),
        })
        .collect()
}

/// Small vocabulary and occasional verbatim repeats, so exact similarity
/// ties happen.
pub fn causal_pool<R: Rng>(rng: &mut R, n: usize) -> Vec<CausalRecord> {
    let mut out: Vec<CausalRecord> = Vec::with_capacity(n);
    for i in 0..n {
        let instruction = if i > 0 && rng.random_bool(0.1) {
            out[rng.random_range(0..i)].instruction.clone()
        } else {
            let words = rng.random_range(2..8);
            sentence(rng, words)
        };
        out.push(CausalRecord {
            causal_id: format!("c{:05}", rng.random_range(0..1_000_000) * 1000 + i),
            instruction,
            response: "yes".into(),
            task_tag: None,
        });
    }
    out
}

pub fn synthetic_documents<R: Rng>(rng: &mut R, n: usize) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let clauses: Vec<String> = (0..rng.random_range(2..6))
                .map(|_| {
                    let words = rng.random_range(3..9);
                    sentence(rng, words)
                })
                .collect();
            let k = clauses.len() as u32;
            let pair = Pair::new(rng.random_range(1..=k), rng.random_range(1..=k));
            Document::new(format!("s{i:04}"), &clauses, [pair])
        })
        .collect()
}

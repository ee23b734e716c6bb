//! Deterministic offline stand-in for every model role.
//!
//! All behaviour is keyed by `mock_hash(text)`, the SHA-256 digest of the
//! UTF-8 bytes of the input:
//!
//! - **generate_reaction**: `bucket = u64_be(digest[0..8]) % 10_000`. The
//!   input is in the none-bucket iff `bucket < round(none_fraction * 10_000)`
//!   and then the reply is `"none"`. Otherwise the reply is
//!   `REACTIONS[u64_be(digest[8..16]) % REACTIONS.len()]`.
//! - **embed**: feature hashing. Each lowercase alphanumeric token `t`
//!   contributes the features `w:t` and every character trigram of `<t>`
//!   prefixed `c:`. A feature with digest `h = u64_be(sha256(feature)[0..8])`
//!   adds `+1` (top bit clear) or `-1` (top bit set) at index `h % dim`.
//!   Inputs without tokens use the single feature `r:<text>`. The vector is
//!   then L2-normalized; if every feature cancelled, index `h(text) % dim`
//!   is set to 1.
//! - **classify_polarity**: majority vote of a small positive/negative
//!   lexicon over the lowercase tokens. Ties (including no hits) resolve to
//!   POSITIVE when `digest[31]` is even, else NEGATIVE. Confidence is
//!   `max(pos, neg) / (pos + neg)`, or 0.5 when no lexicon word occurs.
//! - **complete**: if the instruction contains the rendered document
//!   context of a registered gold document, that document's canonical gold
//!   response is returned (longest matching context wins). Otherwise the
//!   reply is [`REFUSAL_SENTINEL`]. Decoding mode does not change the output.

use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{
    require_text, require_texts, ClientError, Completer, Decode, Embedder, EmbeddingVector,
    Polarity, PolarityClassifier, PolarityVerdict, ReactionGenerator,
};
use crate::corpus::Corpus;
use crate::template;

pub const REFUSAL_SENTINEL: &str = "I cannot identify any emotion-cause pairs.";

pub const REACTIONS: [&str; 20] = [
    "happy",
    "sad",
    "scared",
    "angry",
    "surprised",
    "disgusted",
    "relieved",
    "joyful",
    "grateful",
    "upset",
    "worried",
    "nervous",
    "proud",
    "lonely",
    "excited",
    "ashamed",
    "hopeful",
    "annoyed",
    "content",
    "heartbroken",
];

const POSITIVE_WORDS: &[&str] = &[
    "happy",
    "happiness",
    "glad",
    "joy",
    "joyful",
    "love",
    "loved",
    "smile",
    "smiled",
    "laugh",
    "laughed",
    "won",
    "win",
    "proud",
    "excited",
    "grateful",
    "delighted",
    "success",
    "successful",
    "relieved",
    "hope",
    "hopeful",
    "wonderful",
    "great",
    "good",
    "pleased",
    "celebrate",
    "celebrated",
    "beautiful",
    "kind",
    "thrilled",
    "cheered",
];

const NEGATIVE_WORDS: &[&str] = &[
    "sad",
    "cried",
    "cry",
    "crying",
    "tears",
    "angry",
    "anger",
    "afraid",
    "fear",
    "scared",
    "hate",
    "hated",
    "lost",
    "lose",
    "died",
    "death",
    "hurt",
    "pain",
    "lonely",
    "terrible",
    "awful",
    "upset",
    "worried",
    "sick",
    "fail",
    "failed",
    "disgusted",
    "furious",
    "sorrow",
    "miserable",
    "bad",
    "frightened",
    "grief",
];

pub const NONE_BUCKETS: u64 = 10_000;

pub fn mock_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn u64_at(digest: &[u8; 32], offset: usize) -> u64 {
    u64::from_be_bytes(digest[offset..offset + 8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockConfig {
    /// Fraction of inputs whose reaction is `"none"`.
    pub none_fraction: f64,
    pub dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            none_fraction: 0.43,
            dim: 64,
        }
    }
}

#[derive(Debug, Default)]
pub struct CallCounts {
    pub generate: AtomicU64,
    pub embed: AtomicU64,
    pub polarity: AtomicU64,
    pub complete: AtomicU64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.generate.load(Ordering::Relaxed)
            + self.embed.load(Ordering::Relaxed)
            + self.polarity.load(Ordering::Relaxed)
            + self.complete.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Default)]
pub struct MockClient {
    config: MockConfig,
    gold: Vec<(String, String)>,
    calls: CallCounts,
}

impl MockClient {
    pub fn new(config: MockConfig) -> Self {
        Self {
            config,
            gold: Vec::new(),
            calls: CallCounts::default(),
        }
    }

    /// Registers gold responses for completion echo.
    pub fn with_gold(mut self, corpus: &Corpus) -> Self {
        for doc in &corpus.documents {
            if doc.gold_pairs.is_empty() {
                continue;
            }
            let response = template::render_response(&doc.gold_pairs).expect("nonempty gold");
            self.gold.push((template::document_context(doc), response));
        }
        self
    }

    pub fn config(&self) -> MockConfig {
        self.config
    }

    pub fn calls(&self) -> &CallCounts {
        &self.calls
    }

    /// Number of none-buckets out of [`NONE_BUCKETS`].
    pub fn none_threshold(&self) -> u64 {
        (self.config.none_fraction.clamp(0.0, 1.0) * NONE_BUCKETS as f64).round() as u64
    }

    fn reaction_for(&self, text: &str) -> &'static str {
        let digest = mock_hash(text);
        if u64_at(&digest, 0) % NONE_BUCKETS < self.none_threshold() {
            "none"
        } else {
            REACTIONS[(u64_at(&digest, 8) % REACTIONS.len() as u64) as usize]
        }
    }

    fn vector_for(&self, text: &str) -> EmbeddingVector {
        let dim = self.config.dim.max(1);
        let mut values = vec![0.0f64; dim];
        let mut add = |feature: &str| {
            let h = u64_at(&mock_hash(feature), 0);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[(h % dim as u64) as usize] += sign;
        };

        let tokens = tokens(text);
        if tokens.is_empty() {
            add(&format!("r:{text}"));
        }
        for tok in &tokens {
            add(&format!("w:{tok}"));
            let padded: Vec<char> = format!("<{tok}>").chars().collect();
            for tri in padded.windows(3) {
                add(&format!("c:{}", tri.iter().collect::<String>()));
            }
        }

        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[(u64_at(&mock_hash(text), 0) % dim as u64) as usize] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values)
    }

    fn polarity_for(&self, text: &str) -> PolarityVerdict {
        let toks = tokens(text);
        let pos = toks
            .iter()
            .filter(|t| POSITIVE_WORDS.contains(&t.as_str()))
            .count();
        let neg = toks
            .iter()
            .filter(|t| NEGATIVE_WORDS.contains(&t.as_str()))
            .count();
        let label = match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Polarity::Positive,
            std::cmp::Ordering::Less => Polarity::Negative,
            std::cmp::Ordering::Equal if mock_hash(text)[31].is_multiple_of(2) => Polarity::Positive,
            std::cmp::Ordering::Equal => Polarity::Negative,
        };
        let confidence = if pos + neg == 0 {
            0.5
        } else {
            pos.max(neg) as f64 / (pos + neg) as f64
        };
        PolarityVerdict { label, confidence }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl ReactionGenerator for MockClient {
    fn generate_reaction(&self, document_text: &str) -> Result<String, ClientError> {
        require_text("document text", document_text)?;
        self.calls.generate.fetch_add(1, Ordering::Relaxed);
        Ok(self.reaction_for(document_text).to_string())
    }
}

impl Embedder for MockClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError> {
        require_texts(texts)?;
        self.calls.embed.fetch_add(1, Ordering::Relaxed);
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

impl PolarityClassifier for MockClient {
    fn classify_polarity(&self, document_text: &str) -> Result<PolarityVerdict, ClientError> {
        require_text("document text", document_text)?;
        self.calls.polarity.fetch_add(1, Ordering::Relaxed);
        Ok(self.polarity_for(document_text))
    }
}

impl Completer for MockClient {
    fn complete(&self, instruction: &str, _decode: Decode) -> Result<String, ClientError> {
        require_text("instruction", instruction)?;
        self.calls.complete.fetch_add(1, Ordering::Relaxed);
        Ok(self
            .gold
            .iter()
            .filter(|(context, _)| instruction.contains(context.as_str()))
            .max_by_key(|(context, _)| context.len())
            .map(|(_, response)| response.clone())
            .unwrap_or_else(|| REFUSAL_SENTINEL.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Pair, SplitTag};

    fn mock() -> MockClient {
        MockClient::new(MockConfig::default())
    }

    #[test]
    fn reaction_is_deterministic() {
        let m = mock();
        let text = "she could see everything after surgery";
        let a = m.generate_reaction(text).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, m.generate_reaction(text).unwrap());
    }

    #[test]
    fn none_bucket_follows_documented_rule() {
        let m = mock();
        let mut seen_none = false;
        for i in 0..200 {
            let text = format!("document number {i}");
            let d = mock_hash(&text);
            let expect_none = u64::from_be_bytes(d[0..8].try_into().unwrap()) % 10_000 < 4_300;
            let got = m.generate_reaction(&text).unwrap();
            assert_eq!(got == "none", expect_none, "{text}");
            seen_none |= expect_none;
        }
        assert!(seen_none);
    }

    #[test]
    fn none_fraction_extremes() {
        let all = MockClient::new(MockConfig {
            none_fraction: 1.0,
            dim: 8,
        });
        let never = MockClient::new(MockConfig {
            none_fraction: 0.0,
            dim: 8,
        });
        for i in 0..50 {
            let t = format!("t{i}");
            assert_eq!(all.generate_reaction(&t).unwrap(), "none");
            assert_ne!(never.generate_reaction(&t).unwrap(), "none");
        }
    }

    #[test]
    fn embed_shape_and_determinism() {
        let m = mock();
        let v = m.embed(&["a".into(), "a".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        let v = m.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].dim(), 64);
        assert_eq!(v[1].dim(), 64);
        let norm: f64 = v[0].values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(matches!(m.embed(&[]), Err(ClientError::Precondition(_))));
        assert!(m.embed(&["".into()]).is_err());
    }

    #[test]
    fn embed_punctuation_only_text() {
        let v = mock().embed(&["!!!".into()]).unwrap();
        assert!(v[0].values.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn polarity_lexicon_vote() {
        let m = mock();
        let p = m.classify_polarity("I was so happy today").unwrap();
        assert_eq!(p.label, Polarity::Positive);
        assert!((0.0..=1.0).contains(&p.confidence));
        let n = m.classify_polarity("I cried all night").unwrap();
        assert_eq!(n.label, Polarity::Negative);
        assert!(m.classify_polarity("").is_err());
    }

    #[test]
    fn completion_echoes_gold_or_sentinel() {
        let corpus = Corpus::new(
            vec![
                Document::new(
                    "d3",
                    ["He lost the match", "he was sad", "ok"],
                    [Pair::new(2, 1)],
                ),
                Document::new(
                    "d4",
                    ["He lost the match", "he was sad", "ok", "more"],
                    [Pair::new(3, 2)],
                ),
            ],
            SplitTag::Test,
        );
        let m = mock().with_gold(&corpus);
        for doc in &corpus.documents {
            let instr = format!("Task\n\n{}", template::document_context(doc));
            let out = m.complete(&instr, Decode::Greedy).unwrap();
            assert_eq!(out, template::render_response(&doc.gold_pairs).unwrap());
            assert_eq!(out, m.complete(&instr, Decode::Greedy).unwrap());
        }
        assert_eq!(
            m.complete("unrelated", Decode::Sampled { seed: 3 })
                .unwrap(),
            REFUSAL_SENTINEL
        );
        assert_eq!(m.calls().complete.load(Ordering::Relaxed), 5);
    }
}

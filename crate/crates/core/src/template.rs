//! Instruction records and the pair answer grammar.
//!
//! An ECPE instruction has up to four blocks, separated by blank lines:
//!
//! ```text
//! <task description>
//!
//! Document:
//! 1. <clause 1>
//! 2. <clause 2>
//!
//! <knowledge preamble for the knowledge kind>
//! happiness: 0.8123
//! ...
//! ```
//!
//! The answer grammar is `(e,c); (e,c)` with 1-based clause indices sorted
//! ascending. Model output is read back tolerantly by [`parse_pairs`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Pair, PairSet, SplitTag};
use crate::knowledge::{AnnotatedDocument, Knowledge};

pub const GRAMMAR_PAIRS_V1: &str = "pairs-v1";
const KNOWN_GRAMMARS: &[&str] = &[GRAMMAR_PAIRS_V1];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template config: {0}")]
    Config(String),
    #[error("cannot render a response for an empty gold pair set")]
    EmptyGold,
    #[error("reading template config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub template_version: String,
    pub task_description: String,
    pub knowledge_preamble_distribution: String,
    pub knowledge_preamble_polarity: String,
    pub response_grammar_version: String,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            template_version: "en-1".into(),
            task_description: "Find every emotion-cause pair in the document below. Clauses are \
                numbered from 1. Answer only with pairs written as (emotion_clause,cause_clause), \
                separated by \"; \"."
                .into(),
            knowledge_preamble_distribution: "Emotional knowledge: how closely the reader's \
                likely reaction matches each emotion, from most to least similar:"
                .into(),
            knowledge_preamble_polarity: "Emotional knowledge: the overall emotional polarity \
                of the document is:"
                .into(),
            response_grammar_version: GRAMMAR_PAIRS_V1.into(),
        }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, value) in [
            ("template_version", &self.template_version),
            ("task_description", &self.task_description),
            (
                "knowledge_preamble_distribution",
                &self.knowledge_preamble_distribution,
            ),
            (
                "knowledge_preamble_polarity",
                &self.knowledge_preamble_polarity,
            ),
        ] {
            if value.trim().is_empty() {
                return Err(TemplateError::Config(format!("`{name}` must be nonempty")));
            }
        }
        if !KNOWN_GRAMMARS.contains(&self.response_grammar_version.as_str()) {
            return Err(TemplateError::Config(format!(
                "unknown response grammar `{}`",
                self.response_grammar_version
            )));
        }
        Ok(())
    }

    /// Parses a TOML template file. Every key is required.
    pub fn from_toml(raw: &str) -> Result<Self, TemplateError> {
        let config: Self = toml::from_str(raw).map_err(|e| TemplateError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let raw = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    Ecpe,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub record_id: String,
    pub source: RecordSource,
    pub instruction: String,
    pub response: String,
    pub meta: BTreeMap<String, String>,
}

impl InstructionRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("instruction record serializes")
    }
}

/// Document context block: `Document:` followed by numbered clauses.
pub fn document_context(doc: &Document) -> String {
    let mut out = String::from("Document:");
    for c in &doc.clauses {
        out.push_str(&format!("\n{}. {}", c.index, c.text));
    }
    out
}

fn knowledge_block(knowledge: &Knowledge, config: &TemplateConfig) -> String {
    match knowledge {
        Knowledge::Distribution { distribution } => {
            let mut out = config.knowledge_preamble_distribution.clone();
            for e in distribution.entries() {
                out.push_str(&format!("\n{}: {:.4}", e.label, e.score));
            }
            out
        }
        Knowledge::Polarity { polarity } => {
            format!("{}\n{}", config.knowledge_preamble_polarity, polarity.label)
        }
    }
}

/// Task description, document context, knowledge preamble and knowledge.
pub fn render_instruction(
    annotated: &AnnotatedDocument,
    config: &TemplateConfig,
) -> Result<String, TemplateError> {
    config.validate()?;
    Ok(format!(
        "{}\n\n{}\n\n{}",
        config.task_description,
        document_context(&annotated.document),
        knowledge_block(&annotated.knowledge.knowledge, config)
    ))
}

/// Task description and document context only (no emotional knowledge).
pub fn render_plain_instruction(
    doc: &Document,
    config: &TemplateConfig,
) -> Result<String, TemplateError> {
    config.validate()?;
    Ok(format!(
        "{}\n\n{}",
        config.task_description,
        document_context(doc)
    ))
}

pub fn render_response(gold: &PairSet) -> Result<String, TemplateError> {
    if gold.is_empty() {
        return Err(TemplateError::EmptyGold);
    }
    Ok(gold
        .iter()
        .map(Pair::to_string)
        .collect::<Vec<_>>()
        .join("; "))
}

/// Builds the training/evaluation record for one document. `annotated` is
/// `None` when emotional knowledge is switched off.
pub fn ecpe_record(
    doc: &Document,
    annotated: Option<&AnnotatedDocument>,
    split: SplitTag,
    config: &TemplateConfig,
) -> Result<InstructionRecord, TemplateError> {
    let (instruction, kind) = match annotated {
        Some(a) => (render_instruction(a, config)?, a.knowledge.knowledge.kind()),
        None => (render_plain_instruction(doc, config)?, "none"),
    };
    let meta = BTreeMap::from([
        ("doc_id".to_string(), doc.doc_id.clone()),
        ("knowledge".to_string(), kind.to_string()),
        (
            "template_version".to_string(),
            config.template_version.clone(),
        ),
        ("split".to_string(), split.as_str().to_string()),
    ]);
    Ok(InstructionRecord {
        record_id: format!("ecpe:{}", doc.doc_id),
        source: RecordSource::Ecpe,
        instruction,
        response: render_response(&doc.gold_pairs)?,
        meta,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedPairs {
    pub pairs: PairSet,
    /// No `(int,int)` group was found at all.
    pub no_match: bool,
    /// Groups that repeated an already-seen pair.
    pub duplicates: usize,
}

static PAIR_GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[(（]\s*([0-9]+)\s*[,，]\s*([0-9]+)\s*[)）]").expect("pair regex compiles")
});

/// Extracts every `(int,int)` group from free-form model output.
///
/// ASCII and full-width parentheses, commas and digits are accepted, with
/// any whitespace inside a group. Text between groups is ignored. Never
/// fails: unparseable output yields an empty set with `no_match` set.
pub fn parse_pairs(text: &str) -> ParsedPairs {
    let folded: String = text
        .chars()
        .map(|c| match c {
            '０'..='９' => char::from(b'0' + (c as u32 - '０' as u32) as u8),
            _ => c,
        })
        .collect();

    let mut out = ParsedPairs::default();
    let mut matched = false;
    for caps in PAIR_GROUP.captures_iter(&folded) {
        let (Ok(e), Ok(c)) = (caps[1].parse::<u32>(), caps[2].parse::<u32>()) else {
            continue;
        };
        matched = true;
        if !out.pairs.insert(Pair::new(e, c)) {
            out.duplicates += 1;
        }
    }
    out.no_match = !matched;
    out
}

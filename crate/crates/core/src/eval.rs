//! Pair-level precision, recall and F1.
//!
//! A predicted pair is correct only when both the emotion clause and the
//! cause clause match a gold pair exactly. Counts are summed over the whole
//! test set before P/R/F1 are computed (micro-averaging). Predicted pairs
//! whose indices fall outside the document are dropped before counting and
//! reported separately.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LineError, PairSet};
use crate::template::parse_pairs;

pub const OUT_OF_RANGE_POLICY: &str = "filtered-before-counting";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold pair set is empty{}", .0.as_ref().map(|d| format!(" for document `{d}`")).unwrap_or_default())]
    EmptyGold(Option<String>),
    #[error("nothing to compare")]
    NoReports,
    #[error("{} malformed prediction line(s); first: {}", .0.len(), .0[0])]
    MalformedPredictions(Vec<LineError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub correct: usize,
    pub proposed: usize,
    pub gold: usize,
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.correct += rhs.correct;
        self.proposed += rhs.proposed;
        self.gold += rhs.gold;
    }
}

pub fn match_pairs(gold: &PairSet, predicted: &PairSet) -> Result<MatchCounts, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold(None));
    }
    Ok(MatchCounts {
        correct: gold.intersection_len(predicted),
        proposed: predicted.len(),
        gold: gold.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Harmonic mean of `precision` and `recall`, 0 when both are 0.
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

pub fn prf1(counts: MatchCounts) -> Result<Metrics, EvalError> {
    if counts.gold == 0 {
        return Err(EvalError::EmptyGold(None));
    }
    let precision = if counts.proposed == 0 {
        0.0
    } else {
        counts.correct as f64 / counts.proposed as f64
    };
    let recall = counts.correct as f64 / counts.gold as f64;
    Ok(Metrics::from_precision_recall(precision, recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocResult {
    pub doc_id: String,
    pub gold: PairSet,
    /// After out-of-range filtering.
    pub predicted: PairSet,
    pub no_match: bool,
    pub missing: bool,
    pub filtered: usize,
    pub duplicates: usize,
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub documents: usize,
    pub missing_predictions: usize,
    pub no_match: usize,
    pub filtered_pairs: usize,
    pub duplicate_pairs: usize,
    pub unknown_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<String>,
    pub out_of_range_policy: String,
    pub totals: MatchCounts,
    pub metrics: Metrics,
    pub diagnostics: Diagnostics,
    pub manifest_ref: String,
    pub per_doc: Vec<DocResult>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> String {
        let m = &self.metrics;
        let d = &self.diagnostics;
        let mut s = String::new();
        let _ = writeln!(s, "run        {}", self.run_id);
        if let Some(method) = &self.method {
            let _ = writeln!(s, "method     {method}");
        }
        if let Some(ratio) = &self.ratio {
            let _ = writeln!(s, "ratio      {ratio}");
        }
        let _ = writeln!(
            s,
            "P/R/F1 (%) {:.2} / {:.2} / {:.2}",
            m.precision * 100.0,
            m.recall * 100.0,
            m.f1 * 100.0
        );
        let _ = writeln!(
            s,
            "counts     correct={} proposed={} gold={}",
            self.totals.correct, self.totals.proposed, self.totals.gold
        );
        let _ = writeln!(
            s,
            "documents  {} (missing={} no_match={} filtered_pairs={} duplicate_pairs={} unknown={})",
            d.documents,
            d.missing_predictions,
            d.no_match,
            d.filtered_pairs,
            d.duplicate_pairs,
            d.unknown_predictions
        );
        s
    }
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    doc_id: String,
    output: String,
}

/// Reads `{"doc_id", "output"}` lines. A repeated doc_id keeps the last line.
pub fn read_predictions(raw: &str) -> Result<BTreeMap<String, String>, EvalError> {
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionLine>(line) {
            Ok(p) => {
                out.insert(p.doc_id, p.output);
            }
            Err(e) => errors.push(LineError {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(EvalError::MalformedPredictions(errors))
    }
}

pub fn write_predictions(predictions: &BTreeMap<String, String>, order: &[String]) -> String {
    let mut out = String::new();
    for id in order {
        if let Some(output) = predictions.get(id) {
            let line = serde_json::json!({ "doc_id": id, "output": output });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

/// Scores raw model outputs against the test corpus. A document without a
/// prediction scores as an empty answer and is flagged.
pub fn evaluate_run(
    test: &Corpus,
    predictions: &BTreeMap<String, String>,
) -> Result<RunReport, EvalError> {
    let mut per_doc = Vec::with_capacity(test.len());
    let mut totals = MatchCounts::default();
    let mut diagnostics = Diagnostics {
        documents: test.len(),
        ..Diagnostics::default()
    };

    for doc in &test.documents {
        let (parsed, missing) = match predictions.get(&doc.doc_id) {
            Some(raw) => (parse_pairs(raw), false),
            None => (
                crate::template::ParsedPairs {
                    no_match: true,
                    ..Default::default()
                },
                true,
            ),
        };
        let mut predicted = parsed.pairs;
        let before = predicted.len();
        predicted.retain(|p| p.within(doc.clauses.len()));
        let filtered = before - predicted.len();

        let counts = match_pairs(&doc.gold_pairs, &predicted)
            .map_err(|_| EvalError::EmptyGold(Some(doc.doc_id.clone())))?;
        totals += counts;
        diagnostics.missing_predictions += missing as usize;
        diagnostics.no_match += parsed.no_match as usize;
        diagnostics.filtered_pairs += filtered;
        diagnostics.duplicate_pairs += parsed.duplicates;
        per_doc.push(DocResult {
            doc_id: doc.doc_id.clone(),
            gold: doc.gold_pairs.clone(),
            predicted,
            no_match: parsed.no_match,
            missing,
            filtered,
            duplicates: parsed.duplicates,
            counts,
        });
    }

    let known: HashSet<&str> = test.documents.iter().map(|d| d.doc_id.as_str()).collect();
    diagnostics.unknown_predictions = predictions
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .count();

    Ok(RunReport {
        run_id: String::new(),
        method: None,
        ratio: None,
        out_of_range_policy: OUT_OF_RANGE_POLICY.into(),
        metrics: prf1(totals)?,
        totals,
        diagnostics,
        manifest_ref: String::new(),
        per_doc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run_id: String,
    pub method: Option<String>,
    pub ratio: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// Fixed-width text table with percentages to two decimals; the best
    /// row is starred.
    pub fn render_text(&self) -> String {
        let run_w = self
            .rows
            .iter()
            .map(|r| r.run_id.len())
            .chain([3])
            .max()
            .unwrap_or(3);
        let method_w = self
            .rows
            .iter()
            .map(|r| r.method.as_deref().unwrap_or("-").len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "  {:<run_w$}  {:<method_w$}  {:<6}  {:>6}  {:>6}  {:>6}",
            "Run", "Method", "Ratio", "P(%)", "R(%)", "F1(%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{} {:<run_w$}  {:<method_w$}  {:<6}  {:>6.2}  {:>6.2}  {:>6.2}",
                if r.best { "*" } else { " " },
                r.run_id,
                r.method.as_deref().unwrap_or("-"),
                r.ratio.as_deref().unwrap_or("-"),
                r.precision * 100.0,
                r.recall * 100.0,
                r.f1 * 100.0
            );
        }
        s
    }
}

/// Rows sorted by F1 descending (ties by run_id); the first row is marked best.
pub fn compare_runs(reports: &[RunReport]) -> Result<ComparisonTable, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            run_id: r.run_id.clone(),
            method: r.method.clone(),
            ratio: r.ratio.clone(),
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
            best: false,
        })
        .collect();
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.run_id.cmp(&b.run_id)));
    rows[0].best = true;
    Ok(ComparisonTable { rows })
}

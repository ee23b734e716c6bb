//! End-to-end orchestration behind the `ecforge` commands.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! knowledge-cache.jsonl
//! annotate/{train,test}.annotated.jsonl, manifest.json, timings.json
//! blend/ratio-1-<n>/emocausblend.jsonl, manifest.json, timings.json
//! blend/sweep-manifest.json                       (sweep only)
//! evaluate/predictions.jsonl, report.json, report.txt, manifest.json, timings.json
//! ```
//!
//! Everything except `timings.json` is a pure function of the config and
//! input files when mock clients are used.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    Ablation, CorpusPaths, EndpointSpec, Endpoints, MockSettings, Overrides, RunConfig,
    AUTH_TOKEN_ENV,
};

use crate::blend::{
    self, BlendError, BlendStats, CausalRecord, MixRatio, Shortfall, SELECTION_RULE, SHUFFLE_RULE,
};
use crate::clients::{
    ClientError, Clients, Completer, Decode, Embedder, HttpClient, MockClient, PolarityClassifier,
    ReactionGenerator,
};
use crate::corpus::{self, Corpus, CorpusError, SplitTag, Violation};
use crate::eval::{self, ComparisonTable, EvalError, RunReport};
use crate::knowledge::{self, AnnotatedDocument, AnnotationFailure, KnowledgeError, NoneRateStats};
use crate::template::{self, InstructionRecord, TemplateConfig, TemplateError};

pub const TOOL: &str = "ecforge";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl PipelineError {
    /// 1 data, 2 transport, 3 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Data(_) => 1,
            PipelineError::Transport(_) => 2,
            PipelineError::Config(_) => 3,
        }
    }

    fn io(what: &str, path: &Path, e: std::io::Error) -> Self {
        PipelineError::Data(format!("{what} {}: {e}", path.display()))
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        let mut msg = e.to_string();
        for le in e.line_errors().iter().skip(1).take(9) {
            msg.push_str(&format!("\n  {le}"));
        }
        PipelineError::Data(msg)
    }
}

impl From<TemplateError> for PipelineError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::Config(_) | TemplateError::Io { .. } => {
                PipelineError::Config(e.to_string())
            }
            TemplateError::EmptyGold => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<ClientError> for PipelineError {
    fn from(e: ClientError) -> Self {
        if e.is_transport() {
            PipelineError::Transport(e.to_string())
        } else {
            PipelineError::Data(e.to_string())
        }
    }
}

impl From<KnowledgeError> for PipelineError {
    fn from(e: KnowledgeError) -> Self {
        if e.is_transport() {
            PipelineError::Transport(e.to_string())
        } else {
            PipelineError::Data(e.to_string())
        }
    }
}

impl From<BlendError> for PipelineError {
    fn from(e: BlendError) -> Self {
        if e.is_transport() {
            PipelineError::Transport(e.to_string())
        } else {
            PipelineError::Data(e.to_string())
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io("reading", path, e))
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io("creating", parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| PipelineError::io("writing", path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write(
        path,
        &(serde_json::to_string_pretty(value).expect("manifest serializes") + "\n"),
    )
}

fn jsonl(lines: impl IntoIterator<Item = String>) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

/// Everything needed to reproduce one stage's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub stage: &'static str,
    pub config: RunConfig,
    /// Input path (as configured) to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub template_version: String,
    pub conventions: BTreeMap<&'static str, &'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<BTreeMap<String, NoneRateStats>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub annotation_failures: Vec<AnnotationFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blend: Option<BlendSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlendSummary {
    pub seed: u64,
    pub ratio: MixRatio,
    pub stats: BlendStats,
    pub shortfall: Option<Shortfall>,
    pub selection_rule: &'static str,
    pub shuffle_rule: &'static str,
    pub emotional_knowledge: bool,
    pub causal_diagnostics: usize,
    pub output: String,
    pub output_sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub predictions_source: String,
    pub predictions_sha256: String,
    pub decode: Decode,
    pub metrics: eval::Metrics,
    pub totals: eval::MatchCounts,
}

#[derive(Debug, Clone, Serialize)]
struct SweepManifest {
    tool: &'static str,
    tool_version: &'static str,
    seed: u64,
    entries: Vec<SweepManifestEntry>,
}

#[derive(Debug, Clone, Serialize)]
struct SweepManifestEntry {
    ratio: MixRatio,
    stats: BlendStats,
    shortfall: Option<Shortfall>,
    directory: String,
}

#[derive(Debug, Default, Serialize)]
struct Timings {
    stages: BTreeMap<String, f64>,
}

impl Timings {
    fn record<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1000.0);
        out
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateSummary {
    pub stats: BTreeMap<String, NoneRateStats>,
    pub failures: Vec<AnnotationFailure>,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct BlendOutput {
    pub ratio: MixRatio,
    pub path: PathBuf,
    pub stats: BlendStats,
    pub shortfall: Option<Shortfall>,
}

/// A loaded, validated configuration plus the clients it names.
pub struct Pipeline {
    config: RunConfig,
    template: TemplateConfig,
    clients: Clients,
    mock: Option<Arc<MockClient>>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let template = match &config.template {
            Some(p) => TemplateConfig::load(&config.resolve(p))?,
            None => TemplateConfig::default(),
        };

        let needs_mock = config
            .endpoints
            .roles()
            .iter()
            .any(|(_, s)| matches!(s, EndpointSpec::Named(_)));
        let mock = if needs_mock {
            let mut m = MockClient::new(config.mock.into());
            for path in [&config.corpus.train, &config.corpus.test] {
                let corpus =
                    corpus::parse_corpus(&read(&config.resolve(path))?, config.corpus.format)?;
                m = m.with_gold(&corpus);
            }
            Some(Arc::new(m))
        } else {
            None
        };

        let token = std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        let http = |spec: &EndpointSpec| -> Result<Option<Arc<HttpClient>>, PipelineError> {
            match spec {
                EndpointSpec::Http(e) => {
                    let mut e = e.clone();
                    e.auth_token = token.clone();
                    Ok(Some(Arc::new(
                        HttpClient::new(e).map_err(|e| PipelineError::Config(e.to_string()))?,
                    )))
                }
                EndpointSpec::Named(_) => Ok(None),
            }
        };
        let mock_ref = || mock.clone().expect("mock built when any role is mock");
        let e = &config.endpoints;
        let generator: Arc<dyn ReactionGenerator> = match http(&e.generator)? {
            Some(h) => h,
            None => mock_ref(),
        };
        let embedder: Arc<dyn Embedder> = match http(&e.embedder)? {
            Some(h) => h,
            None => mock_ref(),
        };
        let polarity: Arc<dyn PolarityClassifier> = match http(&e.polarity)? {
            Some(h) => h,
            None => mock_ref(),
        };
        let completer: Arc<dyn Completer> = match http(&e.completer)? {
            Some(h) => h,
            None => mock_ref(),
        };

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;

        Ok(Self {
            config,
            template,
            clients: Clients {
                generator,
                embedder,
                polarity,
                completer,
            },
            mock,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn clients(&self) -> &Clients {
        &self.clients
    }

    /// The shared mock, when at least one role uses it.
    pub fn mock(&self) -> Option<&Arc<MockClient>> {
        self.mock.as_ref()
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.output_path().join(rel)
    }

    fn load_split(&self, split: SplitTag) -> Result<Corpus, PipelineError> {
        let path = match split {
            SplitTag::Test => &self.config.corpus.test,
            _ => &self.config.corpus.train,
        };
        let corpus = corpus::parse_corpus(
            &read(&self.config.resolve(path))?,
            self.config.corpus.format,
        )?
        .with_split(split);
        let violations = corpus::validate_corpus(&corpus);
        if !violations.is_empty() {
            return Err(PipelineError::Data(format!(
                "{} invalid: {}",
                path.display(),
                violations
                    .iter()
                    .map(Violation::to_string)
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        Ok(corpus)
    }

    fn input_hashes(
        &self,
        extra: &[(&str, &[u8])],
    ) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut paths = vec![&self.config.corpus.train, &self.config.corpus.test];
        paths.extend(self.config.causal_pool.iter());
        paths.extend(self.config.template.iter());
        let mut out = BTreeMap::new();
        for p in paths {
            let bytes = std::fs::read(self.config.resolve(p))
                .map_err(|e| PipelineError::io("reading", p, e))?;
            out.insert(p.display().to_string(), sha256_hex(&bytes));
        }
        for (name, bytes) in extra {
            out.insert(name.to_string(), sha256_hex(bytes));
        }
        Ok(out)
    }

    fn manifest(&self, stage: &'static str, inputs: BTreeMap<String, String>) -> RunManifest {
        RunManifest {
            tool: TOOL,
            tool_version: TOOL_VERSION,
            stage,
            config: self.config.clone(),
            inputs,
            template_version: self.template.template_version.clone(),
            conventions: BTreeMap::from([
                ("document_text", "clauses joined by single spaces"),
                ("similarity_scores", "raw cosine, rendered to 4 decimals"),
                (
                    "none_detection",
                    "trimmed case-folded equality with \"none\"",
                ),
                ("out_of_range_predictions", eval::OUT_OF_RANGE_POLICY),
                ("averaging", "micro (corpus-level counts)"),
            ]),
            knowledge: None,
            annotation_failures: Vec::new(),
            blend: None,
            evaluation: None,
        }
    }

    fn annotated_path(split: SplitTag) -> String {
        format!("annotate/{}.annotated.jsonl", split.as_str())
    }

    /// Annotates both splits with emotional knowledge.
    pub fn annotate(&self) -> Result<AnnotateSummary, PipelineError> {
        let mut timings = Timings::default();
        let mut manifest = self.manifest("annotate", self.input_hashes(&[])?);
        if self.config.ablation.no_emotional_knowledge {
            write_json(&self.out("annotate/manifest.json"), &manifest)?;
            return Ok(AnnotateSummary {
                stats: BTreeMap::new(),
                failures: Vec::new(),
                skipped: true,
            });
        }

        let mut cache = knowledge::KnowledgeCache::open(&self.out("knowledge-cache.jsonl"))?;
        let mut stats = BTreeMap::new();
        let mut failures = Vec::new();
        for split in [SplitTag::Train, SplitTag::Test] {
            let corpus = self.load_split(split)?;
            let outcome = timings.record(&format!("annotate_{}", split.as_str()), || {
                knowledge::annotate_corpus(&corpus, &self.clients, &mut cache, self.config.workers)
            })?;
            write(
                &self.out(&Self::annotated_path(split)),
                &jsonl(
                    outcome
                        .annotated
                        .iter()
                        .map(AnnotatedDocument::to_json_line),
                ),
            )?;
            stats.insert(split.as_str().to_string(), outcome.stats);
            failures.extend(outcome.failures);
        }

        manifest.knowledge = Some(stats.clone());
        manifest.annotation_failures = failures.clone();
        write_json(&self.out("annotate/manifest.json"), &manifest)?;
        write_json(&self.out("annotate/timings.json"), &timings)?;

        if !failures.is_empty() {
            let summary = failures
                .iter()
                .take(10)
                .map(|f| format!("{}: {}", f.doc_id, f.error))
                .collect::<Vec<_>>()
                .join("\n  ");
            let msg = format!(
                "{} document(s) failed to annotate:\n  {summary}",
                failures.len()
            );
            return Err(if failures.iter().all(|f| f.transport) {
                PipelineError::Transport(msg)
            } else {
                PipelineError::Data(msg)
            });
        }
        Ok(AnnotateSummary {
            stats,
            failures,
            skipped: false,
        })
    }

    /// Instruction records for one split, with knowledge unless ablated.
    pub fn instruction_records(
        &self,
        split: SplitTag,
    ) -> Result<Vec<InstructionRecord>, PipelineError> {
        let corpus = self.load_split(split)?;
        if self.config.ablation.no_emotional_knowledge {
            return corpus
                .documents
                .iter()
                .map(|d| Ok(template::ecpe_record(d, None, split, &self.template)?))
                .collect();
        }

        let path = self.out(&Self::annotated_path(split));
        if !path.is_file() {
            return Err(PipelineError::Data(format!(
                "{} not found; run `annotate` first",
                path.display()
            )));
        }
        let mut by_id = HashMap::new();
        for (i, line) in read(&path)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let a = AnnotatedDocument::from_json_line(line)
                .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            by_id.insert(a.document.doc_id.clone(), a);
        }
        corpus
            .documents
            .iter()
            .map(|d| {
                let a = by_id.get(&d.doc_id).ok_or_else(|| {
                    PipelineError::Data(format!(
                        "document `{}` has no annotation in {}",
                        d.doc_id,
                        path.display()
                    ))
                })?;
                if a.document != *d {
                    return Err(PipelineError::Data(format!(
                        "annotation for `{}` is stale; rerun `annotate`",
                        d.doc_id
                    )));
                }
                Ok(template::ecpe_record(d, Some(a), split, &self.template)?)
            })
            .collect()
    }

    fn causal_pool(&self) -> Result<(Vec<CausalRecord>, usize), PipelineError> {
        let path = self.config.causal_pool.as_ref().ok_or_else(|| {
            PipelineError::Config("causal_pool is required for a nonzero ratio".into())
        })?;
        let report = blend::ingest_causal(&read(&self.config.resolve(path))?)?;
        Ok((report.records, report.diagnostics.len()))
    }

    /// One blend at the configured `ratio`.
    pub fn blend(&self) -> Result<BlendOutput, PipelineError> {
        let ratio = self.config.ratio;
        Ok(self.blend_ratios(&[ratio], false)?.remove(0))
    }

    /// One blend per entry of `sweep_ratios`, with nested selections.
    pub fn sweep(&self) -> Result<Vec<BlendOutput>, PipelineError> {
        let ratios = self.config.sweep_ratios.clone();
        self.blend_ratios(&ratios, true)
    }

    fn blend_ratios(
        &self,
        ratios: &[MixRatio],
        sweep: bool,
    ) -> Result<Vec<BlendOutput>, PipelineError> {
        let mut timings = Timings::default();
        let ecpe = timings.record("render", || self.instruction_records(SplitTag::Train))?;
        let seed = self.config.seed;

        let needs_pool = ratios.iter().any(|r| r.causal_part > 0);
        let (pool, diagnostics) = if needs_pool {
            self.causal_pool()?
        } else {
            (Vec::new(), 0)
        };

        let entries: Vec<(blend::Selection, blend::BlendDataset)> = if needs_pool {
            let embedder = self.clients.embedder.as_ref();
            timings
                .record("select_and_blend", || {
                    self.pool
                        .install(|| blend::sweep(&ecpe, &pool, ratios, seed, embedder))
                })?
                .into_iter()
                .map(|e| (e.selection, e.dataset))
                .collect()
        } else {
            ratios
                .iter()
                .map(|&ratio| {
                    let selection = blend::Selection {
                        ratio,
                        records: Vec::new(),
                        requested: 0,
                        shortfall: None,
                    };
                    let dataset = blend::blend(&ecpe, &[], seed)?;
                    Ok((selection, dataset))
                })
                .collect::<Result<_, PipelineError>>()?
        };

        let mut outputs = Vec::new();
        for (selection, dataset) in entries {
            let dir = format!("blend/ratio-{}", selection.ratio.slug());
            let data = dataset.to_jsonl();
            let file = format!("{dir}/emocausblend.jsonl");
            write(&self.out(&file), &data)?;

            let mut manifest = self.manifest(
                if sweep { "sweep" } else { "blend" },
                self.input_hashes(&[])?,
            );
            manifest.blend = Some(BlendSummary {
                seed,
                ratio: selection.ratio,
                stats: dataset.stats,
                shortfall: selection.shortfall,
                selection_rule: SELECTION_RULE,
                shuffle_rule: SHUFFLE_RULE,
                emotional_knowledge: !self.config.ablation.no_emotional_knowledge,
                causal_diagnostics: diagnostics,
                output: file.clone(),
                output_sha256: sha256_hex(data.as_bytes()),
            });
            write_json(&self.out(&format!("{dir}/manifest.json")), &manifest)?;
            write_json(&self.out(&format!("{dir}/timings.json")), &timings)?;
            outputs.push(BlendOutput {
                ratio: selection.ratio,
                path: self.out(&file),
                stats: dataset.stats,
                shortfall: selection.shortfall,
            });
        }

        if sweep {
            let m = SweepManifest {
                tool: TOOL,
                tool_version: TOOL_VERSION,
                seed,
                entries: outputs
                    .iter()
                    .map(|o| SweepManifestEntry {
                        ratio: o.ratio,
                        stats: o.stats,
                        shortfall: o.shortfall,
                        directory: format!("blend/ratio-{}", o.ratio.slug()),
                    })
                    .collect(),
            };
            write_json(&self.out("blend/sweep-manifest.json"), &m)?;
        }
        Ok(outputs)
    }

    /// Scores a predictions file, or generates predictions with the
    /// completer (greedy) when `predictions` is `None`.
    pub fn evaluate(&self, predictions: Option<&Path>) -> Result<RunReport, PipelineError> {
        let mut timings = Timings::default();
        let test = self.load_split(SplitTag::Test)?;
        let decode = Decode::Greedy;

        let (preds, source, raw) = match predictions {
            Some(p) => {
                let raw = read(p)?;
                (eval::read_predictions(&raw)?, p.display().to_string(), raw)
            }
            None => {
                let records = self.instruction_records(SplitTag::Test)?;
                let completer = self.clients.completer.as_ref();
                let outputs: Vec<Result<String, ClientError>> = timings.record("complete", || {
                    self.pool.install(|| {
                        records
                            .par_iter()
                            .map(|r| completer.complete(&r.instruction, decode))
                            .collect()
                    })
                });
                let mut preds = BTreeMap::new();
                for (doc, out) in test.documents.iter().zip(outputs) {
                    preds.insert(doc.doc_id.clone(), out?);
                }
                let order: Vec<String> = test.documents.iter().map(|d| d.doc_id.clone()).collect();
                let raw = eval::write_predictions(&preds, &order);
                write(&self.out("evaluate/predictions.jsonl"), &raw)?;
                (preds, "evaluate/predictions.jsonl".to_string(), raw)
            }
        };

        let mut report = timings.record("score", || eval::evaluate_run(&test, &preds))?;
        report.run_id = self.run_id();
        report.method = Some(self.config.method());
        report.ratio = Some(self.config.ratio.to_string());
        report.manifest_ref = "evaluate/manifest.json".into();

        let mut manifest = self.manifest("evaluate", self.input_hashes(&[])?);
        manifest.evaluation = Some(EvaluationSummary {
            predictions_source: source,
            predictions_sha256: sha256_hex(raw.as_bytes()),
            decode,
            metrics: report.metrics,
            totals: report.totals,
        });
        write(&self.out("evaluate/report.json"), &report.to_json())?;
        write(&self.out("evaluate/report.txt"), &report.summary())?;
        write_json(&self.out("evaluate/manifest.json"), &manifest)?;
        write_json(&self.out("evaluate/timings.json"), &timings)?;
        Ok(report)
    }

    pub fn run_id(&self) -> String {
        self.config.run_id.clone().unwrap_or_else(|| {
            format!(
                "{}-ratio-{}",
                self.config.method(),
                self.config.ratio.slug()
            )
        })
    }

    /// Corpus-level validation of both configured splits.
    pub fn validate(&self) -> Result<Vec<(String, Vec<Violation>)>, PipelineError> {
        [&self.config.corpus.train, &self.config.corpus.test]
            .into_iter()
            .map(|p| {
                validate_file(&self.config.resolve(p), self.config.corpus.format)
                    .map(|v| (p.display().to_string(), v))
            })
            .collect()
    }
}

pub fn validate_file(
    path: &Path,
    format: corpus::CorpusFormat,
) -> Result<Vec<Violation>, PipelineError> {
    let corpus = corpus::parse_corpus(&read(path)?, format)?;
    Ok(corpus::validate_corpus(&corpus))
}

/// Reads RunReport JSON files and builds the comparison table.
pub fn compare_files(paths: &[PathBuf]) -> Result<ComparisonTable, PipelineError> {
    let reports = paths
        .iter()
        .map(|p| {
            serde_json::from_str::<RunReport>(&read(p)?)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(eval::compare_runs(&reports)?)
}

/// Seeded split of an unsplit corpus file into `train.jsonl` and `test.jsonl`.
pub fn split_file(
    input: &Path,
    format: corpus::CorpusFormat,
    test_fraction: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<(usize, usize), PipelineError> {
    let corpus = corpus::parse_corpus(&read(input)?, format)?;
    let (train, test) = corpus::split_corpus(&corpus, test_fraction, seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    write(&out_dir.join("train.jsonl"), &corpus::emit_corpus(&train))?;
    write(&out_dir.join("test.jsonl"), &corpus::emit_corpus(&test))?;
    Ok((train.len(), test.len()))
}
